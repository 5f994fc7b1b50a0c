import numpy as np
import pytest

from rwre.environment import make_distribution
from rwre.estimators import (
    DegenerateFitError,
    DirectionUndefinedError,
    InsufficientDataError,
    decay_from_sample,
    direction_cluster_analysis,
    estimate_cone_survival,
    estimate_direction,
    estimate_transience,
    estimate_velocity,
    identity_from_sample,
    iid_blocks_test,
    neighborhood_directions,
    neighborhood_scan,
    renewal_identity_check,
    renewal_sample,
    transience_sample,
    wilson_interval,
)
from rwre.geometry import cone_frame
from rwre.renewal import BlockTable


def table(dtau, dx, walk=None, k=None):
    dx = np.asarray(dx, dtype=np.int64)
    n = dx.shape[0]
    walk = np.zeros(n, dtype=np.int64) if walk is None else np.asarray(walk, dtype=np.int64)
    k = np.arange(1, n + 1) if k is None else np.asarray(k, dtype=np.int64)
    return BlockTable(walk, k, np.asarray(dtau, dtype=np.int64), dx, np.linalg.norm(dx, axis=1))


def test_wilson_interval():
    lo, hi = wilson_interval(0, 50)
    assert lo == 0 and 0 < hi < 0.1
    lo, hi = wilson_interval(50, 50)
    assert hi == 1 and 0.9 < lo < 1
    lo, hi = wilson_interval(20, 100)
    assert lo < 0.2 < hi


# -- degenerate straight walk ---------------------------------------------------


def test_degenerate_identity_direction_velocity(straight):
    frame = cone_frame((1, 0), 0.5)
    sample = renewal_sample(straight, frame, 20, 300, 50, 1)
    check = identity_from_sample(sample)
    assert check.product.value == 1.0 and check.product.stderr == 0.0
    nu = estimate_direction(sample.blocks)
    assert np.array_equal(nu.value, [1.0, 0.0]) and nu.angular_stderr == 0.0
    mu = estimate_velocity(sample.blocks)
    assert np.array_equal(mu.value, [1.0, 0.0]) and np.all(mu.stderr == 0)
    with pytest.raises(DegenerateFitError):
        decay_from_sample(sample, 5)
    res = iid_blocks_test(sample.blocks)
    assert res.degenerate and res.passed and res.ks_pvalue == 1.0 and res.autocorr is None


def test_degenerate_survival(straight):
    curve = estimate_cone_survival(straight, cone_frame((1, 0), 0.5), 30, 500, [1, 10, 100, 500], 0)
    assert all(s.value == 1.0 for s in curve.survival)


def test_identity_insufficient(biased):
    with pytest.raises(InsufficientDataError):
        renewal_identity_check(biased, (1, 0), 0.5, 2, 200, 100, 0)


# -- transience ----------------------------------------------------------------


def test_transience_examples(biased, symmetric):
    est = estimate_transience(biased, (1, 0), 300, 10_000, 3)
    assert est.value == 1.0 and est.ci95[1] == 1.0
    assert estimate_transience(symmetric, (1, 0), 300, 10_000, 3).value <= 0.02
    assert estimate_transience(biased, (-1, 0), 300, 10_000, 3).value == 0.0
    with pytest.raises(ValueError):
        estimate_transience(biased, (1, 0), 10, 15, 3)


def test_classifier_consistency():
    spec = make_distribution("deterministic", 2, (0.33, 0.17, 0.25, 0.25))
    overlaps = 0
    values = []
    for rep in range(20):
        a = estimate_transience(spec, (1, 0), 200, 1000, 2 * rep)
        b = estimate_transience(spec, (1, 0), 200, 1000, 2 * rep + 1)
        values.append(a.value)
        overlaps += a.ci95[0] <= b.ci95[1] and b.ci95[0] <= a.ci95[1]
    assert 0.05 < np.mean(values) < 0.95  # intermediate regime, so the check has teeth
    assert overlaps >= 18


def test_stderr_scaling(biased):
    """Four times fewer walks should roughly double the standard error."""
    frame = cone_frame((1, 0), 0.5)
    ratios = []
    for seed in range(4):
        big = renewal_sample(biased, frame, 400, 1500, 100, 10 + seed)
        small = renewal_sample(biased, frame, 100, 1500, 100, 50 + seed)
        ratios.append(estimate_velocity(small.blocks).stderr[0] / estimate_velocity(big.blocks).stderr[0])
        s_big = estimate_cone_survival(biased, frame, 400, 1500, [100], 10 + seed).final
        s_small = estimate_cone_survival(biased, frame, 100, 1500, [100], 50 + seed).final
        ratios.append(s_small.stderr / s_big.stderr)
    assert 1.5 <= np.mean(ratios) <= 2.7


def test_survival_monotone_and_symmetric_decay(biased, symmetric):
    cps = [1, 10, 100, 1000, 5000]
    for spec in (biased, symmetric, make_distribution("dirichlet", 2, (1, 1, 1, 1))):
        curve = estimate_cone_survival(spec, cone_frame((1, 0), 0.5), 200, 5000, cps, 4)
        vals = [s.value for s in curve.survival]
        assert all(a >= b for a, b in zip(vals, vals[1:]))
    sym = estimate_cone_survival(symmetric, cone_frame((1, 0), 0.5), 400, 5000, cps, 4)
    assert sym.final.value < 0.02 < sym.survival[0].value


def test_symmetric_decay_flat(symmetric):
    sample = renewal_sample(symmetric, cone_frame((1, 0), 0.5), 300, 5000, 1000, 8)
    check = decay_from_sample(sample, 5)
    assert check.q_direct.value > 0.95
    assert abs(check.slope) < 0.05


# -- blocks -------------------------------------------------------------------


def test_direction_undefined_for_zero_mean_blocks():
    gen = np.random.default_rng(1)
    steps = np.array([[1, 0], [-1, 0], [0, 1], [0, -1]])
    dx = steps[gen.integers(0, 4, 2000)]
    blocks = table(np.ones(2000), dx, walk=np.repeat(np.arange(200), 10), k=np.tile(np.arange(1, 11), 200))
    with pytest.raises(DirectionUndefinedError):
        estimate_direction(blocks)
    with pytest.raises(InsufficientDataError):
        estimate_direction(table(np.ones(50), np.tile([1, 0], (50, 1))))


def test_iid_power_check():
    n = 1000
    blocks = table(np.where(np.arange(n) % 2 == 0, 1, 100), np.tile([1, 0], (n, 1)))
    res = iid_blocks_test(blocks)
    assert res.autocorr < -0.95 and not res.passed
    with pytest.raises(InsufficientDataError):
        iid_blocks_test(blocks, min_blocks=2 * n)


def test_iid_biased_passes(biased):
    sample = renewal_sample(biased, cone_frame((1, 0), 0.5), 100, 3000, 100, 21)
    assert len(sample.blocks) >= 1000
    res = iid_blocks_test(sample.blocks, (1, 0))
    assert res.passed and res.ks_pvalue > 0.01 and abs(res.autocorr) < 3 / np.sqrt(res.n_pairs)


# -- neighbourhood and clusters ---------------------------------------------------


def test_neighborhood_directions_grid():
    dirs = neighborhood_directions((1, 0), 30, 13)
    assert dirs.shape == (13, 2)
    angles = np.degrees(np.arctan2(dirs[:, 1], dirs[:, 0]))
    assert np.isclose(angles.min(), -30) and np.isclose(angles.max(), 30)
    with pytest.raises(ValueError):
        neighborhood_directions((1, 0), 30, 0)
    d3 = neighborhood_directions((0, 0, 1), 20, 9)
    assert np.allclose(np.linalg.norm(d3, axis=1), 1)
    assert np.all(np.degrees(np.arccos(np.clip(d3 @ [0, 0, 1], -1, 1))) <= 20 + 1e-9)


def test_neighborhood_scan(biased, symmetric):
    res = neighborhood_scan(biased, (1, 0), 30, 13, 100, 5000, 2, nu=(1, 0), half_points=13)
    assert res.all_transient and res.half_all_transient
    orth = np.isclose(res.half_dots, 0, atol=1e-12)
    assert orth.any() and not res.half_checked[orth].any()
    sym = neighborhood_scan(symmetric, (1, 0), 30, 13, 100, 5000, 2)
    assert not any(v.label == "transient+" for v in sym.verdicts)


def test_cluster_synthetic_antipodal():
    nu = np.array([0.6, 0.8])
    gen = np.random.default_rng(0)
    pts = np.where(gen.random(400)[:, None] < 0.5, nu, -nu) * gen.integers(1, 50, 400)[:, None]
    res = direction_cluster_analysis(pts)
    assert res.n_clusters == 2 and res.antipodal and not res.anomaly


def test_cluster_three_directions_flagged():
    dirs = np.array([[1, 0], [-0.5, np.sqrt(3) / 2], [-0.5, -np.sqrt(3) / 2]])
    res = direction_cluster_analysis(np.repeat(dirs, 50, axis=0))
    assert len(res.significant) == 3 and res.anomaly


def test_cluster_walks(biased, symmetric):
    ends = transience_sample(biased, [(1, 0)], 300, 5000, 5).endpoints
    res = direction_cluster_analysis(ends)
    assert res.n_clusters == 1 and np.allclose(res.centers[0], (1, 0), atol=0.05)
    ends = transience_sample(symmetric, [(1, 0)], 300, 5000, 5).endpoints
    res = direction_cluster_analysis(ends)
    assert res.isotropic and res.message == "no asymptotic direction" and not res.anomaly
    with pytest.raises(InsufficientDataError):
        direction_cluster_analysis(np.zeros((200, 2)))
