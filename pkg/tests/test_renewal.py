import numpy as np
import pytest

from conftest import random_walk_path
from rwre.geometry import complete_basis, cone_frame, in_cone
from rwre.renewal import (
    BlockTable,
    cone_diagnostics,
    cone_renewal_scan,
    extract_blocks,
    slab_renewal_scan,
)
from rwre.walk import Trajectory, line_path

HAND = [[0, 0], [1, 0], [1, 1], [2, 1]] + [[3 + n, 1] for n in range(30)]


def brute_taus(pos, ell, W, frame=None):
    """Confirmed renewals by definition: strict records whose cone (or slab) is kept for W steps."""
    a = pos @ np.asarray(ell, float)
    out = []
    for s in range(1, len(pos)):
        if a[s] <= a[:s].max() or s + W >= len(pos):
            continue
        rel = pos[s + 1:s + W + 1] - pos[s]
        ok = in_cone(rel, frame).all() if frame is not None else np.all(rel @ np.asarray(ell, float) >= 0)
        if ok:
            out.append(s)
    return out


def test_straight_line_scan():
    H, W = 40, 10
    t = Trajectory.from_positions(line_path(2, H))
    scan = cone_renewal_scan(t, cone_frame((1, 0), 0.7), W)
    first = scan.first_segment()
    assert first[0].S == 1 and first[0].R.censored and scan.K == 0
    assert scan.taus == list(range(1, H - W + 1))
    assert slab_renewal_scan(t, (1, 0), W).taus == list(range(1, H - W + 1))
    blocks = extract_blocks(scan, t)
    assert all(b.dtau == 1 and b.dx == (1, 0) and b.sup_norm == 1 for b in blocks)


def test_hand_path_scan():
    t = Trajectory.from_positions(HAND)
    scan = cone_renewal_scan(t, cone_frame((1, 0), 1), 5)
    a0, a1 = scan.first_segment()[:2]
    assert (a0.S, a0.R.t, a0.M) == (1, 2, 1)
    assert a1.S == 3 and a1.R.censored
    assert scan.K == 1 and scan.taus[0] == 3
    b = extract_blocks(scan, t)[0]
    assert (b.dtau, b.dx) == (1, (1, 0))


def test_never_advancing_scan():
    t = Trajectory.from_positions([[0, 0], [-1, 0], [-1, 1], [-2, 1]])
    scan = cone_renewal_scan(t, cone_frame((1, 0), 1), 1)
    assert scan.attempts == [] and scan.taus == [] and not scan.censored_tail
    assert extract_blocks(scan, t) == []


def test_slab_example():
    path = [0, 1, 0, 1, 2] + list(range(3, 20))
    taus = slab_renewal_scan(Trajectory.from_positions(path), (1,), 3).taus
    assert 1 not in taus and taus[0] == 4


@pytest.mark.parametrize("d,ell,alpha", [(2, (1, 0), 0.5), (2, (1, 1), 1.0), (3, (1, 0, 0), 0.4), (1, (1,), 1.0)])
def test_scan_matches_brute_force(d, ell, alpha):
    gen = np.random.default_rng(d)
    f = cone_frame(ell, alpha)
    for _ in range(40):
        pos = random_walk_path(gen, d, 300, drift=0.6)
        t = Trajectory.from_positions(pos)
        for W in (1, 7, 40):
            assert cone_renewal_scan(t, f, W).taus == brute_taus(pos, ell, W, f)
            assert slab_renewal_scan(t, ell, W).taus == brute_taus(pos, ell, W)


def test_scan_invariants():
    gen = np.random.default_rng(7)
    ell = np.array([1.0, 0.0])
    f = cone_frame(ell, 0.5)
    for _ in range(100):
        pos = random_walk_path(gen, 2, 400, drift=0.5)
        t = Trajectory.from_positions(pos)
        scan = cone_renewal_scan(t, f, 30)
        for seg in {a.segment for a in scan.attempts}:
            times = []
            for a in (x for x in scan.attempts if x.segment == seg):
                times.append(a.S)
                if a.R.hit:
                    times.append(a.R.t)
            assert all(x <= y for x, y in zip(times, times[1:]))
            assert all(times[i] < times[i + 1] for i in range(1, len(times) - 1, 2))
        a = pos @ ell
        for tau in scan.taus:
            assert a[tau] > a[:tau].max()
            rel = pos[tau + 1:tau + 31] - pos[tau]
            assert in_cone(rel, f).all()
            assert np.all(np.linalg.norm(rel, axis=1) <= f.c_alpha * (rel @ ell) + 1e-9)
        assert set(scan.taus) <= set(slab_renewal_scan(t, ell, 30).taus)
        wider = cone_renewal_scan(t, f, 60).taus
        assert set(wider) <= set(scan.taus)


def test_blocks_invariants():
    gen = np.random.default_rng(3)
    f = cone_frame((1, 0), 0.5)
    for _ in range(30):
        t = Trajectory.from_positions(random_walk_path(gen, 2, 500, drift=0.8))
        blocks = extract_blocks(cone_renewal_scan(t, f, 20), t)
        for b in blocks:
            assert b.dtau >= 1 and b.dx[0] >= 1
            assert np.linalg.norm(b.dx) <= b.sup_norm + 1e-12
        table = BlockTable.from_blocks(blocks, 2)
        assert len(table) == len(blocks)


def test_block_csv_header():
    t = Trajectory.from_positions(line_path(2, 6))
    table = BlockTable.from_blocks(extract_blocks(cone_renewal_scan(t, cone_frame((1, 0), 1), 2), t), 2)
    lines = table.to_csv(["note"]).splitlines()
    assert lines[0] == "# note"
    assert lines[1] == "walk_index,k,dtau,dx1,dx2,sup_norm,censored"
    assert lines[2] == "0,1,1,1,0,1.0,0"


def test_cone_diagnostics():
    basis = complete_basis((1, 0))
    diag = cone_diagnostics(Trajectory.from_positions(line_path(2, 10)), (1, 0), basis, 0.5)
    assert (diag.N.t, diag.C, diag.M, diag.alpha1) == (1, 1, 0, 0.5)
    hand = cone_diagnostics(Trajectory.from_positions(HAND[:10]), (1, 0), basis, 1.0)
    # X_2 = (1,1) is on the closed boundary, so N = 1; only X_1 = (1,0) enters C and M
    assert (hand.N.t, hand.C, hand.M, hand.alpha1) == (1, 1, 0, 1.0)
    back = cone_diagnostics(Trajectory.from_positions([[0, 0], [-1, 0], [-2, 0]]), (1, 0), basis, 1.0)
    assert back.censored
    # X_1 = (0,1) lies outside, so N = 2 and C = min(0, 1) = 0
    wiggle = cone_diagnostics(Trajectory.from_positions([[0, 0], [0, 1], [1, 1], [2, 1], [3, 1], [4, 1]]),
                              (1, 0), basis, 1.0)
    assert (wiggle.N.t, wiggle.C, wiggle.M, wiggle.alpha1) == (2, 0, 1, 0)
