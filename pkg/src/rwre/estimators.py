"""Annealed Monte Carlo estimators and the statistical checks built on them.

Walk ``w`` of a batch runs in its own environment (seed derived from the
master seed and ``w``) with its own walk seed, so every estimator samples the
annealed law and is reproducible for any thread count.  Censored events
("no exit before the horizon") are counted, never given a value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numba import njit
from scipy import stats

from rwre.environment import DistributionSpec
from rwre.geometry import ConeFrame, complete_basis, cone_frame, gcd_normalize
from rwre.renewal import BlockTable, analyze_walk, as_block_table
from rwre.walk import map_walks

Z95 = 1.959963984540054
SIGNIFICANCE = 0.01
MIN_BLOCKS = 100


class InsufficientDataError(RuntimeError):
    """Too few walks, blocks or usable points for the requested statistic."""


class DegenerateFitError(InsufficientDataError):
    pass


class DirectionUndefinedError(InsufficientDataError):
    pass


@dataclass
class Estimate:
    value: float | np.ndarray
    stderr: float | np.ndarray
    ci95: tuple
    n_samples: int
    n_censored: int = 0
    note: str = ""

    def to_dict(self) -> dict:
        conv = lambda v: np.asarray(v, dtype=float).tolist()  # noqa: E731
        out = {
            "value": conv(self.value),
            "stderr": conv(self.stderr),
            "ci95": [conv(self.ci95[0]), conv(self.ci95[1])],
            "n_samples": int(self.n_samples),
            "n_censored": int(self.n_censored),
        }
        if self.note:
            out["note"] = self.note
        return out


def wilson_interval(k: int, n: int, z: float = Z95) -> tuple[float, float]:
    if n == 0:
        return 0.0, 1.0
    p = k / n
    denom = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    lo = 0.0 if k == 0 else max(0.0, centre - half)
    hi = 1.0 if k == n else min(1.0, centre + half)
    return lo, hi


def proportion(k: int, n: int, n_censored: int = 0, note: str = "") -> Estimate:
    p = k / n if n else float("nan")
    se = math.sqrt(p * (1 - p) / n) if n else float("nan")
    lo, hi = wilson_interval(k, n)
    return Estimate(p, se, (min(lo, p), max(hi, p)), n, n_censored, note)


def _normal_estimate(value, se, n, n_censored=0, note="") -> Estimate:
    value = np.asarray(value, dtype=float)
    se = np.asarray(se, dtype=float)
    if value.ndim == 0:
        value, se = float(value), float(se)
    return Estimate(value, se, (value - Z95 * se, value + Z95 * se), n, n_censored, note)


# -- transience --------------------------------------------------------------


@njit(cache=True, nogil=True)
def _projection_stats(steps, d, ells):
    """Final position and, per direction, final projection and min/max over the second half."""
    h = steps.shape[0]
    k = ells.shape[0]
    half = (h + 1) // 2
    x = np.zeros(d, dtype=np.int64)
    lo = np.full(k, np.inf)
    hi = np.full(k, -np.inf)
    proj = np.zeros(k)
    for n in range(h + 1):
        if n > 0:
            j = steps[n - 1]
            if j % 2 == 0:
                x[j // 2] += 1
            else:
                x[j // 2] -= 1
        if n >= half:
            for i in range(k):
                p = 0.0
                for c in range(d):
                    p += x[c] * ells[i, c]
                proj[i] = p
                if p < lo[i]:
                    lo[i] = p
                if p > hi[i]:
                    hi[i] = p
    return x, proj, lo, hi


@dataclass
class TransienceSample:
    """Per-walk projection statistics for a set of unit directions."""

    directions: np.ndarray  # (k, d) unit vectors
    horizon: int
    endpoints: np.ndarray  # (n, d)
    final: np.ndarray  # (n, k)
    low: np.ndarray  # (n, k) min over the second half
    high: np.ndarray  # (n, k) max over the second half

    @property
    def n_walks(self) -> int:
        return int(self.endpoints.shape[0])

    def ballistic(self, i: int, sign: int = 1) -> np.ndarray:
        """Per-walk classifier: far out at the horizon and stayed out over the second half."""
        thr = self.horizon ** 0.75
        if sign > 0:
            return (self.final[:, i] >= thr) & (self.low[:, i] >= 0.5 * thr)
        return (self.final[:, i] <= -thr) & (self.high[:, i] <= -0.5 * thr)

    def escaped(self, i: int, sign: int = 1) -> np.ndarray:
        """Per-walk: strictly ahead of the start throughout the second half."""
        return self.low[:, i] > 0 if sign > 0 else self.high[:, i] < 0


def _unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=float).reshape(-1)
    n = np.linalg.norm(v)
    if n == 0:
        raise ValueError("direction must be nonzero")
    return v / n


def transience_sample(spec: DistributionSpec, directions, n_walks: int, horizon: int,
                      master_seed: int, threads: int = 1) -> TransienceSample:
    if horizon < 16:
        raise ValueError("horizon must be at least 16 for the transience classifier")
    dirs = np.array([_unit(v) for v in np.atleast_2d(np.asarray(directions, dtype=float))])
    rows = map_walks(spec, n_walks, horizon, master_seed,
                     lambda w, steps: _projection_stats(steps, spec.d, dirs), threads)
    return TransienceSample(
        dirs, horizon,
        np.array([r[0] for r in rows]).reshape(n_walks, spec.d),
        np.array([r[1] for r in rows]).reshape(n_walks, -1),
        np.array([r[2] for r in rows]).reshape(n_walks, -1),
        np.array([r[3] for r in rows]).reshape(n_walks, -1),
    )


def estimate_transience(spec: DistributionSpec, ell, n_walks: int, horizon: int, master_seed: int,
                        threads: int = 1) -> Estimate:
    """Fraction of walks classified ballistic in direction ``ell`` (Wilson interval)."""
    sample = transience_sample(spec, [ell], n_walks, horizon, master_seed, threads)
    return proportion(int(sample.ballistic(0).sum()), n_walks)


@dataclass
class TransienceVerdict:
    label: str  # transient+, transient-, undecided
    score: float
    ballistic: Estimate | None = None
    escape: Estimate | None = None
    ballistic_minus: Estimate | None = None
    escape_minus: Estimate | None = None

    def to_dict(self) -> dict:
        out = {"label": self.label, "score": self.score}
        for name in ("ballistic", "escape", "ballistic_minus", "escape_minus"):
            est = getattr(self, name)
            if est is not None:
                out[name] = est.to_dict()
        return out


@dataclass(frozen=True)
class VerdictThresholds:
    """A direction is called transient when the lower Wilson bound of either
    walk fraction clears its threshold."""

    ballistic: float = 0.5
    escape: float = 2.0 / 3.0


def transience_verdict(sample: TransienceSample, i: int = 0,
                       thresholds: VerdictThresholds = VerdictThresholds()) -> TransienceVerdict:
    n = sample.n_walks
    bp = proportion(int(sample.ballistic(i, 1).sum()), n)
    bm = proportion(int(sample.ballistic(i, -1).sum()), n)
    ep = proportion(int(sample.escaped(i, 1).sum()), n)
    em = proportion(int(sample.escaped(i, -1).sum()), n)

    def clears(b: Estimate, e: Estimate) -> bool:
        return b.ci95[0] >= thresholds.ballistic or e.ci95[0] >= thresholds.escape

    if clears(bp, ep):
        label = "transient+"
    elif clears(bm, em):
        label = "transient-"
    else:
        label = "undecided"
    return TransienceVerdict(label, float(ep.value - em.value), bp, ep, bm, em)


def endpoint_velocity(sample: TransienceSample) -> Estimate:
    """Mean of X_horizon / horizon over walks."""
    v = sample.endpoints / sample.horizon
    n = v.shape[0]
    se = v.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros(v.shape[1])
    return _normal_estimate(v.mean(axis=0), se, n)


# -- cone survival and renewal samples ---------------------------------------


@dataclass
class SurvivalCurve:
    checkpoints: list[int]
    survival: list[Estimate]
    final: Estimate

    def to_dict(self) -> dict:
        return {
            "checkpoints": list(self.checkpoints),
            "survival": [s.value for s in self.survival],
            "final": self.final.to_dict(),
            "upper_bound_bias": True,
        }


def survival_from_exits(exits: np.ndarray, checkpoints: Sequence[int], horizon: int) -> SurvivalCurve:
    """Fraction of walks whose cone exit is later than each checkpoint."""
    cps = [int(c) for c in checkpoints]
    if not cps or any(b <= a for a, b in zip(cps, cps[1:])):
        raise ValueError("checkpoints must be a non-empty increasing sequence")
    if cps[0] < 0 or cps[-1] > horizon:
        raise ValueError(f"checkpoints must lie in [0, {horizon}]")
    exits = np.asarray(exits)
    n = exits.shape[0]
    curve = []
    for c in cps:
        alive = int((exits > c).sum())
        curve.append(proportion(alive, n, alive, note=f"survival to {c}"))
    final = curve[-1]
    final.note = "censored at the last checkpoint; biased upward as an estimate of P(no exit ever)"
    return SurvivalCurve(cps, curve, final)


@dataclass
class RenewalSample:
    frame: ConeFrame
    horizon: int
    W: int
    blocks: BlockTable
    exit0: np.ndarray
    first_hits: np.ndarray
    n_taus: np.ndarray
    censored_tail: np.ndarray

    @property
    def n_walks(self) -> int:
        return int(self.exit0.shape[0])


def renewal_sample(spec: DistributionSpec, frame: ConeFrame, n_walks: int, horizon: int, W: int,
                   master_seed: int, threads: int = 1) -> RenewalSample:
    if horizon < W:
        raise ValueError(f"horizon {horizon} shorter than confirm window {W}")
    start = np.zeros(spec.d, dtype=np.int64)
    rows = map_walks(spec, n_walks, horizon, master_seed,
                     lambda w, steps: analyze_walk(steps, start, frame, W, w), threads)
    return RenewalSample(
        frame, horizon, W,
        BlockTable.concat([r.blocks for r in rows], spec.d),
        np.array([r.exit0 for r in rows], dtype=np.int64),
        np.array([r.first_hits for r in rows], dtype=np.int64),
        np.array([r.n_taus for r in rows], dtype=np.int64),
        np.array([r.censored_tail for r in rows], dtype=bool),
    )


def _cone_exits(spec, frame, n_walks, horizon, master_seed, threads):
    from rwre.renewal import _frame_arrays, _projections
    from rwre.walk import positions_from_steps

    start = np.zeros(spec.d, dtype=np.int64)
    arrays = _frame_arrays(frame)

    def first_exit(w, steps):
        A, T = _projections(positions_from_steps(start, steps), *arrays)
        if T.shape[1] == 0:
            out = A[1:] < A[0]
        else:
            out = np.any(T[1:] < T[0], axis=1)
        idx = np.flatnonzero(out)
        return int(idx[0]) + 1 if idx.size else horizon + 1

    return np.array(map_walks(spec, n_walks, horizon, master_seed, first_exit, threads), dtype=np.int64)


def estimate_cone_survival(spec: DistributionSpec, frame: ConeFrame, n_walks: int, horizon: int,
                           checkpoints: Sequence[int], master_seed: int, threads: int = 1) -> SurvivalCurve:
    exits = _cone_exits(spec, frame, n_walks, horizon, master_seed, threads)
    return survival_from_exits(exits, checkpoints, horizon)


def _groups(walk_index: np.ndarray) -> np.ndarray:
    """Cluster labels for resampling: walks, or contiguous chunks when there are few walks."""
    uniq, labels = np.unique(walk_index, return_inverse=True)
    if uniq.shape[0] >= 20:
        return labels
    n = walk_index.shape[0]
    size = max(1, math.ceil(n / 100))
    return np.arange(n) // size


def _ratio(num: np.ndarray, den: np.ndarray, groups: np.ndarray):
    """sum(num)/sum(den) with a cluster-robust linearized standard error."""
    tot_den = den.sum()
    r = num.sum(axis=0) / tot_den
    g = groups.max() + 1
    resid = num - np.multiply.outer(den, r) if np.ndim(r) else num - r * den
    z = np.zeros((g,) + np.shape(r))
    np.add.at(z, groups, resid)
    var = (z**2).sum(axis=0) * g / max(g - 1, 1) / tot_den**2
    return r, np.sqrt(var)


@dataclass
class IdentityCheck:
    product: Estimate
    target: float
    mean_advance: Estimate
    survival: Estimate
    ell: tuple

    @property
    def deviation_in_se(self) -> float:
        se = float(self.product.stderr)
        dev = abs(float(self.product.value) - self.target)
        return 0.0 if dev == 0 else (math.inf if se == 0 else dev / se)

    def to_dict(self) -> dict:
        return {
            "product": self.product.to_dict(),
            "target": self.target,
            "mean_advance": self.mean_advance.to_dict(),
            "survival": self.survival.to_dict(),
            "ell": list(self.ell),
        }


def identity_from_sample(sample: RenewalSample) -> IdentityCheck:
    blocks = sample.blocks
    if len(blocks) < MIN_BLOCKS:
        raise InsufficientDataError(f"{len(blocks)} usable blocks, need at least {MIN_BLOCKS}")
    ell = sample.frame.ell
    adv = (blocks.dx @ ell).astype(float)
    m, m_se = _ratio(adv, np.ones_like(adv), _groups(blocks.walk_index))
    surv = survival_from_exits(sample.exit0, [sample.W], sample.horizon).final
    p, p_se = float(surv.value), float(surv.stderr)
    prod = float(m) * p
    se = math.hypot(p * float(m_se), float(m) * p_se)
    return IdentityCheck(
        _normal_estimate(prod, se, len(blocks)),
        1.0,
        _normal_estimate(m, m_se, len(blocks)),
        surv,
        tuple(int(v) if float(v).is_integer() else float(v) for v in ell),
    )


def renewal_identity_check(spec: DistributionSpec, ell, alpha: float, n_walks: int, horizon: int, W: int,
                           master_seed: int, threads: int = 1) -> IdentityCheck:
    """Mean advance of a renewal block times the cone survival probability (should be 1)."""
    frame = cone_frame(gcd_normalize(ell), alpha)
    return identity_from_sample(renewal_sample(spec, frame, n_walks, horizon, W, master_seed, threads))


@dataclass
class DecayCheck:
    k: list[int]
    p_finite: list[Estimate]
    slope: float
    slope_se: float
    intercept: float
    r2: float
    q_direct: Estimate
    log_q_direct: float
    combined_se: float

    @property
    def z(self) -> float:
        diff = abs(self.slope - self.log_q_direct)
        return 0.0 if diff == 0 else (math.inf if self.combined_se == 0 else diff / self.combined_se)

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "p_finite": [e.to_dict() for e in self.p_finite],
            "slope": self.slope,
            "slope_se": self.slope_se,
            "intercept": self.intercept,
            "r2": self.r2,
            "q_direct": self.q_direct.to_dict(),
            "log_q_direct": self.log_q_direct,
            "q_from_slope": math.exp(self.slope),
            "combined_se": self.combined_se,
            "z": self.z,
        }


def _wls(x, y, w):
    W = w.sum()
    xm, ym = (w * x).sum() / W, (w * y).sum() / W
    sxx = (w * (x - xm) ** 2).sum()
    slope = (w * (x - xm) * (y - ym)).sum() / sxx
    intercept = ym - slope * xm
    ss_res = (w * (y - intercept - slope * x) ** 2).sum()
    ss_tot = (w * (y - ym) ** 2).sum()
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return slope, intercept, r2


def decay_from_sample(sample: RenewalSample, k_max: int, n_boot: int = 400, seed: int = 0) -> DecayCheck:
    if k_max < 3:
        raise ValueError("k_max must be at least 3")
    n = sample.n_walks
    ks = np.arange(k_max + 1)
    hits = sample.first_hits
    counts = np.array([(hits >= k + 1).sum() for k in ks])
    if np.all(counts == 0) or np.all(counts == n):
        raise DegenerateFitError("every P(R_k finite) estimate is 0 or 1")
    use = counts > 0
    if use.sum() < 3:
        raise DegenerateFitError("fewer than three k with a finite R_k observed")
    x = (ks + 1)[use].astype(float)

    def fit(c):
        p = c[use] / n
        var = (1 - p) / (n * p)
        w = 1.0 / np.maximum(var, 1.0 / n**2)
        return _wls(x, np.log(p), w)

    slope, intercept, r2 = fit(counts)
    rng = np.random.default_rng(seed)
    boot = []
    for _ in range(n_boot):
        h = hits[rng.integers(0, n, n)]
        c = np.array([(h >= k + 1).sum() for k in ks])
        if np.all(c[use] > 0):
            boot.append(fit(c)[0])
    slope_se = float(np.std(boot, ddof=1)) if len(boot) > 1 else 0.0
    exits_within = int((sample.exit0 <= sample.W).sum())
    q = proportion(exits_within, n, n - exits_within)
    if exits_within == 0:
        raise DegenerateFitError("no cone exit observed within the confirm window")
    qv = float(q.value)
    log_q_se = math.sqrt((1 - qv) / (n * qv))
    return DecayCheck(
        [int(k) for k in ks],
        [proportion(int(c), n) for c in counts],
        float(slope), slope_se, float(intercept), float(r2),
        q, math.log(qv), math.hypot(slope_se, log_q_se),
    )


def geometric_decay_check(spec: DistributionSpec, frame: ConeFrame, n_walks: int, horizon: int, k_max: int,
                          W: int, master_seed: int, threads: int = 1) -> DecayCheck:
    """Fit log P(R_k finite) against k+1 and compare the slope with log P(cone exit)."""
    return decay_from_sample(renewal_sample(spec, frame, n_walks, horizon, W, master_seed, threads), k_max)


# -- direction, velocity, independence ---------------------------------------


@dataclass
class DirectionEstimate:
    value: np.ndarray
    angular_stderr: float
    mean_dx: Estimate
    n_samples: int

    def angle_to(self, v) -> float:
        v = _unit(v)
        return float(math.acos(max(-1.0, min(1.0, float(self.value @ v)))))

    def to_dict(self) -> dict:
        return {
            "value": self.value.tolist(),
            "angular_stderr": self.angular_stderr,
            "mean_dx": self.mean_dx.to_dict(),
            "n_samples": self.n_samples,
        }


def _require_blocks(blocks: BlockTable, minimum: int = MIN_BLOCKS) -> None:
    if len(blocks) < minimum:
        raise InsufficientDataError(f"{len(blocks)} blocks, need at least {minimum}")


def estimate_direction(blocks, n_boot: int = 200, seed: int = 0) -> DirectionEstimate:
    """Normalized mean block displacement with a cluster-bootstrap angular error."""
    blocks = as_block_table(blocks)
    _require_blocks(blocks)
    dx = blocks.dx.astype(float)
    groups = _groups(blocks.walk_index)
    m, m_se = _ratio(dx, np.ones(len(blocks)), groups)
    norm = float(np.linalg.norm(m))
    noise = float(np.sqrt((m_se**2).sum()))
    if norm <= 3 * noise:
        raise DirectionUndefinedError(f"mean displacement {norm:.3g} within 3 SE ({noise:.3g}) of zero")
    nu = m / norm
    g = groups.max() + 1
    sums = np.zeros((g, dx.shape[1]))
    np.add.at(sums, groups, dx)
    rng = np.random.default_rng(seed)
    angles = []
    for _ in range(n_boot):
        b = sums[rng.integers(0, g, g)].sum(axis=0)
        bn = np.linalg.norm(b)
        if bn > 0:
            angles.append(math.acos(max(-1.0, min(1.0, float(b @ nu / bn)))))
    ang_se = float(math.sqrt(np.mean(np.square(angles)))) if angles else 0.0
    return DirectionEstimate(nu, ang_se, _normal_estimate(m, m_se, len(blocks)), len(blocks))


def estimate_velocity(blocks) -> Estimate:
    """Ratio of mean block displacement to mean block duration."""
    blocks = as_block_table(blocks)
    _require_blocks(blocks)
    mu, se = _ratio(blocks.dx.astype(float), blocks.dtau.astype(float), _groups(blocks.walk_index))
    if float(np.linalg.norm(mu)) <= 3 * float(np.sqrt((se**2).sum())) and np.any(se > 0):
        note = "velocity not distinguishable from zero"
    else:
        note = ""
    return _normal_estimate(mu, se, len(blocks), note=note)


@dataclass
class IIDTestResult:
    ks_statistic: float
    ks_pvalue: float
    autocorr: float | None
    autocorr_ci: tuple | None
    n_blocks: int
    n_pairs: int
    degenerate: bool
    passed: bool

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in
                ("ks_statistic", "ks_pvalue", "autocorr", "autocorr_ci", "n_blocks", "n_pairs",
                 "degenerate", "passed")}


def iid_blocks_test(blocks, ell=None, min_blocks: int = 200) -> IIDTestResult:
    """Even-k vs odd-k KS test on dx.ell and lag-1 autocorrelation of dtau within walks."""
    blocks = as_block_table(blocks)
    _require_blocks(blocks, min_blocks)
    d = blocks.dx.shape[1]
    ell = np.eye(d)[0] if ell is None else np.asarray(ell, dtype=float)
    adv = blocks.dx @ ell
    even = adv[blocks.k % 2 == 0]
    odd = adv[blocks.k % 2 == 1]
    if np.all(adv == adv[0]):
        ks_stat, ks_p = 0.0, 1.0
    else:
        res = stats.ks_2samp(even, odd)
        ks_stat, ks_p = float(res.statistic), float(res.pvalue)
    order = np.lexsort((blocks.k, blocks.walk_index))
    wi, kk, dt = blocks.walk_index[order], blocks.k[order], blocks.dtau[order].astype(float)
    pair = (wi[1:] == wi[:-1]) & (kk[1:] == kk[:-1] + 1)
    n_pairs = int(pair.sum())
    var = dt.var()
    if var == 0 or n_pairs == 0:
        return IIDTestResult(ks_stat, ks_p, None, None, len(blocks), n_pairs, True, ks_p > SIGNIFICANCE)
    c = dt - dt.mean()
    r = float((c[:-1][pair] * c[1:][pair]).mean() / var)
    half = Z95 / math.sqrt(n_pairs)
    passed = ks_p > SIGNIFICANCE and abs(r) < 3 / math.sqrt(n_pairs)
    return IIDTestResult(ks_stat, ks_p, r, (r - half, r + half), len(blocks), n_pairs, False, passed)


# -- neighbourhood scan --------------------------------------------------------


def neighborhood_directions(ell, radius_deg: float, grid_points: int) -> np.ndarray:
    """Unit directions within ``radius_deg`` of ``ell``: an arc in d=2, spokes along each e_i otherwise."""
    if grid_points < 1:
        raise ValueError("empty direction grid")
    u = _unit(ell)
    d = u.shape[0]
    if d == 1:
        return u[None, :]
    basis = complete_basis(u)
    if d == 2:
        thetas = np.radians(np.linspace(-radius_deg, radius_deg, grid_points)) if grid_points > 1 else np.zeros(1)
        return np.array([math.cos(t) * u + math.sin(t) * basis[0] for t in thetas])
    per = max(1, (grid_points - 1) // (2 * (d - 1)))
    out = [u]
    for e in basis:
        for s in (1, -1):
            for t in np.radians(np.linspace(radius_deg / per, radius_deg, per)):
                out.append(math.cos(t) * u + s * math.sin(t) * e)
    return np.array(out)


def half_space_directions(nu, points: int) -> np.ndarray:
    """Directions at angles 0..90 degrees on either side of ``nu`` (closed half-space)."""
    return neighborhood_directions(nu, 90.0, points)


@dataclass
class NeighborhoodResult:
    directions: np.ndarray
    verdicts: list[TransienceVerdict]
    all_transient: bool
    nu: np.ndarray | None = None
    half_directions: np.ndarray | None = None
    half_dots: np.ndarray | None = None
    half_verdicts: list[TransienceVerdict] = field(default_factory=list)
    half_checked: np.ndarray | None = None  # directions with dot >= nu_min_dot
    half_all_transient: bool | None = None

    def to_dict(self) -> dict:
        out = {
            "directions": self.directions.tolist(),
            "verdicts": [v.label for v in self.verdicts],
            "all_transient": self.all_transient,
        }
        if self.nu is not None:
            out.update({
                "nu": self.nu.tolist(),
                "half_directions": self.half_directions.tolist(),
                "half_dots": self.half_dots.tolist(),
                "half_verdicts": [v.label for v in self.half_verdicts],
                "half_checked": self.half_checked.tolist(),
                "half_all_transient": self.half_all_transient,
            })
        return out


def neighborhood_scan(spec: DistributionSpec, ell, radius_deg: float, grid_points: int, n_walks: int,
                      horizon: int, master_seed: int, threads: int = 1, nu=None, half_points: int = 13,
                      nu_min_dot: float = 0.2,
                      thresholds: VerdictThresholds = VerdictThresholds()) -> NeighborhoodResult:
    """Transience verdicts on a grid of directions around ``ell`` (one shared batch of walks).

    When ``nu`` is given, also checks every grid direction ``l`` of the
    half-space around ``nu`` with ``l.nu >= nu_min_dot``; directions with
    ``l.nu <= 0`` never enter that summary.
    """
    dirs = neighborhood_directions(ell, radius_deg, grid_points)
    half = half_space_directions(nu, half_points) if nu is not None else np.zeros((0, len(dirs[0])))
    sample = transience_sample(spec, np.concatenate([dirs, half]), n_walks, horizon, master_seed, threads)
    verdicts = [transience_verdict(sample, i, thresholds) for i in range(len(dirs))]
    res = NeighborhoodResult(dirs, verdicts, all(v.label == "transient+" for v in verdicts))
    if nu is not None:
        nu = _unit(nu)
        dots = half @ nu
        hv = [transience_verdict(sample, len(dirs) + i, thresholds) for i in range(len(half))]
        checked = dots >= nu_min_dot
        res.nu, res.half_directions, res.half_dots, res.half_verdicts = nu, half, dots, hv
        res.half_checked = checked
        res.half_all_transient = all(v.label == "transient+" for v, c in zip(hv, checked) if c)
    return res


# -- clustering of final directions ------------------------------------------


@dataclass
class ClusterResult:
    n_clusters: int
    centers: np.ndarray
    masses: np.ndarray
    significant: list[int]
    antipodal: bool
    isotropic: bool
    rayleigh_p: float
    axial_p: float
    mass_p: float
    anomaly: bool
    message: str

    def to_dict(self) -> dict:
        return {
            "n_clusters": self.n_clusters,
            "centers": self.centers.tolist(),
            "masses": self.masses.tolist(),
            "significant": self.significant,
            "antipodal": self.antipodal,
            "isotropic": self.isotropic,
            "rayleigh_p": self.rayleigh_p,
            "axial_p": self.axial_p,
            "mass_p": self.mass_p,
            "anomaly": self.anomaly,
            "message": self.message,
        }


def direction_cluster_analysis(points, threshold_deg: float = 20.0, min_mass: float = 0.1,
                               antipodal_tol_deg: float = 5.0, min_walks: int = 100,
                               n_null: int = 199, null_seed: int = 0) -> ClusterResult:
    """Greedy cosine clustering of X_horizon/|X_horizon| over walks.

    Isotropy is tested first (Rayleigh test on the mean, Bingham-type test
    on the scatter matrix, and a Monte Carlo test of the heaviest cluster
    against ``n_null`` uniform clouds); an isotropic cloud means no asymptotic
    direction, whatever the greedy clusters look like.  Otherwise more than
    two clusters of mass >= ``min_mass`` is flagged as an anomaly.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    norms = np.linalg.norm(pts, axis=1)
    if not np.any(norms > 0):
        raise InsufficientDataError("every walk ended at the origin")
    units = pts[norms > 0] / norms[norms > 0, None]
    n, d = units.shape
    if n < min_walks:
        raise InsufficientDataError(f"{n} walks away from the origin, need at least {min_walks}")
    cos_thr = math.cos(math.radians(threshold_deg))
    centers, counts = _greedy_clusters(units, cos_thr)
    masses = np.array(counts) / n
    order = np.argsort(-masses, kind="stable")
    centers_arr = np.array(centers)[order]
    masses = masses[order]
    significant = [int(i) for i in np.flatnonzero(masses >= min_mass)]

    mean = units.mean(axis=0)
    rayleigh_p = float(stats.chi2.sf(d * n * float(mean @ mean), d))
    if d > 1:
        T = units.T @ units / n
        s = n * d * (d + 2) / 2 * (float(np.trace(T @ T)) - 1.0 / d)
        axial_p = float(stats.chi2.sf(s, (d - 1) * (d + 2) // 2))
    else:
        axial_p = 1.0
    # the two moment tests miss k-fold symmetric clouds, so also compare the
    # heaviest cluster with the same clustering of uniform directions
    null = np.random.default_rng(null_seed)
    heaviest = max(counts)
    exceed = 0
    for _ in range(n_null):
        g = null.standard_normal((n, d))
        exceed += max(_greedy_clusters(g / np.linalg.norm(g, axis=1)[:, None], cos_thr)[1]) >= heaviest
    mass_p = (1 + exceed) / (1 + n_null)
    isotropic = min(rayleigh_p, axial_p, mass_p) > SIGNIFICANCE

    antipodal = False
    if len(significant) >= 2:
        cos_tol = math.cos(math.radians(antipodal_tol_deg))
        a, b = centers_arr[significant[0]], centers_arr[significant[1]]
        antipodal = bool(a @ b <= -cos_tol)
    if isotropic:
        anomaly, message = False, "no asymptotic direction"
    elif len(significant) > 2:
        anomaly, message = True, f"{len(significant)} clusters of mass >= {min_mass}: more than two directions"
    elif len(significant) == 2 and not antipodal:
        anomaly, message = True, "two directions that are not opposite"
    elif len(significant) == 2:
        anomaly, message = False, "two opposite directions"
    elif len(significant) == 1:
        anomaly, message = False, "one direction"
    else:
        anomaly, message = False, "no cluster of significant mass"
    return ClusterResult(len(centers), centers_arr, masses, significant, antipodal, isotropic,
                         rayleigh_p, axial_p, mass_p, anomaly, message)


@njit(cache=True)
def _greedy_clusters_kernel(units, cos_thr):
    n, d = units.shape
    sums = np.zeros((n, d))
    centers = np.zeros((n, d))
    counts = np.zeros(n, dtype=np.int64)
    m = 0
    for i in range(n):
        u = units[i]
        placed = False
        for c in range(m):
            if (u * centers[c]).sum() >= cos_thr:
                sums[c] += u
                counts[c] += 1
                nrm = np.sqrt((sums[c] * sums[c]).sum())
                if nrm > 0:
                    centers[c] = sums[c] / nrm
                placed = True
                break
        if not placed:
            sums[m] = u
            centers[m] = u
            counts[m] = 1
            m += 1
    return centers[:m].copy(), counts[:m].copy()


def _greedy_clusters(units, cos_thr):
    """Assign each unit vector to the first running centre within ``cos_thr``, else open a new one."""
    centers, counts = _greedy_clusters_kernel(np.ascontiguousarray(units, dtype=np.float64), float(cos_thr))
    return list(centers), [int(c) for c in counts]
