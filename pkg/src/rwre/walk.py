"""Quenched trajectories and the stopping times read off them."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from numba import njit

from rwre import rng
from rwre.environment import DistributionSpec, Environment, site_probs_into
from rwre.geometry import ConeFrame, tilted_products


def unit_offsets(d: int) -> np.ndarray:
    """Offsets in the global order (+e1, -e1, ..., +ed, -ed), shape (2d, d)."""
    out = np.zeros((2 * d, d), dtype=np.int64)
    for j in range(d):
        out[2 * j, j] = 1
        out[2 * j + 1, j] = -1
    return out


@dataclass(frozen=True)
class StoppingResult:
    """Either ``hit`` at absolute time ``t`` or censored at the horizon."""

    hit: bool
    t: int | None = None

    @property
    def censored(self) -> bool:
        return not self.hit

    def __repr__(self) -> str:
        return f"hit({self.t})" if self.hit else "censored"


CENSORED = StoppingResult(False)


def hit_at(t: int) -> StoppingResult:
    return StoppingResult(True, int(t))


@dataclass(frozen=True)
class Trajectory:
    """Start site plus direction indices of the steps taken."""

    start: tuple
    steps: np.ndarray  # int8 direction indices
    walk_seed: int = 0

    @property
    def d(self) -> int:
        return len(self.start)

    @property
    def horizon(self) -> int:
        return int(self.steps.shape[0])

    @property
    def offsets(self) -> np.ndarray:
        return unit_offsets(self.d)[self.steps]

    def positions(self) -> np.ndarray:
        """Array of X_0..X_horizon, shape (horizon+1, d)."""
        return positions_from_steps(np.asarray(self.start, dtype=np.int64), self.steps)

    def position(self, n: int) -> np.ndarray:
        if not 0 <= n <= self.horizon:
            raise IndexError(f"time {n} outside [0, {self.horizon}]")
        return np.asarray(self.start, dtype=np.int64) + self.offsets[:n].sum(axis=0)

    @classmethod
    def from_positions(cls, path, walk_seed: int = 0) -> "Trajectory":
        """Build from an explicit nearest-neighbour path (used for hand traces)."""
        path = np.asarray(path, dtype=np.int64)
        if path.ndim == 1:
            path = path[:, None]
        diffs = np.diff(path, axis=0)
        steps = np.empty(diffs.shape[0], dtype=np.int8)
        for n, dv in enumerate(diffs):
            nz = np.flatnonzero(dv)
            if nz.size != 1 or abs(dv[nz[0]]) != 1:
                raise ValueError(f"positions {n} and {n + 1} are not lattice neighbours")
            j = int(nz[0])
            steps[n] = 2 * j + (0 if dv[j] > 0 else 1)
        return cls(tuple(int(v) for v in path[0]), steps, walk_seed)

    def dump(self) -> str:
        """One line ``n x_1 ... x_d`` per time."""
        pos = self.positions()
        return "".join(f"{n} " + " ".join(str(int(v)) for v in p) + "\n" for n, p in enumerate(pos))


def line_path(d: int, horizon: int) -> list:
    """Positions n*e1 for n = 0..horizon (handy straight-line trajectory)."""
    return [[n] + [0] * (d - 1) for n in range(horizon + 1)]


def step_sample(probs: Sequence[float], u: float) -> np.ndarray:
    """Offset chosen by inverting the CDF of ``probs`` at ``u``."""
    if not 0.0 <= u < 1.0:
        raise ValueError(f"u must lie in [0, 1), got {u!r}")
    probs = np.asarray(probs, dtype=float)
    return unit_offsets(probs.shape[0] // 2)[_invert_cdf(probs, u)]


@njit(cache=True, nogil=True)
def _invert_cdf(probs, u):
    acc = 0.0
    last = 0
    for j in range(probs.shape[0]):
        if probs[j] > 0.0:
            last = j
            acc += probs[j]
            if u < acc:
                return j
    return last


@njit(cache=True, nogil=True)
def positions_from_steps(start, steps):
    d = start.shape[0]
    h = steps.shape[0]
    out = np.empty((h + 1, d), dtype=np.int64)
    out[0] = start
    for n in range(h):
        out[n + 1] = out[n]
        j = steps[n]
        if j % 2 == 0:
            out[n + 1, j // 2] += 1
        else:
            out[n + 1, j // 2] -= 1
    return out


@njit(cache=True, nogil=True)
def simulate_into(out, start, code, vectors, cumw, conc, env_key, step_key):
    d = start.shape[0]
    x = start.copy()
    probs = np.empty(2 * d)
    if code == 0:
        site_probs_into(probs, code, vectors, cumw, conc, env_key, x)
    for n in range(out.shape[0]):
        if code != 0:
            site_probs_into(probs, code, vectors, cumw, conc, env_key, x)
        j = _invert_cdf(probs, rng.uniform(step_key, n))
        out[n] = j
        if j % 2 == 0:
            x[j // 2] += 1
        else:
            x[j // 2] -= 1


def simulate(env: Environment, start, horizon: int, walk_seed: int) -> Trajectory:
    """Sample ``horizon`` steps of the quenched walk from ``start``."""
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    start = np.asarray(start, dtype=np.int64).reshape(-1)
    if start.shape[0] != env.d:
        raise ValueError(f"start has {start.shape[0]} coordinates, environment has dimension {env.d}")
    steps = np.empty(horizon, dtype=np.int8)
    code, vectors, cumw, conc, key = env.kernel_args()
    step_key = rng.key_for(walk_seed, rng.DOMAIN_STEP)
    simulate_into(steps, start, code, vectors, cumw, conc, key, step_key)
    return Trajectory(tuple(int(v) for v in start), steps, int(walk_seed))


def annealed_trajectory(spec: DistributionSpec, horizon: int, master_seed: int, walk_index: int) -> Trajectory:
    """Walk ``walk_index`` of an annealed batch: fresh environment, fresh walk seed."""
    env = Environment(spec, rng.env_seed(master_seed, walk_index))
    return simulate(env, np.zeros(spec.d, dtype=np.int64), horizon, rng.walk_seed(master_seed, walk_index))


def map_walks(
    spec: DistributionSpec,
    n_walks: int,
    horizon: int,
    master_seed: int,
    fn: Callable[[int, np.ndarray], object],
    threads: int = 1,
    chunk: int = 32,
) -> list:
    """Apply ``fn(walk_index, steps)`` to every walk of an annealed batch.

    Results come back ordered by walk index; the thread count only changes
    wall-clock time.
    """
    env_args = Environment(spec, 0).kernel_args()[:4]
    start = np.zeros(spec.d, dtype=np.int64)

    def run(lo: int) -> list:
        hi = min(lo + chunk, n_walks)
        steps = np.empty(horizon, dtype=np.int8)
        out = []
        for w in range(lo, hi):
            env_key = rng.as_u64(rng.env_seed(master_seed, w))
            step_key = rng.key_for(rng.walk_seed(master_seed, w), rng.DOMAIN_STEP)
            simulate_into(steps, start, *env_args, env_key, step_key)
            out.append(fn(w, steps))
        return out

    starts = range(0, n_walks, chunk)
    if threads <= 1:
        parts = [run(lo) for lo in starts]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, starts))
    return [r for part in parts for r in part]


# -- stopping times ---------------------------------------------------------


def _first(mask: np.ndarray, offset: int) -> StoppingResult:
    idx = np.flatnonzero(mask)
    return hit_at(offset + idx[0]) if idx.size else CENSORED


def hit_halfspace(traj: Trajectory, ell, u: float, from_index: int = 0, positions=None) -> StoppingResult:
    """First n > from_index with X_n.ell > u."""
    if not 0 <= from_index <= traj.horizon:
        raise IndexError(f"from_index {from_index} outside [0, {traj.horizon}]")
    pos = traj.positions() if positions is None else positions
    proj = pos[from_index + 1:] @ np.asarray(ell, dtype=float)
    return _first(proj > u, from_index + 1)


def return_time(traj: Trajectory, ell, anchor_index: int = 0, positions=None) -> StoppingResult:
    """First n > anchor with X_n.ell <= X_anchor.ell."""
    if not 0 <= anchor_index <= traj.horizon:
        raise IndexError(f"anchor_index {anchor_index} outside [0, {traj.horizon}]")
    pos = traj.positions() if positions is None else positions
    rel = pos[anchor_index + 1:] - pos[anchor_index]
    return _first(rel @ np.asarray(ell, dtype=float) <= 0, anchor_index + 1)


def cone_exit(traj: Trajectory, frame: ConeFrame, anchor_index: int = 0, positions=None) -> StoppingResult:
    """First time the walk leaves the cone anchored at X_anchor."""
    if not 0 <= anchor_index <= traj.horizon:
        raise IndexError(f"anchor_index {anchor_index} outside [0, {traj.horizon}]")
    pos = traj.positions() if positions is None else positions
    rel = pos[anchor_index + 1:] - pos[anchor_index]
    if frame.d == 1:
        outside = rel @ frame.ell < 0
    else:
        outside = np.any(tilted_products(rel, frame) < 0, axis=-1)
    return _first(outside, anchor_index + 1)


def backtrack_times(traj: Trajectory, ell, n_max: int) -> list[StoppingResult]:
    """Successive return times, each anchored at the previous one."""
    if n_max < 1:
        raise ValueError("n_max must be at least 1")
    pos = traj.positions()
    out = []
    anchor = 0
    for _ in range(n_max):
        r = CENSORED if anchor is None else return_time(traj, ell, anchor, positions=pos)
        out.append(r)
        anchor = r.t if r.hit else None
    return out
