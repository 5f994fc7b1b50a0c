"""Cone and slab renewal structures detected on finite trajectories.

A cone exit that has not happened within ``W`` steps of a candidate record
is read as "never": such a candidate is a confirmed renewal time provided the
trajectory still has ``W`` steps left after it.  Exit times of every anchor
are precomputed with a next-smaller-element pass over each tilted
projection, so one scan costs O(horizon) regardless of ``W``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from numba import njit

from rwre.geometry import ConeFrame
from rwre.walk import CENSORED, StoppingResult, Trajectory, hit_at, positions_from_steps


@dataclass(frozen=True)
class Attempt:
    """One (S_k, R_k, M_k) triple; ``segment`` counts restarts after a renewal."""

    segment: int
    S: int
    R: StoppingResult
    M: float | None


@dataclass
class RenewalScan:
    attempts: list[Attempt]
    K: int | None
    taus: list[int]
    W: int
    censored_tail: bool

    def first_segment(self) -> list[Attempt]:
        return [a for a in self.attempts if a.segment == 0]


@dataclass(frozen=True)
class Block:
    k: int
    dtau: int
    dx: tuple
    sup_norm: float
    walk_index: int = 0


# -- kernels ----------------------------------------------------------------


@njit(cache=True, nogil=True)
def _projections(pos, ell, basis, alpha):
    n, d = pos.shape
    m = basis.shape[0]
    A = np.empty(n)
    T = np.empty((n, 2 * m))
    for t in range(n):
        a = 0.0
        for j in range(d):
            a += pos[t, j] * ell[j]
        A[t] = a
        for i in range(m):
            b = 0.0
            for j in range(d):
                b += pos[t, j] * basis[i, j]
            b *= alpha
            T[t, i] = a + b
            T[t, m + i] = a - b
    return A, T


@njit(cache=True, nogil=True)
def _next_smaller(vals, out):
    """out[t] = min(out[t], first s > t with vals[s] < vals[t])."""
    n = vals.shape[0]
    stack = np.empty(n, dtype=np.int64)
    top = 0
    for s in range(n):
        v = vals[s]
        while top > 0 and v < vals[stack[top - 1]]:
            top -= 1
            t = stack[top]
            if s < out[t]:
                out[t] = s
        stack[top] = s
        top += 1


@njit(cache=True, nogil=True)
def exit_times(A, T, slab):
    """First exit after each anchor (len(A) when none); slab mode uses strict drops of A."""
    n = A.shape[0]
    out = np.full(n, n, dtype=np.int64)
    if slab or T.shape[1] == 0:
        _next_smaller(A, out)
    else:
        for j in range(T.shape[1]):
            _next_smaller(T[:, j].copy(), out)
    return out


@njit(cache=True, nogil=True)
def _scan(A, exits, W):
    h = A.shape[0] - 1
    pm = np.empty(h + 1)
    pm[0] = A[0]
    for t in range(1, h + 1):
        pm[t] = max(pm[t - 1], A[t])
    rec_next = np.empty(h + 1, dtype=np.int64)
    nxt = h + 1
    for t in range(h, -1, -1):
        rec_next[t] = nxt
        if t >= 1 and A[t] > pm[t - 1]:
            nxt = t
    att = np.empty((h + 2, 4), dtype=np.int64)  # segment, S, R, R-hit
    att_m = np.empty(h + 2)
    taus = np.empty(h + 1, dtype=np.int64)
    na = 0
    nt = 0
    seg = 0
    tail = False
    S = rec_next[0]
    while S <= h:
        e = exits[S]
        lim = min(h, S + W)
        if e <= lim:
            att[na, 0] = seg
            att[na, 1] = S
            att[na, 2] = e
            att[na, 3] = 1
            att_m[na] = pm[e]
            na += 1
            S = rec_next[e]
        elif S + W <= h:
            att[na, 0] = seg
            att[na, 1] = S
            att[na, 2] = S + W
            att[na, 3] = 0
            att_m[na] = np.nan
            na += 1
            taus[nt] = S
            nt += 1
            seg += 1
            S = rec_next[S]
        else:
            att[na, 0] = seg
            att[na, 1] = S
            att[na, 2] = h
            att[na, 3] = 0
            att_m[na] = np.nan
            na += 1
            tail = True
            break
    return att[:na], att_m[:na], taus[:nt], tail


@njit(cache=True, nogil=True)
def _blocks(pos, taus):
    nb = max(taus.shape[0] - 1, 0)
    d = pos.shape[1]
    dtau = np.empty(nb, dtype=np.int64)
    dx = np.empty((nb, d), dtype=np.int64)
    sup = np.empty(nb)
    for k in range(nb):
        a = taus[k]
        b = taus[k + 1]
        dtau[k] = b - a
        best = 0
        for t in range(a, b + 1):
            r = 0
            for j in range(d):
                q = pos[t, j] - pos[a, j]
                r += q * q
            if r > best:
                best = r
        for j in range(d):
            dx[k, j] = pos[b, j] - pos[a, j]
        sup[k] = math.sqrt(best)
    return dtau, dx, sup


def _frame_arrays(frame: ConeFrame):
    return frame.ell.astype(float), frame.basis.astype(float).reshape(-1, frame.d), float(frame.alpha)


def _to_scan(att, att_m, taus, tail, W) -> RenewalScan:
    attempts = [
        Attempt(int(seg), int(s), hit_at(r) if hit else CENSORED, None if math.isnan(m) else float(m))
        for (seg, s, r, hit), m in zip(att, att_m)
    ]
    K = None
    if len(taus):
        first = [i for i, a in enumerate(attempts) if a.segment == 0]
        K = first[-1]
    return RenewalScan(attempts, K, [int(t) for t in taus], int(W), bool(tail))


def _check_window(traj: Trajectory, W: int) -> None:
    if W < 1:
        raise ValueError("confirm window W must be at least 1")
    if traj.horizon < W:
        raise ValueError(f"horizon {traj.horizon} shorter than confirm window {W}")


def cone_renewal_scan(traj: Trajectory, frame: ConeFrame, W: int) -> RenewalScan:
    """S/R/M recursion and the confirmed cone renewal times of ``traj``."""
    _check_window(traj, W)
    pos = traj.positions()
    A, T = _projections(pos, *_frame_arrays(frame))
    return _to_scan(*_scan(A, exit_times(A, T, False), W), W)


def slab_renewal_scan(traj: Trajectory, ell, W: int) -> RenewalScan:
    """Same recursion with the cone exit replaced by the first strict drop of X.ell."""
    _check_window(traj, W)
    ell = np.asarray(ell, dtype=float)
    A, T = _projections(traj.positions(), ell, np.zeros((0, ell.shape[0])), 1.0)
    return _to_scan(*_scan(A, exit_times(A, T, True), W), W)


def extract_blocks(scan: RenewalScan, traj: Trajectory, walk_index: int = 0) -> list[Block]:
    if len(scan.taus) < 2:
        return []
    dtau, dx, sup = _blocks(traj.positions(), np.asarray(scan.taus, dtype=np.int64))
    return [
        Block(k + 1, int(dtau[k]), tuple(int(v) for v in dx[k]), float(sup[k]), walk_index)
        for k in range(dtau.shape[0])
    ]


@dataclass
class BlockTable:
    """Columnar store of blocks gathered over many walks."""

    walk_index: np.ndarray
    k: np.ndarray
    dtau: np.ndarray
    dx: np.ndarray
    sup_norm: np.ndarray

    def __len__(self) -> int:
        return int(self.dtau.shape[0])

    @classmethod
    def empty(cls, d: int) -> "BlockTable":
        z = np.zeros(0, dtype=np.int64)
        return cls(z, z.copy(), z.copy(), np.zeros((0, d), dtype=np.int64), np.zeros(0))

    @classmethod
    def from_blocks(cls, blocks: Sequence[Block], d: int | None = None) -> "BlockTable":
        if not blocks:
            return cls.empty(d or 1)
        return cls(
            np.array([b.walk_index for b in blocks], dtype=np.int64),
            np.array([b.k for b in blocks], dtype=np.int64),
            np.array([b.dtau for b in blocks], dtype=np.int64),
            np.array([b.dx for b in blocks], dtype=np.int64),
            np.array([b.sup_norm for b in blocks], dtype=float),
        )

    @classmethod
    def concat(cls, tables: Iterable["BlockTable"], d: int) -> "BlockTable":
        tables = [t for t in tables if len(t)]
        if not tables:
            return cls.empty(d)
        return cls(*(np.concatenate([getattr(t, f) for t in tables]) for f in
                     ("walk_index", "k", "dtau", "dx", "sup_norm")))

    def to_csv(self, header_comments: Sequence[str] = ()) -> str:
        buf = io.StringIO()
        for line in header_comments:
            buf.write(f"# {line}\n")
        d = self.dx.shape[1]
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["walk_index", "k", "dtau", *[f"dx{j + 1}" for j in range(d)], "sup_norm", "censored"])
        for i in range(len(self)):
            w.writerow([int(self.walk_index[i]), int(self.k[i]), int(self.dtau[i]),
                        *(int(v) for v in self.dx[i]), repr(float(self.sup_norm[i])), 0])
        return buf.getvalue()


def as_block_table(blocks) -> BlockTable:
    if isinstance(blocks, BlockTable):
        return blocks
    return BlockTable.from_blocks(list(blocks))


@dataclass
class WalkRenewals:
    """Per-walk reduction used by the batch estimators."""

    blocks: BlockTable
    exit0: int  # cone exit from the origin, horizon+1 when none
    first_hits: int  # attempts of the first segment whose cone was exited
    n_taus: int
    censored_tail: bool


def analyze_walk(steps: np.ndarray, start: np.ndarray, frame: ConeFrame, W: int, walk_index: int = 0) -> WalkRenewals:
    pos = positions_from_steps(np.asarray(start, dtype=np.int64), steps)
    A, T = _projections(pos, *_frame_arrays(frame))
    exits = exit_times(A, T, False)
    att, _, taus, tail = _scan(A, exits, W)
    dtau, dx, sup = _blocks(pos, taus)
    nb = dtau.shape[0]
    table = BlockTable(np.full(nb, walk_index, dtype=np.int64), np.arange(1, nb + 1, dtype=np.int64), dtau, dx, sup)
    first = att[att[:, 0] == 0]
    return WalkRenewals(table, int(exits[0]), int(first[:, 3].sum()), int(taus.shape[0]), bool(tail))


@dataclass(frozen=True)
class ConeDiagnostics:
    N: StoppingResult
    C: float | None
    M: float | None
    alpha1: float | None

    @property
    def censored(self) -> bool:
        return self.N.censored


def cone_diagnostics(traj: Trajectory, ell, basis, alpha2: float) -> ConeDiagnostics:
    """Entry time N into the cone of aperture ``alpha2`` for good, and the
    derived C, M and the random aperture alpha1 = min(C / sqrt(M), alpha2)."""
    ell = np.asarray(ell, dtype=float)
    basis = np.asarray(basis, dtype=float).reshape(-1, ell.shape[0])
    pos = traj.positions()
    rel = (pos - pos[0])[1:]
    if rel.shape[0] == 0:
        return ConeDiagnostics(CENSORED, None, None, None)
    a = rel @ ell
    b = rel @ basis.T
    if basis.shape[0]:
        inside = np.all(np.concatenate([a[:, None] + alpha2 * b, a[:, None] - alpha2 * b], axis=1) >= 0, axis=1)
    else:
        inside = a >= 0
    if not inside[-1]:
        return ConeDiagnostics(CENSORED, None, None, None)
    outside = np.flatnonzero(~inside)
    N = int(outside[-1]) + 2 if outside.size else 1
    C = float(a[:N].min())
    M = float((b[:N] ** 2).sum(axis=1).max()) if basis.shape[0] else 0.0
    alpha1 = alpha2 if M == 0 else min(C / math.sqrt(M), alpha2)
    return ConeDiagnostics(hit_at(N), C, M, float(alpha1))
