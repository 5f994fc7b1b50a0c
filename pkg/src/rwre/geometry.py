"""Cone geometry around a direction ``ell``.

The cone of aperture ``alpha`` is the closed set of ``x`` with
``x.ell + alpha * (x.e_i) >= 0`` and ``x.ell - alpha * (x.e_i) >= 0`` for every
vector ``e_i`` completing ``ell`` into an orthogonal frame.  Tilted products
are always evaluated as ``(x.ell) +/- alpha * (x.e_i)``: the sign of a rounded
sum equals the sign of the exact sum, so this form and ``alpha*|x.e_i| <= x.ell``
agree bit for bit.  In dimension one there are no ``e_i``; the cone is taken to
be the half-line ``x.ell >= 0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

_RESIDUAL_TOL = 1e-9


class GeometryError(ValueError):
    pass


def complete_basis(ell: Sequence[float]) -> np.ndarray:
    """Unit vectors e_2..e_d orthogonal to ``ell`` and to each other.

    Gram-Schmidt over the standard basis in index order; candidates whose
    residual norm falls below 1e-9 are skipped.  Returns shape ``(d-1, d)``.
    """
    ell = np.asarray(ell, dtype=float).reshape(-1)
    norm = np.linalg.norm(ell)
    if norm == 0:
        raise GeometryError("direction must be nonzero")
    d = ell.shape[0]
    frame = [ell / norm]
    out = []
    for j in range(d):
        if len(out) == d - 1:
            break
        v = np.zeros(d)
        v[j] = 1.0
        for u in frame:
            v = v - (v @ u) * u
        r = np.linalg.norm(v)
        if r < _RESIDUAL_TOL:
            continue
        v = v / r
        frame.append(v)
        out.append(v)
    return np.array(out, dtype=float).reshape(d - 1, d)


@dataclass(frozen=True)
class ConeFrame:
    ell: np.ndarray
    basis: np.ndarray  # (d-1, d)
    alpha: float
    tilted: np.ndarray = field(repr=False)  # rows ell + alpha e_i, then ell - alpha e_i
    c_alpha: float = 0.0

    @property
    def d(self) -> int:
        return self.ell.shape[0]

    @property
    def integer_ell(self) -> bool:
        return bool(np.all(self.ell == np.round(self.ell)))

    def to_dict(self) -> dict:
        return {
            "ell": self.ell.tolist(),
            "basis": self.basis.tolist(),
            "alpha": self.alpha,
            "tilted": self.tilted.tolist(),
            "c_alpha": self.c_alpha,
        }


def cone_frame(ell: Sequence[float], alpha: float) -> ConeFrame:
    if not alpha > 0:
        raise GeometryError(f"aperture must be positive, got {alpha!r}")
    ell = np.asarray(ell, dtype=float).reshape(-1)
    basis = complete_basis(ell)
    tilted = np.concatenate([ell + alpha * basis, ell - alpha * basis])
    d = ell.shape[0]
    c_alpha = math.sqrt(1.0 / float(ell @ ell) + (d - 1) / alpha**2)
    return ConeFrame(ell, basis, float(alpha), tilted, c_alpha)


def tilted_products(x, frame: ConeFrame) -> np.ndarray:
    """Products ``x.ell'_{+i}`` then ``x.ell'_{-i}``; works on ``(..., d)`` arrays."""
    x = np.asarray(x)
    a = x @ frame.ell
    b = frame.alpha * (x @ frame.basis.T)
    return np.concatenate([a[..., None] + b, a[..., None] - b], axis=-1)


def in_cone(x, frame: ConeFrame):
    """Closed-cone membership of ``x`` (or of each row of an array of sites)."""
    x = np.asarray(x)
    if frame.d == 1:
        return (x @ frame.ell) >= 0
    return np.all(tilted_products(x, frame) >= 0, axis=-1)


def in_cone_transverse(x, frame: ConeFrame):
    """Membership via ``alpha*|x.e_i| <= x.ell`` for all i."""
    x = np.asarray(x)
    a = x @ frame.ell
    if frame.d == 1:
        return a >= 0
    b = frame.alpha * (x @ frame.basis.T)
    return np.all(np.abs(b) <= a[..., None], axis=-1)


def gcd_normalize(ell: Sequence) -> tuple[int, ...]:
    """Positive multiple of a rational vector with coprime integer entries.

    Entries may be ints, :class:`fractions.Fraction` or strings such as ``"3/2"``.
    Floats are converted exactly, so pass strings for decimal literals.
    """
    fr = [Fraction(v) if not isinstance(v, float) else Fraction(v).limit_denominator(10**12) for v in ell]
    if all(f == 0 for f in fr):
        raise GeometryError("direction must be nonzero")
    lcm = 1
    for f in fr:
        lcm = lcm * f.denominator // math.gcd(lcm, f.denominator)
    ints = [int(f * lcm) for f in fr]
    g = 0
    for v in ints:
        g = math.gcd(g, abs(v))
    return tuple(v // g for v in ints)
