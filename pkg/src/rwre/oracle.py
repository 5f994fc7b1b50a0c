"""Closed-form references used by the acceptance tests.

For d=1 with rho = omega(-1)/omega(+1): the walk is transient to the right
iff E log rho < 0, and its speed is (1 - E rho)/(1 + E rho) when E rho < 1,
-(1 - E[1/rho])/(1 + E[1/rho]) when E[1/rho] < 1, and 0 otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from rwre.environment import DistributionSpec

_ZERO_TOL = 1e-12


class UnsupportedSpecError(ValueError):
    pass


@dataclass(frozen=True)
class OneDVerdict:
    classification: str  # transient+, transient-, recurrent
    E_log_rho: float
    E_rho: float
    E_inv_rho: float
    speed: float


def oneD_classify(spec: DistributionSpec) -> OneDVerdict:
    if spec.d != 1:
        raise UnsupportedSpecError("one-dimensional spec required")
    if spec.family == "dirichlet":
        raise UnsupportedSpecError("no closed form implemented for the dirichlet family")
    atoms = [(float(w), float(v[0]), float(v[1])) for v, w in zip(spec.vectors, spec.weights) if w > 0]
    if any(p <= 0 or q <= 0 for _, p, q in atoms):
        raise UnsupportedSpecError("spec is not strictly elliptic")
    e_log = math.fsum(w * math.log(q / p) for w, p, q in atoms)
    e_rho = math.fsum(w * q / p for w, p, q in atoms)
    e_inv = math.fsum(w * p / q for w, p, q in atoms)
    if e_log < -_ZERO_TOL:
        cls = "transient+"
    elif e_log > _ZERO_TOL:
        cls = "transient-"
    else:
        cls = "recurrent"
    if cls == "recurrent":
        speed = 0.0
    elif e_rho < 1:
        speed = (1 - e_rho) / (1 + e_rho)
    elif e_inv < 1:
        speed = -(1 - e_inv) / (1 + e_inv)
    else:
        speed = 0.0
    return OneDVerdict(cls, e_log, e_rho, e_inv, speed)


@dataclass(frozen=True)
class HomogeneousOracle:
    drift: np.ndarray
    direction: np.ndarray | None


def homogeneous_oracle(probs, d: int) -> HomogeneousOracle:
    """Drift and (if nonzero) direction of the walk with the same law at every site."""
    probs = np.asarray(probs, dtype=float)
    if probs.shape != (2 * d,):
        raise ValueError(f"expected {2 * d} probabilities")
    drift = probs[0::2] - probs[1::2]
    norm = float(np.linalg.norm(drift))
    return HomogeneousOracle(drift, drift / norm if norm > 0 else None)
