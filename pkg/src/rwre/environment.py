"""Laws on the transition simplex and lazily realized i.i.d. environments.

Directions are ordered ``(+e1, -e1, +e2, -e2, ..., +ed, -ed)`` everywhere in
the package; index ``j`` moves coordinate ``j // 2`` by ``+1`` if ``j`` is even
and by ``-1`` otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numba import njit

from rwre import rng

FAMILIES = ("deterministic", "finite-mixture", "dirichlet", "drift-perturbed-uniform")

# numba-side family codes; drift-perturbed-uniform is stored as a deterministic vector
_DETERMINISTIC, _MIXTURE, _DIRICHLET = 0, 1, 2

_SIMPLEX_TOL = 1e-12


class DistributionError(ValueError):
    """Raised for malformed distribution parameters."""


@dataclass(frozen=True)
class DistributionSpec:
    """A law on the (2d-1)-simplex.

    ``vectors``/``weights`` hold the atoms of the deterministic, mixture and
    drift-perturbed families; ``concentrations`` the Dirichlet parameters.
    ``params`` keeps the user-facing parameters for serialization.
    """

    family: str
    d: int
    vectors: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    concentrations: np.ndarray = field(repr=False)
    params: dict = field(default_factory=dict, compare=False)

    @property
    def code(self) -> int:
        if self.family == "finite-mixture":
            return _MIXTURE
        if self.family == "dirichlet":
            return _DIRICHLET
        return _DETERMINISTIC

    def mean_vector(self) -> np.ndarray:
        """Expected transition vector under the law."""
        if self.family == "dirichlet":
            return self.concentrations / self.concentrations.sum()
        return self.weights @ self.vectors

    def flipped(self) -> "DistributionSpec":
        """Mirror image through the hyperplane orthogonal to e1 (swaps +e1 and -e1)."""
        perm = np.arange(2 * self.d)
        perm[0], perm[1] = 1, 0
        if self.family == "dirichlet":
            return make_distribution("dirichlet", self.d, self.concentrations[perm])
        if self.family == "finite-mixture":
            return make_distribution(
                "finite-mixture", self.d, {"vectors": self.vectors[:, perm], "weights": self.weights}
            )
        return make_distribution("deterministic", self.d, self.vectors[0][perm])

    def to_config(self) -> dict[str, str]:
        """Key/value pairs for the ``[distribution]`` section of a config file."""
        out = {"family": self.family, "d": str(self.d)}
        fmt = lambda v: ", ".join(repr(float(x)) for x in v)  # noqa: E731
        if self.family == "deterministic":
            out["probs"] = fmt(self.vectors[0])
        elif self.family == "finite-mixture":
            out["vectors"] = "; ".join(fmt(v) for v in self.vectors)
            out["weights"] = fmt(self.weights)
        elif self.family == "dirichlet":
            out["concentrations"] = fmt(self.concentrations)
        else:
            out["epsilon"] = fmt(self.params["epsilon"])
        return out


def _check_prob_vector(v: np.ndarray, d: int, what: str) -> None:
    if v.shape != (2 * d,):
        raise DistributionError(f"{what}: expected length {2 * d}, got {v.shape[0] if v.ndim == 1 else v.shape}")
    if not np.all(np.isfinite(v)):
        raise DistributionError(f"{what}: non-finite entry")
    if np.any(v < 0):
        raise DistributionError(f"{what}: negative probability at index {int(np.argmin(v))}")
    if abs(math.fsum(v) - 1.0) > _SIMPLEX_TOL:
        raise DistributionError(f"{what}: entries sum to {math.fsum(v)!r}, not 1")


def make_distribution(family: str, d: int, params) -> DistributionSpec:
    """Validate parameters and build a :class:`DistributionSpec`.

    ``params`` is a probability vector for ``deterministic``, a mapping with
    ``vectors`` and ``weights`` for ``finite-mixture``, the concentration
    vector for ``dirichlet`` and the perturbation ``epsilon`` for
    ``drift-perturbed-uniform``.
    """
    if family not in FAMILIES:
        raise DistributionError(f"unknown family {family!r}; expected one of {', '.join(FAMILIES)}")
    if int(d) != d or d < 1:
        raise DistributionError(f"dimension must be a positive integer, got {d!r}")
    d = int(d)
    empty = np.zeros(0)
    if family == "deterministic":
        v = np.asarray(params, dtype=float).reshape(-1)
        _check_prob_vector(v, d, "probs")
        return DistributionSpec(family, d, v[None, :].copy(), np.ones(1), empty, {"probs": v})
    if family == "finite-mixture":
        vectors = np.asarray(params["vectors"], dtype=float)
        weights = np.asarray(params["weights"], dtype=float).reshape(-1)
        if vectors.ndim != 2 or vectors.shape[0] == 0:
            raise DistributionError("vectors: expected a non-empty list of probability vectors")
        if weights.shape[0] != vectors.shape[0]:
            raise DistributionError(f"weights: {weights.shape[0]} weights for {vectors.shape[0]} vectors")
        for i, v in enumerate(vectors):
            _check_prob_vector(v, d, f"vectors[{i}]")
        if np.any(weights < 0):
            raise DistributionError("weights: negative weight")
        if abs(math.fsum(weights) - 1.0) > _SIMPLEX_TOL:
            raise DistributionError(f"weights: sum to {math.fsum(weights)!r}, not 1")
        return DistributionSpec(family, d, vectors.copy(), weights.copy(), empty,
                                {"vectors": vectors, "weights": weights})
    if family == "dirichlet":
        conc = np.asarray(params, dtype=float).reshape(-1)
        if conc.shape != (2 * d,):
            raise DistributionError(f"concentrations: expected length {2 * d}, got {conc.shape[0]}")
        if not np.all(np.isfinite(conc)) or np.any(conc <= 0):
            raise DistributionError("concentrations: must be strictly positive")
        return DistributionSpec(family, d, empty.reshape(0, 2 * d), empty, conc.copy(),
                                {"concentrations": conc})
    eps = np.asarray(params, dtype=float).reshape(-1)
    if eps.shape != (2 * d,):
        raise DistributionError(f"epsilon: expected length {2 * d}, got {eps.shape[0]}")
    if abs(math.fsum(eps)) > _SIMPLEX_TOL:
        raise DistributionError(f"epsilon: entries sum to {math.fsum(eps)!r}, not 0")
    if np.any(eps <= -1.0 / (2 * d)):
        raise DistributionError(f"epsilon: entries must exceed {-1.0 / (2 * d)!r}")
    v = np.full(2 * d, 1.0 / (2 * d)) + eps
    return DistributionSpec(family, d, v[None, :], np.ones(1), empty, {"epsilon": eps})


@njit(cache=True, nogil=True)
def site_probs_into(out, code, vectors, cumw, conc, env_key, x):
    """Write the transition vector of site ``x`` into ``out``."""
    if code == 0:
        out[:] = vectors[0]
        return
    key = rng.derive_key(env_key, rng.DOMAIN_SITE, x)
    if code == 1:
        u = rng.uniform(key, 0)
        m = cumw.shape[0]
        j = m - 1
        for i in range(m):
            if u < cumw[i]:
                j = i
                break
        out[:] = vectors[j]
        return
    ctr = 0
    total = 0.0
    for i in range(conc.shape[0]):
        g, ctr = rng.gamma_variate(conc[i], key, ctr)
        out[i] = g
        total += g
    if total > 0.0:
        for i in range(conc.shape[0]):
            out[i] /= total
    else:
        # every gamma underflowed: fall back to a single uniformly chosen direction
        out[:] = 0.0
        out[int(rng.uniform(key, ctr) * conc.shape[0])] = 1.0


@dataclass(frozen=True)
class Environment:
    """An infinite quenched environment, realized site by site on demand."""

    spec: DistributionSpec
    master_seed: int

    @property
    def d(self) -> int:
        return self.spec.d

    @property
    def key(self) -> np.uint64:
        return rng.as_u64(self.master_seed)

    def kernel_args(self):
        s = self.spec
        cumw = np.cumsum(s.weights) if s.weights.size else np.zeros(0)
        if cumw.size:
            cumw[-1] = 1.0
        return s.code, s.vectors, cumw, s.concentrations, self.key


def site_probs(env: Environment, x: Sequence[int]) -> np.ndarray:
    """Transition probabilities at lattice site ``x``."""
    x = np.asarray(x, dtype=np.int64).reshape(-1)
    if x.shape[0] != env.d:
        raise ValueError(f"site has {x.shape[0]} coordinates, environment has dimension {env.d}")
    out = np.empty(2 * env.d)
    code, vectors, cumw, conc, key = env.kernel_args()
    site_probs_into(out, code, vectors, cumw, conc, key, x)
    return out


@dataclass(frozen=True)
class EllipticityReport:
    holds: bool
    witnesses: list = field(default_factory=list)  # (vector index, entry index) with zero mass


def validate_strict_ellipticity(spec: DistributionSpec) -> EllipticityReport:
    if spec.family == "dirichlet":
        return EllipticityReport(True)
    witnesses = []
    for i, (v, w) in enumerate(zip(spec.vectors, spec.weights)):
        if w <= 0:
            continue
        witnesses.extend((i, int(j)) for j in np.flatnonzero(v <= 0))
    return EllipticityReport(not witnesses, witnesses)
