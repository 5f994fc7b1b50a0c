"""Sectioned key-value experiment configs.

::

    [experiment]
    name = identity-check
    master_seed = 7

    [distribution]
    family = deterministic
    d = 2
    probs = 0.4, 0.1, 0.25, 0.25

    [parameters]
    ell = 1, 0
    alpha = 0.5

Lines starting with ``#`` or ``;`` are comments.  Vectors are comma separated
and accept fractions (``3/2``).  Mixture vectors are separated by ``;``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from rwre.environment import DistributionError, DistributionSpec, make_distribution
from rwre.estimators import VerdictThresholds
from rwre.geometry import gcd_normalize

log = logging.getLogger(__name__)

EXPERIMENTS = (
    "transience-scan", "cone-survival", "renewal-stats", "identity-check", "decay-check", "direction",
    "velocity", "iid-test", "neighborhood", "cluster", "oneD-compare",
)
TOOLS = ("validate", "trace")

DEFAULTS = {
    "W": 1000,
    "horizon": 10000,
    "n_walks": 1000,
    "alpha": 0.5,
    "k_max": 5,
    "radius_deg": 30.0,
    "grid_points": 13,
    "half_points": 13,
    "nu_min_dot": 0.2,
    "ballistic_threshold": 0.5,
    "escape_threshold": 2.0 / 3.0,
    "walk_index": 0,
}

_NEEDS_ELL = {"transience-scan", "cone-survival", "renewal-stats", "identity-check", "decay-check", "direction",
              "velocity", "iid-test", "neighborhood"}
_INT_KEYS = ("W", "horizon", "n_walks", "k_max", "grid_points", "half_points", "walk_index")
_FLOAT_KEYS = ("alpha", "radius_deg", "nu_min_dot", "ballistic_threshold", "escape_threshold")
_SECTIONS = {
    "experiment": {"name", "master_seed"},
    "distribution": {"family", "d", "probs", "vectors", "weights", "concentrations", "epsilon"},
    "parameters": {"ell", "checkpoints", *_INT_KEYS, *_FLOAT_KEYS},
    "output": {"dir"},
}


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, key: str | None = None):
        self.message, self.line, self.key = message, line, key
        where = f"line {line}: " if line else ""
        super().__init__(f"{where}{message}")


@dataclass
class ExperimentConfig:
    experiment: str
    spec: DistributionSpec
    master_seed: int
    ell: tuple | None = None
    alpha: float = DEFAULTS["alpha"]
    W: int = DEFAULTS["W"]
    horizon: int = DEFAULTS["horizon"]
    n_walks: int = DEFAULTS["n_walks"]
    checkpoints: tuple = ()
    k_max: int = DEFAULTS["k_max"]
    radius_deg: float = DEFAULTS["radius_deg"]
    grid_points: int = DEFAULTS["grid_points"]
    half_points: int = DEFAULTS["half_points"]
    nu_min_dot: float = DEFAULTS["nu_min_dot"]
    thresholds: VerdictThresholds = field(default_factory=VerdictThresholds)
    walk_index: int = 0
    out_dir: str = "."
    notices: list = field(default_factory=list)

    @property
    def ell_array(self) -> np.ndarray:
        return np.array([float(v) for v in self.ell])

    def echo(self) -> dict:
        """Normalized config, defaults filled in (embedded in every artifact)."""
        params = {
            "alpha": self.alpha, "W": self.W, "horizon": self.horizon, "n_walks": self.n_walks,
            "checkpoints": list(self.checkpoints), "k_max": self.k_max, "radius_deg": self.radius_deg,
            "grid_points": self.grid_points, "half_points": self.half_points, "nu_min_dot": self.nu_min_dot,
            "ballistic_threshold": self.thresholds.ballistic, "escape_threshold": self.thresholds.escape,
        }
        if self.ell is not None:
            params["ell"] = [str(v) for v in self.ell]
        return {
            "experiment": {"name": self.experiment, "master_seed": self.master_seed},
            "distribution": self.spec.to_config(),
            "parameters": params,
        }


def _lex(text: str):
    """Yield (section, key, value, line) entries."""
    section = None
    seen: dict[tuple, int] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"malformed section header {line!r}", lineno)
            section = line[1:-1].strip()
            if section not in _SECTIONS:
                raise ConfigError(f"unknown section [{section}]", lineno)
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}", lineno)
        if section is None:
            raise ConfigError("key outside of any section", lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _SECTIONS[section]:
            raise ConfigError(f"unknown key {key!r} in [{section}]", lineno, key)
        if (section, key) in seen:
            raise ConfigError(f"duplicate key {key!r} (first on line {seen[section, key]})", lineno, key)
        seen[section, key] = lineno
        yield section, key, value, lineno


def _vector(value: str, line: int, key: str) -> list[Fraction]:
    try:
        out = [Fraction(tok.strip()) for tok in value.split(",")]
    except (ValueError, ZeroDivisionError):
        raise ConfigError(f"malformed vector {value!r}", line, key) from None
    if not out:
        raise ConfigError("empty vector", line, key)
    return out


def _scalar(value: str, line: int, key: str, kind):
    try:
        f = Fraction(value)
    except (ValueError, ZeroDivisionError):
        raise ConfigError(f"malformed number {value!r}", line, key) from None
    if kind is int:
        if f.denominator != 1:
            raise ConfigError(f"{key} must be an integer", line, key)
        return int(f)
    return float(f)


def parse_config(text: str, experiment: str | None = None) -> ExperimentConfig:
    """Parse and validate a config; ``experiment`` (e.g. the CLI subcommand) may supply or check the name."""
    entries = {(s, k): (v, ln) for s, k, v, ln in _lex(text)}

    def get(section, key):
        return entries.get((section, key), (None, None))

    name, name_line = get("experiment", "name")
    if experiment is not None and experiment not in TOOLS:
        if name is not None and name != experiment:
            raise ConfigError(f"config is for {name!r}, not {experiment!r}", name_line, "name")
        name = experiment
    if name is None and experiment == "trace":
        name = "trace"
    if name is None:
        raise ConfigError("missing key 'name' in [experiment]", None, "name")
    if name not in EXPERIMENTS and name not in TOOLS:
        raise ConfigError(f"unknown experiment {name!r}", name_line, "name")

    seed_v, seed_line = get("experiment", "master_seed")
    if seed_v is None:
        raise ConfigError("missing key 'master_seed' in [experiment]", None, "master_seed")
    seed = _scalar(seed_v, seed_line, "master_seed", int)
    if not 0 <= seed < 2**64:
        raise ConfigError("master_seed must be a 64-bit unsigned integer", seed_line, "master_seed")

    spec = _parse_distribution(get)

    notices: list[str] = []
    ell = None
    ell_v, ell_line = get("parameters", "ell")
    if ell_v is not None:
        vec = _vector(ell_v, ell_line, "ell")
        if len(vec) != spec.d:
            raise ConfigError(f"ell has {len(vec)} entries, distribution has dimension {spec.d}", ell_line, "ell")
        if all(v == 0 for v in vec):
            raise ConfigError("ell must be nonzero", ell_line, "ell")
        if name in ("identity-check", "decay-check"):
            norm = gcd_normalize(vec)
            if list(norm) != vec:
                msg = f"ell {', '.join(str(v) for v in vec)} normalized to {norm}"
                log.info(msg)
                notices.append(msg)
            vec = [Fraction(v) for v in norm]
        ell = tuple(int(v) if v.denominator == 1 else float(v) for v in vec)
    elif name in _NEEDS_ELL:
        raise ConfigError(f"missing key 'ell' in [parameters] (required by {name})", None, "ell")
    elif name == "oneD-compare":
        ell = (1,)

    values = dict(DEFAULTS)
    for key in _INT_KEYS:
        v, ln = get("parameters", key)
        if v is not None:
            values[key] = _scalar(v, ln, key, int)
    for key in _FLOAT_KEYS:
        v, ln = get("parameters", key)
        if v is not None:
            values[key] = _scalar(v, ln, key, float)

    def positive(key, minimum=1):
        if values[key] < minimum:
            raise ConfigError(f"{key} must be at least {minimum}", get("parameters", key)[1], key)

    positive("W")
    positive("n_walks")
    positive("horizon", 16 if name in ("transience-scan", "neighborhood", "cluster", "oneD-compare") else 1)
    positive("grid_points")
    positive("half_points")
    if not values["alpha"] > 0:
        raise ConfigError("alpha must be positive", get("parameters", "alpha")[1], "alpha")
    if name in ("renewal-stats", "identity-check", "decay-check", "direction", "velocity", "iid-test") \
            and values["horizon"] < values["W"]:
        raise ConfigError("horizon must be at least W", get("parameters", "horizon")[1], "horizon")
    if name == "decay-check" and values["k_max"] < 3:
        raise ConfigError("k_max must be at least 3", get("parameters", "k_max")[1], "k_max")
    if name == "oneD-compare" and spec.d != 1:
        raise ConfigError("oneD-compare needs a one-dimensional distribution", get("distribution", "d")[1], "d")

    cp_v, cp_line = get("parameters", "checkpoints")
    if cp_v is not None:
        cps = _vector(cp_v, cp_line, "checkpoints")
        if any(c.denominator != 1 for c in cps):
            raise ConfigError("checkpoints must be integers", cp_line, "checkpoints")
        cps = tuple(int(c) for c in cps)
        if any(b <= a for a, b in zip(cps, cps[1:])) or cps[0] < 0 or cps[-1] > values["horizon"]:
            raise ConfigError("checkpoints must increase and lie within [0, horizon]", cp_line, "checkpoints")
    else:
        cps = tuple(sorted({c for c in (10, 100, values["W"], values["horizon"]) if c <= values["horizon"]}))

    out_dir, _ = get("output", "dir")
    return ExperimentConfig(
        experiment=name, spec=spec, master_seed=seed, ell=ell, alpha=values["alpha"], W=values["W"],
        horizon=values["horizon"], n_walks=values["n_walks"], checkpoints=cps, k_max=values["k_max"],
        radius_deg=values["radius_deg"], grid_points=values["grid_points"], half_points=values["half_points"],
        nu_min_dot=values["nu_min_dot"],
        thresholds=VerdictThresholds(values["ballistic_threshold"], values["escape_threshold"]),
        walk_index=values["walk_index"], out_dir=out_dir or ".", notices=notices,
    )


def _parse_distribution(get) -> DistributionSpec:
    fam, fam_line = get("distribution", "family")
    if fam is None:
        raise ConfigError("missing key 'family' in [distribution]", None, "family")
    d_v, d_line = get("distribution", "d")
    if d_v is None:
        raise ConfigError("missing key 'd' in [distribution]", None, "d")
    d = _scalar(d_v, d_line, "d", int)
    need = {"deterministic": ("probs",), "finite-mixture": ("vectors", "weights"),
            "dirichlet": ("concentrations",), "drift-perturbed-uniform": ("epsilon",)}
    if fam not in need:
        raise ConfigError(f"unknown family {fam!r}", fam_line, "family")
    raw = {}
    for key in need[fam]:
        v, ln = get("distribution", key)
        if v is None:
            raise ConfigError(f"missing key {key!r} in [distribution] (family {fam})", None, key)
        if key == "vectors":
            raw[key] = [[float(x) for x in _vector(part, ln, key)] for part in v.split(";")]
        else:
            raw[key] = [float(x) for x in _vector(v, ln, key)]
    params = raw if fam == "finite-mixture" else raw[need[fam][0]]
    try:
        return make_distribution(fam, d, params)
    except DistributionError as exc:
        key = need[fam][-1]
        raise ConfigError(str(exc), get("distribution", key)[1] or fam_line, key) from None
