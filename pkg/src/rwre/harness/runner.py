"""Experiment orchestration and artifact writing.

Artifacts per run, all under ``out_dir`` and written atomically:
``<experiment>_summary.json``, ``<experiment>_detail.csv`` and
``<experiment>_<series>.dat`` (two whitespace-separated columns).  Each
starts with the tool version, master seed and config echo; nothing in them
depends on the thread count or the wall clock.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import tempfile
from pathlib import Path

import numpy as np

from rwre import __version__
from rwre.environment import validate_strict_ellipticity
from rwre.estimators import (
    _cone_exits,
    DirectionUndefinedError,
    InsufficientDataError,
    decay_from_sample,
    direction_cluster_analysis,
    endpoint_velocity,
    estimate_direction,
    estimate_velocity,
    identity_from_sample,
    iid_blocks_test,
    neighborhood_scan,
    renewal_sample,
    survival_from_exits,
    transience_sample,
    transience_verdict,
)
from rwre.geometry import cone_frame
from rwre.harness.config import ConfigError, ExperimentConfig
from rwre.oracle import homogeneous_oracle, oneD_classify
from rwre.walk import annealed_trajectory

log = logging.getLogger(__name__)

EXIT_OK, EXIT_CONFIG, EXIT_INSUFFICIENT = 0, 1, 2


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


class _Artifacts:
    def __init__(self, config: ExperimentConfig, out_dir: Path):
        self.config = config
        self.out_dir = out_dir
        self.paths: list[Path] = []
        self.header = [
            f"rwre {__version__} experiment={config.experiment} master_seed={config.master_seed}",
            "config " + json.dumps(_jsonable(config.echo()), sort_keys=True),
        ]

    def _write(self, name: str, text: str) -> None:
        path = self.out_dir / name
        try:
            _atomic_write(path, text)
        except OSError as exc:
            raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc
        self.paths.append(path)

    def csv(self, columns: list[str], rows) -> None:
        buf = io.StringIO()
        for line in self.header:
            buf.write(f"# {line}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_cell(v) for v in row])
        self._write(f"{self.config.experiment}_detail.csv", buf.getvalue())

    def csv_text(self, text: str) -> None:
        self._write(f"{self.config.experiment}_detail.csv", text)

    def plot(self, series: str, xs, ys, labels=("x", "y")) -> None:
        lines = [f"# {h}" for h in self.header] + [f"# {labels[0]} {labels[1]}"]
        lines += [f"{_cell(x)} {_cell(y)}" for x, y in zip(xs, ys)]
        self._write(f"{self.config.experiment}_{series}.dat", "\n".join(lines) + "\n")

    def summary(self, status: str, results: dict) -> None:
        ell = validate_strict_ellipticity(self.config.spec)
        doc = {
            "tool": "rwre",
            "version": __version__,
            "experiment": self.config.experiment,
            "master_seed": self.config.master_seed,
            "config": self.config.echo(),
            "notices": self.config.notices,
            "strict_ellipticity": ell.holds,
            "status": status,
            "results": results,
        }
        if not ell.holds:
            doc["ellipticity_witnesses"] = ell.witnesses
        self._write(f"{self.config.experiment}_summary.json",
                    json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n")


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def run_experiment(config: ExperimentConfig, threads: int = 1, out_dir: str | os.PathLike | None = None) -> tuple[int, list[Path]]:
    """Run ``config`` and write its artifacts; returns (exit code, written paths)."""
    art = _Artifacts(config, Path(out_dir if out_dir is not None else config.out_dir))
    try:
        results = _RUNNERS[config.experiment](config, threads, art)
    except InsufficientDataError as exc:
        log.warning("insufficient data: %s", exc)
        art.summary("insufficient-data", {"error": str(exc)})
        return EXIT_INSUFFICIENT, art.paths
    except (ConfigError, ValueError) as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG, art.paths
    art.summary("ok", results)
    return EXIT_OK, art.paths


# -- individual experiments ----------------------------------------------------


def _frame(c: ExperimentConfig):
    return cone_frame(c.ell_array, c.alpha)


def _renewals(c: ExperimentConfig, threads: int):
    return renewal_sample(c.spec, _frame(c), c.n_walks, c.horizon, c.W, c.master_seed, threads)


def _block_csv(art: _Artifacts, sample) -> None:
    art.csv_text(sample.blocks.to_csv(art.header))


def _run_transience(c, threads, art):
    sample = transience_sample(c.spec, [c.ell_array], c.n_walks, c.horizon, c.master_seed, threads)
    verdict = transience_verdict(sample, 0, c.thresholds)
    plus, minus = sample.ballistic(0, 1), sample.ballistic(0, -1)
    labels = np.where(plus, "transient+", np.where(minus, "transient-", "undecided"))
    d = c.spec.d
    art.csv(["walk_index", *[f"x{j + 1}" for j in range(d)], "final_proj", "min_second_half", "label"],
            ([w, *sample.endpoints[w], sample.final[w, 0], sample.low[w, 0], labels[w]] for w in range(c.n_walks)))
    order = np.sort(sample.final[:, 0])
    art.plot("final_projection", np.arange(1, c.n_walks + 1) / c.n_walks, order, ("quantile", "final_proj"))
    return {
        "verdict": verdict.to_dict(),
        "counts": {lab: int((labels == lab).sum()) for lab in ("transient+", "transient-", "undecided")},
        "threshold": c.horizon ** 0.75,
    }


def _run_survival(c, threads, art):
    exits = _cone_exits(c.spec, _frame(c), c.n_walks, c.horizon, c.master_seed, threads)
    curve = survival_from_exits(exits, c.checkpoints, c.horizon)
    art.csv(["walk_index", "exit_time", "censored"],
            ([w, "" if e > c.horizon else int(e), int(e > c.horizon)] for w, e in enumerate(exits)))
    art.plot("survival", curve.checkpoints, [s.value for s in curve.survival], ("t", "survival"))
    return {"curve": curve.to_dict(), "frame": _frame(c).to_dict()}


def _renewal_summary(sample) -> dict:
    b = sample.blocks
    return {
        "n_blocks": len(b),
        "mean_dtau": float(b.dtau.mean()) if len(b) else None,
        "mean_dx": b.dx.mean(axis=0).tolist() if len(b) else None,
        "walks_with_renewal": int((sample.n_taus > 0).sum()),
        "mean_renewals_per_walk": float(sample.n_taus.mean()),
        "censored_tails": int(sample.censored_tail.sum()),
        "frame": sample.frame.to_dict(),
        "W": sample.W,
    }


def _run_renewal_stats(c, threads, art):
    sample = _renewals(c, threads)
    _block_csv(art, sample)
    values, counts = np.unique(sample.blocks.dtau, return_counts=True)
    art.plot("dtau_histogram", values, counts, ("dtau", "count"))
    return _renewal_summary(sample)


def _run_identity(c, threads, art):
    sample = _renewals(c, threads)
    _block_csv(art, sample)
    adv = sample.blocks.dx @ sample.frame.ell
    values, counts = np.unique(adv, return_counts=True)
    art.plot("advance_histogram", values, counts, ("advance", "count"))
    check = identity_from_sample(sample)
    return {"identity": check.to_dict(), "deviation_in_se": check.deviation_in_se, **_renewal_summary(sample)}


def _run_decay(c, threads, art):
    sample = _renewals(c, threads)
    art.csv(["walk_index", "first_segment_exits", "cone_exit_from_origin", "renewals"],
            ([w, sample.first_hits[w], "" if sample.exit0[w] > c.horizon else sample.exit0[w], sample.n_taus[w]]
             for w in range(sample.n_walks)))
    check = decay_from_sample(sample, c.k_max)
    art.plot("decay", [k + 1 for k in check.k],
             [math.log(p.value) if p.value > 0 else float("nan") for p in check.p_finite], ("k_plus_1", "log_p"))
    return {"decay": check.to_dict()}


def _oracle_drift(c) -> dict | None:
    if c.spec.family in ("deterministic", "drift-perturbed-uniform"):
        o = homogeneous_oracle(c.spec.vectors[0], c.spec.d)
        return {"drift": o.drift.tolist(), "direction": None if o.direction is None else o.direction.tolist()}
    return None


def _running(series_num, series_den, points=200):
    n = series_num.shape[0]
    idx = np.unique(np.linspace(1, n, min(points, n)).astype(int))
    num = np.cumsum(series_num, axis=0)[idx - 1]
    den = np.cumsum(series_den)[idx - 1]
    return idx, num, den


def _direction_guard(c, threads):
    """Transience verdict along ell; the block estimators only make sense for transient walks."""
    sample = transience_sample(c.spec, [c.ell_array], min(c.n_walks, 1000), max(c.horizon, 16),
                               c.master_seed, threads)
    return transience_verdict(sample, 0, c.thresholds)


def _run_direction(c, threads, art):
    verdict = _direction_guard(c, threads)
    sample = _renewals(c, threads)
    _block_csv(art, sample)
    out = {"transience": verdict.to_dict(), "oracle": _oracle_drift(c), **_renewal_summary(sample)}
    if verdict.label != "transient+":
        out["direction"] = None
        out["direction_status"] = "undefined: walk not transient in direction ell"
        return out
    try:
        est = estimate_direction(sample.blocks)
    except DirectionUndefinedError as exc:
        out["direction"] = None
        out["direction_status"] = f"undefined: {exc}"
        return out
    idx, num, _ = _running(sample.blocks.dx.astype(float), np.ones(len(sample.blocks)))
    art.plot("running_angle", idx, np.degrees(np.arctan2(num[:, 1], num[:, 0])) if c.spec.d > 1 else num[:, 0],
             ("blocks", "angle_deg"))
    out["direction"] = est.to_dict()
    out["direction_status"] = "defined"
    return out


def _run_velocity(c, threads, art):
    sample = _renewals(c, threads)
    _block_csv(art, sample)
    est = estimate_velocity(sample.blocks)
    idx, num, den = _running(sample.blocks.dx.astype(float), sample.blocks.dtau.astype(float))
    art.plot("running_velocity", idx, num[:, 0] / den, ("blocks", "velocity_1"))
    return {"velocity": est.to_dict(), "oracle": _oracle_drift(c), **_renewal_summary(sample)}


def _run_iid(c, threads, art):
    sample = _renewals(c, threads)
    _block_csv(art, sample)
    res = iid_blocks_test(sample.blocks, sample.frame.ell)
    adv = sample.blocks.dx @ sample.frame.ell
    for name, part in (("ecdf_even", adv[sample.blocks.k % 2 == 0]), ("ecdf_odd", adv[sample.blocks.k % 2 == 1])):
        values, counts = np.unique(part, return_counts=True)
        art.plot(name, values, np.cumsum(counts) / max(part.shape[0], 1), ("advance", "ecdf"))
    return {"iid": res.to_dict(), **_renewal_summary(sample)}


def _run_neighborhood(c, threads, art):
    nu = None
    nu_status = "not estimated"
    try:
        sample = _renewals(c, threads)
        nu = estimate_direction(sample.blocks).value
        nu_status = "estimated from renewal blocks"
    except InsufficientDataError as exc:
        nu_status = f"undefined: {exc}"
    res = neighborhood_scan(c.spec, c.ell_array, c.radius_deg, c.grid_points, c.n_walks, c.horizon,
                            c.master_seed, threads, nu=nu, half_points=c.half_points, nu_min_dot=c.nu_min_dot,
                            thresholds=c.thresholds)
    d = c.spec.d
    rows = []
    groups = [("neighborhood", res.directions, res.verdicts, [None] * len(res.verdicts))]
    if nu is not None:
        groups.append(("half", res.half_directions, res.half_verdicts, res.half_dots))
    for group, dirs, verdicts, dots in groups:
        for v, verdict, dot in zip(dirs, verdicts, dots):
            rows.append([group, *v, "" if dot is None else dot, verdict.label,
                         verdict.ballistic.value, verdict.escape.value])
    art.csv(["group", *[f"l{j + 1}" for j in range(d)], "dot_nu", "label", "ballistic", "escape"], rows)
    if d >= 2:
        u = res.directions / np.linalg.norm(res.directions, axis=1)[:, None]
        art.plot("escape_by_angle", np.degrees(np.arctan2(u[:, 1], u[:, 0])),
                 [v.escape.value for v in res.verdicts], ("angle_deg", "escape"))
    return {"neighborhood": res.to_dict(), "nu_status": nu_status}


def _run_cluster(c, threads, art):
    ell = c.ell_array if c.ell is not None else np.eye(c.spec.d)[0]
    sample = transience_sample(c.spec, [ell], c.n_walks, c.horizon, c.master_seed, threads)
    d = c.spec.d
    art.csv(["walk_index", *[f"x{j + 1}" for j in range(d)]],
            ([w, *sample.endpoints[w]] for w in range(c.n_walks)))
    pts = sample.endpoints.astype(float)
    nrm = np.linalg.norm(pts, axis=1)
    keep = nrm > 0
    units = pts[keep] / nrm[keep, None]
    if d >= 2:
        art.plot("unit_endpoints", units[:, 0], units[:, 1], ("u1", "u2"))
    res = direction_cluster_analysis(sample.endpoints)
    return {"clusters": res.to_dict()}


def _run_oned(c, threads, art):
    oracle = oneD_classify(c.spec)
    sample = transience_sample(c.spec, [[1.0]], c.n_walks, c.horizon, c.master_seed, threads)
    verdict = transience_verdict(sample, 0, c.thresholds)
    speed = endpoint_velocity(sample)
    art.csv(["walk_index", "x_horizon", "min_second_half"],
            ([w, sample.endpoints[w, 0], sample.low[w, 0]] for w in range(c.n_walks)))
    values, counts = np.unique(sample.endpoints[:, 0], return_counts=True)
    art.plot("endpoint_histogram", values, counts, ("x", "count"))
    expected = "undecided" if oracle.classification == "recurrent" else oracle.classification
    return {
        "oracle": {"classification": oracle.classification, "E_log_rho": oracle.E_log_rho,
                   "E_rho": oracle.E_rho, "E_inv_rho": oracle.E_inv_rho, "speed": oracle.speed},
        "verdict": verdict.to_dict(),
        "speed": speed.to_dict(),
        "speed_error": abs(float(speed.value[0]) - oracle.speed),
        "classification_match": verdict.label == expected,
    }


_RUNNERS = {
    "transience-scan": _run_transience,
    "cone-survival": _run_survival,
    "renewal-stats": _run_renewal_stats,
    "identity-check": _run_identity,
    "decay-check": _run_decay,
    "direction": _run_direction,
    "velocity": _run_velocity,
    "iid-test": _run_iid,
    "neighborhood": _run_neighborhood,
    "cluster": _run_cluster,
    "oneD-compare": _run_oned,
}


def write_trace(config: ExperimentConfig, out_dir: str | os.PathLike | None = None) -> Path:
    """Dump walk ``walk_index`` of the configured annealed batch as ``n x_1 ... x_d`` lines."""
    traj = annealed_trajectory(config.spec, config.horizon, config.master_seed, config.walk_index)
    path = Path(out_dir if out_dir is not None else config.out_dir) / "trace.txt"
    header = f"# rwre {__version__} trace walk_index={config.walk_index} master_seed={config.master_seed}\n"
    try:
        _atomic_write(path, header + traj.dump())
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc
    return path
