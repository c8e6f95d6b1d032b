"""Declarative experiment runs: JSON config in, CSV reports out.

Config document (keys mirror :class:`~flowsmooth.core.SamplerConfig`)::

    {
      "field": {"name": "linear_matrix", "params": {"rotation_rate": 1.5707963267948966}},
      "grid": {"n_steps": 25, "kind": "uniform"},
      "snr": {"kind": "rectified_flow"},
      "samplers": [
        {"name": "euler", "algorithm": "euler"},
        {"name": "la", "algorithm": "look_ahead", "tau_curv": "inf", "gamma_interp": 0.9}
      ],
      "ensemble_size": 16,
      "seed": 0,
      "output_dir": "results",
      "z_init": [1.0, 0.0],
      "dump_trajectories": false
    }

``snr``, ``z_init``, ``output_dir`` and ``dump_trajectories`` are optional.
Without ``z_init`` every ensemble member draws its own N(0, I) latent from
:mod:`flowsmooth.rng`.
"""
from __future__ import annotations

import csv
import io
import json
import json.decoder
import json.scanner
import logging
import math
import os
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field, fields as dc_fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .core import (
    CallCounter,
    InvalidArgument,
    NumericFailure,
    SamplerConfig,
    TimeGrid,
    Trajectory,
    VelocityFieldSpec,
    make_time_grid,
)
from .diagnostics import endpoint_error, kappa_stats, oscillation_energy, path_length
from .fields import exact_flow, has_closed_form, reference_endpoint
from .rng import U64_MAX, ensemble_normals
from .samplers import run_sampler
from .schedules import SnrSchedule

log = logging.getLogger(__name__)

SUMMARY_COLUMNS = (
    "sampler", "algorithm", "peek_mode", "n_steps", "ensemble_size", "n_failed",
    "endpoint_error_mean", "endpoint_error_std", "oscillation_energy_mean",
    "path_length_mean", "kappa_mean", "accept_rate", "total_calls", "failure",
)
TIMING_COLUMNS = ("sampler", "wall_time_s")
SAMPLER_KEYS = {f.name for f in dc_fields(SamplerConfig)}
JSON_FIELDS = ("gaussian_rf", "linear_matrix", "stiff_tracking")
_NAME_RE = re.compile(r"^[A-Za-z0-9_.-]+$")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


class ConfigError(InvalidArgument):
    def __init__(self, message: str, line: Optional[int] = None, source: str = "<config>"):
        self.line = line
        self.source = source
        where = f"{source}:{line}" if line is not None else source
        super().__init__(f"{where}: {message}")


# --------------------------------------------------------------------------- #
# JSON with line numbers
# --------------------------------------------------------------------------- #

class _Obj(dict):
    """A decoded JSON object that remembers where it started."""

    start = 0
    line = 1


def _loads_tracking(text: str):
    decoder = json.JSONDecoder()

    def parse_object(s_and_end, *args):
        s, end = s_and_end
        obj, new_end = json.decoder.JSONObject(s_and_end, *args)
        node = _Obj(obj)
        node.start = end - 1
        node.line = s.count("\n", 0, end) + 1
        return node, new_end

    decoder.parse_object = parse_object
    decoder.scan_once = json.scanner.py_make_scanner(decoder)
    return decoder.decode(text)


class _Locator:
    def __init__(self, text: str, source: str):
        self.text = text
        self.source = source

    def line_of(self, node, key=None) -> int:
        if not isinstance(node, _Obj):
            return None
        if key is None:
            return node.line
        pos = self.text.find(json.dumps(key), node.start)
        return node.line if pos < 0 else self.text.count("\n", 0, pos) + 1

    def error(self, message, node=None, key=None):
        return ConfigError(message, self.line_of(node, key), self.source)


# --------------------------------------------------------------------------- #
# config
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class SamplerEntry:
    name: str
    config: SamplerConfig


@dataclass(frozen=True)
class ExperimentConfig:
    field: VelocityFieldSpec
    n_steps: int
    samplers: tuple
    grid_kind: str = "uniform"
    grid_shift: float = 1.0
    snr: SnrSchedule = dc_field(default_factory=SnrSchedule)
    ensemble_size: int = 1
    seed: int = 0
    output_dir: Path = Path("results")
    z_init: Optional[tuple] = None
    dump_trajectories: bool = False

    def __post_init__(self):
        if isinstance(self.ensemble_size, bool) or not isinstance(self.ensemble_size, int) \
                or self.ensemble_size < 1:
            raise InvalidArgument(f"ensemble_size must be a positive integer, got {self.ensemble_size!r}")
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or not 0 <= self.seed <= U64_MAX:
            raise InvalidArgument(f"seed must be an unsigned 64-bit integer, got {self.seed!r}")
        if not self.samplers:
            raise InvalidArgument("need at least one sampler")
        names = [s.name for s in self.samplers]
        if len(set(names)) != len(names):
            raise InvalidArgument(f"sampler names must be unique, got {names}")
        object.__setattr__(self, "output_dir", Path(self.output_dir))

    def make_grid(self) -> TimeGrid:
        return make_time_grid(self.n_steps, self.grid_kind, self.grid_shift)

    def with_overrides(self, seed: Optional[int] = None, output_dir=None) -> "ExperimentConfig":
        changes = {}
        if seed is not None:
            changes["seed"] = seed
        if output_dir is not None:
            changes["output_dir"] = Path(output_dir)
        return replace(self, **changes)


def _require(loc, node, key, kinds, what):
    if key not in node:
        raise loc.error(f"missing required key {key!r} in {what}", node)
    value = node[key]
    kinds = kinds if isinstance(kinds, tuple) else (kinds,)
    if (isinstance(value, bool) and bool not in kinds) or not isinstance(value, kinds):
        raise loc.error(f"{what}.{key} has wrong type {type(value).__name__}", node, key)
    return value


def _check_keys(loc, node, allowed, what):
    for key in node:
        if key not in allowed:
            raise loc.error(f"unknown key {key!r} in {what}", node, key)


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    """Validate a JSON config document; raises :class:`ConfigError` with a line number."""
    try:
        doc = _loads_tracking(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg}", exc.lineno, source) from None
    loc = _Locator(text, source)
    if not isinstance(doc, _Obj):
        raise ConfigError("top level must be a JSON object", 1, source)
    _check_keys(loc, doc, {"field", "grid", "snr", "samplers", "ensemble_size", "seed",
                           "output_dir", "z_init", "dump_trajectories"}, "config")

    fnode = _require(loc, doc, "field", dict, "config")
    _check_keys(loc, fnode, {"name", "params"}, "field")
    fname = _require(loc, fnode, "name", str, "field")
    if fname not in JSON_FIELDS:
        raise loc.error(f"field.name must be one of {JSON_FIELDS}, got {fname!r}", fnode, "name")
    params = fnode.get("params", {})
    if not isinstance(params, dict):
        raise loc.error("field.params must be an object", fnode, "params")
    try:
        spec = VelocityFieldSpec(fname, dict(params))
        built = spec.build()
    except InvalidArgument as exc:
        raise loc.error(str(exc), fnode, "params") from None

    gnode = _require(loc, doc, "grid", dict, "config")
    _check_keys(loc, gnode, {"n_steps", "kind", "shift"}, "grid")
    n_steps = _require(loc, gnode, "n_steps", int, "grid")
    kind = gnode.get("kind", "uniform")
    shift = gnode.get("shift", 1.0)
    if isinstance(shift, bool) or not isinstance(shift, (int, float)):
        raise loc.error("grid.shift must be a number", gnode, "shift")
    try:
        make_time_grid(n_steps, kind, float(shift))
    except InvalidArgument as exc:
        raise loc.error(str(exc), gnode) from None

    snr = SnrSchedule()
    if "snr" in doc:
        snode = doc["snr"]
        if not isinstance(snode, dict):
            raise loc.error("snr must be an object", doc, "snr")
        _check_keys(loc, snode, {"kind", "times", "alpha_bar"}, "snr")
        try:
            snr = SnrSchedule(snode.get("kind", "rectified_flow"), snode.get("times"),
                              snode.get("alpha_bar"))
        except (InvalidArgument, TypeError, ValueError) as exc:
            raise loc.error(str(exc), snode) from None

    slist = _require(loc, doc, "samplers", list, "config")
    if not slist:
        raise loc.error("samplers must be a non-empty list", doc, "samplers")
    entries = []
    for i, snode in enumerate(slist):
        if not isinstance(snode, dict):
            raise loc.error(f"samplers[{i}] must be an object", doc, "samplers")
        _check_keys(loc, snode, SAMPLER_KEYS | {"name"}, f"samplers[{i}]")
        kwargs = {k: v for k, v in snode.items() if k != "name"}
        name = snode.get("name", kwargs.get("algorithm", "euler"))
        if not isinstance(name, str) or not _NAME_RE.match(name):
            raise loc.error(f"samplers[{i}].name must match {_NAME_RE.pattern}", snode, "name")
        try:
            entries.append(SamplerEntry(name, SamplerConfig(**kwargs)))
        except (InvalidArgument, TypeError) as exc:
            raise loc.error(f"samplers[{i}]: {exc}", snode) from None
    names = [e.name for e in entries]
    dupes = sorted({n for n in names if names.count(n) > 1})
    if dupes:
        raise loc.error(f"duplicate sampler names {dupes}", doc, "samplers")

    ensemble_size = doc.get("ensemble_size", 1)
    if isinstance(ensemble_size, bool) or not isinstance(ensemble_size, int) or ensemble_size < 1:
        raise loc.error("ensemble_size must be a positive integer", doc, "ensemble_size")
    seed = doc.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed <= U64_MAX:
        raise loc.error("seed must be an unsigned 64-bit integer", doc, "seed")
    output_dir = doc.get("output_dir", "results")
    if not isinstance(output_dir, str) or not output_dir:
        raise loc.error("output_dir must be a non-empty string", doc, "output_dir")
    dump = doc.get("dump_trajectories", False)
    if not isinstance(dump, bool):
        raise loc.error("dump_trajectories must be true or false", doc, "dump_trajectories")

    z_init = doc.get("z_init")
    if z_init is not None:
        ok = isinstance(z_init, list) and all(
            isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x) for x in z_init)
        if not ok or len(z_init) != built.dim:
            raise loc.error(f"z_init must be a list of {built.dim} finite numbers", doc, "z_init")
        z_init = tuple(float(x) for x in z_init)

    return ExperimentConfig(
        field=spec, n_steps=n_steps, samplers=tuple(entries), grid_kind=kind,
        grid_shift=float(shift), snr=snr, ensemble_size=ensemble_size, seed=seed,
        output_dir=Path(output_dir), z_init=z_init, dump_trajectories=dump,
    )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", None, str(path)) from None
    return parse_config(text, str(path))


# --------------------------------------------------------------------------- #
# running
# --------------------------------------------------------------------------- #

@dataclass
class RunOutcome:
    trajectory: Optional[Trajectory]
    calls: int
    error: Optional[str] = None


@dataclass
class ExperimentResult:
    summary_rows: list
    timing_rows: list
    outcomes: dict
    exit_code: int
    summary_path: Optional[Path] = None


def max_workers() -> int:
    raw = os.environ.get("FLOWSMOOTH_THREADS")
    if raw:
        try:
            n = int(raw)
        except ValueError:
            n = 0
        if n >= 1:
            return n
        log.warning("ignoring FLOWSMOOTH_THREADS=%r; expected a positive integer", raw)
    return min(8, os.cpu_count() or 1)


def initial_latents(config: ExperimentConfig, dim: int) -> np.ndarray:
    if config.z_init is not None:
        return np.tile(np.asarray(config.z_init, dtype=np.float64), (config.ensemble_size, 1))
    return ensemble_normals(config.seed, config.ensemble_size, dim)


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    return "" if math.isnan(x) else f"{x:.17g}"


def _run_one(entry: SamplerEntry, field, grid, snr, z0) -> RunOutcome:
    counter = CallCounter()
    try:
        traj = run_sampler(entry.config, field, grid, z0, snr=snr, counter=counter)
    except NumericFailure as exc:
        return RunOutcome(None, counter.count, str(exc))
    return RunOutcome(traj, counter.count)


def _summary_row(entry: SamplerEntry, outcomes, oracles, n_steps) -> dict:
    ok = [(i, o) for i, o in enumerate(outcomes) if o.trajectory is not None]
    errors = [endpoint_error(o.trajectory, oracles[i]) for i, o in ok]
    energies = [oscillation_energy(o.trajectory) for _, o in ok if len(o.trajectory.states) >= 3]
    kappas = [k for _, o in ok if (k := kappa_stats(o.trajectory)) is not None]
    accepted = [r.accepted_full_step for _, o in ok for r in o.trajectory.step_records
                if r.accepted_full_step is not None]
    failures = [o.error for o in outcomes if o.error is not None]
    return {
        "sampler": entry.name,
        "algorithm": entry.config.algorithm,
        "peek_mode": entry.config.peek_mode if entry.config.algorithm == "look_ahead" else "",
        "n_steps": n_steps,
        "ensemble_size": len(outcomes),
        "n_failed": len(failures),
        "endpoint_error_mean": float(np.mean(errors)) if errors else None,
        "endpoint_error_std": float(np.std(errors, ddof=1)) if len(errors) >= 2 else None,
        "oscillation_energy_mean": float(np.mean(energies)) if energies else None,
        "path_length_mean": float(np.mean([path_length(o.trajectory) for _, o in ok])) if ok else None,
        "kappa_mean": float(np.mean([k[2] for k in kappas])) if kappas else None,
        "accept_rate": float(np.mean(accepted)) if accepted else None,
        "total_calls": sum(o.calls for o in outcomes),
        "failure": failures[0] if failures else "",
    }


def write_csv(path: Path, columns, rows) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([row[c] if isinstance(row[c], str) else _fmt(row[c]) for c in columns])
    path.write_text(buf.getvalue(), newline="")


def write_trajectory_csv(path: Path, traj: Trajectory) -> None:
    """One row per state ``k``; diagnostics columns describe the step leaving ``z_k``."""
    dim = traj.states[0].shape[0]
    columns = ["k", "t"] + [f"z{j}" for j in range(dim)] + ["kappa", "accepted", "gamma_t", "calls"]
    rows = []
    for k, (z, t) in enumerate(zip(traj.states, traj.times)):
        rec = traj.step_records[k] if k < traj.n_steps else None
        row = {"k": k, "t": float(t), **{f"z{j}": float(z[j]) for j in range(dim)},
               "kappa": rec and rec.kappa, "accepted": rec and rec.accepted_full_step,
               "gamma_t": rec and rec.gamma_t, "calls": rec.model_calls if rec else None}
        rows.append(row)
    write_csv(path, columns, rows)


def run_experiment(config: ExperimentConfig, write: bool = True) -> ExperimentResult:
    """Run every sampler over every ensemble member and write the reports.

    Outputs in ``config.output_dir``:

    * ``summary.csv``: one row per sampler, columns :data:`SUMMARY_COLUMNS`.
      Deterministic for a given config and seed.
    * ``timing.csv``: wall-clock seconds per sampler (not deterministic).
    * ``traj_<sampler>_<i>.csv`` when ``dump_trajectories`` is set.
    """
    field = config.field.build()
    grid = config.make_grid()
    z_inits = initial_latents(config, field.dim)
    if has_closed_form(field):
        oracles = exact_flow(field, z_inits, 1.0, 0.0)
    else:
        oracles = reference_endpoint(field, z_inits)

    jobs = [(s, i) for s in range(len(config.samplers)) for i in range(config.ensemble_size)]
    outcomes = {}
    elapsed = {s: 0.0 for s in range(len(config.samplers))}

    def work(job):
        s, i = job
        t0 = time.perf_counter()
        out = _run_one(config.samplers[s], field, grid, config.snr, z_inits[i])
        return job, out, time.perf_counter() - t0

    with ThreadPoolExecutor(max_workers=max_workers()) as pool:
        for (s, i), out, dt in pool.map(work, jobs):
            outcomes[(s, i)] = out
            elapsed[s] += dt

    summary, timing, by_sampler = [], [], {}
    for s, entry in enumerate(config.samplers):
        runs = [outcomes[(s, i)] for i in range(config.ensemble_size)]
        by_sampler[entry.name] = runs
        # near-overflow states may aggregate to inf; that is reported, not warned about
        with np.errstate(over="ignore", invalid="ignore"):
            summary.append(_summary_row(entry, runs, oracles, grid.n_steps))
        timing.append({"sampler": entry.name, "wall_time_s": elapsed[s]})
        for run in runs:
            if run.error:
                log.warning("%s: %s", entry.name, run.error)

    all_failed = all(o.trajectory is None for o in outcomes.values())
    result = ExperimentResult(summary, timing, by_sampler, EXIT_NUMERIC if all_failed else EXIT_OK)
    if write:
        out = config.output_dir
        out.mkdir(parents=True, exist_ok=True)
        result.summary_path = out / "summary.csv"
        write_csv(result.summary_path, SUMMARY_COLUMNS, summary)
        write_csv(out / "timing.csv", TIMING_COLUMNS, timing)
        if config.dump_trajectories:
            for name, runs in by_sampler.items():
                for i, run in enumerate(runs):
                    if run.trajectory is not None:
                        write_trajectory_csv(out / f"traj_{name}_{i}.csv", run.trajectory)
    return result
