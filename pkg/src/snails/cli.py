"""Command-line entry point.

Each subcommand fronts one simulator or experiment operation, writes its
outputs into ``--output`` atomically (staged in a temporary directory, then
renamed) together with a ``manifest.json`` from which the run can be
repeated with ``--config manifest.json``.

Exit codes: 0 success, 1 internal error or failed check, 2 invalid
configuration, 3 resource limit reached.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import shutil
import sys
import tempfile

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, load_file, parse_config
from .errors import InvalidParameterError, ResourceLimitError
from .experiments import (PILOT_QUANTILE, convergence_study, coupling_experiment, pilot_front_speed,
                          proof_constants, shape_experiment, stationarity_check, survival_experiment)
from .model import auto_window, run
from .neighbors import percolation_scan
from .plotting import fan_svg, survival_svg
from .rng import Box, RngStream

COMMANDS = ("simulate", "survival", "shape", "coupling", "converge", "percolation", "stationarity", "constants")

# (flag, dotted config key, type, help)
FLAGS = [
    ("--lambda", "model.lambda", float, "Poisson intensity (required for model subcommands)"),
    ("--alpha", "model.alpha", float, "removal rate; 0 disables removal (required)"),
    ("--d", "model.d", int, "dimension [1]"),
    ("--radius", "model.radius", float, "infection radius [1]"),
    ("--diffusion", "model.diffusion", float, "diffusion coefficient D; BM has variance D t [1]"),
    ("--infection-rate", "model.infection_rate", float, "finite per-pair infection rate [INSTANT]"),
    ("--dt", "sim.dt", float, "time step [0.01 radius^2 / diffusion]"),
    ("--t-max", "sim.t_max", float, "horizon of each run [10]"),
    ("--mode", "sim.mode", str, "contact detector, BRIDGE or NAIVE [BRIDGE]"),
    ("--window", "sim.window", float, "half-width W of the simulation cube [AUTO]"),
    ("--c-win", "sim.c_win", float, "front speed used by the AUTO window [removal-free pilot]"),
    ("--truncation", "sim.truncation", int, "allow only the first K infections; also applies with alpha = 0 [NONE]"),
    ("--particle-cap", "sim.particle_cap", int, "abort with exit 3 above this particle count"),
    ("--n-runs", "experiment.n_runs", int, "independent runs [1000]"),
    ("--horizons", "experiment.horizons", "list", "survival horizons, comma separated [5,10,20,40]"),
    ("--times", "experiment.times", "list", "shape time grid [10,20,40,80]"),
    ("--dt-grid", "experiment.dt_grid", "list", "convergence dt grid [0.04,0.02,0.01,0.005]"),
    ("--T", "experiment.T", float, "horizon for converge and constants [10]"),
    ("--thresholds", "experiment.thresholds", "list", "occupation-time thresholds for per-run rows"),
    ("--entry-range", "experiment.entry_range", float, "radius for the entry count N"),
    ("--lambdas", "experiment.lambdas", "list", "percolation intensities [0.5,1,2]"),
    ("--box-sizes", "experiment.box_sizes", "list", "percolation box side lengths [10,20]"),
    ("--n-samples", "experiment.n_samples", int, "percolation samples per point [200]"),
    ("--t", "experiment.t", float, "stationarity motion time [5]"),
    ("--C1", "experiment.C1", float, "constants: front-speed constant"),
    ("--C2", "experiment.C2", float, "constants: occupation constant"),
    ("--seed", "seed", int, "master seed; SNAIL_SEED overrides the file, this flag overrides both [0]"),
    ("--workers", "workers", int, "worker processes; results do not depend on it [1]"),
    ("--output", "output", str, "output directory [out]"),
]


def _list(text: str) -> list:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="snails", description="Brownian snails SIR simulator and verification harness.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    helps = {
        "simulate": "one trajectory; writes the full event log",
        "survival": "survival curve P(extinction >= T) and decay-rate fit",
        "shape": "front quantiles of the removal-free process (alpha = 0)",
        "coupling": "containment of the alpha process in its alpha = 0 twin",
        "converge": "statistics versus dt for BRIDGE and NAIVE detectors",
        "percolation": "Gilbert cluster of the origin versus intensity",
        "stationarity": "Poisson counts before and after free motion",
        "constants": "print the extinction argument's constants as JSON",
    }
    for name in COMMANDS:
        sp = sub.add_parser(name, help=helps[name], description=helps[name])
        sp.add_argument("--config", help="flat JSON config (sections model, sim, experiment) or a manifest")
        sp.add_argument("--no-plot", dest="plot", action="store_const", const=False, default=None,
                        help="skip SVG output")
        if name == "simulate":
            sp.add_argument("--trace", action="store_true", help="also write the per-step front trace")
        for flag, key, typ, text in FLAGS:
            sp.add_argument(flag, dest=key, type=_list if typ == "list" else typ, default=None, help=text)
    return p


# ------------------------------------------------------------------ output

class Outputs:
    """Files staged in memory and committed together by rename."""

    def __init__(self):
        self.files: dict[str, str] = {}

    def csv(self, name: str, rows: list[dict], header: list[str] | None = None) -> None:
        buf = io.StringIO()
        header = header or (list(rows[0]) if rows else [])
        w = csv.DictWriter(buf, fieldnames=header, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _cell(v) for k, v in r.items()})
        self.files[name] = buf.getvalue()

    def json(self, name: str, obj) -> None:
        self.files[name] = json.dumps(obj, indent=2, sort_keys=True) + "\n"

    def text(self, name: str, text: str) -> None:
        self.files[name] = text

    def commit(self, directory: str) -> None:
        os.makedirs(directory, exist_ok=True)
        stage = tempfile.mkdtemp(prefix=".stage-", dir=directory)
        try:
            for name, text in self.files.items():
                with open(os.path.join(stage, name), "w", newline="") as fh:
                    fh.write(text)
            # nothing reaches the output directory unless every file was written
            for name in self.files:
                os.replace(os.path.join(stage, name), os.path.join(directory, name))
        finally:
            shutil.rmtree(stage, ignore_errors=True)


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else repr(f)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def manifest(cfg: RunConfig, command: str, pilot: dict | None = None) -> dict:
    out = cfg.to_dict()
    out.update({"command": command, "version": __version__, "pilot": {**cfg.pilot, **(pilot or {})}})
    return _jsonable(out)


# ---------------------------------------------------------------- commands

def _resolve_window(cfg: RunConfig, params, t_max: float):
    """Resolve an AUTO window into a number recorded back into the config."""
    pilot = {}
    if cfg.sim["window"] == "AUTO":
        c_win = cfg.sim["c_win"]
        if c_win is None:
            c_win = pilot_front_speed(params)
            pilot = {"c_win": c_win, "c_win_source": f"removal-free pilot, q{PILOT_QUANTILE:g} of sup front / t at t=20"}
            cfg.sim["c_win"] = c_win
        box = auto_window(params, t_max, c_win)
        cfg.sim["window"] = box.hi[0]
    return Box.cube(float(cfg.sim["window"]), params.d), pilot


def cmd_simulate(cfg: RunConfig, out: Outputs, args) -> int:
    params = cfg.params()
    t_max = float(cfg.sim["t_max"])
    box, pilot = _resolve_window(cfg, params, t_max)
    cfg.sim["dt"] = cfg.dt(params)
    thresholds = tuple(cfg.experiment["thresholds"])
    result, state = run(params, box, RngStream(cfg.seed, 0), cfg.sim["dt"], t_max, cfg.mode, cfg.truncation,
                        record_trace=getattr(args, "trace", False), stop_at_extinction=cfg.sim["stop_at_extinction"],
                        particle_cap=cfg.sim["particle_cap"], thresholds=thresholds,
                        entry_range=cfg.experiment["entry_range"])
    result.run_id, result.seed = 0, cfg.seed
    buf = io.StringIO()
    state.events.write_csv(buf)
    out.text("events.csv", buf.getvalue())
    out.csv("result.csv", [result.row(thresholds)])
    if state.trace_front is not None:
        k = state.step_index + 1
        rows = [{"t": (i * state.dt), "front": state.trace_front[i], "left": state.trace_left[i],
                 "right": state.trace_right[i]} for i in range(k)]
        out.csv("trace.csv", rows, ["t", "front", "left", "right"])
    out.json("manifest.json", manifest(cfg, "simulate", pilot))
    return 0


def _runs_rows(runs, thresholds):
    return [r.row(thresholds) for r in runs]


def cmd_survival(cfg: RunConfig, out: Outputs, args) -> int:
    params = cfg.params()
    e = cfg.experiment
    horizons = e["horizons"]
    box, pilot = _resolve_window(cfg, params, max(horizons))
    cfg.sim["dt"] = cfg.dt(params)
    cfg.sim["t_max"] = max(horizons)
    res = survival_experiment(params, horizons, e["n_runs"], cfg.seed, dt=cfg.sim["dt"], mode=cfg.mode,
                              window=box, workers=cfg.workers)
    out.csv("survival.csv", list(res.curve.rows()))
    out.csv("runs.csv", _runs_rows(res.runs, ()))
    fit = res.fit
    out.json("fit.json", _jsonable({"available": fit.available, "c_hat": fit.c_hat, "c_se": fit.c_se,
                                    "ci95": list(fit.ci), "intercept": fit.intercept, "chi2": fit.chi2,
                                    "max_abs_z": fit.max_abs_z, "horizons_used": list(fit.horizons_used),
                                    "reason": fit.reason, "strictly_decreasing": res.strictly_decreasing}))
    if e["plot"]:
        out.text("survival.svg", survival_svg(res.curve, fit))
    out.json("manifest.json", manifest(cfg, "survival", pilot))
    return 0


def cmd_shape(cfg: RunConfig, out: Outputs, args) -> int:
    if cfg.model["alpha"] is None:
        cfg.model["alpha"] = 0.0
    params = cfg.params()
    if params.alpha != 0:
        raise ConfigError("model.alpha: shape requires alpha = 0")
    e = cfg.experiment
    box, pilot = _resolve_window(cfg, params, max(e["times"]))
    cfg.sim["dt"] = cfg.dt(params)
    res = shape_experiment(params, e["times"], e["n_runs"], cfg.seed, dt=cfg.sim["dt"], window=box,
                           workers=cfg.workers)
    out.csv("shape.csv", list(res.rows()))
    pilot.update({"C1_hat": res.C1_hat, "C1_quantile": PILOT_QUANTILE, "n_used": res.n_used,
                  "n_overflow": res.n_overflow})
    if e["plot"]:
        out.text("shape.svg", fan_svg(res.times, res.quantile_levels, res.sup_quantiles,
                                      "Quantiles of sup front"))
    out.json("manifest.json", manifest(cfg, "shape", pilot))
    return 0


def cmd_coupling(cfg: RunConfig, out: Outputs, args) -> int:
    params = cfg.params()
    t_max = float(cfg.sim["t_max"])
    box, pilot = _resolve_window(cfg, params, t_max)
    cfg.sim["dt"] = cfg.dt(params)
    rep = coupling_experiment(params, t_max, cfg.experiment["n_runs"], cfg.seed, dt=cfg.sim["dt"],
                              mode=cfg.mode, window=box, workers=cfg.workers)
    out.csv("coupling.csv", [{"n_runs": rep.n_runs, "n_contained": rep.n_contained,
                              "n_violations": len(rep.violations)}])
    out.csv("violations.csv", rep.violations, ["run_id", "seed", "particle", "step", "time"])
    out.json("manifest.json", manifest(cfg, "coupling", pilot))
    if rep.violations:
        print(f"containment violated in {len(rep.violations)} runs; replay with seed {cfg.seed}, "
              f"run_id {rep.violations[0]['run_id']}", file=sys.stderr)
        return 1
    return 0


def cmd_converge(cfg: RunConfig, out: Outputs, args) -> int:
    params = cfg.params()
    e = cfg.experiment
    box, pilot = _resolve_window(cfg, params, e["T"])
    pts = convergence_study(params, sorted(e["dt_grid"], reverse=True), e["n_runs"], cfg.seed, e["T"],
                            window=box, workers=cfg.workers)
    out.csv("converge.csv", [vars(p) for p in pts])
    out.json("manifest.json", manifest(cfg, "converge", pilot))
    return 0


def cmd_percolation(cfg: RunConfig, out: Outputs, args) -> int:
    e = cfg.experiment
    pts = percolation_scan(e["lambdas"], cfg.model["d"], e["box_sizes"], e["n_samples"],
                           RngStream(cfg.seed, 0).aux, radius=float(cfg.model["radius"]))
    out.csv("percolation.csv", [vars(p) for p in pts])
    out.json("manifest.json", manifest(cfg, "percolation"))
    return 0


def _box_from(pair, d):
    lo, hi = pair
    lo = lo if isinstance(lo, list) else [lo] * d
    hi = hi if isinstance(hi, list) else [hi] * d
    return Box(tuple(lo), tuple(hi))


def cmd_stationarity(cfg: RunConfig, out: Outputs, args) -> int:
    m, e = cfg.model, cfg.experiment
    if m["lambda"] is None:
        raise ConfigError("model.lambda: required field missing")
    d, t, D = m["d"], float(e["t"]), float(m["diffusion"])
    if e["sub_boxes"] is None:
        e["sub_boxes"] = [[-5.0, 5.0]]
    subs = [_box_from(b, d) for b in e["sub_boxes"]]
    if cfg.sim["window"] == "AUTO":
        reach = max(max(max(map(abs, b.lo)), max(map(abs, b.hi))) for b in subs)
        cfg.sim["window"] = reach + 6.0 * math.sqrt(D * t) + 1.0
    window = Box.cube(float(cfg.sim["window"]), d)
    rows = stationarity_check(float(m["lambda"]), d, window, t, e["n_runs"], cfg.seed, subs, D)
    out.csv("stationarity.csv", [dict(vars(r), flagged=r.flagged) for r in rows])
    out.json("manifest.json", manifest(cfg, "stationarity"))
    return 0


def cmd_constants(cfg: RunConfig, out: Outputs, args) -> int:
    e = cfg.experiment
    for key in ("C1", "C2"):
        if e[key] is None:
            raise ConfigError(f"experiment.{key}: required field missing")
    if cfg.model["alpha"] is None:
        raise ConfigError("model.alpha: required field missing")
    try:
        pc = proof_constants(float(e["C1"]), float(e["C2"]), float(cfg.model["alpha"]), float(e["T"]))
    except InvalidParameterError as err:
        raise ConfigError(str(err)) from None
    print(json.dumps(pc.to_dict(), indent=2, sort_keys=True))
    return 0


HANDLERS = {
    "simulate": cmd_simulate, "survival": cmd_survival, "shape": cmd_shape, "coupling": cmd_coupling,
    "converge": cmd_converge, "percolation": cmd_percolation, "stationarity": cmd_stationarity,
    "constants": cmd_constants,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {key: getattr(args, key) for _, key, _, _ in FLAGS}
    overrides["experiment.plot"] = args.plot
    try:
        data = load_file(args.config) if args.config else None
        cfg = parse_config(data, overrides)
        out = Outputs()
        code = HANDLERS[args.command](cfg, out, args)
        if out.files:
            out.commit(cfg.output)
        return code
    except (ConfigError, InvalidParameterError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except ResourceLimitError as e:
        print(f"resource limit: {e}", file=sys.stderr)
        return 3
    except Exception as e:  # noqa: BLE001 - the exit code is the interface
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
