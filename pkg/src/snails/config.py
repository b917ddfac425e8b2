"""Run configuration: flat JSON sections ``model``, ``sim``, ``experiment``
plus top-level ``seed``, ``workers`` and ``output``.

Precedence is command-line flag > ``SNAIL_SEED`` environment variable (seed
only) > config file > default. Unknown keys are rejected.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

from .errors import InvalidParameterError
from .model import DEFAULT_PARTICLE_CAP, Mode, ModelParams

MODEL_DEFAULTS = {
    "lambda": None,
    "alpha": None,
    "d": 1,
    "radius": 1.0,
    "diffusion": 1.0,
    "drift": None,
    "infection_rate": "INSTANT",
}

SIM_DEFAULTS = {
    "dt": None,                 # None -> 0.01 * radius**2 / diffusion
    "t_max": 10.0,
    "mode": "BRIDGE",
    "window": "AUTO",           # or the half-width W of [-W, W]^d
    "c_win": None,              # AUTO front speed; None -> removal-free pilot
    "truncation": "NONE",
    "particle_cap": DEFAULT_PARTICLE_CAP,
    "stop_at_extinction": True,
}

EXPERIMENT_DEFAULTS = {
    "n_runs": 1000,
    "horizons": [5.0, 10.0, 20.0, 40.0],
    "times": [10.0, 20.0, 40.0, 80.0],
    "dt_grid": [0.04, 0.02, 0.01, 0.005],
    "T": 10.0,
    "thresholds": [],
    "entry_range": None,
    "lambdas": [0.5, 1.0, 2.0],
    "box_sizes": [10.0, 20.0],
    "n_samples": 200,
    "t": 5.0,
    "sub_boxes": None,          # list of [lo, hi] pairs (numbers in d=1, lists otherwise)
    "C1": None,
    "C2": None,
    "plot": True,
}

TOP_DEFAULTS = {"seed": 0, "workers": 1, "output": "out"}

# keys a manifest adds on top of a config; accepted and ignored on reload ("pilot" is carried over)
MANIFEST_KEYS = {"command", "version"}


class ConfigError(InvalidParameterError):
    """Bad configuration; the message names the offending field."""


@dataclass
class RunConfig:
    model: dict = field(default_factory=lambda: dict(MODEL_DEFAULTS))
    sim: dict = field(default_factory=lambda: dict(SIM_DEFAULTS))
    experiment: dict = field(default_factory=lambda: dict(EXPERIMENT_DEFAULTS))
    seed: int = 0
    workers: int = 1
    output: str = "out"
    # measured constants carried over when a manifest is reloaded
    pilot: dict = field(default_factory=dict)

    # ---------------------------------------------------------- typed views

    def params(self) -> ModelParams:
        m = self.model
        for key in ("lambda", "alpha"):
            if m[key] is None:
                raise ConfigError(f"model.{key}: required field missing")
        rate = m["infection_rate"]
        rate = math.inf if rate in (None, "INSTANT") else _num("model.infection_rate", rate)
        try:
            return ModelParams(lam=_num("model.lambda", m["lambda"]), alpha=_num("model.alpha", m["alpha"]),
                               d=m["d"], radius=_num("model.radius", m["radius"]),
                               diffusion=_num("model.diffusion", m["diffusion"]), drift=m["drift"],
                               infection_rate=rate)
        except ConfigError:
            raise
        except InvalidParameterError as e:
            raise ConfigError(f"model.{e}") from None

    @property
    def mode(self) -> Mode:
        return Mode(self.sim["mode"])

    @property
    def truncation(self) -> int | None:
        v = self.sim["truncation"]
        return None if v in (None, "NONE") else int(v)

    def dt(self, params: ModelParams) -> float:
        return params.default_dt if self.sim["dt"] is None else float(self.sim["dt"])

    def to_dict(self) -> dict:
        return {"model": dict(self.model), "sim": dict(self.sim), "experiment": dict(self.experiment),
                "seed": self.seed}


def _num(name, v) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{name}: expected a number, got {v!r}")
    return float(v)


def _pos(name, v, allow_zero=False) -> float:
    x = _num(name, v)
    if not math.isfinite(x) or x < 0 or (x == 0 and not allow_zero):
        raise ConfigError(f"{name}: must be {'>= 0' if allow_zero else 'positive'}, got {v!r}")
    return x


def _int(name, v, lo=0) -> int:
    if isinstance(v, bool) or not isinstance(v, int) and not (isinstance(v, float) and v.is_integer()):
        raise ConfigError(f"{name}: expected an integer, got {v!r}")
    if int(v) < lo:
        raise ConfigError(f"{name}: must be >= {lo}, got {v!r}")
    return int(v)


def _numlist(name, v, positive=True) -> list:
    if not isinstance(v, (list, tuple)) or not v:
        raise ConfigError(f"{name}: expected a nonempty list of numbers")
    return [_pos(name, x) if positive else _num(name, x) for x in v]


def _merge(section: str, target: dict, src: dict) -> None:
    if not isinstance(src, dict):
        raise ConfigError(f"{section}: expected an object")
    for k, v in src.items():
        if k not in target:
            raise ConfigError(f"{section}.{k}: unknown key")
        target[k] = v


def load_file(path) -> dict:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config: file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"config: invalid JSON ({e})") from None
    if not isinstance(data, dict):
        raise ConfigError("config: top level must be an object")
    return data


def parse_config(file_data: dict | None = None, overrides: dict | None = None, env=None) -> RunConfig:
    """Build a validated RunConfig.

    ``overrides`` maps dotted keys (``"sim.dt"``, ``"seed"``) to flag values;
    ``None`` values mean "flag not given".
    """
    cfg = RunConfig()
    env = os.environ if env is None else env
    for key, value in (file_data or {}).items():
        if key in ("model", "sim", "experiment"):
            _merge(key, getattr(cfg, key), value)
        elif key in TOP_DEFAULTS:
            setattr(cfg, key, value)
        elif key == "pilot" and isinstance(value, dict):
            cfg.pilot = dict(value)
        elif key not in MANIFEST_KEYS:
            raise ConfigError(f"{key}: unknown key")
    if env.get("SNAIL_SEED") not in (None, ""):
        try:
            cfg.seed = int(env["SNAIL_SEED"])
        except ValueError:
            raise ConfigError(f"seed: SNAIL_SEED is not an integer: {env['SNAIL_SEED']!r}") from None
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        if "." in dotted:
            section, key = dotted.split(".", 1)
            _merge(section, getattr(cfg, section), {key: value})
        else:
            setattr(cfg, dotted, value)
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    m, s, e = cfg.model, cfg.sim, cfg.experiment
    for key in ("lambda", "alpha"):
        if m[key] is not None:
            _num(f"model.{key}", m[key])
    if m["lambda"] is not None:
        _pos("model.lambda", m["lambda"])
    if m["alpha"] is not None:
        _pos("model.alpha", m["alpha"], allow_zero=True)
    m["d"] = _int("model.d", m["d"], 1)
    _pos("model.radius", m["radius"])
    _pos("model.diffusion", m["diffusion"])
    if m["infection_rate"] not in (None, "INSTANT"):
        _pos("model.infection_rate", m["infection_rate"])
    if m["drift"] is not None:
        drift = m["drift"] if isinstance(m["drift"], list) else [m["drift"]]
        if len(drift) != m["d"]:
            raise ConfigError(f"model.drift: expected {m['d']} components")
        m["drift"] = [_num("model.drift", v) for v in drift]

    if s["dt"] is not None:
        _pos("sim.dt", s["dt"])
    _pos("sim.t_max", s["t_max"])
    if s["mode"] not in ("BRIDGE", "NAIVE"):
        raise ConfigError(f"sim.mode: must be BRIDGE or NAIVE, got {s['mode']!r}")
    if s["window"] != "AUTO":
        _pos("sim.window", s["window"])
    if s["c_win"] is not None:
        _pos("sim.c_win", s["c_win"])
    if s["truncation"] not in (None, "NONE"):
        s["truncation"] = _int("sim.truncation", s["truncation"], 1)
    s["particle_cap"] = _int("sim.particle_cap", s["particle_cap"], 1)
    if not isinstance(s["stop_at_extinction"], bool):
        raise ConfigError("sim.stop_at_extinction: expected true or false")

    e["n_runs"] = _int("experiment.n_runs", e["n_runs"], 1)
    for key in ("horizons", "times", "dt_grid", "lambdas", "box_sizes"):
        e[key] = sorted(_numlist(f"experiment.{key}", e[key]))
    if isinstance(e["thresholds"], (int, float)):
        e["thresholds"] = [e["thresholds"]]
    e["thresholds"] = [_pos("experiment.thresholds", v, allow_zero=True) for v in e["thresholds"]]
    _pos("experiment.T", e["T"])
    _pos("experiment.t", e["t"], allow_zero=True)
    if e["entry_range"] is not None:
        _pos("experiment.entry_range", e["entry_range"])
    e["n_samples"] = _int("experiment.n_samples", e["n_samples"], 1)
    for key in ("C1", "C2"):
        if e[key] is not None:
            _num(f"experiment.{key}", e[key])
    if not isinstance(e["plot"], bool):
        raise ConfigError("experiment.plot: expected true or false")
    if e["sub_boxes"] is not None:
        if not isinstance(e["sub_boxes"], list) or not all(isinstance(b, list) and len(b) == 2 for b in e["sub_boxes"]):
            raise ConfigError("experiment.sub_boxes: expected a list of [lo, hi] pairs")

    cfg.seed = _int("seed", cfg.seed, 0)
    if cfg.seed >= 2**64:
        raise ConfigError("seed: must fit in 64 bits")
    cfg.workers = _int("workers", cfg.workers, 1)
    if not isinstance(cfg.output, str) or not cfg.output:
        raise ConfigError("output: expected a directory path")
