"""Quantities derived from a run's event log and per-step records.

I(t) is piecewise constant and right-continuous, rebuilt exactly from the
INFECT/REMOVE records, so its integral and occupation times are exact
(no quadrature). Front records come from the per-step trace and the entry
count from per-step minimum distances, so both carry a dt-level bias.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import InvalidParameterError, LogParseError
from .model import INFECT, REMOVE, TRUNCATE, EventLog, SimState


@dataclass
class TimeSeries:
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.times.shape != self.values.shape:
            raise InvalidParameterError("times and values must have equal length")
        if len(self.times) > 1 and np.any(np.diff(self.times) <= 0):
            raise InvalidParameterError("sample times must be strictly increasing")

    def __len__(self):
        return len(self.times)


@dataclass
class RunResult:
    extinction_time: float
    censored: bool
    total_infections: int
    integral_I: float
    N_entry: int | None
    max_inf_radius: float
    occupation_below: dict = field(default_factory=dict)
    sup_front: float = math.nan
    t_end: float = math.nan
    overflow: bool = False
    truncated: bool = False
    run_id: int | None = None
    seed: int | None = None

    def row(self, thresholds=()) -> dict:
        out = {
            "run_id": self.run_id,
            "seed": self.seed,
            "extinction_time": self.extinction_time,
            "censored": int(self.censored),
            "total_infections": self.total_infections,
            "integral_I": self.integral_I,
            "N_entry": "" if self.N_entry is None else self.N_entry,
            "max_inf_radius": self.max_inf_radius,
        }
        for thr in thresholds:
            out[f"occupation_le_{thr:g}"] = self.occupation_below.get(thr, math.nan)
        return out

    def to_dict(self) -> dict:
        return asdict(self)


def _increments(events: EventLog):
    kinds = events.kinds
    if np.any((kinds != INFECT) & (kinds != REMOVE) & (kinds != TRUNCATE)):
        raise LogParseError("unknown event kind in log")
    t = events.times
    if np.any(~np.isfinite(t)):
        raise LogParseError("non-finite event time")
    keep = kinds != TRUNCATE
    t = t[keep]
    delta = np.where(kinds[keep] == INFECT, 1, -1)
    order = np.argsort(t, kind="stable")
    return t[order], delta[order]


def _steps(events: EventLog):
    """Breakpoints and the value of I on ``[b_k, b_{k+1})``."""
    t, delta = _increments(events)
    if len(t) == 0:
        return np.zeros(0), np.zeros(0, dtype=np.int64)
    bps, idx = np.unique(t, return_index=True)
    jumps = np.add.reduceat(delta, idx)
    values = np.cumsum(jumps)
    if np.any(values < 0):
        raise LogParseError("more removals than infections in log")
    return bps, values


def infected_count_series(events: EventLog, grid) -> TimeSeries:
    """I(t) at the grid times, reconstructed exactly from the log."""
    grid = np.asarray(grid, dtype=float)
    bps, values = _steps(events)
    k = np.searchsorted(bps, grid, side="right") - 1
    out = np.where(k >= 0, values[np.clip(k, 0, None)] if len(values) else 0, 0)
    return TimeSeries(grid, out.astype(float))


def _measure(events: EventLog, horizon: float, weight) -> float:
    bps, values = _steps(events)
    if len(bps) == 0:
        return float(weight(np.zeros(1))[0] * horizon)
    # I = 0 before the first record
    edges = np.concatenate([[0.0], bps, [math.inf]])
    vals = np.concatenate([[0], values])
    lo = np.clip(edges[:-1], 0.0, horizon)
    hi = np.clip(edges[1:], 0.0, horizon)
    return float(np.sum(weight(vals) * (hi - lo)))


def integral_I(events: EventLog, horizon: float = math.inf) -> float:
    """Exact integral of I(t) over ``[0, horizon]``."""
    if math.isinf(horizon):
        bps, values = _steps(events)
        if len(values) and values[-1] != 0:
            return math.inf
        horizon = float(bps[-1]) if len(bps) else 0.0
    return _measure(events, horizon, lambda v: v.astype(float))


def occupation_time(events: EventLog, threshold: float, horizon: float) -> float:
    """Lebesgue measure of ``{t <= horizon : I(t) <= threshold}``."""
    if not threshold >= 0:
        raise InvalidParameterError("threshold must be >= 0")
    if math.isinf(threshold):
        return float(horizon)
    return _measure(events, horizon, lambda v: (v <= threshold).astype(float))


def lifetime_sum(state: SimState, horizon: float | None = None) -> float:
    """Sum over ever-infected particles of ``min(t_remove, horizon) - t_infect``."""
    horizon = state.t if horizon is None else horizon
    ever = ~np.isnan(state.t_infect)
    return float(np.sum(np.minimum(state.t_remove[ever], horizon) - state.t_infect[ever]))


def front_series(state: SimState, grid):
    """Front of the infected set at grid times from the per-step trace.

    In one dimension returns ``(L, R)`` with ``L = +inf, R = -inf`` when
    nobody is infected; otherwise returns the maximal norm of an infected
    particle (nan when nobody is infected). Grid times map to the last step
    ending at or before them.
    """
    if state.trace_front is None:
        raise InvalidParameterError("run was not traced; pass record_trace=True")
    k = np.floor(np.asarray(grid, dtype=float) / state.dt + 1e-9).astype(int)
    k = np.clip(k, 0, state.step_index)
    if state.params.d == 1:
        return TimeSeries(np.asarray(grid, float), state.trace_left[k]), TimeSeries(np.asarray(grid, float), state.trace_right[k])
    return TimeSeries(np.asarray(grid, float), state.trace_front[k])


def sup_front_series(state: SimState, grid) -> TimeSeries:
    """``sup_{s <= t}`` of the maximal infected norm (= max(-L, R) in d = 1)."""
    if state.trace_front is None:
        raise InvalidParameterError("run was not traced; pass record_trace=True")
    running = np.fmax.accumulate(np.nan_to_num(state.trace_front[: state.step_index + 1], nan=-np.inf))
    k = np.floor(np.asarray(grid, dtype=float) / state.dt + 1e-9).astype(int)
    k = np.clip(k, 0, state.step_index)
    return TimeSeries(np.asarray(grid, float), running[k])


def entry_count(state: SimState, range_: float, horizon: float | None = None) -> int:
    """Particles (origin included) whose sampled path came within ``range_`` of the origin.

    Counts from the per-step minimum norms, so the horizon is the state's
    current time.
    """
    if horizon is not None and abs(horizon - state.t) > 0.5 * (state.dt or 0.0) + 1e-9:
        raise InvalidParameterError(f"state is at t={state.t}, not at horizon {horizon}")
    return int(np.count_nonzero(state.min_norm2 <= range_ * range_))


def summarize(state: SimState, thresholds=(), entry_range: float | None = None) -> RunResult:
    ev = state.events
    alive = bool(np.any(state.status == 1))
    removes = ev.times[ev.kinds == REMOVE]
    if alive:
        ext, censored = float(state.t), True
    else:
        ext, censored = (float(removes.max()) if len(removes) else 0.0), False
    inf_pos = ev.positions[ev.kinds == INFECT]
    max_r = float(np.sqrt((inf_pos**2).sum(axis=1)).max()) if len(inf_pos) else 0.0
    sup_front = math.sqrt(state.sup_front2) if state.sup_front2 > -math.inf else math.nan
    half = min(min(-v for v in state.window.lo), min(state.window.hi))
    return RunResult(
        extinction_time=ext,
        censored=censored,
        total_infections=int(np.count_nonzero(~np.isnan(state.t_infect))),
        integral_I=lifetime_sum(state),
        N_entry=None if entry_range is None else entry_count(state, entry_range),
        max_inf_radius=max_r,
        occupation_below={float(th): occupation_time(ev, th, state.t) for th in thresholds},
        sup_front=sup_front,
        t_end=float(state.t),
        overflow=bool(sup_front >= half - state.params.radius),
        truncated=state.truncated,
    )
