"""Verification experiments built on independent simulator runs.

Every experiment takes a master seed; run ``k`` uses the stream
``(master_seed, k)``, so results are reproducible and independent of the
worker count.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import ContainmentViolation, InvalidParameterError
from .model import Mode, ModelParams, auto_window, run
from .observables import RunResult, front_series, sup_front_series
from .parallel import map_ordered
from .rng import Box, RngStream, sample_poisson_points

Z95 = 1.959963984540054

# quantile of sup-front / t used for the pilot speed; a convention, not a derived value
PILOT_QUANTILE = 0.99


# ---------------------------------------------------------------- run tasks

@dataclass(frozen=True)
class RunTask:
    params: ModelParams
    window: Box
    master_seed: int
    run_id: int
    dt: float
    t_max: float
    mode: Mode = Mode.BRIDGE
    truncation: int | None = None
    thresholds: tuple = ()
    entry_range: float | None = None
    stop_at_extinction: bool = True
    grid: tuple = ()
    backend: str | None = None


def execute(task: RunTask):
    """Run one task; returns the RunResult, plus front samples when ``grid`` is set."""
    result, state = run(task.params, task.window, RngStream(task.master_seed, task.run_id), task.dt,
                        task.t_max, task.mode, task.truncation, record_trace=bool(task.grid),
                        stop_at_extinction=task.stop_at_extinction, thresholds=task.thresholds,
                        entry_range=task.entry_range, backend=task.backend)
    result.run_id = task.run_id
    result.seed = task.master_seed
    if task.grid:
        cur = front_series(state, task.grid)
        if task.params.d == 1:
            left, right = cur
            front = np.maximum(-left.values, right.values)
            front = np.where(np.isfinite(front), front, np.nan)
        else:
            front = cur.values
        return result, front, sup_front_series(state, task.grid).values
    return result


def run_many(params, window, master_seed, n_runs, dt, t_max, workers=1, **kw) -> list:
    tasks = [RunTask(params, window, master_seed, k, dt, t_max, **kw) for k in range(n_runs)]
    return map_ordered(execute, tasks, workers)


# ------------------------------------------------------------ statistics

def wilson_interval(k: int, n: int, z: float = Z95) -> tuple[float, float]:
    if n == 0:
        return (0.0, 1.0)
    p = k / n
    den = 1.0 + z * z / n
    center = (p + z * z / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    lo = 0.0 if k == 0 else max(0.0, center - half)
    hi = 1.0 if k == n else min(1.0, center + half)
    return (lo, hi)


@dataclass
class SurvivalCurve:
    horizons: np.ndarray
    estimates: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    survivors: np.ndarray
    n_runs: int

    def rows(self):
        for T, p, lo, hi, k in zip(self.horizons, self.estimates, self.ci_low, self.ci_high, self.survivors):
            yield {"horizon": float(T), "survival": float(p), "ci_low": float(lo), "ci_high": float(hi),
                   "survivors": int(k), "n_runs": self.n_runs}


@dataclass
class FitResult:
    available: bool
    c_hat: float = math.nan
    c_se: float = math.nan
    intercept: float = math.nan
    chi2: float = math.nan
    max_abs_z: float = math.nan
    horizons_used: tuple = ()
    reason: str = ""

    @property
    def ci(self) -> tuple[float, float]:
        return (self.c_hat - Z95 * self.c_se, self.c_hat + Z95 * self.c_se)


def survival_curve(extinction_times, horizons) -> SurvivalCurve:
    ext = np.asarray(extinction_times, dtype=float)
    horizons = np.asarray(sorted(horizons), dtype=float)
    n = len(ext)
    k = np.array([np.count_nonzero(ext >= T) for T in horizons])
    ci = [wilson_interval(int(kk), n) for kk in k]
    return SurvivalCurve(horizons, k / max(n, 1), np.array([c[0] for c in ci]),
                         np.array([c[1] for c in ci]), k, n)


def fit_decay(curve: SurvivalCurve, min_survivors: int = 10) -> FitResult:
    """Weighted least squares of log P(T) on T; weights from the delta method.

    ``Var(log p_hat) ~ (1 - p) / (n p)``; horizons with fewer than
    ``min_survivors`` surviving runs, or with every run surviving, are left out.
    """
    n = curve.n_runs
    use = (curve.survivors >= min_survivors) & (curve.survivors < n)
    if np.count_nonzero(use) < 2:
        return FitResult(False, reason=f"fewer than two horizons with >= {min_survivors} survivors")
    T = curve.horizons[use]
    p = curve.estimates[use]
    y = np.log(p)
    var = (1 - p) / (n * p)
    w = 1.0 / var
    tw = np.sum(w * T) / np.sum(w)
    yw = np.sum(w * y) / np.sum(w)
    sxx = np.sum(w * (T - tw) ** 2)
    slope = np.sum(w * (T - tw) * (y - yw)) / sxx
    intercept = yw - slope * tw
    resid = y - (intercept + slope * T)
    z = resid / np.sqrt(var)
    return FitResult(True, float(-slope), float(math.sqrt(1.0 / sxx)), float(intercept), float(np.sum(z**2)),
                     float(np.max(np.abs(z))), tuple(float(t) for t in T))


# ----------------------------------------------------------- pilots

@lru_cache(maxsize=32)
def pilot_front_speed(params: ModelParams, t: float = 20.0, n_runs: int = 200, master_seed: int = 7919,
                      dt: float | None = None, quantile: float = PILOT_QUANTILE) -> float:
    """Upper quantile of ``sup front / t`` for the removal-free process.

    Sizes AUTO windows. The pilot's own window assumes speed 6 in units of
    diffusion / radius and doubles until no pilot front reaches its edge.
    """
    p0 = params.replace(alpha=0.0, infection_rate=math.inf)
    dt = p0.default_dt if dt is None else dt
    speed = 6.0 * p0.diffusion / p0.radius
    while True:
        res = run_many(p0, auto_window(p0, t, speed), master_seed, n_runs, dt, t)
        if not any(r.overflow for r in res):
            return float(np.quantile([r.sup_front for r in res], quantile) / t)
        speed *= 2.0


def resolve_window(params: ModelParams, t_max: float, window=None, c_win: float | None = None) -> tuple[Box, float]:
    if isinstance(window, Box):
        return window, math.nan
    if window not in (None, "AUTO"):
        return Box.cube(float(window), params.d), math.nan
    if c_win is None:
        c_win = pilot_front_speed(params)
    return auto_window(params, t_max, c_win), c_win


# ------------------------------------------------------------ experiments

@dataclass
class SurvivalResult:
    curve: SurvivalCurve
    fit: FitResult
    runs: list
    window: Box
    c_win: float

    @property
    def strictly_decreasing(self) -> bool:
        return bool(np.all(np.diff(self.curve.estimates) < 0))


def survival_experiment(params: ModelParams, horizons, n_runs: int, master_seed: int, *, dt=None,
                        mode=Mode.BRIDGE, window=None, c_win=None, workers=1, min_survivors=10,
                        backend=None) -> SurvivalResult:
    """Estimate ``P(extinction time >= T)`` on a horizon grid and fit its decay rate.

    One set of runs to the largest horizon serves every horizon, so the
    curve is monotone by construction.
    """
    if n_runs < 1:
        raise InvalidParameterError("n_runs must be >= 1")
    horizons = sorted(float(h) for h in horizons)
    t_max = horizons[-1]
    dt = params.default_dt if dt is None else dt
    box, c_win = resolve_window(params, t_max, window, c_win)
    runs = run_many(params, box, master_seed, n_runs, dt, t_max, workers, mode=Mode(mode), backend=backend)
    # a run censored at t_max survives every horizon
    curve = survival_curve([math.inf if r.censored else r.extinction_time for r in runs], horizons)
    return SurvivalResult(curve, fit_decay(curve, min_survivors), runs, box, c_win)


@dataclass
class ShapeResult:
    times: np.ndarray
    quantile_levels: tuple
    front_quantiles: np.ndarray      # (len(times), len(levels))
    sup_quantiles: np.ndarray
    median_ratio: np.ndarray         # median sup front / t
    C1_hat: float
    exceed_2C1: np.ndarray           # fraction of runs with sup front >= 2 C1_hat t
    n_used: int
    n_overflow: int
    window: Box
    sup_samples: np.ndarray = field(repr=False, default=None)

    def rows(self):
        for k, t in enumerate(self.times):
            row = {"t": float(t), "median_sup_over_t": float(self.median_ratio[k]),
                   "exceed_2C1": float(self.exceed_2C1[k])}
            for j, q in enumerate(self.quantile_levels):
                row[f"front_q{q:g}"] = float(self.front_quantiles[k, j])
                row[f"sup_q{q:g}"] = float(self.sup_quantiles[k, j])
            yield row


def shape_experiment(params: ModelParams, times, n_runs: int, master_seed: int, *, dt=None, window=None,
                     c_win=None, workers=1, levels=(0.05, 0.25, 0.5, 0.75, 0.95, 0.99),
                     backend=None) -> ShapeResult:
    """Quantile envelopes of the removal-free infected set's extent over time.

    ``C1_hat`` is the 0.99 quantile of ``sup front / t`` at the last time.
    Runs whose front reaches the window edge are excluded and counted.
    """
    if params.alpha != 0:
        raise InvalidParameterError("shape_experiment requires alpha = 0")
    times = tuple(sorted(float(t) for t in times))
    t_max = times[-1]
    dt = params.default_dt if dt is None else dt
    box, _ = resolve_window(params, t_max, window, c_win)
    tasks = [RunTask(params, box, master_seed, k, dt, t_max, grid=times, backend=backend) for k in range(n_runs)]
    out = map_ordered(execute, tasks, workers)
    keep = [o for o in out if not o[0].overflow]
    n_over = len(out) - len(keep)
    if not keep:
        raise InvalidParameterError("every run overflowed the window")
    front = np.array([o[1] for o in keep])
    sup = np.array([o[2] for o in keep])
    t_arr = np.array(times)
    fq = np.quantile(front, levels, axis=0).T
    sq = np.quantile(sup, levels, axis=0).T
    c1 = float(np.quantile(sup[:, -1] / t_max, PILOT_QUANTILE))
    exceed = np.mean(sup >= 2.0 * c1 * t_arr, axis=0)
    return ShapeResult(t_arr, tuple(levels), fq, sq, np.median(sup, axis=0) / t_arr, c1, exceed,
                       len(keep), n_over, box, sup)


@dataclass
class CouplingReport:
    n_runs: int
    n_contained: int
    violations: list

    @property
    def all_contained(self) -> bool:
        return self.n_contained == self.n_runs


def _coupled_pair(args):
    params, window, master_seed, run_id, dt, t_max, mode, backend = args
    rng_a = RngStream(master_seed, run_id)
    rng_0 = RngStream(master_seed, run_id)
    _, sa = run(params, window, rng_a, dt, t_max, mode, backend=backend)
    _, s0 = run(params.replace(alpha=0.0), window, rng_0, dt, t_max, mode, backend=backend)
    ever = np.flatnonzero(~np.isnan(sa.t_infect))
    # per-step containment <=> every particle infected under alpha is infected no later under alpha = 0
    t0 = s0.t_infect[ever]
    bad = ever[~(t0 <= sa.t_infect[ever])]
    if len(bad):
        first = bad[np.argmin(sa.t_infect[bad])]
        step = int(round(sa.t_infect[first] / dt))
        return run_id, (int(first), step, float(sa.t_infect[first]))
    return run_id, None


def coupling_experiment(params: ModelParams, t_max: float, n_runs: int, master_seed: int, *, dt=None,
                        mode=Mode.BRIDGE, window=None, c_win=None, workers=1, raise_on_violation=False,
                        backend=None) -> CouplingReport:
    """Pair each run with its alpha = 0 twin on the same stream and check containment.

    The twins share the initial field, every Brownian increment and every
    contact draw; removal clocks come from a separate keyed substream that
    the removal-free twin never reads.
    """
    if params.alpha <= 0:
        raise InvalidParameterError("coupling_experiment requires alpha > 0")
    dt = params.default_dt if dt is None else dt
    box, _ = resolve_window(params, t_max, window, c_win)
    tasks = [(params, box, master_seed, k, dt, t_max, Mode(mode), backend) for k in range(n_runs)]
    out = map_ordered(_coupled_pair, tasks, workers)
    violations = [{"run_id": rid, "seed": master_seed, "particle": v[0], "step": v[1], "time": v[2]}
                  for rid, v in out if v is not None]
    if violations and raise_on_violation:
        raise ContainmentViolation(f"containment failed: {violations[0]}")
    return CouplingReport(n_runs, n_runs - len(violations), violations)


def _mean_se(x):
    x = np.asarray(x, dtype=float)
    if len(x) < 2:
        return float(x.mean()) if len(x) else math.nan, math.nan
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(len(x)))


@dataclass
class ConvergencePoint:
    mode: str
    dt: float
    survival: float
    survival_se: float
    mean_infections: float
    mean_infections_se: float
    mean_front: float
    mean_front_se: float
    n_runs: int

    def estimate(self, statistic: str) -> tuple[float, float]:
        return {
            "survival": (self.survival, self.survival_se),
            "infections": (self.mean_infections, self.mean_infections_se),
            "front": (self.mean_front, self.mean_front_se),
        }[statistic]


def convergence_study(params: ModelParams, dt_grid, n_runs: int, master_seed: int, T: float, *,
                      modes=(Mode.BRIDGE, Mode.NAIVE), window=None, c_win=None, workers=1,
                      backend=None) -> list[ConvergencePoint]:
    """Survival at ``T``, mean total infections and mean sup front for each (mode, dt)."""
    box, _ = resolve_window(params, T, window, c_win)
    out = []
    for mode in modes:
        for dt in dt_grid:
            runs = run_many(params, box, master_seed, n_runs, float(dt), T, workers, mode=Mode(mode), backend=backend)
            alive = np.array([r.censored or r.extinction_time >= T for r in runs], dtype=float)
            p = float(alive.mean())
            inf_m, inf_se = _mean_se([r.total_infections for r in runs])
            fr_m, fr_se = _mean_se([r.sup_front for r in runs])
            out.append(ConvergencePoint(Mode(mode).value, float(dt), p, math.sqrt(p * (1 - p) / n_runs),
                                        inf_m, inf_se, fr_m, fr_se, n_runs))
    return out


@dataclass
class StationarityRow:
    lo: tuple
    hi: tuple
    expected: float
    mean0: float
    var0: float
    mean_t: float
    var_t: float
    z_mean: float
    z_var: float
    margin_ok: bool

    @property
    def flagged(self) -> bool:
        return abs(self.z_mean) > 4 or abs(self.z_var) > 4


def _var_se(x):
    """Standard error of the sample variance via the fourth central moment."""
    n = len(x)
    m2 = np.var(x, ddof=1)
    m4 = np.mean((x - x.mean()) ** 4)
    return math.sqrt(max(m4 - (n - 3) / (n - 1) * m2 * m2, 0.0) / n)


def stationarity_check(lam: float, d: int, window: Box, t: float, n_runs: int, master_seed: int,
                       sub_boxes=None, diffusion: float = 1.0) -> list[StationarityRow]:
    """Compare Poisson counts in sub-boxes at time 0 and after free motion for time ``t``.

    A Poisson field of independent Brownian particles on the whole space is
    invariant; on a finite window it leaks at the edges, so sub-boxes are
    trusted only at distance ``>= 6 sqrt(diffusion t)`` from the window edge.
    The z-scores compare the time-t mean with ``lam |box|`` and the time-t
    variance with the time-t mean.
    """
    if sub_boxes is None:
        half = min(min(-v for v in window.lo), min(window.hi)) / 4
        sub_boxes = [Box.cube(half, d)]
    margin = 6.0 * math.sqrt(diffusion * t)
    c0 = np.zeros((n_runs, len(sub_boxes)))
    ct = np.zeros((n_runs, len(sub_boxes)))
    for k in range(n_runs):
        rng = RngStream(master_seed, k)
        x = sample_poisson_points(rng, lam, window)
        xt = x + math.sqrt(diffusion * t) * rng.motion.standard_normal(x.shape) if t > 0 else x
        for b, box in enumerate(sub_boxes):
            lo, hi = np.asarray(box.lo), np.asarray(box.hi)
            c0[k, b] = np.count_nonzero(np.all((x >= lo) & (x <= hi), axis=1))
            ct[k, b] = np.count_nonzero(np.all((xt >= lo) & (xt <= hi), axis=1))
    rows = []
    for b, box in enumerate(sub_boxes):
        expected = lam * box.volume
        m, se = _mean_se(ct[:, b])
        v = float(np.var(ct[:, b], ddof=1))
        z_mean = (m - expected) / se if se > 0 else 0.0
        vse = _var_se(ct[:, b])
        z_var = (v - m) / vse if vse > 0 else 0.0
        ok = all(l - margin >= wl and h + margin <= wh for l, h, wl, wh in zip(box.lo, box.hi, window.lo, window.hi))
        rows.append(StationarityRow(box.lo, box.hi, expected, float(c0[:, b].mean()), float(np.var(c0[:, b], ddof=1)),
                                    m, v, float(z_mean), float(z_var), ok))
    return rows


@dataclass
class EntryResult:
    N: np.ndarray
    range_: float
    T: float

    @property
    def mean(self) -> float:
        return float(self.N.mean())

    def poisson_z(self) -> float:
        """(mean - variance) of N - 1 in units of the variance's standard error."""
        x = self.N - 1.0
        return float((x.mean() - np.var(x, ddof=1)) / _var_se(x))


def entry_experiment(params: ModelParams, T: float, range_: float, n_runs: int, master_seed: int, *,
                     dt=None, mode=Mode.BRIDGE, window=None, workers=1, backend=None) -> EntryResult:
    """Distribution of the entry count N over full-length runs (motion continues after extinction)."""
    dt = params.default_dt if dt is None else dt
    if window is None:
        window = Box.cube(range_ + 6.0 * math.sqrt(2.0 * params.diffusion * T), params.d)
    runs = run_many(params, window, master_seed, n_runs, dt, T, workers, mode=Mode(mode),
                    entry_range=range_, stop_at_extinction=False, backend=backend)
    return EntryResult(np.array([r.N_entry for r in runs], dtype=float), range_, T)


# --------------------------------------------------------- proof constants

@dataclass(frozen=True)
class ProofConstants:
    C1: float
    C2: float
    alpha: float
    T: float
    epsilon: float
    M: float
    p: float
    K_trunc: float

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("C1", "C2", "alpha", "T", "epsilon", "M", "p", "K_trunc")}


def proof_constants(C1: float, C2: float, alpha: float, T: float) -> ProofConstants:
    """Window length, attempt count, failure probability and truncation level of the extinction argument.

    ``epsilon = 1/(200 C1)``, ``M = T/(2 epsilon) = 100 C1 T``,
    ``p = 1 - (1 - exp(-alpha epsilon))**(2 C2) / 2`` and ``K = 20 C1 T``.
    """
    for name, v in (("C1", C1), ("C2", C2), ("alpha", alpha), ("T", T)):
        if not (math.isfinite(v) and v > 0):
            raise InvalidParameterError(f"{name} must be positive and finite, got {v}")
    eps = 1.0 / (200.0 * C1)
    M = T / (2.0 * eps)
    p = 1.0 - (-math.expm1(-alpha * eps)) ** (2.0 * C2) / 2.0
    return ProofConstants(C1, C2, alpha, T, eps, M, p, 20.0 * C1 * T)
