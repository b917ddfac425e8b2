"""SIR state machine for Brownian snails.

Particles carry a Brownian trajectory and a state S -> I -> R. Susceptible
particles within ``radius`` of an infected one are infected at once, and so
is their whole radius-connected susceptible cluster. Infected particles are
removed after an exponential clock of rate ``alpha`` (``alpha == 0`` means
never). Time advances in fixed steps ``dt``; within one step the order is

    motion -> removals with clock <= step end -> contact detection -> closure

and every contact is dated at the step end.

The granular operations here operate on :class:`SimState` arrays in place.
Whole runs go through :func:`run`, which hands the step loop to the compiled
kernel when available and to :func:`step` otherwise; both produce identical
event logs for the same stream.
"""
from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ConsistencyError, InvalidParameterError, LogParseError, ResourceLimitError
from .neighbors import NeighborIndex
from .rng import Box, RngStream, keyed_exponential, keyed_uniform, sample_poisson_points

INSTANT = math.inf

S, I, R = 0, 1, 2
STATE_NAMES = {S: "S", I: "I", R: "R"}

INFECT, REMOVE, TRUNCATE = 0, 1, 2
EVENT_NAMES = {INFECT: "INFECT", REMOVE: "REMOVE", TRUNCATE: "TRUNCATE"}
EVENT_CODES = {v: k for k, v in EVENT_NAMES.items()}

# kernel return codes
DONE, EXTINCT, NEED_SPACE = 0, 1, 2

DEFAULT_PARTICLE_CAP = 5_000_000

# Pairs separated by more than radius + BRIDGE_MARGIN * sqrt(diffusion * dt) at
# the step end are never examined by the bridge detector; reaching the
# radius would need an 8.5-sigma increment of the separation.
BRIDGE_MARGIN = 12.0


class Mode(str, Enum):
    NAIVE = "NAIVE"
    BRIDGE = "BRIDGE"


@dataclass(frozen=True)
class ModelParams:
    """Model parameters. ``lam`` is the Poisson intensity (``lambda`` in configs)."""

    lam: float
    alpha: float
    d: int = 1
    radius: float = 1.0
    diffusion: float = 1.0
    drift: tuple | None = None
    infection_rate: float = INSTANT

    def __post_init__(self):
        def bad(name, why):
            raise InvalidParameterError(f"{name}: {why}")

        if not (math.isfinite(self.lam) and self.lam > 0):
            bad("lambda", f"must be positive and finite, got {self.lam}")
        if not (math.isfinite(self.alpha) and self.alpha >= 0):
            bad("alpha", f"must be >= 0 and finite, got {self.alpha}")
        if int(self.d) != self.d or self.d < 1:
            bad("d", f"must be an integer >= 1, got {self.d}")
        object.__setattr__(self, "d", int(self.d))
        if not (math.isfinite(self.radius) and self.radius > 0):
            bad("radius", f"must be positive, got {self.radius}")
        if not (math.isfinite(self.diffusion) and self.diffusion > 0):
            bad("diffusion", f"must be positive, got {self.diffusion}")
        drift = (0.0,) * self.d if self.drift is None else tuple(float(v) for v in np.atleast_1d(self.drift))
        if len(drift) != self.d or not all(math.isfinite(v) for v in drift):
            bad("drift", f"must be {self.d} finite reals")
        object.__setattr__(self, "drift", drift)
        if not self.infection_rate > 0 or math.isnan(self.infection_rate):
            bad("infection_rate", "must be positive or INSTANT")

    @property
    def instant(self) -> bool:
        return math.isinf(self.infection_rate)

    @property
    def default_dt(self) -> float:
        # RMS step displacement = 10% of the radius
        return 0.01 * self.radius**2 / self.diffusion

    def replace(self, **changes) -> "ModelParams":
        kw = dict(lam=self.lam, alpha=self.alpha, d=self.d, radius=self.radius,
                  diffusion=self.diffusion, drift=self.drift, infection_rate=self.infection_rate)
        kw.update(changes)
        if "d" in changes and "drift" not in changes:
            kw["drift"] = None
        return ModelParams(**kw)


def auto_window(params: ModelParams, t_max: float, c_win: float, k: float = 6.0) -> Box:
    """Cube ``[-W, W]^d`` with ``W = c_win * t_max + k * sqrt(2 * diffusion * t_max)``.

    ``c_win`` should bound the front speed of the removal-free process.
    Drift shifts everything rigidly, so the cube is widened by ``|drift| * t_max``.
    """
    drift = max(abs(v) for v in params.drift)
    w = c_win * t_max + k * math.sqrt(2.0 * params.diffusion * t_max) + drift * t_max
    w = max(w, 2.0 * params.radius)
    return Box.cube(w, params.d)


class EventLog:
    """Append-only log of (time, kind, particle id, position) records."""

    def __init__(self, d: int, capacity: int = 64):
        self.d = d
        self.count = 0
        self._t = np.empty(capacity)
        self._kind = np.empty(capacity, dtype=np.int8)
        self._id = np.empty(capacity, dtype=np.int64)
        self._pos = np.empty((capacity, d))

    def reserve(self, extra: int) -> None:
        need = self.count + extra
        cap = len(self._t)
        if need <= cap:
            return
        new = max(need, 2 * cap)
        for name in ("_t", "_kind", "_id", "_pos"):
            old = getattr(self, name)
            arr = np.empty((new,) + old.shape[1:], dtype=old.dtype)
            arr[: self.count] = old[: self.count]
            setattr(self, name, arr)

    @property
    def free(self) -> int:
        return len(self._t) - self.count

    def append(self, t: float, kind: int, pid: int, pos) -> None:
        self.reserve(1)
        k = self.count
        self._t[k] = t
        self._kind[k] = kind
        self._id[k] = pid
        self._pos[k] = pos
        self.count = k + 1

    @property
    def times(self) -> np.ndarray:
        return self._t[: self.count]

    @property
    def kinds(self) -> np.ndarray:
        return self._kind[: self.count]

    @property
    def ids(self) -> np.ndarray:
        return self._id[: self.count]

    @property
    def positions(self) -> np.ndarray:
        return self._pos[: self.count]

    def __len__(self):
        return self.count

    def __iter__(self):
        for k in range(self.count):
            yield (float(self._t[k]), EVENT_NAMES[int(self._kind[k])], int(self._id[k]),
                   tuple(float(v) for v in self._pos[k]))

    def __eq__(self, other):
        if not isinstance(other, EventLog):
            return NotImplemented
        return (self.count == other.count and self.d == other.d
                and np.array_equal(self.times, other.times)
                and np.array_equal(self.kinds, other.kinds)
                and np.array_equal(self.ids, other.ids)
                and np.array_equal(self.positions, other.positions, equal_nan=True))

    @classmethod
    def from_records(cls, records, d: int) -> "EventLog":
        log = cls(d)
        for t, kind, pid, pos in records:
            if isinstance(kind, str):
                if kind not in EVENT_CODES:
                    raise LogParseError(f"unknown event kind {kind!r}")
                kind = EVENT_CODES[kind]
            log.append(float(t), int(kind), int(pid), np.atleast_1d(pos) if pos is not None else np.full(d, np.nan))
        return log

    def header(self) -> list[str]:
        return ["time", "kind", "particle_id"] + [f"x{k}" for k in range(self.d)]

    def write_csv(self, fh) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(self.header())
        for t, kind, pid, pos in self:
            w.writerow([f"{t:.17g}", kind, pid] + [f"{v:.17g}" for v in pos])

    @classmethod
    def read_csv(cls, fh) -> "EventLog":
        rows = list(csv.reader(fh))
        if not rows or rows[0][:3] != ["time", "kind", "particle_id"]:
            raise LogParseError("missing event-log header")
        d = len(rows[0]) - 3
        try:
            recs = [(float(r[0]), r[1], int(r[2]), [float(v) for v in r[3:]]) for r in rows[1:]]
        except (ValueError, IndexError) as exc:
            raise LogParseError(f"malformed event-log row: {exc}") from None
        if any(len(r[3]) != d for r in recs):
            raise LogParseError("event-log rows have inconsistent dimension")
        return cls.from_records(recs, d)


@dataclass
class Particle:
    id: int
    x0: np.ndarray
    x: np.ndarray
    state: str
    t_infect: float | None
    t_remove: float | None


@dataclass
class SimState:
    """Struct-of-arrays simulation state; row ``k`` is particle id ``k``."""

    params: ModelParams
    window: Box
    rng: RngStream
    x0: np.ndarray
    pos: np.ndarray
    status: np.ndarray
    t_infect: np.ndarray
    t_remove: np.ndarray
    min_norm2: np.ndarray
    events: EventLog
    truncation: int | None = None
    t: float = 0.0
    step_index: int = 0
    n_infected_total: int = 0
    truncated: bool = False
    sup_front2: float = -math.inf
    dt: float | None = None
    mode: Mode = Mode.BRIDGE
    n_steps_total: int = 0
    trace_front: np.ndarray | None = None
    trace_left: np.ndarray | None = None
    trace_right: np.ndarray | None = None
    contact_key: int = 0
    clock_key: int = 0
    _prev: np.ndarray | None = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return len(self.status)

    def particle(self, pid: int) -> Particle:
        ti = self.t_infect[pid]
        tr = self.t_remove[pid]
        return Particle(int(pid), self.x0[pid].copy(), self.pos[pid].copy(), STATE_NAMES[int(self.status[pid])],
                        None if math.isnan(ti) else float(ti),
                        None if (math.isnan(tr) or math.isinf(tr)) else float(tr))

    @property
    def particles(self):
        return [self.particle(k) for k in range(self.n)]

    def infected_ids(self) -> np.ndarray:
        return np.flatnonzero(self.status == I)

    def susceptible_ids(self) -> np.ndarray:
        return np.flatnonzero(self.status == S)

    @property
    def n_infected(self) -> int:
        return int(np.count_nonzero(self.status == I))


def init_configuration(params: ModelParams, window: Box, rng: RngStream, truncation: int | None = None,
                       particle_cap: int = DEFAULT_PARTICLE_CAP) -> SimState:
    """Poisson field on ``window`` plus an infected particle (id 0) at the origin.

    The origin's radius-connected cluster is infected at t = 0.
    """
    if window.d != params.d:
        raise InvalidParameterError(f"window dimension {window.d} != d={params.d}")
    if not window.contains(np.zeros(params.d), margin=params.radius):
        raise InvalidParameterError("window must contain the origin with margin >= radius")
    if truncation is not None and int(truncation) < 1:
        raise InvalidParameterError("truncation must be a positive integer")
    pts = sample_poisson_points(rng, params.lam, window)
    n = len(pts) + 1
    if n > particle_cap:
        raise ResourceLimitError(f"{n} particles exceed the cap of {particle_cap}", partial=None)
    pos = np.vstack([np.zeros((1, params.d)), pts])
    state = SimState(
        params=params, window=window, rng=rng, x0=pos.copy(), pos=pos,
        status=np.zeros(n, dtype=np.int8), t_infect=np.full(n, np.nan), t_remove=np.full(n, np.inf),
        min_norm2=(pos**2).sum(axis=1), events=EventLog(params.d, capacity=max(64, 4 * n)),
        truncation=None if truncation is None else int(truncation),
        contact_key=rng.contact_key, clock_key=rng.clock_key,
    )
    _infect(state, [0], 0.0)
    infect_closure(state, [0], 0.0)
    _record_front(state)
    return state


def advance_positions(state: SimState, dt: float) -> SimState:
    """Move every particle (removed ones included) by drift*dt + N(0, diffusion*dt)."""
    if not dt > 0:
        raise InvalidParameterError(f"dt must be positive, got {dt}")
    p = state.params
    z = state.rng.motion.standard_normal(state.n * p.d).reshape(state.n, p.d)
    drift_dt = np.asarray(p.drift) * dt
    state.pos += drift_dt + math.sqrt(p.diffusion * dt) * z
    np.minimum(state.min_norm2, (state.pos**2).sum(axis=1), out=state.min_norm2)
    state.t = state.t + dt
    state.step_index += 1
    return state


def apply_removals(state: SimState, t_step_end: float) -> SimState:
    """Remove infected particles whose clock fired by ``t_step_end``; log by (clock, id)."""
    if state.params.alpha == 0:
        return state
    inf = state.infected_ids()
    due = inf[state.t_remove[inf] <= t_step_end]
    if len(due):
        due = due[np.lexsort((due, state.t_remove[due]))]
        state.status[due] = R
        for pid in due:
            state.events.append(state.t_remove[pid], REMOVE, pid, state.pos[pid])
    return state


def bridge_reach(params: ModelParams, dt: float) -> float:
    return params.radius + BRIDGE_MARGIN * math.sqrt(params.diffusion * dt)


def detect_contacts(prev_positions, state: SimState, mode: Mode = Mode.BRIDGE, dt: float | None = None):
    """Susceptible ids contacted by an infected particle during the last step.

    ``prev_positions`` holds every particle's position at the step start and
    ``state`` the step-end state after removals; only particles still
    infected at the step end transmit. Returns ``{id: contact time}`` with
    every contact dated at the step end.

    NAIVE flags step-end separations <= radius. BRIDGE also flags, with the
    Brownian-bridge crossing probability of the separation process
    (diffusion 2*D), pairs that may have touched during the step. With a
    finite infection rate, each pair within radius at the step end infects
    with probability 1 - exp(-rate*dt).
    """
    prev = np.asarray(getattr(prev_positions, "pos", prev_positions))
    if prev.shape != state.pos.shape:
        raise ConsistencyError("step-start and step-end particle sets differ")
    if dt is None:
        dt = state.dt
    p = state.params
    if state.truncated:
        return {}
    inf = state.infected_ids()
    sus = state.susceptible_ids()
    if len(inf) == 0 or len(sus) == 0:
        return {}
    r2 = p.radius * p.radius
    bridge = mode == Mode.BRIDGE and p.instant
    reach = bridge_reach(p, dt) if bridge else p.radius
    index = NeighborIndex(sus, state.pos[sus], reach, p.d)
    p_rate = -math.expm1(-p.infection_rate * dt) if not p.instant else 1.0
    two_d_dt = 2.0 * p.diffusion * dt
    key = state.contact_key
    step_id = state.step_index
    t_end = state.t
    hit = {}
    for i in inf:
        xi = state.pos[i].tolist()
        for row in index.query_rows(state.pos[i]):
            j = int(sus[row])
            if j in hit:
                continue
            xj = state.pos[j].tolist()
            d2 = 0.0
            for a, b in zip(xi, xj):
                d2 += (b - a) * (b - a)
            if d2 <= r2:
                if p.instant or keyed_uniform(key, step_id, int(i), j) < p_rate:
                    hit[j] = t_end
                continue
            if not bridge:
                continue
            pi = prev[i].tolist()
            pj = prev[j].tolist()
            d0 = 0.0
            for a, b in zip(pi, pj):
                d0 += (b - a) * (b - a)
            if d0 <= r2:
                hit[j] = t_end
                continue
            if p.d == 1 and (pj[0] - pi[0]) * (xj[0] - xi[0]) < 0.0:
                hit[j] = t_end  # passed through the interval
                continue
            g0 = math.sqrt(d0) - p.radius
            g1 = math.sqrt(d2) - p.radius
            if keyed_uniform(key, step_id, int(i), j) < math.exp(-2.0 * g0 * g1 / two_d_dt):
                hit[j] = t_end
    return hit


def _infect(state: SimState, new_ids, t: float) -> list:
    """Infect ``new_ids`` (ascending) at time ``t`` honouring the truncation cap."""
    if state.truncated or not len(new_ids):
        return []
    new_ids = [int(j) for j in new_ids]
    cap = state.truncation
    if cap is not None:
        new_ids = new_ids[: max(0, cap - state.n_infected_total)]
    alpha = state.params.alpha
    for j in new_ids:
        state.status[j] = I
        state.t_infect[j] = t
        state.t_remove[j] = t + keyed_exponential(state.clock_key, j, alpha) if alpha > 0 else math.inf
        state.events.append(t, INFECT, j, state.pos[j])
    state.n_infected_total += len(new_ids)
    if cap is not None and state.n_infected_total >= cap:
        state.truncated = True
        last = new_ids[-1]
        state.events.append(t, TRUNCATE, last, state.pos[last])
    return new_ids


def infect_closure(state: SimState, seeds, t: float) -> SimState:
    """Infect every susceptible chain-connected (hops <= radius) to a seed.

    Seeds may be infected particles (they transmit) or susceptible ones just
    contacted (they are infected and transmit). New infections are logged in
    ascending id order. With a finite infection rate there is no chain: only
    susceptible seeds are infected.
    """
    seeds = [int(s) for s in seeds]
    for s in seeds:
        if not 0 <= s < state.n:
            raise InvalidParameterError(f"unknown seed id {s}")
    if state.truncated or not seeds:
        return state
    p = state.params
    new = {s for s in seeds if state.status[s] == S}
    if p.instant:
        sus = state.susceptible_ids()
        if len(sus):
            index = NeighborIndex(sus, state.pos[sus], p.radius, p.d)
            queue = deque(seeds)
            while queue:
                src = queue.popleft()
                for row in index.query_rows(state.pos[src]):
                    j = int(sus[row])
                    if j not in new:
                        new.add(j)
                        queue.append(j)
    _infect(state, sorted(new), t)
    return state


def _record_front(state: SimState) -> None:
    inf = state.infected_ids()
    if len(inf):
        m2 = float((state.pos[inf] ** 2).sum(axis=1).max())
        if m2 > state.sup_front2:
            state.sup_front2 = m2
    if state.trace_front is None:
        return
    k = state.step_index
    if len(inf):
        state.trace_front[k] = math.sqrt(m2)
        if state.params.d == 1:
            state.trace_left[k] = state.pos[inf, 0].min()
            state.trace_right[k] = state.pos[inf, 0].max()
    else:
        state.trace_front[k] = math.nan
        state.trace_left[k] = math.inf
        state.trace_right[k] = -math.inf


def step(state: SimState, dt: float | None = None, mode: Mode | None = None) -> SimState:
    """One step: motion, removals, contact detection, chain closure at step end."""
    dt = state.dt if dt is None else dt
    mode = state.mode if mode is None else Mode(mode)
    prev = state.pos.copy()
    advance_positions(state, dt)
    apply_removals(state, state.t)
    hits = detect_contacts(prev, state, mode, dt)
    if hits:
        infect_closure(state, sorted(hits), state.t)
    _record_front(state)
    return state


def run_steps_python(state: SimState, max_steps: int, stop_at_extinction: bool) -> int:
    """Reference step loop; the compiled kernel mirrors it exactly."""
    done = 0
    while done < max_steps and state.step_index < state.n_steps_total:
        if stop_at_extinction and not np.any(state.status == I):
            return EXTINCT
        step(state)
        done += 1
    if stop_at_extinction and not np.any(state.status == I):
        return EXTINCT
    return DONE


def n_steps_for(t_max: float, dt: float) -> int:
    return max(1, math.ceil(t_max / dt - 1e-9))


def prepare(state: SimState, dt: float, t_max: float, mode: Mode, record_trace: bool = False) -> SimState:
    if not dt > 0:
        raise InvalidParameterError(f"dt must be positive, got {dt}")
    if not t_max > 0:
        raise InvalidParameterError(f"t_max must be positive, got {t_max}")
    state.dt = float(dt)
    state.mode = Mode(mode)
    state.n_steps_total = n_steps_for(t_max, dt)
    if record_trace:
        m = state.n_steps_total + 1
        front = np.full(m, np.nan)
        left = np.full(m, np.inf)
        right = np.full(m, -np.inf)
        k = state.step_index
        # carry the t = 0 record made before the trace existed
        inf = state.infected_ids()
        if len(inf):
            front[k] = math.sqrt(float((state.pos[inf] ** 2).sum(axis=1).max()))
            if state.params.d == 1:
                left[k] = state.pos[inf, 0].min()
                right[k] = state.pos[inf, 0].max()
        state.trace_front, state.trace_left, state.trace_right = front, left, right
    return state


def simulate(state: SimState, stop_at_extinction: bool = True, backend=None) -> SimState:
    """Drive ``state`` to extinction or its final step with the chosen kernel."""
    from . import _backend

    kernel = _backend.get(backend)
    while True:
        code = kernel.run_steps(state, 1 << 62, stop_at_extinction)
        if code == NEED_SPACE:
            state.events.reserve(2 * state.n + 2)
            continue
        return state


def run(params: ModelParams, window: Box, rng: RngStream, dt: float | None = None, t_max: float = 10.0,
        mode: Mode = Mode.BRIDGE, truncation: int | None = None, *, record_trace: bool = False,
        stop_at_extinction: bool = True, particle_cap: int = DEFAULT_PARTICLE_CAP,
        thresholds=(), entry_range: float | None = None, backend=None):
    """Simulate one trajectory; returns ``(RunResult, SimState)``.

    Stops at extinction (unless ``stop_at_extinction`` is false, which keeps
    the particles moving until ``t_max``) or after the last step, in which
    case the result is censored. With ``alpha == 0`` the run always reaches
    ``t_max``.
    """
    from .observables import summarize

    dt = params.default_dt if dt is None else dt
    state = init_configuration(params, window, rng, truncation, particle_cap)
    prepare(state, dt, t_max, mode, record_trace)
    simulate(state, stop_at_extinction, backend)
    return summarize(state, thresholds=thresholds, entry_range=entry_range), state
