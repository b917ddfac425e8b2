import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from snails.errors import ConsistencyError, InvalidParameterError, LogParseError, ResourceLimitError
from snails.model import (INFECT, REMOVE, TRUNCATE, EventLog, Mode, ModelParams, advance_positions,
                          apply_removals, auto_window, detect_contacts, infect_closure, init_configuration,
                          n_steps_for, prepare, run, simulate, step)
from snails.rng import Box, RngStream, bridge_crossing_probability

from helpers import infected_set, make_state, min_gap_infected_susceptible
from oracles import bfs_cluster


# ------------------------------------------------------------------ params

@pytest.mark.parametrize("kw,field", [
    (dict(lam=0, alpha=1), "lambda"), (dict(lam=1, alpha=-1), "alpha"), (dict(lam=1, alpha=1, d=0), "d"),
    (dict(lam=1, alpha=1, radius=0), "radius"), (dict(lam=1, alpha=1, diffusion=-1), "diffusion"),
    (dict(lam=1, alpha=1, drift=(1, 2)), "drift"), (dict(lam=1, alpha=1, infection_rate=0), "infection_rate"),
])
def test_params_validation_names_field(kw, field):
    with pytest.raises(InvalidParameterError, match=field):
        ModelParams(**kw)


def test_params_defaults():
    p = ModelParams(1, 1)
    assert (p.d, p.radius, p.diffusion, p.drift, p.instant) == (1, 1.0, 1.0, (0.0,), True)
    assert p.default_dt == 0.01
    assert ModelParams(1, 1, radius=2, diffusion=4).default_dt == pytest.approx(0.01)


def test_auto_window_formula():
    p = ModelParams(1, 1)
    w = auto_window(p, 10.0, 2.0)
    assert w.hi[0] == pytest.approx(20 + 6 * math.sqrt(20))


# ---------------------------------------------------------------- init

def test_init_origin_particle():
    s = init_configuration(ModelParams(1, 1), Box.cube(100), RngStream(1))
    assert s.pos[0, 0] == 0.0 and s.status[0] == 1 and s.t_infect[0] == 0.0
    assert np.count_nonzero(np.all(s.pos == 0, axis=1)) == 1
    assert s.t_remove[0] > 0


def test_init_count_poisson():
    counts = np.array([init_configuration(ModelParams(1, 1), Box.cube(100), RngStream(2, k)).n - 1
                       for k in range(2000)])
    assert abs(counts.mean() - 200) < 4 * math.sqrt(200 / len(counts))


def test_init_empty_field():
    s = init_configuration(ModelParams(1e-9, 1), Box.cube(10), RngStream(3))
    assert s.n == 1


def test_init_window_must_contain_origin():
    with pytest.raises(InvalidParameterError):
        init_configuration(ModelParams(1, 1), Box((0.5,), (10,)), RngStream(0))
    with pytest.raises(InvalidParameterError):
        init_configuration(ModelParams(1, 1), Box((-0.5,), (10,)), RngStream(0))


def test_init_particle_cap():
    with pytest.raises(ResourceLimitError):
        init_configuration(ModelParams(10, 1), Box.cube(100), RngStream(0), particle_cap=100)


def test_init_closure_matches_oracle():
    p = ModelParams(5, 1)
    sizes = []
    for k in range(1000):
        s = init_configuration(p, Box.cube(10), RngStream(4, k))
        assert infected_set(s) == bfs_cluster(s.x0, [0], 1.0)
        assert np.all(s.t_infect[list(infected_set(s))] == 0.0)
        sizes.append(len(infected_set(s)))
    # mean origin-cluster size on the line: 1 + 2 q/(1-q), q = 1 - exp(-lam); window edges cut a little
    q = 1 - math.exp(-5)
    assert np.mean(sizes) <= 1 + 2 * q / (1 - q) + 4 * np.std(sizes) / math.sqrt(len(sizes))


# -------------------------------------------------------------- motion

def test_motion_variance_single_particle():
    s = make_state([[0.0]], params=ModelParams(1, 0))
    x = []
    for _ in range(100000):
        before = s.pos[0, 0]
        advance_positions(s, 0.01)
        x.append(s.pos[0, 0] - before)
    x = np.array(x)
    assert abs(x.var() - 0.01) < 4 * 0.01 * math.sqrt(2 / len(x))
    assert s.t == pytest.approx(1000.0) and s.step_index == 100000


def test_motion_drift_limit():
    s = make_state([[0.3]], params=ModelParams(1, 0, diffusion=1e-12, drift=(1.0,)))
    for _ in range(100):
        advance_positions(s, 0.01)
    assert s.pos[0, 0] == pytest.approx(1.3, abs=1e-6)


def test_motion_independent_particles():
    dx = []
    for k in range(10000):
        s = make_state([[0.0], [5.0]], seed=k)
        advance_positions(s, 1.0)
        dx.append(s.pos[:, 0] - [0.0, 5.0])
    dx = np.array(dx)
    assert abs(np.corrcoef(dx.T)[0, 1]) < 4 / math.sqrt(len(dx))


def test_motion_rejects_dt():
    with pytest.raises(InvalidParameterError):
        advance_positions(make_state([[0.0]]), 0.0)


# ------------------------------------------------------------- closure

def test_closure_hand_checked():
    s = make_state([0.0, 0.8, 1.7, 3.0])
    infect_closure(s, [0], 0.5)
    assert infected_set(s) == {0, 1, 2}
    assert s.t_infect[1] == s.t_infect[2] == 0.5 and np.isnan(s.t_infect[3])
    assert [e[2] for e in s.events] == [1, 2]  # ascending id


def test_closure_empty():
    s = make_state([0.0, 5.0])
    infect_closure(s, [0], 0.0)
    assert infected_set(s) == {0} and len(s.events) == 0


def test_closure_unknown_seed():
    with pytest.raises(InvalidParameterError):
        infect_closure(make_state([0.0]), [7], 0.0)


def test_closure_matches_oracle_random_instances():
    rng = np.random.default_rng(5)
    for _ in range(1000):
        pts = rng.uniform(0, 50, 200)
        seed = int(np.argmin(np.abs(pts)))
        s = make_state(pts, infected=[seed])
        infect_closure(s, [seed], 0.0)
        assert infected_set(s) == bfs_cluster(pts, [seed], 1.0)


def test_closure_sets_removal_clocks_and_logs():
    s = make_state([0.0, 0.5], params=ModelParams(1, 2.0))
    infect_closure(s, [0], 1.0)
    assert s.t_remove[1] > 1.0 and math.isfinite(s.t_remove[1])
    assert list(s.events)[0][:3] == (1.0, "INFECT", 1)


def test_truncation_caps_infections():
    s = make_state(np.arange(10) * 0.5, params=ModelParams(1, 1))
    s.truncation = 4
    infect_closure(s, [0], 0.0)
    assert len(infected_set(s)) == 4 and s.truncated
    kinds = [e[1] for e in s.events]
    assert kinds == ["INFECT"] * 3 + ["TRUNCATE"]
    infect_closure(s, [5], 1.0)
    assert len(infected_set(s)) == 4


def test_finite_rate_has_no_chain():
    s = make_state([0.0, 0.8, 1.6], params=ModelParams(1, 1, infection_rate=5.0))
    infect_closure(s, [1], 0.0)
    assert infected_set(s) == {0, 1}


# ------------------------------------------------------------ removals

def test_removal_order_by_clock_then_id():
    s = make_state([0.0, 3.0, 6.0, 9.0], infected=[0, 1, 2, 3])
    s.t_remove[:] = [0.5, 0.2, 0.5, 2.0]
    apply_removals(s, 1.0)
    assert [(e[2], e[0]) for e in s.events] == [(1, 0.2), (0, 0.5), (2, 0.5)]
    assert s.status.tolist() == [2, 2, 2, 1]


def test_removal_noop_without_removal_rate():
    s = make_state([0.0], params=ModelParams(1, 0))
    apply_removals(s, 1e9)
    assert s.status[0] == 1


def test_huge_rate_removes_in_first_step():
    removed = 0
    for k in range(200):
        _, st = run(ModelParams(1e-9, 1e6), Box.cube(5), RngStream(6, k), dt=1.0, t_max=1.0)
        removed += st.status[0] == 2
    assert removed == 200


def test_lifetimes_exponential():
    s = make_state(np.arange(10000) * 3.0, infected=[], params=ModelParams(1, 1))
    infect_closure(s, list(range(10000)), 0.0)
    life = s.t_remove - s.t_infect
    assert abs(life.mean() - 1) < 3 / math.sqrt(len(life))


# ------------------------------------------------------------- contacts

def test_contact_within_radius_certain():
    s = make_state([0.0, 0.5])
    assert detect_contacts(s.pos.copy(), s, Mode.NAIVE) == {1: s.t}


def test_contact_far_never():
    s = make_state([0.0, 10.0])
    for k in range(1000):
        s.step_index = k
        assert detect_contacts(s.pos.copy(), s, Mode.BRIDGE, 0.01) == {}


def test_contact_mismatched_states():
    s = make_state([0.0, 0.5])
    with pytest.raises(ConsistencyError):
        detect_contacts(np.zeros((3, 1)), s)


def test_removed_particle_does_not_transmit():
    s = make_state([0.0, 0.5])
    s.t_remove[0] = 0.005
    s.t = 0.01
    apply_removals(s, s.t)
    assert detect_contacts(s.pos.copy(), s, Mode.BRIDGE) == {}


def test_bridge_contact_frequency_matches_crossing_probability():
    # separation 1.2 -> 1.3 over dt = 0.05; the separation diffuses with 2 * D
    prev = np.array([[0.0], [1.2]])
    s = make_state([[0.0], [1.3]], dt=0.05)
    n = 20000
    hits = 0
    for k in range(n):
        s.step_index = k
        hits += 1 in detect_contacts(prev, s, Mode.BRIDGE, 0.05)
    p = bridge_crossing_probability(1.2, 1.3, 1.0, 0.05, 2.0)
    assert abs(hits / n - p) < 4 * math.sqrt(p * (1 - p) / n)
    s.step_index = 0
    assert detect_contacts(prev, s, Mode.NAIVE, 0.05) == {}


def test_bridge_crossing_through_interval_in_1d():
    prev = np.array([[0.0], [-1.5]])
    s = make_state([[0.0], [1.5]])
    assert 1 in detect_contacts(prev, s, Mode.BRIDGE, 0.01)


# ---------------------------------------------------------------- steps

def test_step_extinct_is_pure_motion():
    s = make_state([0.0, 0.5], infected=[])
    before = s.pos.copy()
    step(s, 0.01, Mode.BRIDGE)
    assert len(s.events) == 0 and not np.array_equal(before, s.pos)


def test_step_count_rule():
    assert n_steps_for(10, 0.01) == 1000
    assert n_steps_for(0.001, 0.01) == 1


def test_removed_before_step_end_does_not_infect():
    s = make_state([0.0, 0.2])
    s.t_remove[0] = 0.001
    prepare(s, 0.01, 1.0, Mode.BRIDGE)
    step(s)
    assert s.status[1] == 0
    assert [e[1] for e in s.events] == ["REMOVE"]


def _run(seed, backend=None, **kw):
    p = kw.pop("params", ModelParams(1, 1))
    return run(p, kw.pop("window", Box.cube(40)), RngStream(seed), t_max=kw.pop("t_max", 5.0),
               backend=backend, **kw)


def test_replay_identical(backend):
    a = _run(11, backend)[1]
    b = _run(11, backend)[1]
    assert a.events == b.events and len(a.events) > 1


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32), lam=st.sampled_from([0.5, 1.0, 3.0]), alpha=st.sampled_from([0.0, 0.5, 2.0]),
       d=st.sampled_from([1, 2]), mode=st.sampled_from(list(Mode)),
       trunc=st.sampled_from([None, 3, 20]), rate=st.sampled_from([math.inf, 20.0]))
def test_backends_bit_identical(seed, lam, alpha, d, mode, trunc, rate):
    from snails import _backend
    if "compiled" not in _backend.available():
        pytest.skip("extension not built")
    p = ModelParams(lam, alpha, d=d, infection_rate=rate)
    kw = dict(params=p, window=Box.cube(12 if d == 2 else 30, d), t_max=2.0, mode=mode, truncation=trunc,
              record_trace=True)
    ra, a = _run(seed, "python", **kw)
    rb, b = _run(seed, "compiled", **kw)
    assert a.events == b.events
    np.testing.assert_array_equal(a.pos, b.pos)
    np.testing.assert_array_equal(a.min_norm2, b.min_norm2)
    np.testing.assert_array_equal(a.trace_front, b.trace_front)
    assert ra == rb


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32), alpha=st.sampled_from([0.0, 1.0]), mode=st.sampled_from(list(Mode)))
def test_state_machine_soundness(seed, alpha, mode):
    p = ModelParams(1.5, alpha)
    s = init_configuration(p, Box.cube(30), RngStream(seed))
    prepare(s, 0.01, 3.0, mode)
    seen = dict(enumerate(s.status.tolist()))
    for _ in range(300):
        step(s)
        if mode == Mode.NAIVE:
            assert min_gap_infected_susceptible(s) > p.radius
        for k, v in enumerate(s.status.tolist()):
            prev = seen[k]
            assert v >= prev and not (prev == 0 and v == 2)
            seen[k] = v
    ever = ~np.isnan(s.t_infect)
    assert np.all(s.t_remove[ever] >= s.t_infect[ever])
    assert np.all(s.t_remove[s.status == 2] <= s.t + 1e-12)
    if alpha == 0:
        assert not np.any(s.events.kinds == REMOVE)


def test_alpha_zero_infected_count_nondecreasing():
    from snails.observables import infected_count_series
    for k in range(20):
        _, s = _run(k, params=ModelParams(1, 0), t_max=5.0)
        series = infected_count_series(s.events, np.linspace(0, 5, 101)).values
        assert np.all(np.diff(series) >= 0)
        assert s.t == pytest.approx(5.0)


def test_truncated_run_never_infects_after_cap(backend):
    for k in range(30):
        _, s = _run(k, backend, params=ModelParams(2, 0.5), truncation=5, t_max=5.0)
        kinds = s.events.kinds.tolist()
        assert kinds.count(INFECT) <= 5
        if TRUNCATE in kinds:
            assert INFECT not in kinds[kinds.index(TRUNCATE):]


def test_extinction_stops_run():
    res, s = _run(3, params=ModelParams(1e-9, 1))
    assert not res.censored and res.extinction_time == s.t_remove[0]
    assert s.t >= res.extinction_time


def test_censored_run():
    res, s = _run(3, params=ModelParams(1, 0), t_max=1.0)
    assert res.censored and res.extinction_time == pytest.approx(1.0)


# ------------------------------------------------------------- event log

def test_event_log_csv_roundtrip():
    _, s = _run(21, params=ModelParams(2, 1, d=2), window=Box.cube(8, 2), t_max=2.0)
    buf = io.StringIO()
    s.events.write_csv(buf)
    back = EventLog.read_csv(io.StringIO(buf.getvalue()))
    assert back == s.events
    assert buf.getvalue().splitlines()[0] == "time,kind,particle_id,x0,x1"


@pytest.mark.parametrize("text", ["", "a,b,c\n", "time,kind,particle_id,x0\n1,EXPLODE,0,0\n",
                                  "time,kind,particle_id,x0\nnan?,INFECT,0,0\n"])
def test_event_log_parse_errors(text):
    with pytest.raises(LogParseError):
        EventLog.read_csv(io.StringIO(text))


def test_event_log_from_records():
    log = EventLog.from_records([(0.0, "INFECT", 0, [0.0]), (2.5, "REMOVE", 0, [1.0])], 1)
    assert list(log) == [(0.0, "INFECT", 0, (0.0,)), (2.5, "REMOVE", 0, (1.0,))]
