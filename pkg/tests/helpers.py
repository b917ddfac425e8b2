"""Hand-built simulator states for unit tests."""
from __future__ import annotations

import math

import numpy as np

from snails.model import I, S, EventLog, ModelParams, SimState
from snails.rng import Box, RngStream


def make_state(positions, infected=(0,), params=None, seed=0, window=None, dt=0.01):
    """State with the given positions, ``infected`` ids in I (infected at t=0), others S.

    No closure is applied, so tests can exercise it explicitly.
    """
    pos = np.asarray(positions, dtype=float)
    if pos.ndim == 1:
        pos = pos[:, None]
    n, d = pos.shape
    params = params or ModelParams(lam=1.0, alpha=1.0, d=d)
    rng = RngStream(seed)
    state = SimState(
        params=params, window=window or Box.cube(1000.0, d), rng=rng, x0=pos.copy(), pos=pos.copy(),
        status=np.full(n, S, dtype=np.int8), t_infect=np.full(n, np.nan), t_remove=np.full(n, np.inf),
        min_norm2=(pos**2).sum(axis=1), events=EventLog(d), contact_key=rng.contact_key,
        clock_key=rng.clock_key, dt=dt,
    )
    for i in infected:
        state.status[i] = I
        state.t_infect[i] = 0.0
        state.n_infected_total += 1
    return state


def statuses(state):
    return {int(k): "SIR"[int(s)] for k, s in enumerate(state.status)}


def infected_set(state):
    return set(np.flatnonzero(state.status == I).tolist())


def min_gap_infected_susceptible(state):
    inf = state.pos[state.status == I]
    sus = state.pos[state.status == S]
    if len(inf) == 0 or len(sus) == 0:
        return math.inf
    d2 = ((inf[:, None, :] - sus[None, :, :]) ** 2).sum(axis=2)
    return float(np.sqrt(d2.min()))
