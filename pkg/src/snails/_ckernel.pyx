# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled step loop.

Line-for-line mirror of ``snails.model.run_steps_python``: same random
stream (numpy's bit generator through its C API), same keyed hash, same
floating-point expression order. Build without -ffast-math and with
-ffp-contract=off or the two backends drift apart.
"""
import math

import numpy as np

from cpython.pycapsule cimport PyCapsule_GetPointer
from libc.math cimport sqrt, exp, log1p, floor, INFINITY, NAN
from libc.stdlib cimport qsort, malloc, free
from numpy.random cimport bitgen_t

cdef extern from "numpy/random/distributions.h":
    double random_standard_normal(bitgen_t *bitgen_state) nogil

ctypedef unsigned long long u64

cdef enum:
    ST_S = 0
    ST_I = 1
    ST_R = 2
    EV_INFECT = 0
    EV_REMOVE = 1
    EV_TRUNCATE = 2
    RC_DONE = 0
    RC_EXTINCT = 1
    RC_NEED_SPACE = 2
    MAXD = 8

cdef u64 GOLDEN = 0x9E3779B97F4A7C15ULL


cdef inline u64 mix64(u64 z) noexcept nogil:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline double keyed_uniform(u64 key, u64 a, u64 b, u64 c) noexcept nogil:
    cdef u64 h = mix64(key + a * GOLDEN)
    h = mix64(h ^ (b + GOLDEN))
    h = mix64(h ^ (c * GOLDEN + 1ULL))
    return (<double>(h >> 12) + 0.5) * (1.0 / 4503599627370496.0)


def keyed_uniform_c(u64 key, u64 a, u64 b=0, u64 c=0):
    return keyed_uniform(key, a, b, c)


cdef struct Removal:
    double t
    long long id


cdef int cmp_removal(const void *pa, const void *pb) noexcept nogil:
    cdef const Removal *a = <const Removal *> pa
    cdef const Removal *b = <const Removal *> pb
    if a.t < b.t:
        return -1
    if a.t > b.t:
        return 1
    return (a.id > b.id) - (a.id < b.id)


cdef int cmp_ll(const void *pa, const void *pb) noexcept nogil:
    cdef long long a = (<const long long *> pa)[0]
    cdef long long b = (<const long long *> pb)[0]
    return (a > b) - (a < b)


cdef class _Grid:
    """Cell lists over the susceptible particles; cell side >= query radius."""
    cdef int d
    cdef double h
    cdef double lo[MAXD]
    cdef long long nc[MAXD]
    cdef long long ncell
    cdef long long[::1] start
    cdef long long[::1] items
    cdef long long[::1] cell_of
    cdef long long[:, ::1] offsets
    cdef int noff

    def __init__(self, int d, double h, lo, hi, long long n):
        cdef int k
        cdef long long total = 1
        cdef double ext
        cdef double cap = 4.0 * n + 64.0
        self.d = d
        for k in range(d):
            ext = hi[k] - lo[k]
            total *= max(1, <long long>(ext / h) + 1)
        # coarsen if the grid would dwarf the particle count; correctness only needs side >= h
        if total > cap:
            h = h * (total / cap) ** (1.0 / d)
        self.h = h
        self.ncell = 1
        for k in range(d):
            self.lo[k] = lo[k]
            self.nc[k] = max(1, <long long>((hi[k] - lo[k]) / h) + 1)
            self.ncell *= self.nc[k]
        self.start = np.zeros(self.ncell + 1, dtype=np.int64)
        self.items = np.zeros(max(n, 1), dtype=np.int64)
        self.cell_of = np.zeros(max(n, 1), dtype=np.int64)
        offs = np.array(np.meshgrid(*([[-1, 0, 1]] * d), indexing="ij")).reshape(d, -1).T.copy()
        self.offsets = offs.astype(np.int64)
        self.noff = offs.shape[0]

    cdef inline long long coord(self, double x, int k) noexcept nogil:
        cdef double c = floor((x - self.lo[k]) / self.h)
        if c < 0:
            return 0
        if c >= self.nc[k]:
            return self.nc[k] - 1
        return <long long> c

    cdef void build(self, double[:, ::1] pos, signed char[::1] status, long long n) noexcept nogil:
        cdef long long i, c, flat
        cdef int k
        for c in range(self.ncell + 1):
            self.start[c] = 0
        for i in range(n):
            if status[i] != ST_S:
                self.cell_of[i] = -1
                continue
            flat = 0
            for k in range(self.d):
                flat = flat * self.nc[k] + self.coord(pos[i, k], k)
            self.cell_of[i] = flat
            self.start[flat + 1] += 1
        for c in range(self.ncell):
            self.start[c + 1] += self.start[c]
        # fill using start as a moving cursor, then shift back
        for i in range(n):
            flat = self.cell_of[i]
            if flat >= 0:
                self.items[self.start[flat]] = i
                self.start[flat] += 1
        for c in range(self.ncell, 0, -1):
            self.start[c] = self.start[c - 1]
        self.start[0] = 0

    cdef int cells_near(self, double[:, ::1] pos, long long i, long long *out) noexcept nogil:
        """Flat indices of the (up to 3**d) cells around particle i's cell."""
        cdef long long base[MAXD]
        cdef long long flat, cc
        cdef int k, o, m = 0
        cdef bint ok
        for k in range(self.d):
            base[k] = self.coord(pos[i, k], k)
        for o in range(self.noff):
            flat = 0
            ok = True
            for k in range(self.d):
                cc = base[k] + self.offsets[o, k]
                if cc < 0 or cc >= self.nc[k]:
                    ok = False
                    break
                flat = flat * self.nc[k] + cc
            if ok:
                out[m] = flat
                m += 1
        return m


def run_steps(state, long long max_steps, bint stop_at_extinction):
    params = state.params
    cdef int d = params.d
    if d > MAXD:
        raise ValueError(f"compiled kernel supports d <= {MAXD}")
    cdef long long n = state.n
    cdef double[:, ::1] pos = state.pos
    if state._prev is None or state._prev.shape[0] != n:
        state._prev = np.empty_like(state.pos)
    cdef double[:, ::1] prev = state._prev
    cdef signed char[::1] status = state.status
    cdef double[::1] t_inf = state.t_infect
    cdef double[::1] t_rem = state.t_remove
    cdef double[::1] mn2 = state.min_norm2

    cdef double dt = state.dt
    cdef double t = state.t
    cdef long long step_index = state.step_index
    cdef long long n_total_steps = state.n_steps_total
    cdef double radius = params.radius
    cdef double r2 = radius * radius
    cdef bint instant = params.instant
    cdef bint bridge = (state.mode.value == "BRIDGE") and instant
    from .model import bridge_reach
    cdef double reach = bridge_reach(params, dt) if bridge else radius
    cdef double reach2 = reach * reach
    cdef double scale = math.sqrt(params.diffusion * dt)
    cdef double two_d_dt = 2.0 * params.diffusion * dt
    cdef double p_rate = 1.0 if instant else -math.expm1(-params.infection_rate * dt)
    cdef double alpha = params.alpha
    cdef double drift_dt[MAXD]
    cdef int k
    for k in range(d):
        drift_dt[k] = params.drift[k] * dt
    cdef u64 ckey = <u64> state.contact_key
    cdef u64 rkey = <u64> state.clock_key
    cdef long long cap = -1 if state.truncation is None else state.truncation
    cdef bint truncated = state.truncated
    cdef long long n_inf_total = state.n_infected_total
    cdef double sup2 = state.sup_front2

    ev = state.events
    cdef double[::1] ev_t = ev._t
    cdef signed char[::1] ev_kind = ev._kind
    cdef long long[::1] ev_id = ev._id
    cdef double[:, ::1] ev_pos = ev._pos
    cdef long long ev_n = ev.count
    cdef long long ev_cap = ev_t.shape[0]

    cdef bint trace = state.trace_front is not None
    cdef double[::1] tr_front, tr_left, tr_right
    if trace:
        tr_front = state.trace_front
        tr_left = state.trace_left
        tr_right = state.trace_right

    gen = state.rng.motion
    cdef bitgen_t *bg = <bitgen_t *> PyCapsule_GetPointer(gen.bit_generator.capsule, "BitGenerator")

    lo = [v - reach for v in state.window.lo]
    hi = [v + reach for v in state.window.hi]
    cdef _Grid grid = _Grid(d, reach, lo, hi, n)

    cdef long long[::1] active = np.empty(max(n, 1), dtype=np.int64)
    cdef long long[::1] queue = np.empty(max(n, 1), dtype=np.int64)
    cdef long long[::1] newbuf = np.empty(max(n, 1), dtype=np.int64)
    cdef signed char[::1] mark = np.zeros(max(n, 1), dtype=np.int8)
    cdef long long cells[6561]  # 3**MAXD
    cdef Removal *rem = <Removal *> malloc(max(n, 1) * sizeof(Removal))
    if rem == NULL:
        raise MemoryError()

    cdef long long n_active = 0, n_sus = 0, i, j, a, q, m, nrem, nnew, qh, qt, c, ci, cell, allowed, kk
    cdef double z, nrm, d2, d0, dx, g0, g1, t_end, pr, mx2, left, right, u
    cdef bint any_inf
    for i in range(n):
        if status[i] == ST_I:
            active[n_active] = i
            n_active += 1
        elif status[i] == ST_S:
            n_sus += 1

    cdef long long done = 0
    cdef int rc = RC_DONE
    lock = gen.bit_generator.lock
    lock.acquire()
    try:
      with nogil:
        while done < max_steps and step_index < n_total_steps:
            if stop_at_extinction and n_active == 0:
                rc = RC_EXTINCT
                break
            if ev_cap - ev_n < 2 * n + 2:
                rc = RC_NEED_SPACE
                break

            # motion
            for i in range(n):
                nrm = 0.0
                for k in range(d):
                    prev[i, k] = pos[i, k]
                    z = random_standard_normal(bg)
                    pos[i, k] = pos[i, k] + (drift_dt[k] + scale * z)
                    nrm = nrm + pos[i, k] * pos[i, k]
                if nrm < mn2[i]:
                    mn2[i] = nrm
            t = t + dt
            step_index += 1
            t_end = t

            # removals due by the step end, ordered by (clock, id)
            if alpha > 0 and n_active > 0:
                nrem = 0
                m = 0
                for a in range(n_active):
                    i = active[a]
                    if t_rem[i] <= t_end:
                        rem[nrem].t = t_rem[i]
                        rem[nrem].id = i
                        nrem += 1
                    else:
                        active[m] = i
                        m += 1
                n_active = m
                if nrem > 1:
                    qsort(rem, nrem, sizeof(Removal), cmp_removal)
                for a in range(nrem):
                    i = rem[a].id
                    status[i] = ST_R
                    ev_t[ev_n] = rem[a].t
                    ev_kind[ev_n] = EV_REMOVE
                    ev_id[ev_n] = i
                    for k in range(d):
                        ev_pos[ev_n, k] = pos[i, k]
                    ev_n += 1

            # contacts and closure
            if n_active > 0 and n_sus > 0 and not truncated:
                grid.build(pos, status, n)
                nnew = 0
                for a in range(n_active):
                    i = active[a]
                    m = grid.cells_near(pos, i, cells)
                    for ci in range(m):
                        cell = cells[ci]
                        for q in range(grid.start[cell], grid.start[cell + 1]):
                            j = grid.items[q]
                            if mark[j]:
                                continue
                            d2 = 0.0
                            for k in range(d):
                                dx = pos[j, k] - pos[i, k]
                                d2 = d2 + dx * dx
                            if d2 > reach2:
                                continue
                            if d2 <= r2:
                                if instant or keyed_uniform(ckey, <u64> step_index, <u64> i, <u64> j) < p_rate:
                                    mark[j] = 1
                                    newbuf[nnew] = j
                                    nnew += 1
                                continue
                            if not bridge:
                                continue
                            d0 = 0.0
                            for k in range(d):
                                dx = prev[j, k] - prev[i, k]
                                d0 = d0 + dx * dx
                            if d0 <= r2:
                                pr = 2.0
                            elif d == 1 and (prev[j, 0] - prev[i, 0]) * (pos[j, 0] - pos[i, 0]) < 0.0:
                                pr = 2.0
                            else:
                                g0 = sqrt(d0) - radius
                                g1 = sqrt(d2) - radius
                                pr = exp(-2.0 * g0 * g1 / two_d_dt)
                            if pr > 1.0 or keyed_uniform(ckey, <u64> step_index, <u64> i, <u64> j) < pr:
                                mark[j] = 1
                                newbuf[nnew] = j
                                nnew += 1

                if nnew > 0 and instant:
                    # chain closure through susceptible particles at the step end
                    qh = 0
                    qt = 0
                    for a in range(nnew):
                        queue[qt] = newbuf[a]
                        qt += 1
                    while qh < qt:
                        i = queue[qh]
                        qh += 1
                        m = grid.cells_near(pos, i, cells)
                        for ci in range(m):
                            cell = cells[ci]
                            for q in range(grid.start[cell], grid.start[cell + 1]):
                                j = grid.items[q]
                                if mark[j]:
                                    continue
                                d2 = 0.0
                                for k in range(d):
                                    dx = pos[j, k] - pos[i, k]
                                    d2 = d2 + dx * dx
                                if d2 <= r2:
                                    mark[j] = 1
                                    newbuf[nnew] = j
                                    nnew += 1
                                    queue[qt] = j
                                    qt += 1

                if nnew > 0:
                    for a in range(nnew):
                        mark[newbuf[a]] = 0
                    if nnew > 1:
                        qsort(&newbuf[0], nnew, sizeof(long long), cmp_ll)
                    if cap >= 0:
                        allowed = cap - n_inf_total
                        if allowed < 0:
                            allowed = 0
                        if nnew > allowed:
                            nnew = allowed
                    for a in range(nnew):
                        j = newbuf[a]
                        status[j] = ST_I
                        t_inf[j] = t_end
                        if alpha > 0:
                            u = keyed_uniform(rkey, <u64> j, 0, 0)
                            t_rem[j] = t_end + (-log1p(-u) / alpha)
                        else:
                            t_rem[j] = INFINITY
                        ev_t[ev_n] = t_end
                        ev_kind[ev_n] = EV_INFECT
                        ev_id[ev_n] = j
                        for k in range(d):
                            ev_pos[ev_n, k] = pos[j, k]
                        ev_n += 1
                        active[n_active] = j
                        n_active += 1
                    n_sus -= nnew
                    n_inf_total += nnew
                    if cap >= 0 and n_inf_total >= cap and nnew > 0:
                        truncated = True
                        j = newbuf[nnew - 1]
                        ev_t[ev_n] = t_end
                        ev_kind[ev_n] = EV_TRUNCATE
                        ev_id[ev_n] = j
                        for k in range(d):
                            ev_pos[ev_n, k] = pos[j, k]
                        ev_n += 1

            # front of the currently infected set
            if n_active > 0:
                mx2 = -INFINITY
                left = INFINITY
                right = -INFINITY
                for a in range(n_active):
                    i = active[a]
                    nrm = 0.0
                    for k in range(d):
                        nrm = nrm + pos[i, k] * pos[i, k]
                    if nrm > mx2:
                        mx2 = nrm
                    if pos[i, 0] < left:
                        left = pos[i, 0]
                    if pos[i, 0] > right:
                        right = pos[i, 0]
                if mx2 > sup2:
                    sup2 = mx2
                if trace:
                    tr_front[step_index] = sqrt(mx2)
                    if d == 1:
                        tr_left[step_index] = left
                        tr_right[step_index] = right
            elif trace:
                tr_front[step_index] = NAN
                tr_left[step_index] = INFINITY
                tr_right[step_index] = -INFINITY
            done += 1

        if rc == RC_DONE and stop_at_extinction and n_active == 0:
            rc = RC_EXTINCT
    finally:
        lock.release()
        free(rem)

    state.t = t
    state.step_index = step_index
    state.truncated = bool(truncated)
    state.n_infected_total = n_inf_total
    state.sup_front2 = sup2
    ev.count = ev_n
    return rc
