# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled event loop; statement-for-statement twin of ``_pykernel.py``."""
from libc.math cimport exp, log1p

import numpy as np

cdef enum:
    DONE = 0
    REFILL = 1
    LOGFULL = 2
    FAULT = 3
    UNIFORM = -1
    REJECTED = -2


cdef struct State:
    double* n
    double* uni
    double* last
    double* mass
    int* ids
    int* slot
    int* count
    int* site_count
    Py_ssize_t L
    Py_ssize_t T
    int R
    int wrap
    double mu
    double fold
    int gmode
    double* goff
    double* tmass
    double* tval
    Py_ssize_t J


cdef inline double growth_at(State* s, Py_ssize_t x, double nb) nogil:
    cdef double r
    cdef double* fp
    cdef Py_ssize_t j
    if s.gmode == 0:
        r = s.goff[x] - nb
    else:
        fp = s.tval + x * s.J
        if nb <= s.tmass[0]:
            r = fp[0]
        elif nb >= s.tmass[s.J - 1]:
            r = fp[s.J - 1]
        else:
            j = 0
            while s.tmass[j + 1] < nb:
                j += 1
            r = fp[j] + (fp[j + 1] - fp[j]) * (nb - s.tmass[j]) / (s.tmass[j + 1] - s.tmass[j])
    if r < -1.0:
        r = -1.0
    return r


cdef inline int ball_sites(State* s, Py_ssize_t x, Py_ssize_t* out) nogil:
    cdef Py_ssize_t j, lo, hi, y
    cdef int V = 0
    if s.wrap:
        for j in range(-s.R, s.R + 1):
            y = (x + j) % s.L
            if y < 0:
                y += s.L
            out[V] = y
            V += 1
        return V
    lo = x - s.R if x - s.R > 0 else 0
    hi = x + s.R if x + s.R < s.L - 1 else s.L - 1
    for y in range(lo, hi + 1):
        out[V] = y
        V += 1
    return V


cdef inline bint insert_type(State* s, Py_ssize_t y, int k) nogil:
    cdef int c = s.count[y]
    s.ids[y * s.T + c] = k
    s.slot[y * s.T + k] = c
    s.count[y] = c + 1
    s.site_count[k] += 1
    return s.site_count[k] == 1


cdef inline bint remove_type(State* s, Py_ssize_t y, int k) nogil:
    cdef int j = s.slot[y * s.T + k]
    cdef int last = s.count[y] - 1
    cdef int moved = s.ids[y * s.T + last]
    s.ids[y * s.T + j] = moved
    s.slot[y * s.T + moved] = j
    s.slot[y * s.T + k] = -1
    s.count[y] = last
    s.mass[y * s.T + k] = 0.0
    s.site_count[k] -= 1
    return s.site_count[k] == 0


cdef int sync_site(State* s, Py_ssize_t y, double t) nogil:
    cdef double dt = t - s.last[y]
    cdef double e, uni, m
    cdef int freed = 0
    cdef int j, k
    if dt <= 0.0:
        return 0
    e = exp(-s.mu * dt)
    uni = s.uni[y] * e + s.n[y] * (1.0 - e)
    j = s.count[y] - 1
    while j >= 0:
        k = s.ids[y * s.T + j]
        m = s.mass[y * s.T + k] * e
        if m < s.fold:
            uni += m
            if remove_type(s, y, k):
                freed += 1
        else:
            s.mass[y * s.T + k] = m
        j -= 1
    s.uni[y] = uni
    s.last[y] = t
    return freed


cdef int sample_in_ball(State* s, Py_ssize_t* sites, int V, double U) nogil:
    cdef double total = 0.0
    cdef double target
    cdef Py_ssize_t pick = sites[V - 1]
    cdef Py_ssize_t y
    cdef int i, j, k, c
    cdef bint found = False
    for i in range(V):
        total += s.n[sites[i]]
    target = U * total
    for i in range(V):
        y = sites[i]
        if target < s.n[y]:
            pick = y
            found = True
            break
        target -= s.n[y]
    if not found:
        target = s.n[pick]
    if target < s.uni[pick]:
        return UNIFORM
    target -= s.uni[pick]
    c = s.count[pick]
    for j in range(c):
        k = s.ids[pick * s.T + j]
        if target < s.mass[pick * s.T + k]:
            return k
        target -= s.mass[pick * s.T + k]
    if c > 0:
        return s.ids[pick * s.T + c - 1]
    return UNIFORM


cdef int allocate(State* s, double t, int* n_alive, double* evicted, double* glob) nogil:
    cdef int k, j, best
    cdef Py_ssize_t y
    evicted[0] = 0.0
    if n_alive[0] < s.T:
        for k in range(s.T):
            if s.site_count[k] == 0:
                return k
    for y in range(s.L):
        n_alive[0] -= sync_site(s, y, t)
    if n_alive[0] < s.T:
        for k in range(s.T):
            if s.site_count[k] == 0:
                return k
    for k in range(s.T):
        glob[k] = 0.0
    for y in range(s.L):
        for j in range(s.count[y]):
            k = s.ids[y * s.T + j]
            glob[k] += s.mass[y * s.T + k]
    best = 0
    for k in range(1, s.T):
        if glob[k] < glob[best]:
            best = k
    for y in range(s.L):
        if s.slot[y * s.T + best] >= 0:
            s.uni[y] += s.mass[y * s.T + best]
            remove_type(s, y, best)
    evicted[0] = glob[best]
    n_alive[0] -= 1
    return best


cdef void center_term(State* s, double u, double* phi, Py_ssize_t x, Py_ssize_t* sites,
                      double* drift, double* qv) nogil:
    cdef int V = ball_sites(s, x, sites)
    cdef int i
    cdef double tot = 0.0, nb, a, sphi = 0.0, snphi = 0.0, br
    for i in range(V):
        tot += s.n[sites[i]]
    nb = tot / V
    a = (1.0 + growth_at(s, x, nb)) * nb
    for i in range(V):
        sphi += phi[sites[i]]
        snphi += s.n[sites[i]] * phi[sites[i]]
    br = a * sphi - snphi
    drift[0] = u * br
    qv[0] = u * u * br * br / (nb + 1.0)


cdef void refresh_track(State* s, double u, double* phi, double* dterm, double* qterm,
                        double* acc, Py_ssize_t x0, Py_ssize_t* sites) nogil:
    cdef int R2 = 2 * s.R
    cdef int j
    cdef Py_ssize_t x
    cdef double sd = 0.0, sq = 0.0
    for j in range(-R2, R2 + 1):
        x = x0 + j
        if s.wrap:
            x = x % s.L
            if x < 0:
                x += s.L
        elif x < 0 or x >= s.L:
            continue
        center_term(s, u, phi, x, sites, &dterm[x], &qterm[x])
    for x in range(s.L):
        sd += dterm[x]
        sq += qterm[x]
    acc[2] = sd
    acc[3] = sq


def advance(field, model, double[::1] clock, double[::1] uniforms, Py_ssize_t upos,
            double t_stop, log, track):
    """See ``_pykernel.advance``."""
    cdef double[::1] n_v = field.n
    cdef double[::1] uni_v = field.uniform
    cdef double[::1] last_v = field.last_touch
    cdef double[:, ::1] mass_v = field.mass
    cdef int[:, ::1] ids_v = field.ids
    cdef int[:, ::1] slot_v = field.slot
    cdef int[::1] count_v = field.count
    cdef int[::1] sc_v = field.ledger.site_count
    cdef double[::1] goff_v = model.goff
    cdef double[::1] tmass_v = model.tmass
    cdef double[:, ::1] tval_v = model.tval
    cdef double[:, ::1] log_v
    cdef long[::1] logc_v
    cdef double[::1] phi_v, dterm_v, qterm_v, acc_v, tlast_v
    cdef State s
    cdef bint logging = log is not None
    cdef bint tracking = track is not None

    s.n = &n_v[0]
    s.uni = &uni_v[0]
    s.last = &last_v[0]
    s.mass = &mass_v[0, 0]
    s.ids = &ids_v[0, 0]
    s.slot = &slot_v[0, 0]
    s.count = &count_v[0]
    s.site_count = &sc_v[0]
    s.L = n_v.shape[0]
    s.T = mass_v.shape[1]
    s.R = model.R
    s.wrap = 1 if model.wrap else 0
    s.mu = model.mu
    s.fold = model.fold
    s.gmode = model.gmode
    s.goff = &goff_v[0]
    s.tmass = &tmass_v[0]
    s.tval = &tval_v[0, 0]
    s.J = tmass_v.shape[0]

    if logging:
        log_v = log.data
        logc_v = log.count
    if tracking:
        phi_v = track.phi
        dterm_v = track.drift_term
        qterm_v = track.qv_term
        acc_v = track.acc
        tlast_v = track.t_last

    cdef double u = model.u
    cdef double n_max = model.n_max
    cdef double accept_scale = 1.0 / (n_max + 1.0)
    cdef double rate = model.rate
    cdef Py_ssize_t nU = uniforms.shape[0]
    cdef int n_alive = 0
    cdef Py_ssize_t k
    for k in range(s.T):
        if s.site_count[k] > 0:
            n_alive += 1

    cdef double[::1] glob_v = np.empty(s.T)
    cdef Py_ssize_t[::1] sites_v = np.empty(2 * s.R + 1, dtype=np.intp)
    cdef Py_ssize_t[::1] scratch_v = np.empty(2 * s.R + 1, dtype=np.intp)
    cdef Py_ssize_t* sites = &sites_v[0]
    cdef double t_next = clock[1]
    cdef double t, w, up, ud, tot, nb, uprime, add, evicted, f
    cdef Py_ssize_t x, y, i
    cdef int V, parent, from_uniform, j, kk
    cdef Py_ssize_t fault
    cdef Py_ssize_t row

    if t_next != t_next:
        if upos >= nU:
            return REFILL, upos, -1
        t_next = clock[0] - log1p(-uniforms[upos]) / rate
        upos += 1
        clock[1] = t_next

    with nogil:
        while True:
            if t_next > t_stop:
                if tracking:
                    acc_v[0] += acc_v[2] * (t_stop - tlast_v[0])
                    acc_v[1] += acc_v[3] * (t_stop - tlast_v[0])
                    tlast_v[0] = t_stop
                clock[0] = t_stop
                with gil:
                    return DONE, upos, -1
            if upos + 4 > nU:
                with gil:
                    return REFILL, upos, -1
            if logging and logc_v[0] >= log_v.shape[0]:
                with gil:
                    return LOGFULL, upos, -1
            t = t_next
            x = <Py_ssize_t>(uniforms[upos] * s.L)
            if x >= s.L:
                x = s.L - 1
            w = uniforms[upos + 1]
            up = uniforms[upos + 2]
            ud = uniforms[upos + 3]
            upos += 4

            V = ball_sites(&s, x, sites)
            tot = 0.0
            for i in range(V):
                tot += s.n[sites[i]]
            nb = tot / V

            parent = REJECTED
            from_uniform = 0
            uprime = 0.0
            add = 0.0
            evicted = 0.0
            fault = -1
            if w < (nb + 1.0) * accept_scale:
                if tracking:
                    acc_v[0] += acc_v[2] * (t - tlast_v[0])
                    acc_v[1] += acc_v[3] * (t - tlast_v[0])
                    tlast_v[0] = t
                for i in range(V):
                    n_alive -= sync_site(&s, sites[i], t)
                parent = sample_in_ball(&s, sites, V, up)
                if parent == UNIFORM:
                    from_uniform = 1
                    parent = allocate(&s, t, &n_alive, &evicted, &glob_v[0])
                uprime = u / (nb + 1.0)
                add = uprime * (1.0 + growth_at(&s, x, nb)) * nb
                f = 1.0 - uprime
                for i in range(V):
                    y = sites[i]
                    for j in range(s.count[y]):
                        kk = s.ids[y * s.T + j]
                        s.mass[y * s.T + kk] *= f
                    s.uni[y] *= f
                    if s.slot[y * s.T + parent] < 0:
                        if insert_type(&s, y, parent):
                            n_alive += 1
                    s.mass[y * s.T + parent] += add
                    s.n[y] = f * s.n[y] + add
                    if s.n[y] > n_max and fault < 0:
                        fault = y
                if tracking:
                    refresh_track(&s, u, &phi_v[0], &dterm_v[0], &qterm_v[0], &acc_v[0],
                                  x, &scratch_v[0])

            if logging:
                row = logc_v[0]
                log_v[row, 0] = t
                log_v[row, 1] = x
                log_v[row, 2] = 1.0 if parent != REJECTED else 0.0
                log_v[row, 3] = parent
                log_v[row, 4] = from_uniform
                log_v[row, 5] = uprime
                log_v[row, 6] = add
                log_v[row, 7] = evicted
                logc_v[0] = row + 1

            t_next = t - log1p(-ud) / rate
            clock[0] = t
            clock[1] = t_next
            if fault >= 0:
                with gil:
                    return FAULT, upos, fault


def sync_sites(field, Py_ssize_t[::1] sites, double t, double mu, double fold):
    """See ``_pykernel.sync_sites``."""
    cdef double[::1] n_v = field.n
    cdef double[::1] uni_v = field.uniform
    cdef double[::1] last_v = field.last_touch
    cdef double[:, ::1] mass_v = field.mass
    cdef int[:, ::1] ids_v = field.ids
    cdef int[:, ::1] slot_v = field.slot
    cdef int[::1] count_v = field.count
    cdef int[::1] sc_v = field.ledger.site_count
    cdef State s
    cdef Py_ssize_t i
    cdef int freed = 0
    s.n = &n_v[0]
    s.uni = &uni_v[0]
    s.last = &last_v[0]
    s.mass = &mass_v[0, 0]
    s.ids = &ids_v[0, 0]
    s.slot = &slot_v[0, 0]
    s.count = &count_v[0]
    s.site_count = &sc_v[0]
    s.L = n_v.shape[0]
    s.T = mass_v.shape[1]
    s.mu = mu
    s.fold = fold
    with nogil:
        for i in range(sites.shape[0]):
            freed += sync_site(&s, sites[i], t)
    return freed
