"""Pure-Python event loop. Mirrors ``_kernel.pyx`` statement for statement so
both backends consume the uniform stream identically."""
from __future__ import annotations

import math

DONE, REFILL, LOGFULL, FAULT = 0, 1, 2, 3
UNIFORM = -1
REJECTED = -2
LOG_COLUMNS = 8


def growth_at(model, x, nb):
    if model.gmode == 0:
        r = model.goff[x] - nb
    else:
        xp = model.tmass
        fp = model.tval[x]
        J = xp.shape[0]
        if nb <= xp[0]:
            r = fp[0]
        elif nb >= xp[J - 1]:
            r = fp[J - 1]
        else:
            j = 0
            while xp[j + 1] < nb:
                j += 1
            r = fp[j] + (fp[j + 1] - fp[j]) * (nb - xp[j]) / (xp[j + 1] - xp[j])
    if r < -1.0:
        r = -1.0
    return r


def ball_sites(x, R, L, wrap):
    if wrap:
        return [(x + j) % L for j in range(-R, R + 1)]
    lo = x - R if x - R > 0 else 0
    hi = x + R if x + R < L - 1 else L - 1
    return list(range(lo, hi + 1))


def insert_type(field, y, k):
    c = field.count[y]
    field.ids[y, c] = k
    field.slot[y, k] = c
    field.count[y] = c + 1
    field.ledger.site_count[k] += 1
    return field.ledger.site_count[k] == 1


def remove_type(field, y, k):
    j = field.slot[y, k]
    last = field.count[y] - 1
    moved = field.ids[y, last]
    field.ids[y, j] = moved
    field.slot[y, moved] = j
    field.slot[y, k] = -1
    field.count[y] = last
    field.mass[y, k] = 0.0
    field.ledger.site_count[k] -= 1
    return field.ledger.site_count[k] == 0


def sync_site(field, y, t, mu, fold):
    """Apply the mutation flow at site ``y`` up to time ``t``; returns types freed."""
    dt = t - field.last_touch[y]
    if dt <= 0.0:
        return 0
    e = math.exp(-mu * dt)
    freed = 0
    uni = field.uniform[y] * e + field.n[y] * (1.0 - e)
    for j in range(field.count[y] - 1, -1, -1):
        k = field.ids[y, j]
        m = field.mass[y, k] * e
        if m < fold:
            uni += m
            if remove_type(field, y, k):
                freed += 1
        else:
            field.mass[y, k] = m
    field.uniform[y] = uni
    field.last_touch[y] = t
    return freed


def sample_in_ball(field, sites, U):
    total = 0.0
    for y in sites:
        total += field.n[y]
    target = U * total
    pick = sites[-1]
    for y in sites:
        if target < field.n[y]:
            pick = y
            break
        target -= field.n[y]
    else:
        target = field.n[pick]
    if target < field.uniform[pick]:
        return UNIFORM
    target -= field.uniform[pick]
    c = field.count[pick]
    for j in range(c):
        k = field.ids[pick, j]
        if target < field.mass[pick, k]:
            return int(k)
        target -= field.mass[pick, k]
    if c > 0:
        return int(field.ids[pick, c - 1])
    return UNIFORM


def allocate(field, t, mu, fold, n_alive):
    """Return (type id, evicted mass, new n_alive)."""
    sc = field.ledger.site_count
    T = sc.shape[0]
    if n_alive < T:
        for k in range(T):
            if sc[k] == 0:
                return k, 0.0, n_alive
    L = field.n.shape[0]
    for y in range(L):
        n_alive -= sync_site(field, y, t, mu, fold)
    if n_alive < T:
        for k in range(T):
            if sc[k] == 0:
                return k, 0.0, n_alive
    glob = [0.0] * T
    for y in range(L):
        for j in range(field.count[y]):
            k = field.ids[y, j]
            glob[k] += field.mass[y, k]
    best = 0
    for k in range(1, T):
        if glob[k] < glob[best]:
            best = k
    for y in range(L):
        if field.slot[y, best] >= 0:
            field.uniform[y] += field.mass[y, best]
            remove_type(field, y, best)
    return best, glob[best], n_alive - 1


def center_term(field, model, phi, x, L, wrap):
    sites = ball_sites(x, model.R, L, wrap)
    s = 0.0
    for y in sites:
        s += field.n[y]
    nb = s / len(sites)
    a = (1.0 + growth_at(model, x, nb)) * nb
    sphi = 0.0
    snphi = 0.0
    for y in sites:
        sphi += phi[y]
        snphi += field.n[y] * phi[y]
    br = a * sphi - snphi
    return model.u * br, model.u * model.u * br * br / (nb + 1.0)


def refresh_track(field, model, track, x0, L, wrap):
    R2 = 2 * model.R
    for j in range(-R2, R2 + 1):
        x = x0 + j
        if wrap:
            x %= L
        elif x < 0 or x >= L:
            continue
        track.drift_term[x], track.qv_term[x] = center_term(field, model, track.phi, x, L, wrap)
    sd = 0.0
    sq = 0.0
    for x in range(L):
        sd += track.drift_term[x]
        sq += track.qv_term[x]
    track.acc[2] = sd
    track.acc[3] = sq


def advance(field, model, clock, uniforms, upos, t_stop, log, track):
    """Run candidate events until the next candidate falls after ``t_stop``.

    ``clock`` holds [current time, pending candidate time (nan if undrawn)].
    Returns (status, upos, fault_site).
    """
    L = field.n.shape[0]
    R = model.R
    wrap = model.wrap
    mu = model.mu
    fold = model.fold
    u = model.u
    n_max = model.n_max
    accept_scale = 1.0 / (n_max + 1.0)
    rate = model.rate
    nU = uniforms.shape[0]
    n_alive = int((field.ledger.site_count > 0).sum())

    t_next = clock[1]
    if t_next != t_next:
        if upos >= nU:
            return REFILL, upos, -1
        t_next = clock[0] - math.log1p(-uniforms[upos]) / rate
        upos += 1
        clock[1] = t_next

    while True:
        if t_next > t_stop:
            if track is not None:
                track.acc[0] += track.acc[2] * (t_stop - track.t_last[0])
                track.acc[1] += track.acc[3] * (t_stop - track.t_last[0])
                track.t_last[0] = t_stop
            clock[0] = t_stop
            return DONE, upos, -1
        if upos + 4 > nU:
            return REFILL, upos, -1
        if log is not None and log.count[0] >= log.data.shape[0]:
            return LOGFULL, upos, -1
        t = t_next
        x = int(uniforms[upos] * L)
        if x >= L:
            x = L - 1
        w = uniforms[upos + 1]
        up = uniforms[upos + 2]
        ud = uniforms[upos + 3]
        upos += 4

        sites = ball_sites(x, R, L, wrap)
        s = 0.0
        for y in sites:
            s += field.n[y]
        nb = s / len(sites)

        parent = REJECTED
        from_uniform = 0
        uprime = 0.0
        add = 0.0
        evicted = 0.0
        fault = -1
        if w < (nb + 1.0) * accept_scale:
            if track is not None:
                track.acc[0] += track.acc[2] * (t - track.t_last[0])
                track.acc[1] += track.acc[3] * (t - track.t_last[0])
                track.t_last[0] = t
            for y in sites:
                n_alive -= sync_site(field, y, t, mu, fold)
            parent = sample_in_ball(field, sites, up)
            if parent == UNIFORM:
                from_uniform = 1
                parent, evicted, n_alive = allocate(field, t, mu, fold, n_alive)
            uprime = u / (nb + 1.0)
            add = uprime * (1.0 + growth_at(model, x, nb)) * nb
            f = 1.0 - uprime
            for y in sites:
                for j in range(field.count[y]):
                    k = field.ids[y, j]
                    field.mass[y, k] *= f
                field.uniform[y] *= f
                if field.slot[y, parent] < 0:
                    if insert_type(field, y, parent):
                        n_alive += 1
                field.mass[y, parent] += add
                field.n[y] = f * field.n[y] + add
                if field.n[y] > n_max and fault < 0:
                    fault = y
            if track is not None:
                refresh_track(field, model, track, x, L, wrap)

        if log is not None:
            i = log.count[0]
            row = log.data[i]
            row[0] = t
            row[1] = x
            row[2] = 1.0 if parent != REJECTED else 0.0
            row[3] = parent
            row[4] = from_uniform
            row[5] = uprime
            row[6] = add
            row[7] = evicted
            log.count[0] = i + 1

        t_next = t - math.log1p(-ud) / rate
        clock[0] = t
        clock[1] = t_next
        if fault >= 0:
            return FAULT, upos, fault


def sync_sites(field, sites, t, mu, fold):
    """Apply ``sync_site`` at each of ``sites``; returns the number of types freed."""
    freed = 0
    for y in sites:
        freed += sync_site(field, int(y), t, mu, fold)
    return freed
