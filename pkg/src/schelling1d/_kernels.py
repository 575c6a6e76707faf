"""Compiled inner loops for the ring.

Every routine works on the raw cache arrays held by :class:`RingState`:

    types   int8[n]     0 = alpha, 1 = beta
    same    int32[n]    same-type count in the closed neighbourhood
    ulist   int32[2,n]  unhappy nodes of each type, unordered
    ucount  int64[2]    live length of each row of ulist
    upos    int32[n]    index of the node in its ulist row, -1 if happy
    stats   int64[4]    MIX, very unhappy beta count, alpha->beta boundaries, #beta

``h`` is the integer happiness threshold ceil(tau * (2w+1)).
"""

import numpy as np
from numba import njit

MIX = 0
VERY = 1
BOUNDS = 2
NBETA = 3
N_STATS = 4

# stop codes returned by advance()
RUNNING = 0
COMPLETE = 1
DORMANT = 2
NO_LEGAL = 3

REJECTION_TRIES = 64


@njit(cache=True)
def window_counts(types, w):
    n = types.shape[0]
    same = np.empty(n, np.int32)
    nb = 0
    for k in range(-w, w + 1):
        nb += types[k % n]
    for u in range(n):
        if types[u] == 1:
            same[u] = nb
        else:
            same[u] = 2 * w + 1 - nb
        nb += types[(u + w + 1) % n] - types[(u - w) % n]
    return same


@njit(cache=True)
def _leave(x, types, same, ulist, ucount, upos, stats, w, h):
    t = types[x]
    s = same[x]
    if t == 0:
        stats[MIX] -= 2 * w + 1 - s
    elif 2 * w + 1 - s >= h:
        stats[VERY] -= 1
    p = upos[x]
    if p >= 0:
        last = ucount[t] - 1
        y = ulist[t, last]
        ulist[t, p] = y
        upos[y] = p
        ucount[t] = last
        upos[x] = -1


@njit(cache=True)
def _enter(x, types, same, ulist, ucount, upos, stats, w, h):
    t = types[x]
    s = same[x]
    if t == 0:
        stats[MIX] += 2 * w + 1 - s
    elif 2 * w + 1 - s >= h:
        stats[VERY] += 1
    if s < h:
        c = ucount[t]
        ulist[t, c] = x
        upos[x] = c
        ucount[t] = c + 1


@njit(cache=True)
def rebuild(types, same, ulist, ucount, upos, stats, w, h):
    n = types.shape[0]
    same[:] = window_counts(types, w)
    ucount[:] = 0
    upos[:] = -1
    stats[:] = 0
    for x in range(n):
        _enter(x, types, same, ulist, ucount, upos, stats, w, h)
        stats[NBETA] += types[x]
        if types[x] == 1 and types[(x - 1) % n] == 0:
            stats[BOUNDS] += 1


@njit(cache=True)
def flip(site, types, same, ulist, ucount, upos, stats, w, h):
    n = types.shape[0]
    for k in range(-w, w + 1):
        _leave((site + k) % n, types, same, ulist, ucount, upos, stats, w, h)
    left = (site - 1) % n
    right = (site + 1) % n
    if types[site] == 1 and types[left] == 0:
        stats[BOUNDS] -= 1
    if types[right] == 1 and types[site] == 0:
        stats[BOUNDS] -= 1
    old = types[site]
    for k in range(1, w + 1):
        for y in ((site + k) % n, (site - k) % n):
            if types[y] == old:
                same[y] -= 1
            else:
                same[y] += 1
    same[site] = 2 * w + 2 - same[site]
    types[site] = 1 - old
    stats[NBETA] += 1 - 2 * old
    if types[site] == 1 and types[left] == 0:
        stats[BOUNDS] += 1
    if types[right] == 1 and types[site] == 0:
        stats[BOUNDS] += 1
    for k in range(-w, w + 1):
        _enter((site + k) % n, types, same, ulist, ucount, upos, stats, w, h)


@njit(cache=True)
def ring_distance(u, v, n):
    d = abs(u - v) % n
    return min(d, n - d)


@njit(cache=True)
def legal(a, b, types, same, upos, w, n):
    """Legality of swapping a and b in O(1).

    Only sites a and b change, so the mover's count at its destination is the
    opposite-type count there plus itself, minus one when the origin lies
    inside the destination neighbourhood.  Both movers gain the same amount,
    which reduces the test to a single sum.
    """
    if a == b or types[a] == types[b]:
        return False
    if upos[a] < 0 or upos[b] < 0:
        return False
    near = 1 if ring_distance(a, b, n) <= w else 0
    return same[a] + same[b] <= 2 * w + 2 - near


@njit(cache=True)
def count_legal_for(a, types, same, ulist, ucount, upos, hist_cum, w, n):
    """Legal beta partners of unhappy alpha node a (hist_cum over unhappy beta)."""
    lim = 2 * w + 2 - same[a]
    if lim < 0:
        return 0
    if lim > 2 * w + 1:
        lim = 2 * w + 1
    c = hist_cum[lim]
    exact = 2 * w + 2 - same[a]
    if exact <= 2 * w + 1:
        for k in range(-w, w + 1):
            y = (a + k) % n
            if types[y] == 1 and upos[y] >= 0 and same[y] == exact:
                c -= 1
    return c


@njit(cache=True)
def enumerate_pick(rng, types, same, ulist, ucount, upos, w, n):
    """Exactly uniform legal pair by counting; (-1, -1) when none exists."""
    na = ucount[0]
    nb = ucount[1]
    hist = np.zeros(2 * w + 2, np.int64)
    for j in range(nb):
        hist[same[ulist[1, j]]] += 1
    for k in range(1, 2 * w + 2):
        hist[k] += hist[k - 1]
    counts = np.empty(na, np.int64)
    total = 0
    for i in range(na):
        c = count_legal_for(ulist[0, i], types, same, ulist, ucount, upos, hist, w, n)
        counts[i] = c
        total += c
    if total == 0:
        return -1, -1
    r = rng.integers(0, total)
    i = 0
    while r >= counts[i]:
        r -= counts[i]
        i += 1
    a = ulist[0, i]
    for j in range(nb):
        b = ulist[1, j]
        if legal(a, b, types, same, upos, w, n):
            if r == 0:
                return a, b
            r -= 1
    return -1, -1


@njit(cache=True)
def select_pair(rng, types, same, ulist, ucount, upos, w, n):
    na = ucount[0]
    nb = ucount[1]
    if na == 0 or nb == 0:
        return -1, -1
    for _ in range(REJECTION_TRIES):
        a = ulist[0, rng.integers(0, na)]
        b = ulist[1, rng.integers(0, nb)]
        if legal(a, b, types, same, upos, w, n):
            return a, b
    return enumerate_pick(rng, types, same, ulist, ucount, upos, w, n)


@njit(cache=True)
def terminal_code(ucount, stats, n):
    nbeta = stats[NBETA]
    if nbeta == 0 or nbeta == n or stats[BOUNDS] == 1:
        return COMPLETE
    if ucount[0] == 0 or ucount[1] == 0:
        return DORMANT
    return RUNNING


@njit(cache=True)
def advance(rng, types, same, ulist, ucount, upos, stats, w, h, stage0, n_steps,
            record_every, rec, n_rec, swaps, record_swaps, touched, stops, mix_lhs,
            mix_rhs, ratio_mult):
    """Run up to n_steps stages starting after stage0.

    rec[k] = (s, MIX, U_a, U_b, U_b*, k_b); swaps[k] = (a, b).
    stops = [t_mix, t_stop, s_star], -1 while unreached.  t_mix fires when
    MIX * mix_lhs < mix_rhs; s_star when U_b* < ratio_mult * U_a.
    Returns (steps done, stop code, samples written).
    """
    n = types.shape[0]
    k = 0
    done = 0
    code = RUNNING
    while True:
        s = stage0 + done
        if stops[0] < 0 and stats[MIX] * mix_lhs < mix_rhs:
            stops[0] = s
        if stops[1] < 0 and ucount[0] == 0:
            stops[1] = s
        if stops[2] < 0 and ucount[0] > 0 and stats[VERY] < ratio_mult * ucount[0]:
            stops[2] = s
        code = terminal_code(ucount, stats, n)
        if s % record_every == 0 or code != RUNNING:
            if k < n_rec and (k == 0 or rec[k - 1, 0] != s):
                rec[k, 0] = s
                rec[k, 1] = stats[MIX]
                rec[k, 2] = ucount[0]
                rec[k, 3] = ucount[1]
                rec[k, 4] = stats[VERY]
                kb = stats[BOUNDS]
                if kb == 0 and stats[NBETA] > 0:
                    kb = 1
                rec[k, 5] = kb
                k += 1
        if code != RUNNING or done >= n_steps:
            break
        a, b = select_pair(rng, types, same, ulist, ucount, upos, w, n)
        if a < 0:
            code = NO_LEGAL
            break
        touched[a] = 1
        touched[b] = 1
        if record_swaps:
            swaps[done, 0] = a
            swaps[done, 1] = b
        flip(a, types, same, ulist, ucount, upos, stats, w, h)
        flip(b, types, same, ulist, ucount, upos, stats, w, h)
        done += 1
    return done, code, k


@njit(cache=True)
def block_runs(types, gamma):
    """Maximal runs of gamma as (start, length) rows, wrap-around merged."""
    n = types.shape[0]
    out = np.empty((n // 2 + 1, 2), np.int64)
    m = 0
    total = 0
    for x in range(n):
        total += types[x] == gamma
    if total == 0:
        return out[:0]
    if total == n:
        out[0, 0] = 0
        out[0, 1] = n
        return out[:1]
    # start scanning just after a non-gamma site
    first = 0
    while types[first] == gamma:
        first += 1
    i = 0
    while i < n:
        x = (first + i) % n
        if types[x] == gamma:
            j = i
            while j < n and types[(first + j) % n] == gamma:
                j += 1
            out[m, 0] = x
            out[m, 1] = j - i
            m += 1
            i = j
        else:
            i += 1
    return out[:m]


# ---------------------------------------------------------------------------
# infected-area bookkeeping
#
#   owner  int32[n]  segment id of each node, -1 outside the infected area
#   inc    int32[n]  incubator id of each node (fixed), -1 if none
#   active uint8[m]  segment contained an unhappy alpha at the end of the
#                    previous stage
#   first  int64[n]  stage a node first became actively anomalous, -1 never
#   joined int64[n]  stage a node entered the infected area, -1 never
#   counters int64   see the constants below

Z = 0
Y = 1
G = 2
D = 3
STRAY = 4
BOGUS = 5
EPOCH = 6
N_COUNTERS = 7

STOPPED = 4


@njit(cache=True)
def _mark_window(x, w, n, stamp, epoch, buf, m):
    for k in range(-w, w + 1):
        y = (x + k) % n
        if stamp[y] != epoch:
            stamp[y] = epoch
            buf[m] = y
            m += 1
    return m


@njit(cache=True)
def actively_anomalous(x, types, upos, owner, inc, w, n):
    """Happy alpha whose whole neighbourhood is fresh area of its own segment."""
    if types[x] != 0 or upos[x] >= 0:
        return False
    o = owner[x]
    if o < 0 or inc[x] >= 0:
        return False
    for k in range(-w, w + 1):
        y = (x + k) % n
        if owner[y] != o or inc[y] >= 0:
            return False
    return True


@njit(cache=True)
def init_counters(types, upos, owner, counters):
    counters[:] = 0
    for x in range(types.shape[0]):
        if owner[x] >= 0:
            if types[x] == 0:
                counters[Z] += 1
            elif upos[x] >= 0:
                counters[Y] += 1
        elif types[x] == 1:
            counters[G] += 1


@njit(cache=True)
def refresh_active(ulist, ucount, owner, active, counters):
    active[:] = 0
    stray = 0
    for i in range(ucount[0]):
        o = owner[ulist[0, i]]
        if o >= 0:
            active[o] = 1
        else:
            stray += 1
    counters[STRAY] = stray


@njit(cache=True)
def tracked_swap(a, b, types, same, ulist, ucount, upos, stats, w, h, owner, counters,
                 stamp, buf):
    """Swap a and b, keeping Z, Y, G current.  buf[:m] gets the touched windows."""
    n = types.shape[0]
    counters[EPOCH] += 1
    ep = counters[EPOCH]
    m = _mark_window(a, w, n, stamp, ep, buf, 0)
    m = _mark_window(b, w, n, stamp, ep, buf, m)
    y0 = 0
    for i in range(m):
        x = buf[i]
        if owner[x] >= 0 and types[x] == 1 and upos[x] >= 0:
            y0 += 1
    flip(a, types, same, ulist, ucount, upos, stats, w, h)
    flip(b, types, same, ulist, ucount, upos, stats, w, h)
    y1 = 0
    for i in range(m):
        x = buf[i]
        if owner[x] >= 0 and types[x] == 1 and upos[x] >= 0:
            y1 += 1
    counters[Y] += y1 - y0
    for x in (a, b):
        if owner[x] >= 0:
            counters[Z] += 1 if types[x] == 0 else -1
        else:
            counters[G] += 1 if types[x] == 1 else -1
    return m


@njit(cache=True)
def expand(stage, types, ulist, ucount, upos, owner, inc, active, counters, first,
           joined, w, stamp, buf, m):
    """Grow the segments that stayed active, then record new anomalous nodes.

    Segment ids are assigned in clockwise order, so sorting claims by id
    processes segments in the prescribed order.
    """
    n = types.shape[0]
    nseg = active.shape[0]
    now = np.zeros(nseg, np.uint8)
    na = ucount[0]
    for i in range(na):
        o = owner[ulist[0, i]]
        if o >= 0:
            now[o] = 1
    keys = np.empty(na, np.int64)
    c = 0
    for i in range(na):
        u = ulist[0, i]
        o = owner[u]
        if o >= 0 and active[o] == 1 and now[o] == 1:
            keys[c] = o * n + u
            c += 1
    keys = np.sort(keys[:c])
    ep = counters[EPOCH]
    for j in range(c):
        o = keys[j] // n
        u = keys[j] % n
        for k in range(-w, w + 1):
            x = (u + k) % n
            p = owner[x]
            if p == o or (p >= 0 and active[p] == 1 and now[p] == 1):
                continue
            if p < 0:
                joined[x] = stage
                if types[x] == 0:
                    counters[Z] += 1
                else:
                    counters[G] -= 1
                    if upos[x] >= 0:
                        counters[Y] += 1
            owner[x] = o
            m = _mark_window(x, w, n, stamp, ep, buf, m)
    for i in range(m):
        x = buf[i]
        if first[x] < 0 and actively_anomalous(x, types, upos, owner, inc, w, n):
            first[x] = stage
            counters[D] += 1
    refresh_active(ulist, ucount, owner, active, counters)


@njit(cache=True)
def advance_tracked(rng, types, same, ulist, ucount, upos, stats, w, h, owner, inc, active,
                    counters, first, joined, stamp, buf, stage0, n_steps, record_every,
                    rec, n_rec, swaps, record_swaps, touched, stops, mix_lhs, mix_rhs,
                    ratio_mult, g_lhs, g_rhs, stop_rule):
    """advance() with the infected area driven every stage.

    rec[k] = (s, MIX, U_a, U_b, U_b*, k_b, Z, Y, D, G, bogus so far, stray alpha);
    swaps[k] = (a, b, bogus); stops = [t_mix, t_stop, s_star, t_g, t_y].
    stop_rule 1 halts at t_g, 2 at t_y.
    """
    n = types.shape[0]
    k = 0
    done = 0
    code = RUNNING
    while True:
        s = stage0 + done
        if stops[0] < 0 and stats[MIX] * mix_lhs < mix_rhs:
            stops[0] = s
        if stops[1] < 0 and ucount[0] == 0:
            stops[1] = s
        if stops[2] < 0 and ucount[0] > 0 and stats[VERY] < ratio_mult * ucount[0]:
            stops[2] = s
        if stops[3] < 0 and counters[G] * g_lhs <= g_rhs:
            stops[3] = s
        if stops[4] < 0 and (counters[Y] > counters[G] or stops[3] == s):
            stops[4] = s
        code = terminal_code(ucount, stats, n)
        if code == RUNNING and ((stop_rule == 1 and stops[3] >= 0)
                                or (stop_rule == 2 and stops[4] >= 0)):
            code = STOPPED
        if (s % record_every == 0 or code != RUNNING or stops[3] == s or stops[4] == s):
            if k < n_rec and (k == 0 or rec[k - 1, 0] != s):
                rec[k, 0] = s
                rec[k, 1] = stats[MIX]
                rec[k, 2] = ucount[0]
                rec[k, 3] = ucount[1]
                rec[k, 4] = stats[VERY]
                kb = stats[BOUNDS]
                if kb == 0 and stats[NBETA] > 0:
                    kb = 1
                rec[k, 5] = kb
                rec[k, 6] = counters[Z]
                rec[k, 7] = counters[Y]
                rec[k, 8] = counters[D]
                rec[k, 9] = counters[G]
                rec[k, 10] = counters[BOGUS]
                rec[k, 11] = counters[STRAY]
                k += 1
        if code != RUNNING or done >= n_steps:
            break
        a, b = select_pair(rng, types, same, ulist, ucount, upos, w, n)
        if a < 0:
            code = NO_LEGAL
            break
        bogus = 1 if owner[b] >= 0 else 0
        counters[BOGUS] += bogus
        touched[a] = 1
        touched[b] = 1
        if record_swaps:
            swaps[done, 0] = a
            swaps[done, 1] = b
            swaps[done, 2] = bogus
        m = tracked_swap(a, b, types, same, ulist, ucount, upos, stats, w, h, owner,
                         counters, stamp, buf)
        done += 1
        expand(s + 1, types, ulist, ucount, upos, owner, inc, active, counters, first,
               joined, w, stamp, buf, m)
    return done, code, k
