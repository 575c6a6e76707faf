"""Constructive swap sequences that drive a state to a terminal configuration.

Each procedure makes one existence argument effective.  Every swap goes
through the legality check before it is applied, and a procedure that cannot
find a legal move raises :class:`PlanInfeasible` rather than emitting an
illegal swap.  Ties are broken by smallest site index.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .ring import (
    ALPHA,
    BETA,
    RingState,
    StateClass,
    classify_state,
    swap_legal,
)

ring_distance = K.ring_distance


class PlanInfeasible(RuntimeError):
    """The procedure's preconditions do not hold for this state."""


@dataclass(frozen=True)
class PlannerConfig:
    """Unhappy-node thresholds as coefficients of w**4."""

    shortage_coeff: float = 5
    seed_coeff: float = 2
    extend_coeff: float = 1
    max_swaps: int | None = None

    def shortage(self, w):
        return self.shortage_coeff * w ** 4

    def seed(self, w):
        return self.seed_coeff * w ** 4


@dataclass
class Plan:
    swaps: list[tuple[int, int]] = field(default_factory=list)
    claimed_terminal: StateClass | None = None
    route: list[tuple[str, int]] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "route": [{"phase": p, "swaps": k} for p, k in self.route],
            "swaps": [list(s) for s in self.swaps],
            "claimed_terminal": self.claimed_terminal.value if self.claimed_terminal else None,
        }


class _Work:
    """A private copy of the state plus the swaps applied to it so far."""

    def __init__(self, state: RingState, max_swaps: int | None = None):
        self.state = state.copy()
        self.swaps: list[tuple[int, int]] = []
        self.route: list[tuple[str, int]] = []
        self.max_swaps = max_swaps if max_swaps is not None else 4 * state.n ** 2

    def swap(self, u: int, v: int, phase: str) -> None:
        if not swap_legal(self.state, u, v):
            raise PlanInfeasible(f"{phase}: swap ({u}, {v}) would be illegal")
        self.state.apply_swap(u, v)
        self.swaps.append((int(u), int(v)))
        if self.route and self.route[-1][0] == phase:
            self.route[-1] = (phase, self.route[-1][1] + 1)
        else:
            self.route.append((phase, 1))
        if len(self.swaps) > self.max_swaps:
            raise PlanInfeasible(f"{phase}: swap budget exhausted")

    def terminal(self) -> bool:
        return classify_state(self.state) != StateClass.LIVE

    def fragment(self) -> Plan:
        return Plan(list(self.swaps), None, list(self.route))


# -- helpers --------------------------------------------------------------------


def _blocks(state: RingState, gamma: int) -> np.ndarray:
    return K.block_runs(state.types, gamma)


def _longest_block(state: RingState, min_len: int = 1):
    """(gamma, start, length) of the longest block of either type, or None."""
    best = None
    for gamma in (ALPHA, BETA):
        for s, ln in _blocks(state, gamma):
            key = (int(ln), -int(s), -gamma)
            if ln >= min_len and (best is None or key > best[0]):
                best = (key, gamma, int(s), int(ln))
    return None if best is None else best[1:]


def _block_at(state: RingState, x: int) -> tuple[int, int]:
    """Maximal block containing site x as (start, length)."""
    n, t = state.n, state.types
    g = t[x]
    if (t == g).all():
        return 0, n
    lo = x
    while t[(lo - 1) % n] == g:
        lo -= 1
    hi = x
    while t[(hi + 1) % n] == g:
        hi += 1
    return lo % n, hi - lo + 1


def _is_happy(state: RingState, x: int) -> bool:
    return not state.is_unhappy(x)


def _bias(state: RingState, x: int, gamma: int) -> int:
    s = int(state.same[x])
    own = s if state.types[x] == gamma else state.params.width - s
    return own - (state.params.width - own)


def _dist_to_interval(x: int, start: int, length: int, n: int) -> int:
    off = (x - start) % n
    if off < length:
        return 0
    return min(off - length + 1, n - off)


# -- tau <= 0.5 -------------------------------------------------------------------


def plan_greedy(state: RingState) -> Plan:
    """Take the first legal pair until none is left; every legal swap lowers MIX."""
    work = _Work(state)
    _greedy(work)
    return work.fragment()


def _greedy(work: _Work) -> None:
    st = work.state
    while True:
        found = None
        for a in st.unhappy_nodes(ALPHA):
            for b in st.unhappy_nodes(BETA):
                if swap_legal(st, int(a), int(b)):
                    found = (int(a), int(b))
                    break
            if found:
                break
        if found is None:
            return
        work.swap(*found, "greedy")


# -- shortage of unhappy nodes ------------------------------------------------------


def _shortage_interval(state: RingState, gamma: int, sep: int) -> int:
    """Start of a 2w-interval holding a gamma node, preferably far from unhappy gamma.

    Intervals whose every site is at least ``sep`` from all unhappy gamma nodes
    are preferred; among candidates, the one with the most gamma nodes wins.
    """
    n, w = state.n, state.w
    L = 2 * w
    hits = (state.types == gamma).astype(np.int64)
    csum = np.concatenate(([0], np.cumsum(np.concatenate((hits, hits[:L])))))
    count = csum[L : L + n] - csum[:n]
    unhappy = state.unhappy_nodes(gamma)
    # distance from each site to the nearest unhappy gamma node
    dist = np.full(n, n, np.int64)
    if len(unhappy):
        idx = np.arange(n)
        for u in unhappy:
            d = np.abs(idx - u)
            np.minimum(dist, np.minimum(d, n - d), out=dist)
    # min distance over each window
    ext = np.concatenate((dist, dist[:L]))
    win_min = np.array([ext[i : i + L].min() for i in range(n)])
    ok = count > 0
    if not ok.any():
        raise PlanInfeasible("shortage: no interval holds a node of the chosen type")
    far = ok & (win_min >= sep)
    pool = far if far.any() else ok
    score = np.where(pool, count, -1)
    return int(np.argmax(score))


def _shortage_fill(work: _Work, gamma: int) -> None:
    st = work.state
    n, w = st.n, st.w
    L = 2 * w
    start = _shortage_interval(st, gamma, 2 * w * w)
    phase = "shortage"
    while True:
        sites = (start + np.arange(L)) % n
        if (st.types[sites] == gamma).all() or st.ucount[gamma] == 0:
            return
        movers = [int(x) for x in st.unhappy_nodes(gamma)
                  if _dist_to_interval(int(x), start, L, n) > 0]
        # farthest first, then smallest index
        movers.sort(key=lambda x: (-_dist_to_interval(x, start, L, n), x))
        targets = [int(p) for p in sites
                   if st.types[p] != gamma
                   and (st.types[(p - 1) % n] == gamma or st.types[(p + 1) % n] == gamma)]
        targets.sort()
        done = False
        for p in targets:
            for x in movers:
                if swap_legal(st, x, p):
                    work.swap(x, p, phase)
                    done = True
                    break
            if done:
                break
        if not done:
            raise PlanInfeasible("shortage: no legal move into the interval")


def plan_shortage(state: RingState, gamma: int | None = None) -> Plan:
    """Fill a 2w-interval with far unhappy nodes of one type.

    Ends with a block of length 2w or with no unhappy node of that type.
    """
    work = _Work(state)
    _shortage(work, gamma)
    return work.fragment()


def _shortage(work: _Work, gamma: int | None = None) -> None:
    st = work.state
    if _longest_block(st, 2 * st.w) is not None:
        return
    if gamma is not None:
        order = [gamma]
    else:
        # the type with fewer unhappy nodes first
        order = sorted((ALPHA, BETA), key=lambda g: (int(st.ucount[g]), g))
    last = None
    for g in order:
        if st.ucount[g] == 0:
            continue
        snapshot = (st.types.copy(), len(work.swaps), list(work.route))
        try:
            _shortage_fill(work, g)
            return
        except PlanInfeasible as exc:
            last = exc
            # roll back this attempt before trying the other type
            work.state = RingState(st.params, snapshot[0])
            st = work.state
            del work.swaps[snapshot[1]:]
            work.route = snapshot[2]
    if last is not None:
        raise last


# -- toward a block of length w ---------------------------------------------------------


def _pool(state: RingState, gamma: int, size: int, taken: np.ndarray) -> list[int]:
    """Minimal-utility gamma nodes with pairwise disjoint neighbourhoods."""
    n, w = state.n, state.w
    cand = np.flatnonzero(state.types == gamma)
    order = cand[np.lexsort((cand, state.same[cand]))]
    out = []
    for x in order:
        if len(out) >= size:
            break
        nb = (int(x) + np.arange(-w, w + 1)) % n
        if taken[nb].any():
            continue
        taken[nb] = True
        out.append(int(x))
    return out


def plan_seed_block(state: RingState, pool_size: int | None = None) -> Plan:
    work = _Work(state)
    _seed_block(work, pool_size)
    return work.fragment()


def _seed_block(work: _Work, pool_size: int | None = None) -> None:
    st = work.state
    n, w = st.n, st.w
    if _longest_block(st, w) is not None:
        return
    size = pool_size if pool_size is not None else w * w
    taken = np.zeros(n, bool)
    pools = {ALPHA: _pool(st, ALPHA, size, taken), BETA: _pool(st, BETA, size, taken)}
    if min(len(pools[ALPHA]), len(pools[BETA])) < w:
        raise PlanInfeasible("seed: not enough room for disjoint reserve pools")
    # scaffold J of length 3w clear of every pool neighbourhood
    free = ~taken
    ext = np.concatenate((free, free[: 3 * w])).astype(np.int64)
    csum = np.concatenate(([0], np.cumsum(ext)))
    runs = np.flatnonzero(csum[3 * w : 3 * w + n] - csum[:n] == 3 * w)
    if len(runs) == 0:
        raise PlanInfeasible("seed: no scaffold interval clear of the pools")
    j0 = int(runs[0])
    J = set(((j0 + np.arange(3 * w)) % n).tolist())
    t = [(j0 + w + i) % n for i in range(w)]
    used: set[int] = set()

    def reserve(gamma):
        for x in pools[gamma]:
            if x not in used and st.types[x] == gamma:
                yield x

    phase = "seed"
    gam = int(st.types[t[0]])
    for s in range(w - 1):
        nxt = t[s + 1]
        if st.types[nxt] == gam:
            continue
        if st.is_unhappy(nxt):
            if _is_happy(st, t[s]):
                movers = [int(x) for x in st.unhappy_nodes(gam) if int(x) not in J]
            else:
                movers = list(reserve(gam))
            for x in movers:
                if swap_legal(st, x, nxt):
                    work.swap(x, nxt, phase)
                    used.add(x)
                    break
            else:
                raise PlanInfeasible("seed: no legal partner for the next scaffold node")
        else:
            gam = 1 - gam
            for i in range(s, -1, -1):
                for x in reserve(gam):
                    if swap_legal(st, t[i], x):
                        work.swap(t[i], x, phase)
                        used.add(x)
                        break
                else:
                    raise PlanInfeasible("seed: reserve pool exhausted")
    if not all(st.types[x] == gam for x in t):
        raise PlanInfeasible("seed: scaffold did not become a block")


# -- toward a block of length 2w ---------------------------------------------------------


def plan_extend_block(state: RingState) -> Plan:
    work = _Work(state)
    _extend_block(work)
    return work.fragment()


def _extend_block(work: _Work) -> None:
    st = work.state
    n, w = st.n, st.w
    found = _longest_block(st, w)
    if found is None:
        raise PlanInfeasible("extend: no block of length w")
    gamma, x, length = found
    y = (x + length - 1) % n
    phase = "extend"
    # J: nodes at distance at least w from [y-2w, y]
    far = [u for u in range(n) if _dist_to_interval(u, (y - 2 * w) % n, 2 * w + 1, n) >= w]
    far_set = set(far)
    rounds = 0
    while True:
        x, length = _block_at(st, y)
        if length >= 2 * w:
            return
        rounds += 1
        if rounds > n:
            raise PlanInfeasible("extend: no progress")
        gap = (x - 1) % n
        z = (x - 2) % n
        while st.types[z] != gamma:
            z = (z - 1) % n
            if z == y:
                raise PlanInfeasible("extend: no other node of the block type")
        if st.is_unhappy(z):
            work.swap(z, gap, phase)
            continue
        # fill (z, x) from the left with unhappy nodes taken from J
        p = (z + 1) % n
        while p != x:
            movers = [int(u) for u in st.unhappy_nodes(gamma) if int(u) in far_set]
            for u in movers:
                if swap_legal(st, u, p):
                    work.swap(u, p, phase)
                    break
            else:
                raise PlanInfeasible("extend: unhappy nodes exhausted")
            p = (p + 1) % n


# -- from a long block to a terminal state -------------------------------------------------


def plan_finish(state: RingState) -> Plan:
    work = _Work(state)
    _finish(work)
    return work.fragment()


def _finish(work: _Work) -> None:
    st = work.state
    n, w = st.n, st.w
    found = _longest_block(st, 2 * w)
    if found is None:
        raise PlanInfeasible("finish: no block of length 2w")
    gamma, start, _ = found
    anchor = start
    phase = "finish"
    while not work.terminal():
        u, length = _block_at(st, anchor)
        v = (u + length - 1) % n
        if _is_happy(st, u) and _is_happy(st, v):
            moved = False
            for x in st.unhappy_nodes(gamma):
                x = int(x)
                for edge, outside in ((u, (u - 1) % n), (v, (v + 1) % n)):
                    if ring_distance(x, edge, n) >= w + 1 and swap_legal(st, x, outside):
                        work.swap(x, outside, phase + ":grow")
                        moved = True
                        break
                if moved:
                    break
            if not moved:
                if st.ucount[gamma] == 0:
                    return
                raise PlanInfeasible("finish: no far unhappy node can join the block")
            anchor = u
            continue
        if _bias(st, u, gamma) <= _bias(st, v, gamma):
            work.swap(u, (v + 1) % n, phase + ":shift")
            anchor = (v + 1) % n
        else:
            work.swap(v, (u - 1) % n, phase + ":shift")
            anchor = (u - 1) % n


# -- dispatch ------------------------------------------------------------------------------


def plan_to_terminal(state: RingState, config: PlannerConfig | None = None) -> Plan:
    cfg = config or PlannerConfig()
    work = _Work(state, cfg.max_swaps)
    if not work.terminal():
        p = state.params
        w = p.w
        if p.tau <= 0.5:
            _greedy(work)
        else:
            few = min(int(state.ucount[ALPHA]), int(state.ucount[BETA])) < cfg.shortage(w)
            if not few:
                try:
                    _seed_block(work)
                    _extend_block(work)
                except PlanInfeasible:
                    # fall back to the shortage route from the original state
                    work = _Work(state, cfg.max_swaps)
            if not work.terminal() and _longest_block(work.state, 2 * w) is None:
                _shortage(work)
            if not work.terminal():
                _finish(work)
    plan = Plan(work.swaps, classify_state(work.state), work.route)
    if plan.claimed_terminal == StateClass.LIVE:
        raise PlanInfeasible("plan ended in a live state")
    final = replay(state, plan)
    if classify_state(final) != plan.claimed_terminal:
        raise PlanInfeasible("replay disagrees with the claimed terminal label")
    return plan


def replay(state: RingState, plan: Plan) -> RingState:
    """Apply the plan to a copy; raises IllegalSwap on the first illegal step."""
    work = state.copy()
    for u, v in plan.swaps:
        work.apply_swap(u, v)
    return work
