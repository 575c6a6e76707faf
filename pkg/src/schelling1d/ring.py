"""Ring configurations and exact state-level quantities."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from . import _kernels as K

ALPHA = 0
BETA = 1
_LABELS = {"a": ALPHA, "b": BETA, "α": ALPHA, "β": BETA, 0: ALPHA, 1: BETA}


class ConfigError(ValueError):
    """Invalid parameters or malformed state input."""


class IllegalSwap(ValueError):
    pass


class NodeStatus(enum.Enum):
    HAPPY_ALPHA = "HappyAlpha"
    UNHAPPY_ALPHA = "UnhappyAlpha"
    HAPPY_BETA = "HappyBeta"
    UNHAPPY_BETA = "UnhappyBeta"
    VERY_UNHAPPY_BETA = "VeryUnhappyBeta"


class StateClass(enum.Enum):
    COMPLETE_SEGREGATION = "CompleteSegregation"
    DORMANT = "Dormant"
    LIVE = "Live"


def as_fraction(x) -> Fraction:
    """Exact rational from a decimal string, int, Fraction or float.

    Floats go through their shortest repr so that 0.6 becomes 3/5.
    """
    if isinstance(x, Fraction):
        return x
    if isinstance(x, float):
        x = repr(x)
    return Fraction(x)


def parse_type(label) -> int:
    try:
        return _LABELS[label]
    except KeyError:
        raise ConfigError(f"unknown type label {label!r}") from None


@dataclass(frozen=True)
class ProcessParams:
    n: int
    w: int
    tau: Fraction
    rho: Fraction

    def __post_init__(self):
        object.__setattr__(self, "tau", as_fraction(self.tau))
        object.__setattr__(self, "rho", as_fraction(self.rho))
        if self.n < 1 or self.w < 1:
            raise ConfigError("n and w must be positive")
        if 2 * self.w + 1 > self.n:
            raise ConfigError(f"need 2w+1 <= n, got n={self.n}, w={self.w}")
        if not 0 < self.tau < 1:
            raise ConfigError(f"tau must lie in (0, 1), got {self.tau}")
        if not 0 <= self.rho <= 1:
            raise ConfigError(f"rho must lie in [0, 1], got {self.rho}")

    @property
    def width(self) -> int:
        """Neighbourhood size 2w+1."""
        return 2 * self.w + 1

    @property
    def happy_threshold(self) -> int:
        # smallest integer count c with c >= tau*(2w+1)
        return math.ceil(self.tau * self.width)

    def as_dict(self) -> dict:
        return {"n": self.n, "w": self.w, "tau": str(self.tau), "rho": str(self.rho)}


@dataclass(frozen=True)
class Interval:
    """Clockwise run of ``length`` sites starting at ``start``."""

    start: int
    length: int

    def sites(self, n: int) -> np.ndarray:
        return (self.start + np.arange(self.length)) % n

    def contains(self, x: int, n: int) -> bool:
        return (x - self.start) % n < self.length

    @classmethod
    def make(cls, start: int, length: int, n: int) -> "Interval":
        if not 1 <= length <= n:
            raise ValueError(f"interval length {length} outside [1, {n}]")
        return cls(start % n, length)


@dataclass(frozen=True)
class MetricSet:
    social_welfare: int
    mixing_index: int
    unhappy_alpha: int
    unhappy_beta: int
    very_unhappy_beta: int
    beta_blocks: int
    longest_alpha_block: int
    longest_beta_block: int

    @property
    def unhappy(self) -> int:
        return self.unhappy_alpha + self.unhappy_beta


@dataclass(frozen=True)
class SwapDelta:
    mix: int
    welfare: int
    unhappy_alpha: int
    unhappy_beta: int


class RingState:
    """A configuration on the ring plus incrementally maintained caches.

    Caches are the numpy arrays documented in ``_kernels``; they are kept
    coherent by :meth:`apply_swap` and can be audited with :meth:`audit`.
    """

    def __init__(self, params: ProcessParams, types: np.ndarray):
        self.params = params
        n = params.n
        self.types = np.ascontiguousarray(types, dtype=np.int8)
        if self.types.shape != (n,):
            raise ConfigError(f"expected {n} type labels, got {self.types.shape[0]}")
        self.same = np.zeros(n, np.int32)
        self.ulist = np.zeros((2, n), np.int32)
        self.ucount = np.zeros(2, np.int64)
        self.upos = np.full(n, -1, np.int32)
        self.stats = np.zeros(K.N_STATS, np.int64)
        K.rebuild(self.types, self.same, self.ulist, self.ucount, self.upos,
                  self.stats, params.w, params.happy_threshold)
        self.rho_star = Fraction(int(self.stats[K.NBETA]), n)

    # -- basic views -------------------------------------------------------

    @property
    def n(self) -> int:
        return self.params.n

    @property
    def w(self) -> int:
        return self.params.w

    def kernel_args(self):
        return (self.types, self.same, self.ulist, self.ucount, self.upos, self.stats)

    def copy(self) -> "RingState":
        return RingState(self.params, self.types.copy())

    def label_string(self) -> str:
        return "".join("ab"[t] for t in self.types)

    def __repr__(self):
        s = self.label_string()
        if len(s) > 40:
            s = s[:37] + "..."
        return f"RingState(n={self.n}, w={self.w}, tau={self.params.tau}, {s})"

    def n_beta(self) -> int:
        return int(self.stats[K.NBETA])

    def unhappy_nodes(self, gamma: int) -> np.ndarray:
        """Unhappy nodes of type gamma, sorted by site."""
        return np.sort(self.ulist[gamma, : self.ucount[gamma]])

    def is_unhappy(self, u: int) -> bool:
        return bool(self.upos[u] >= 0)

    def beta_blocks(self) -> int:
        b = int(self.stats[K.BOUNDS])
        if b == 0:
            return 1 if self.n_beta() > 0 else 0
        return b

    def alpha_blocks(self) -> int:
        b = int(self.stats[K.BOUNDS])
        if b == 0:
            return 1 if self.n_beta() < self.n else 0
        return b

    @property
    def metrics(self) -> MetricSet:
        n, width = self.n, self.params.width
        mix = int(self.stats[K.MIX])
        la = K.block_runs(self.types, ALPHA)
        lb = K.block_runs(self.types, BETA)
        return MetricSet(
            social_welfare=width * n - 2 * mix,
            mixing_index=mix,
            unhappy_alpha=int(self.ucount[ALPHA]),
            unhappy_beta=int(self.ucount[BETA]),
            very_unhappy_beta=int(self.stats[K.VERY]),
            beta_blocks=self.beta_blocks(),
            longest_alpha_block=int(la[:, 1].max()) if len(la) else 0,
            longest_beta_block=int(lb[:, 1].max()) if len(lb) else 0,
        )

    # -- transitions ------------------------------------------------------

    def apply_swap(self, u: int, v: int) -> SwapDelta:
        if not swap_legal(self, u, v):
            raise IllegalSwap(f"swap ({u}, {v}) is not legal")
        mix0 = int(self.stats[K.MIX])
        ua0, ub0 = int(self.ucount[0]), int(self.ucount[1])
        w, h = self.w, self.params.happy_threshold
        K.flip(u, *self.kernel_args(), w, h)
        K.flip(v, *self.kernel_args(), w, h)
        dmix = int(self.stats[K.MIX]) - mix0
        return SwapDelta(mix=dmix, welfare=-2 * dmix,
                         unhappy_alpha=int(self.ucount[0]) - ua0,
                         unhappy_beta=int(self.ucount[1]) - ub0)

    def audit(self) -> list[str]:
        """Compare every cache against a from-scratch recomputation."""
        fresh = RingState(self.params, self.types.copy())
        problems = []
        if not np.array_equal(fresh.same, self.same):
            problems.append("same_count")
        for name, idx in (("mixing_index", K.MIX), ("very_unhappy_beta", K.VERY),
                          ("boundaries", K.BOUNDS), ("n_beta", K.NBETA)):
            if fresh.stats[idx] != self.stats[idx]:
                problems.append(name)
        for g in (ALPHA, BETA):
            if not np.array_equal(fresh.unhappy_nodes(g), self.unhappy_nodes(g)):
                problems.append(f"unhappy[{g}]")
        if fresh.rho_star != self.rho_star:
            problems.append("rho_star")
        return problems

    # -- snapshots ----------------------------------------------------------

    def snapshot(self) -> str:
        p = self.params
        return f"{p.n} {p.w} {p.tau} {p.rho}\n{self.label_string()}\n"

    @classmethod
    def from_snapshot(cls, text: str) -> "RingState":
        lines = [ln.strip() for ln in text.strip().splitlines() if ln.strip()]
        if len(lines) < 2:
            raise ConfigError("snapshot needs a header line and a type line")
        head = lines[0].split()
        if len(head) != 4:
            raise ConfigError("snapshot header must be 'n w tau rho'")
        try:
            params = ProcessParams(int(head[0]), int(head[1]), Fraction(head[2]), Fraction(head[3]))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return build_state(params, "".join(lines[1:]))


def build_state(params: ProcessParams, types: Iterable) -> RingState:
    if isinstance(types, np.ndarray):
        arr = types.astype(np.int8)
    else:
        arr = np.array([parse_type(t) for t in types], dtype=np.int8)
    if arr.shape[0] != params.n:
        raise ConfigError(f"expected {params.n} type labels, got {arr.shape[0]}")
    return RingState(params, arr)


def neighbourhood(u: int, w: int, n: int) -> np.ndarray:
    return (u + np.arange(-w, w + 1)) % n


def node_status(state: RingState, u: int) -> NodeStatus:
    if not 0 <= u < state.n:
        raise IndexError(u)
    h = state.params.happy_threshold
    s = int(state.same[u])
    if state.types[u] == ALPHA:
        return NodeStatus.HAPPY_ALPHA if s >= h else NodeStatus.UNHAPPY_ALPHA
    if state.params.width - s >= h:
        return NodeStatus.VERY_UNHAPPY_BETA
    return NodeStatus.HAPPY_BETA if s >= h else NodeStatus.UNHAPPY_BETA


def swap_legal(state: RingState, u: int, v: int) -> bool:
    return bool(K.legal(u, v, state.types, state.same, state.upos, state.w, state.n))


def classify_state(state: RingState) -> StateClass:
    code = K.terminal_code(state.ucount, state.stats, state.n)
    if code == K.COMPLETE:
        return StateClass.COMPLETE_SEGREGATION
    if code == K.DORMANT:
        return StateClass.DORMANT
    return StateClass.LIVE


def interval_bias(state: RingState, interval: Interval, gamma: int) -> int:
    t = state.types[interval.sites(state.n)]
    k = int(np.count_nonzero(t == gamma))
    return k - (interval.length - k)


def stable_intervals(state: RingState, gamma: int) -> list[Interval]:
    """Length-w intervals holding at least tau*(2w+1) nodes of type gamma."""
    n, w = state.n, state.w
    h = state.params.happy_threshold
    hits = (state.types == gamma).astype(np.int64)
    csum = np.concatenate(([0], np.cumsum(np.concatenate((hits, hits[:w])))))
    window = csum[w : w + n] - csum[:n]
    return [Interval(int(i), w) for i in np.flatnonzero(window >= h)]


def maximal_blocks(state: RingState, gamma: int) -> list[Interval]:
    runs = K.block_runs(state.types, gamma)
    out = [Interval(int(s), int(ln)) for s, ln in runs]
    return sorted(out, key=lambda iv: iv.start)


def brute_same_counts(types: Sequence[int], w: int) -> np.ndarray:
    """Direct recount, used as an oracle for the sliding-window cache."""
    n = len(types)
    return np.array([sum(types[(u + k) % n] == types[u] for k in range(-w, w + 1))
                     for u in range(n)], dtype=np.int32)


def brute_swap_legal(state: RingState, u: int, v: int) -> bool:
    """Legality by recounting in the simulated post-swap configuration."""
    t = state.types
    if u == v or t[u] == t[v] or not (state.is_unhappy(u) and state.is_unhappy(v)):
        return False
    after = t.copy()
    after[u], after[v] = t[v], t[u]
    n, w = state.n, state.w
    for origin, dest in ((u, v), (v, u)):
        before = np.count_nonzero(t[neighbourhood(origin, w, n)] == t[origin])
        moved = np.count_nonzero(after[neighbourhood(dest, w, n)] == t[origin])
        if moved < before:
            return False
    return True
