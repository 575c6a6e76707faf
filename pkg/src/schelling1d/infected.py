"""Incubators, infected segments, bogus swaps and anomalous nodes.

The tracker keeps one owner id per node.  Segment ids follow the clockwise
order of their incubators, with the incubator covering site 0 (if any)
first, so that expansion conflicts are resolved in the prescribed order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import _kernels as K
from .ring import ALPHA, BETA, Interval, RingState


class TrackerOrderError(RuntimeError):
    """update_infected called out of stage order."""


@dataclass(frozen=True)
class InfectedVars:
    Z: int
    Y: int
    D: int
    G: int
    Zstar: int
    p_hat: float  # math.inf when G == 0

    def as_dict(self) -> dict:
        return {"Z": self.Z, "Y": self.Y, "D": self.D, "G": self.G,
                "Zstar": self.Zstar, "p_hat": None if math.isinf(self.p_hat) else self.p_hat}


def epsilon_star(params) -> Fraction:
    return params.w * (1 - params.rho + params.tau) / 2


def _runs(mask: np.ndarray) -> list[tuple[int, int]]:
    """Maximal circular runs of True as (start, length)."""
    n = mask.shape[0]
    if mask.all():
        return [(0, n)]
    runs = K.block_runs(mask.astype(np.int8), 1)
    return [(int(s), int(ln)) for s, ln in runs]


def incubator_mask(initial: RingState) -> np.ndarray:
    """I*: nodes whose neighbourhood meets a sparse length-w window."""
    n, w = initial.n, initial.w
    eps = epsilon_star(initial.params)
    alpha = (initial.types == ALPHA).astype(np.int64)
    csum = np.concatenate(([0], np.cumsum(np.concatenate((alpha, alpha[:w])))))
    count = csum[w : w + n] - csum[:n]          # alpha count of window [i, i+w)
    bad = count < eps
    # I: union of bad windows; difference array over a doubled line
    diff = np.zeros(2 * n + 1, np.int64)
    starts = np.flatnonzero(bad)
    np.add.at(diff, starts, 1)
    np.add.at(diff, starts + w, -1)
    cover = np.cumsum(diff)[: 2 * n]
    in_i = (cover[:n] + cover[n:]) > 0
    if not in_i.any():
        return in_i
    # I*: dilate by w on each side
    idx = np.flatnonzero(in_i)
    diff = np.zeros(2 * n + 2 * w + 1, np.int64)
    np.add.at(diff, idx, 1)
    np.add.at(diff, idx + 2 * w + 1, -1)
    cover = np.cumsum(diff)
    # cover[j] > 0 means site j - w (mod n) is within w of a node of I
    out = np.zeros(n, bool)
    hit = np.flatnonzero(cover[: n + 2 * w] > 0)
    out[(hit - w) % n] = True
    return out


class InfectedTracker:
    """Infected area of one run.  Drive it with :func:`update_infected`."""

    def __init__(self, initial: RingState):
        self.params = initial.params
        n = initial.n
        self.epsilon_star_count = epsilon_star(initial.params)
        runs = _runs(incubator_mask(initial))
        # segment containing site 0 first, then by start
        runs.sort(key=lambda r: (0 if (0 - r[0]) % n < r[1] else 1, r[0]))
        self.incubators = [Interval(s, ln) for s, ln in runs]
        self.C = sum(iv.length for iv in self.incubators)
        self.inc = np.full(n, -1, np.int32)
        for i, iv in enumerate(self.incubators):
            self.inc[iv.sites(n)] = i
        self.owner = self.inc.copy()
        self.active = np.zeros(max(len(self.incubators), 1), np.uint8)
        self.counters = np.zeros(K.N_COUNTERS, np.int64)
        self.first = np.full(n, -1, np.int64)
        self.joined = np.where(self.owner >= 0, 0, -1).astype(np.int64)
        self.stamp = np.zeros(n, np.int64)
        self.buf = np.zeros(n, np.int32)
        self.stage = 0
        K.init_counters(initial.types, initial.upos, self.owner, self.counters)
        K.refresh_active(initial.ulist, initial.ucount, self.owner, self.active, self.counters)

    # -- views --------------------------------------------------------------

    @property
    def n_segments(self) -> int:
        return len(self.incubators)

    @property
    def anomalous_ever(self) -> set[int]:
        return set(np.flatnonzero(self.first >= 0).tolist())

    @property
    def segments(self) -> list[tuple[Interval, bool]]:
        """Current segments as clockwise runs, each tagged with its activity."""
        out = []
        for i in range(self.n_segments):
            mask = self.owner == i
            if mask.any():
                out.extend((Interval(s, ln), bool(self.active[i])) for s, ln in _runs(mask))
        return out

    def in_area(self, x: int) -> bool:
        return bool(self.owner[x] >= 0)

    def kernel_args(self):
        return (self.owner, self.inc, self.active, self.counters, self.first, self.joined,
                self.stamp, self.buf)

    def audit(self, state: RingState) -> list[str]:
        """Compare incremental counters with a scan of the owner array."""
        fresh = infected_vars_scan(self, state)
        problems = [name for name, idx in (("Z", K.Z), ("Y", K.Y), ("G", K.G), ("D", K.D))
                    if int(self.counters[idx]) != getattr(fresh, name)]
        return problems

    def outside_violations(self, state: RingState) -> int:
        """Nodes outside the area that are not happy alpha or very unhappy beta."""
        out = self.owner < 0
        h = self.params.happy_threshold
        unhappy_alpha = (state.types == ALPHA) & (state.upos >= 0)
        not_very = (state.types == BETA) & (self.params.width - state.same < h)
        return int(np.count_nonzero(out & (unhappy_alpha | not_very)))


def detect_incubators(initial: RingState) -> InfectedTracker:
    return InfectedTracker(initial)


def classify_bogus(tracker: InfectedTracker, beta_site: int) -> bool:
    return tracker.in_area(beta_site)


def update_infected(tracker: InfectedTracker, state_after: RingState, event) -> InfectedTracker:
    """Advance the tracker past one executed swap (already applied to the state).

    Counters are recomputed by a full scan here; the run loop uses the fused
    kernel in ``advance_tracked`` instead.
    """
    if event.stage != tracker.stage + 1:
        raise TrackerOrderError(f"expected stage {tracker.stage + 1}, got {event.stage}")
    n, w = state_after.n, state_after.w
    c = tracker.counters
    d, bogus = int(c[K.D]), int(c[K.BOGUS]) + int(bool(event.bogus))
    K.init_counters(state_after.types, state_after.upos, tracker.owner, c)
    c[K.D], c[K.BOGUS] = d, bogus
    c[K.EPOCH] = tracker.stamp.max() + 1
    m = K._mark_window(event.alpha_site, w, n, tracker.stamp, c[K.EPOCH], tracker.buf, 0)
    m = K._mark_window(event.beta_site, w, n, tracker.stamp, c[K.EPOCH], tracker.buf, m)
    K.expand(event.stage, state_after.types, state_after.ulist, state_after.ucount,
             state_after.upos, tracker.owner, tracker.inc, tracker.active, c, tracker.first,
             tracker.joined, w, tracker.stamp, tracker.buf, m)
    tracker.stage = event.stage
    return tracker


def _vars(params, C, Z, Y, D, G) -> InfectedVars:
    zstar = max(Z - D, 11 * params.w ** 2 * C)
    p_hat = Y / G if G else math.inf
    return InfectedVars(Z=Z, Y=Y, D=D, G=G, Zstar=zstar, p_hat=p_hat)


def infected_vars(tracker: InfectedTracker, state: RingState) -> InfectedVars:
    c = tracker.counters
    return _vars(tracker.params, tracker.C, int(c[K.Z]), int(c[K.Y]), int(c[K.D]), int(c[K.G]))


def infected_vars_scan(tracker: InfectedTracker, state: RingState) -> InfectedVars:
    inside = tracker.owner >= 0
    t = state.types
    Z = int(np.count_nonzero(inside & (t == ALPHA)))
    Y = int(np.count_nonzero(inside & (t == BETA) & (state.upos >= 0)))
    G = int(np.count_nonzero(~inside & (t == BETA)))
    D = int(np.count_nonzero(tracker.first >= 0))
    return _vars(tracker.params, tracker.C, Z, Y, D, G)


@dataclass(frozen=True)
class GeneralAnomaly:
    stages: np.ndarray
    counts: np.ndarray
    lower_bound_only: bool


def generally_anomalous(trace) -> GeneralAnomaly:
    """D-bar at every recorded stage: area nodes that are ever actively anomalous.

    Nodes never leave the infected area once they join, so a node counts at
    stage s exactly when it joined by s and is anomalous at some stage of the
    run.  If the run stopped before a terminal state the future is unknown and
    the counts are only lower bounds.
    """
    stages = np.asarray(trace.samples[:, 0], dtype=np.int64)
    joined = np.sort(np.asarray(trace.anomalous[:, 1], dtype=np.int64))
    counts = np.searchsorted(joined, stages, side="right")
    return GeneralAnomaly(stages=stages, counts=counts, lower_bound_only=not trace.complete)
