"""The swap process: sampling, stage loop, stopping times and traces."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np

from . import _kernels as K
from .infected import InfectedTracker
from .ring import (
    ALPHA,
    BETA,
    ConfigError,
    MetricSet,
    ProcessParams,
    RingState,
    SwapDelta,
    brute_swap_legal,
)

GENERATOR = "numpy.PCG64"
SAMPLE_FIELDS = ("s", "MIX", "U_a", "U_b", "U_b_star", "k_b",
                 "Z", "Y", "D", "G", "bogus_count", "stray_alpha")
_CHUNK = 1 << 16


class Outcome(enum.Enum):
    COMPLETE_SEGREGATION = "CompleteSegregation"
    DORMANT = "Dormant"
    NO_LEGAL_PAIR = "NoLegalPair"
    STAGE_CAP = "StageCapReached"
    STOPPING_RULE = "StoppingRuleReached"


_CODE_OUTCOME = {
    K.COMPLETE: Outcome.COMPLETE_SEGREGATION,
    K.DORMANT: Outcome.DORMANT,
    K.NO_LEGAL: Outcome.NO_LEGAL_PAIR,
    K.STOPPED: Outcome.STOPPING_RULE,
}
_STOP_RULES = {None: 0, "t_g": 1, "t_y": 2}


@dataclass(frozen=True)
class RunConfig:
    params: ProcessParams
    seed: int = 0
    max_stages: int = 10**7
    record_every: Optional[int] = None
    track_infected: bool = False
    record_swaps: bool = True
    stop_at: Optional[str] = None

    def __post_init__(self):
        if self.max_stages < 1:
            raise ConfigError("max_stages must be at least 1")
        if self.record_every is None:
            object.__setattr__(self, "record_every", max(1, self.params.n // 1000))
        if self.record_every < 1:
            raise ConfigError("record_every must be at least 1")
        if self.stop_at not in _STOP_RULES:
            raise ConfigError(f"stop_at must be one of t_g, t_y, got {self.stop_at!r}")
        if self.stop_at is not None and not self.track_infected:
            raise ConfigError("stop_at needs track_infected")

    def as_dict(self) -> dict:
        return {"params": self.params.as_dict(), "seed": self.seed,
                "max_stages": self.max_stages, "record_every": self.record_every,
                "track_infected": self.track_infected, "record_swaps": self.record_swaps,
                "stop_at": self.stop_at}


@dataclass(frozen=True)
class SwapEvent:
    stage: int
    alpha_site: int
    beta_site: int
    bogus: bool = False
    delta: Optional[SwapDelta] = None


@dataclass(frozen=True)
class StoppingTimes:
    t_g: Optional[int] = None
    t_y: Optional[int] = None
    t_mix: Optional[int] = None
    t_stop: Optional[int] = None


@dataclass(frozen=True)
class RunSummary:
    outcome: Outcome
    stages_executed: int
    swap_count: int
    distinct_swapped_nodes: int
    final_metrics: MetricSet
    stopping: StoppingTimes
    ratio_threshold_stage: Optional[int]
    rho_star: Fraction

    def as_dict(self) -> dict:
        d = {
            "outcome": self.outcome.value,
            "stages_executed": self.stages_executed,
            "swap_count": self.swap_count,
            "distinct_swapped_nodes": self.distinct_swapped_nodes,
            "final_metrics": vars(self.final_metrics).copy(),
            "stopping": vars(self.stopping).copy(),
            "ratio_threshold_stage": self.ratio_threshold_stage,
            "rho_star": str(self.rho_star),
        }
        return d


@dataclass
class Trace:
    """Recorded samples and swaps of one run.

    samples: int64 rows laid out as SAMPLE_FIELDS (infected columns are -1
    when tracking is off); swaps: rows (a_site, b_site, bogus), the k-th row
    being the swap that produced stage k+1; anomalous: rows (node, joined,
    first anomalous stage).
    """

    metadata: dict
    samples: np.ndarray
    swaps: np.ndarray
    anomalous: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), np.int64))
    complete: bool = True
    end: Optional[dict] = None
    welfare: Optional[np.ndarray] = None  # V as read from a file, for auditing

    @property
    def tracked(self) -> bool:
        return bool(self.metadata.get("track_infected"))

    def column(self, name: str) -> np.ndarray:
        return self.samples[:, SAMPLE_FIELDS.index(name)]

    def events(self):
        for k, (a, b, bogus) in enumerate(self.swaps):
            yield SwapEvent(k + 1, int(a), int(b), bool(bogus))

    # -- JSON lines ---------------------------------------------------------

    def sample_record(self, row) -> dict:
        rec = {"type": "sample"}
        for name, v in zip(SAMPLE_FIELDS, row):
            rec[name] = int(v)
        n, w = self.metadata["n"], self.metadata["w"]
        rec["V"] = (2 * w + 1) * n - 2 * rec["MIX"]
        if not self.tracked:
            for name in ("Z", "Y", "D", "G", "bogus_count", "stray_alpha"):
                rec[name] = None
        return rec

    def write_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(json.dumps({"type": "meta", **self.metadata}) + "\n")
            k = 0
            for row in self.samples:
                s = int(row[0])
                while k < len(self.swaps) and k + 1 <= s:
                    fh.write(_swap_line(k, self.swaps[k]))
                    k += 1
                fh.write(json.dumps(self.sample_record(row)) + "\n")
            while k < len(self.swaps):
                fh.write(_swap_line(k, self.swaps[k]))
                k += 1
            if self.tracked:
                fh.write(json.dumps({"type": "anomalous", "complete": self.complete,
                                     "nodes": self.anomalous.tolist()}) + "\n")
            if self.end is not None:
                fh.write(json.dumps({"type": "end", **self.end}) + "\n")

    @classmethod
    def read_jsonl(cls, path) -> "Trace":
        meta = None
        end = None
        samples, swaps, welfare = [], [], []
        anomalous = np.zeros((0, 3), np.int64)
        complete = False
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                    kind = rec["type"]
                    if lineno == 1 and kind != "meta":
                        raise ValueError("first record must be metadata")
                    if kind == "meta":
                        meta = {k: v for k, v in rec.items() if k != "type"}
                    elif kind == "sample":
                        samples.append([-1 if rec[f] is None else int(rec[f])
                                        for f in SAMPLE_FIELDS])
                        welfare.append(int(rec["V"]))
                    elif kind == "swap":
                        swaps.append((int(rec["s"]), int(rec["a_site"]), int(rec["b_site"]),
                                      int(bool(rec["bogus"]))))
                    elif kind == "anomalous":
                        anomalous = np.array(rec["nodes"], np.int64).reshape(-1, 3)
                        complete = bool(rec["complete"])
                    elif kind == "end":
                        end = {k: v for k, v in rec.items() if k != "type"}
                    else:
                        raise ValueError(f"unknown record type {kind!r}")
                except (ValueError, KeyError, TypeError) as exc:
                    raise TraceError(f"{path}:{lineno}: {exc}") from exc
        if meta is None:
            raise TraceError(f"{path}: empty trace")
        for k, row in enumerate(swaps):
            if row[0] != k + 1:
                raise TraceError(f"{path}: swap records out of order at stage {row[0]}")
        sw = np.array([r[1:] for r in swaps], np.int64).reshape(-1, 3)
        if not meta.get("track_infected"):
            complete = meta.get("terminal", False)
        return cls(meta, np.array(samples, np.int64).reshape(-1, len(SAMPLE_FIELDS)), sw,
                   anomalous, complete, end, np.array(welfare, np.int64))


class TraceError(ValueError):
    pass


def _swap_line(k, row) -> str:
    return json.dumps({"type": "swap", "s": k + 1, "a_site": int(row[0]),
                       "b_site": int(row[1]), "bogus": bool(row[2])}) + "\n"


# -- operations ---------------------------------------------------------------


def sample_initial(params: ProcessParams, seed=None, rng=None) -> RingState:
    """i.i.d. types, each beta with probability rho."""
    if rng is None:
        rng = np.random.default_rng(seed)
    types = (rng.random(params.n) < float(params.rho)).astype(np.int8)
    return RingState(params, types)


def enumerate_legal_pairs(state: RingState) -> list[tuple[int, int]]:
    """All legal (alpha, beta) pairs by brute-force recount."""
    return [(int(a), int(b))
            for a in state.unhappy_nodes(ALPHA)
            for b in state.unhappy_nodes(BETA)
            if brute_swap_legal(state, int(a), int(b))]


def step(state: RingState, rng, stage: int = 1):
    """One stage.  Returns a SwapEvent, or an Outcome when no swap happens."""
    code = K.terminal_code(state.ucount, state.stats, state.n)
    if code != K.RUNNING:
        return _CODE_OUTCOME[code]
    a, b = K.select_pair(rng, state.types, state.same, state.ulist, state.ucount,
                         state.upos, state.w, state.n)
    if a < 0:
        return Outcome.NO_LEGAL_PAIR
    delta = state.apply_swap(int(a), int(b))
    return SwapEvent(stage, int(a), int(b), False, delta)


def _stop(v) -> Optional[int]:
    return None if v < 0 else int(v)


class Runner:
    """Drives one run in chunks; used by :func:`run` and by checkpointing tests."""

    def __init__(self, config: RunConfig):
        self.config = config
        p = config.params
        self.rng = np.random.default_rng(config.seed)
        self.state = sample_initial(p, rng=self.rng)
        self.initial = self.state.copy()
        self.tracker = InfectedTracker(self.state) if config.track_infected else None
        self.stage = 0
        self.code = K.RUNNING
        self.stops = np.full(5, -1, np.int64)
        self.touched = np.zeros(p.n, np.uint8)
        self._samples: list[np.ndarray] = []
        self._swaps: list[np.ndarray] = []
        self._last_sampled = -1
        n, w = p.n, p.w
        t, r = p.tau, self.state.rho_star
        # MIX < n(w+1) tau rho*  <=>  MIX * den < n(w+1) * num
        q = n * (w + 1) * t * r
        self._mix = (q.denominator, q.numerator)
        # G <= tau rho n / (4w)
        g = p.tau * p.rho * n / (4 * w)
        self._g = (g.denominator, g.numerator)

    @property
    def finished(self) -> bool:
        return self.code != K.RUNNING or self.stage >= self.config.max_stages

    def advance(self, n_steps: int) -> int:
        """Run at most n_steps more stages; returns the number executed."""
        cfg = self.config
        n_steps = min(n_steps, cfg.max_stages - self.stage)
        if self.code != K.RUNNING or n_steps < 0:
            return 0
        st, p = self.state, cfg.params
        n_rec = n_steps // cfg.record_every + 5
        swaps = np.zeros((n_steps if cfg.record_swaps else 1, 3), np.int32)
        ratio = 4 * p.w * p.w
        if self.tracker is None:
            rec = np.full((n_rec, len(SAMPLE_FIELDS)), -1, np.int64)
            done, code, k = K.advance(
                self.rng, *st.kernel_args(), p.w, p.happy_threshold, self.stage, n_steps,
                cfg.record_every, rec, n_rec, swaps, cfg.record_swaps, self.touched, self.stops,
                self._mix[0], self._mix[1], ratio)
        else:
            rec = np.zeros((n_rec, len(SAMPLE_FIELDS)), np.int64)
            done, code, k = K.advance_tracked(
                self.rng, *st.kernel_args(), p.w, p.happy_threshold, *self.tracker.kernel_args(),
                self.stage, n_steps, cfg.record_every, rec, n_rec, swaps, cfg.record_swaps,
                self.touched, self.stops, self._mix[0], self._mix[1], ratio, self._g[0], self._g[1],
                _STOP_RULES[cfg.stop_at])
            self.tracker.stage = self.stage + done
        rec = rec[:k]
        if k and self._last_sampled == rec[0, 0]:
            rec = rec[1:]  # chunk boundary already sampled by the previous call
        if len(rec):
            self._last_sampled = int(rec[-1, 0])
        self._samples.append(rec)
        if cfg.record_swaps:
            self._swaps.append(swaps[:done].astype(np.int64))
        self.stage += done
        self.code = code
        return done

    def run(self) -> None:
        while not self.finished:
            self.advance(_CHUNK)

    def _final_sample(self) -> np.ndarray:
        st = self.state
        row = [self.stage, st.stats[K.MIX], st.ucount[0], st.ucount[1], st.stats[K.VERY],
               st.beta_blocks()]
        if self.tracker is not None:
            c = self.tracker.counters
            row += [c[K.Z], c[K.Y], c[K.D], c[K.G], c[K.BOGUS], c[K.STRAY]]
        else:
            row += [-1] * 6
        return np.array([row], np.int64)

    def outcome(self) -> Outcome:
        if self.code != K.RUNNING:
            return _CODE_OUTCOME[self.code]
        return Outcome.STAGE_CAP

    def summary(self) -> RunSummary:
        s = self.stops
        return RunSummary(
            outcome=self.outcome(),
            stages_executed=self.stage,
            swap_count=self.stage,
            distinct_swapped_nodes=int(np.count_nonzero(self.touched)),
            final_metrics=self.state.metrics,
            stopping=StoppingTimes(t_g=_stop(s[3]), t_y=_stop(s[4]),
                                   t_mix=_stop(s[0]), t_stop=_stop(s[1])),
            ratio_threshold_stage=_stop(s[2]),
            rho_star=self.state.rho_star,
        )

    def trace(self) -> Trace:
        cfg = self.config
        samples = np.concatenate(self._samples) if self._samples else np.zeros(
            (0, len(SAMPLE_FIELDS)), np.int64)
        if len(samples) == 0 or samples[-1, 0] != self.stage:
            samples = np.concatenate([samples, self._final_sample()])
        swaps = np.concatenate(self._swaps) if self._swaps else np.zeros((0, 3), np.int64)
        terminal = self.outcome() in (Outcome.COMPLETE_SEGREGATION, Outcome.DORMANT,
                                      Outcome.NO_LEGAL_PAIR)
        meta = {
            **cfg.params.as_dict(),
            "config": cfg.as_dict(),
            "seed": cfg.seed,
            "generator": GENERATOR,
            "rho_star": str(self.state.rho_star),
            "track_infected": cfg.track_infected,
            "terminal": terminal,
            "initial": self.initial.label_string(),
        }
        anomalous = np.zeros((0, 3), np.int64)
        if self.tracker is not None:
            tr = self.tracker
            meta["C"] = tr.C
            meta["incubators"] = [[iv.start, iv.length] for iv in tr.incubators]
            nodes = np.flatnonzero(tr.first >= 0)
            anomalous = np.stack([nodes, tr.joined[nodes], tr.first[nodes]], axis=1)
        end = self.summary().as_dict()
        return Trace(meta, samples, swaps, anomalous.astype(np.int64), terminal, end)


def run(config: RunConfig) -> tuple[RunSummary, Trace]:
    runner = Runner(config)
    runner.run()
    return runner.summary(), runner.trace()


def changed_fraction(summary: RunSummary, n: int) -> float:
    return summary.distinct_swapped_nodes / n
