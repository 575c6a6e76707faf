"""Configuration loading, seeded sweeps, the g-surface grid and trace audits."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional

import numpy as np

from .analysis import DomainError, RegimeReport, classify_regime, g_func
from .dynamics import Outcome, RunConfig, Trace, TraceError, run
from .infected import generally_anomalous
from .ring import ALPHA, BETA, ConfigError, ProcessParams, as_fraction, build_state, stable_intervals

WORKERS_ENV = "SCHELLING_WORKERS"
OUTPUT_ENV = "SCHELLING_OUTPUT_DIR"

SWEEP_HEADER = ("tau", "rho", "n", "w", "replicates", "complete", "dormant", "nolegal",
                "capped", "mean_swaps", "mean_changed_fraction", "predicted_regime")

_RUN_KEYS = {"n", "w", "tau", "rho", "seed", "max_stages", "record_every", "track_infected",
             "record_swaps", "stop_at", "trace", "summary"}
_SWEEP_KEYS = {"tau_grid", "rho_grid", "n", "w", "replicates", "seed_base", "max_stages",
               "static_epsilon", "output"}


# -- configuration --------------------------------------------------------------


def _fraction_field(doc: dict, key: str) -> Fraction:
    try:
        return as_fraction(doc[key])
    except KeyError:
        raise ConfigError(f"missing field {key!r}") from None
    except (ValueError, TypeError, ZeroDivisionError) as exc:
        raise ConfigError(f"bad value for {key!r}: {exc}") from None


def _int_field(doc: dict, key: str, default=None) -> int:
    if key not in doc:
        if default is None:
            raise ConfigError(f"missing field {key!r}")
        return default
    v = doc[key]
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{key!r} must be an integer")
    return v


def _check_keys(doc, allowed: set, what: str) -> None:
    if not isinstance(doc, dict):
        raise ConfigError(f"{what} config must be a JSON object")
    unknown = set(doc) - allowed
    if unknown:
        raise ConfigError(f"unknown {what} config fields: {sorted(unknown)}")


def run_config_from_dict(doc: dict) -> RunConfig:
    _check_keys(doc, _RUN_KEYS, "run")
    params = ProcessParams(_int_field(doc, "n"), _int_field(doc, "w"),
                           _fraction_field(doc, "tau"), _fraction_field(doc, "rho"))
    record_every = doc.get("record_every")
    if record_every is not None:
        record_every = _int_field(doc, "record_every")
    return RunConfig(
        params=params,
        seed=_int_field(doc, "seed", 0),
        max_stages=_int_field(doc, "max_stages", 10**7),
        record_every=record_every,
        track_infected=bool(doc.get("track_infected", False)),
        record_swaps=bool(doc.get("record_swaps", True)),
        stop_at=doc.get("stop_at"),
    )


def load_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None


def output_dir(default: str = ".") -> Path:
    return Path(os.environ.get(OUTPUT_ENV, default))


def worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV)
    if raw is None:
        return os.cpu_count() or 1
    try:
        k = int(raw)
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    if k < 1:
        raise ConfigError(f"{WORKERS_ENV} must be at least 1")
    return k


# -- sweeps -----------------------------------------------------------------------


@dataclass(frozen=True)
class SweepConfig:
    tau_grid: tuple
    rho_grid: tuple
    n: int
    w: int
    replicates: int = 10
    seed_base: int = 0
    max_stages: int = 10**7
    static_epsilon: Fraction = Fraction(1, 20)

    def __post_init__(self):
        object.__setattr__(self, "tau_grid", tuple(as_fraction(t) for t in self.tau_grid))
        object.__setattr__(self, "rho_grid", tuple(as_fraction(r) for r in self.rho_grid))
        object.__setattr__(self, "static_epsilon", as_fraction(self.static_epsilon))
        if not self.tau_grid or not self.rho_grid:
            raise ConfigError("tau_grid and rho_grid must be non-empty")
        if self.replicates < 1:
            raise ConfigError("replicates must be at least 1")
        if self.seed_base < 0:
            raise ConfigError("seed_base must be non-negative")
        for t in self.tau_grid:
            for r in self.rho_grid:
                ProcessParams(self.n, self.w, t, r)

    @classmethod
    def from_dict(cls, doc: dict) -> "SweepConfig":
        _check_keys(doc, _SWEEP_KEYS, "sweep")
        try:
            taus = [as_fraction(t) for t in doc["tau_grid"]]
            rhos = [as_fraction(r) for r in doc["rho_grid"]]
        except KeyError as exc:
            raise ConfigError(f"missing field {exc.args[0]!r}") from None
        except (ValueError, TypeError, ZeroDivisionError) as exc:
            raise ConfigError(f"bad grid value: {exc}") from None
        return cls(
            tau_grid=tuple(taus), rho_grid=tuple(rhos),
            n=_int_field(doc, "n"), w=_int_field(doc, "w"),
            replicates=_int_field(doc, "replicates", 10),
            seed_base=_int_field(doc, "seed_base", 0),
            max_stages=_int_field(doc, "max_stages", 10**7),
            static_epsilon=(_fraction_field(doc, "static_epsilon")
                            if "static_epsilon" in doc else Fraction(1, 20)),
        )

    @property
    def cells(self) -> list[tuple[Fraction, Fraction]]:
        return [(t, r) for t in self.tau_grid for r in self.rho_grid]


@dataclass
class SweepCell:
    tau: Fraction
    rho: Fraction
    outcome_counts: dict
    mean_swaps: float
    mean_changed_fraction: float
    predicted_regime: Optional[RegimeReport]
    failures: list = field(default_factory=list)

    @property
    def replicates(self) -> int:
        return sum(self.outcome_counts.values()) + len(self.failures)

    def empirically_static(self, epsilon) -> bool:
        return self.mean_changed_fraction <= float(epsilon)

    def majority(self) -> Optional[Outcome]:
        if not self.outcome_counts:
            return None
        return max(self.outcome_counts, key=lambda o: (self.outcome_counts[o], o.value))


def derive_seed(seed_base: int, cell: int, replicate: int) -> int:
    """seed_base XOR a 64-bit hash of (cell, replicate)."""
    digest = hashlib.blake2b(f"{cell}:{replicate}".encode(), digest_size=8).digest()
    return seed_base ^ int.from_bytes(digest, "little")


def predicted_regime(tau, rho) -> Optional[RegimeReport]:
    """Regime of (tau, rho), mirroring the type labels when rho > 1/2."""
    rho = as_fraction(rho)
    if rho > Fraction(1, 2):
        rho = 1 - rho
    try:
        return classify_regime(tau, rho)
    except DomainError:
        return None


def _sweep_job(job) -> tuple:
    key, n, w, tau, rho, seed, max_stages = job
    try:
        cfg = RunConfig(ProcessParams(n, w, tau, rho), seed=seed, max_stages=max_stages,
                        record_every=max_stages, record_swaps=False)
        summary, _ = run(cfg)
    except Exception as exc:  # recorded per cell, the sweep carries on
        return key, None, 0, 0, f"{type(exc).__name__}: {exc}"
    return key, summary.outcome, summary.swap_count, summary.distinct_swapped_nodes, None


def sweep(config: SweepConfig, workers: Optional[int] = None) -> list[SweepCell]:
    workers = worker_count() if workers is None else workers
    jobs = []
    for ci, (t, r) in enumerate(config.cells):
        for rep in range(config.replicates):
            jobs.append(((ci, rep), config.n, config.w, t, r,
                         derive_seed(config.seed_base, ci, rep), config.max_stages))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_job, jobs))
    else:
        results = [_sweep_job(j) for j in jobs]
    by_key = {r[0]: r[1:] for r in results}
    cells = []
    for ci, (t, r) in enumerate(config.cells):
        counts = {o: 0 for o in (Outcome.COMPLETE_SEGREGATION, Outcome.DORMANT,
                                 Outcome.NO_LEGAL_PAIR, Outcome.STAGE_CAP)}
        swaps, changed, failures = [], [], []
        for rep in range(config.replicates):
            outcome, n_swaps, n_changed, err = by_key[(ci, rep)]
            if err is not None:
                failures.append({"replicate": rep, "error": err})
                continue
            counts[outcome] += 1
            swaps.append(n_swaps)
            changed.append(n_changed / config.n)
        cells.append(SweepCell(
            tau=t, rho=r, outcome_counts=counts,
            mean_swaps=float(np.mean(swaps)) if swaps else math.nan,
            mean_changed_fraction=float(np.mean(changed)) if changed else math.nan,
            predicted_regime=predicted_regime(t, r), failures=failures))
    return cells


def sweep_csv(config: SweepConfig, cells: list[SweepCell]) -> str:
    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(SWEEP_HEADER)
    for c in cells:
        k = c.outcome_counts
        regime = c.predicted_regime.regime.value if c.predicted_regime else "OutOfDomain"
        out.writerow([str(c.tau), str(c.rho), config.n, config.w, config.replicates,
                      k[Outcome.COMPLETE_SEGREGATION], k[Outcome.DORMANT],
                      k[Outcome.NO_LEGAL_PAIR], k[Outcome.STAGE_CAP],
                      f"{c.mean_swaps:.6f}", f"{c.mean_changed_fraction:.6f}", regime])
    return buf.getvalue()


# -- g surface --------------------------------------------------------------------


def gsurface(tau_grid, rho_grid) -> list[dict]:
    """g(tau, rho) and the predicted regime over a grid with tau in (0, 0.5)."""
    rows = []
    for t in tau_grid:
        for r in rho_grid:
            rep = predicted_regime(t, r)
            rows.append({"tau": float(as_fraction(t)), "rho": float(as_fraction(r)),
                         "g": g_func(t, r),
                         "regime": rep.regime.value if rep else "OutOfDomain"})
    return rows


def gsurface_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(("tau", "rho", "g", "regime"))
    for row in rows:
        out.writerow([f"{row['tau']:.6f}", f"{row['rho']:.6f}", f"{row['g']:.12g}",
                      row["regime"]])
    return buf.getvalue()


def linspace_open(lo: float, hi: float, steps: int) -> list[float]:
    """steps points strictly inside (lo, hi)."""
    return [lo + (hi - lo) * (i + 1) / (steps + 1) for i in range(steps)]


# -- trace audit --------------------------------------------------------------------


class _Checks:
    def __init__(self):
        self.first: dict[str, dict] = {}
        self.counts: dict[str, int] = {}

    def add(self, name: str) -> None:
        self.counts.setdefault(name, 0)

    def expect(self, name: str, ok: np.ndarray, stages: np.ndarray, detail) -> None:
        """Record every False entry of ok; detail(i) describes the first one."""
        self.add(name)
        bad = np.flatnonzero(~ok)
        if bad.size:
            i = int(bad[0])
            self.counts[name] += int(bad.size)
            self.first.setdefault(name, {"check": name, "s": int(stages[i]), "detail": detail(i)})


def analyze_trace(source) -> dict:
    """Recheck the invariants recorded in a trace; ``source`` is a path or Trace."""
    trace = source if isinstance(source, Trace) else Trace.read_jsonl(source)
    meta = trace.metadata
    n, w = int(meta["n"]), int(meta["w"])
    tau, rho = as_fraction(meta["tau"]), as_fraction(meta["rho"])
    rho_star = as_fraction(meta.get("rho_star", rho))
    S = trace.samples
    checks = _Checks()
    s = S[:, 0]
    mix, ua, ub, ubs, kb = (S[:, i] for i in range(1, 6))
    u = ua + ub

    if trace.welfare is not None and len(trace.welfare) == len(S):
        V = trace.welfare
        checks.expect("welfare_identity", V + 2 * mix == (2 * w + 1) * n, s,
                      lambda i: f"V+2MIX={V[i] + 2 * mix[i]}")

    s1 = s[1:]
    checks.expect("mix_nonincreasing", np.diff(mix) <= 0, s1,
                  lambda i: f"MIX rose {mix[i]} -> {mix[i + 1]}")

    tn, td = tau.numerator, tau.denominator
    if tau <= Fraction(1, 2):
        drop, gap = -np.diff(mix), np.diff(s)
        checks.expect("mix_drop_per_swap", drop >= 4 * gap, s1,
                      lambda i: f"MIX fell by {drop[i]} over {gap[i]} swaps")
        _check_immunity(trace, n, w, tau, rho, checks)

    if tau > Fraction(1, 2) and w * (2 * tau - 1) > 1 - tau:
        # MIX <= w(w+1)k_b <= w(w+1)U < 2w MIX/(1-tau)
        ww = w * (w + 1)
        ok = (mix <= ww * kb) & (kb <= u) & (ww * u * (td - tn) < 2 * w * mix * td)
        checks.expect("mix_block_unhappy_chain", ok, s,
                      lambda i: f"MIX={mix[i]} k_b={kb[i]} U={u[i]}")

    stopping = {"t_mix": None, "t_stop": None, "s_star": None}
    if trace.end:
        stopping.update(trace.end.get("stopping", {}))
        stopping["s_star"] = trace.end.get("ratio_threshold_stage")
    d_bar = None
    claims = {}
    if trace.tracked and len(S):
        C = int(meta.get("C", 0))
        Z, Y, D, G, stray = S[:, 6], S[:, 7], S[:, 8], S[:, 9], S[:, 11]
        checks.expect("area_counts", (ua <= Z) & (ub <= G + Y) & (G <= ubs), s,
                      lambda i: f"U_a={ua[i]} Z={Z[i]} U_b={ub[i]} Y={Y[i]} G={G[i]} "
                                f"U_b*={ubs[i]}")
        # U <= wC + G + 2Z/(1-tau) and Y <= Z/(1-tau) + 2wC, cleared of denominators
        checks.expect("eq4_chain", u * (td - tn) <= (w * C + G) * (td - tn) + 2 * Z * td, s,
                      lambda i: f"U={u[i]} C={C} G={G[i]} Z={Z[i]}")
        checks.expect("y_bound", Y * (td - tn) <= Z * td + 2 * w * C * (td - tn), s,
                      lambda i: f"Y={Y[i]} Z={Z[i]} C={C}")
        if tau + rho_star < 1:
            checks.expect("alpha_in_area", stray == 0, s,
                          lambda i: f"{stray[i]} unhappy alpha outside the area")
        checks.expect("d_monotone", np.diff(D) >= 0, s1, lambda i: f"D fell {D[i]} -> {D[i + 1]}")
        ga = generally_anomalous(trace)
        d_bar = {"final": int(ga.counts[-1]), "max": int(ga.counts.max()),
                 "lower_bound_only": ga.lower_bound_only}
        t_g = stopping.get("t_g")
        if t_g is not None:
            at = np.flatnonzero(s == t_g)
            if at.size:
                i = at[0]
                bound = n * tau * rho_star / w
                claims["unhappy_at_t_g"] = {"U": int(u[i]), "bound": float(bound),
                                            "holds": bool(u[i] < bound)}
    violations = sorted(checks.first.values(), key=lambda v: (v["s"], v["check"]))
    return {
        "stages": int(s[-1]) if len(s) else 0,
        "samples": int(len(S)),
        "swaps": int(len(trace.swaps)),
        "checks": {k: checks.counts[k] for k in sorted(checks.counts)},
        "violations": violations,
        "first_violation": violations[0] if violations else None,
        "all_clear": not violations,
        "stopping": stopping,
        "outcome": trace.end.get("outcome") if trace.end else None,
        "d_bar": d_bar,
        "claims": claims,
    }


def _check_immunity(trace: Trace, n, w, tau, rho, checks: _Checks) -> None:
    initial = trace.metadata.get("initial")
    checks.add("stable_interval_immunity")
    if not initial or not len(trace.swaps):
        return
    state = build_state(ProcessParams(n, w, tau, rho), initial)
    # a gamma-node inside a gamma-stable interval stays happy forever
    hit = np.zeros(len(trace.swaps), bool)
    for col, gamma in ((0, ALPHA), (1, BETA)):
        protected = np.zeros(n, bool)
        for iv in stable_intervals(state, gamma):
            protected[iv.sites(n)] = True
        protected &= state.types == gamma
        hit |= protected[trace.swaps[:, col]]
    sw = trace.swaps
    checks.expect("stable_interval_immunity", ~hit, np.arange(1, len(sw) + 1),
                  lambda k: f"swap ({sw[k, 0]}, {sw[k, 1]}) moves a node out of its "
                            "stable interval")


__all__ = [
    "SWEEP_HEADER", "SweepCell", "SweepConfig", "TraceError", "analyze_trace", "derive_seed",
    "gsurface", "gsurface_csv", "load_json", "output_dir", "predicted_regime",
    "run_config_from_dict", "sweep", "sweep_csv", "worker_count",
]
