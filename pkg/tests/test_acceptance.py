"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

The long criteria (8, 10, 12) run the stated desk-scale settings and take
minutes.  Results are also collected and echoed in the terminal summary.
"""

from __future__ import annotations

import math
from fractions import Fraction
from functools import lru_cache

import numpy as np
import pytest

from schelling1d import (
    ALPHA,
    BETA,
    IllegalSwap,
    Outcome,
    ProcessParams,
    RunConfig,
    Runner,
    StateClass,
    classify_state,
    run,
    sample_initial,
    stable_intervals,
)
from schelling1d.analysis import (
    binomial_tail_exact,
    g_func,
    log_binomial_tail,
    solve_thresholds,
)
from schelling1d.harness import derive_seed
from schelling1d.infected import detect_incubators
from schelling1d.planner import PlanInfeasible, plan_to_terminal, replay
from schelling1d.ring import brute_same_counts

RESULTS: dict[int, str] = {}


def verdict(num: int, ok: bool, detail: str) -> None:
    line = f"criterion {num:2d}: {'PASS' if ok else 'FAIL'} - {detail}"
    RESULTS[num] = line
    print(line)
    assert ok, line


def chain_ok(mix, kb, u, w, tau) -> np.ndarray:
    """MIX <= w(w+1)k_b <= w(w+1)U < 2w MIX/(1-tau), exactly."""
    ww = w * (w + 1)
    tn, td = tau.numerator, tau.denominator
    return (mix <= ww * kb) & (kb <= u) & (ww * u * (td - tn) < 2 * w * mix * td)


# -- shared runs ---------------------------------------------------------------------------


@lru_cache(maxsize=None)
def high_tau_small_runs():
    """Criterion 3 setting: n=2000, w=20, tau=0.6, rho=0.3, 10 seeds, every stage."""
    p = ProcessParams(2000, 20, "3/5", "3/10")
    return p, [run(RunConfig(p, seed=s, record_every=1)) for s in range(10)]


@lru_cache(maxsize=None)
def phase_runs(tau: str):
    p = ProcessParams(50000, 50, tau, "1/5")
    out = []
    for rep in range(20):
        cfg = RunConfig(p, seed=derive_seed(2024, 0 if tau == "11/20" else 1, rep),
                        max_stages=2 * 10**6, record_every=10**6, record_swaps=False)
        out.append(run(cfg)[0])
    return p, out


@lru_cache(maxsize=None)
def infected_runs():
    """Criterion 10 setting, each run stopped at t_g."""
    p = ProcessParams(200000, 50, "3/5", "3/10")
    out = []
    for seed in range(5):
        cfg = RunConfig(p, seed=seed, track_infected=True, stop_at="t_g", record_swaps=False,
                        max_stages=p.n)
        out.append(run(cfg))
    return p, out


# -- criteria ---------------------------------------------------------------------------------


def test_criterion_01_exact_identities():
    rng = np.random.default_rng(1)
    settings = [("9/20", "3/10", False), ("3/5", "3/10", True), ("3/5", "1/5", False),
                ("2/5", "2/5", False)]
    checked, problems = 0, []
    for k, (tau, rho, tracked) in enumerate(settings):
        p = ProcessParams(2000, 10, tau, rho)
        cfg = RunConfig(p, seed=100 + k, record_every=1, track_infected=tracked,
                        max_stages=20000)
        probe = Runner(cfg)
        probe.run()
        total = probe.stage
        marks = np.unique(rng.integers(0, max(total, 1) + 1, 50))
        r = Runner(cfg)
        for m in marks:
            r.advance(int(m) - r.stage)
            st = r.state
            same = brute_same_counts(st.types, p.w)
            V = int(same.sum())
            mix = int(sum(p.width - same[u] for u in range(p.n) if st.types[u] == ALPHA))
            met = st.metrics
            if (V + 2 * mix != p.width * p.n or met.social_welfare != V
                    or met.mixing_index != mix or st.audit()):
                problems.append((tau, int(m)))
            if tracked and r.tracker.audit(st):
                problems.append((tau, int(m), "tracker"))
            checked += 1
        r.run()
        tr = r.trace()
        V_rec = np.array([tr.sample_record(row)["V"] for row in tr.samples])
        if not (V_rec + 2 * tr.column("MIX") == p.width * p.n).all():
            problems.append((tau, "samples"))
    verdict(1, not problems,
            f"{checked} checkpoints over {len(settings)} runs, mismatches={problems[:3]}")


def test_criterion_02_mix_drop_low_tau():
    p = ProcessParams(2000, 20, "9/20", "3/10")
    swaps, worst = 0, None
    bad = 0
    for seed in range(10):
        _, tr = run(RunConfig(p, seed=seed, record_every=1))
        d = np.diff(tr.column("MIX"))
        swaps += d.size
        bad += int(np.count_nonzero(d > -4))
        if d.size:
            worst = max(worst, int(d.max())) if worst is not None else int(d.max())
    verdict(2, bad == 0, f"{swaps} swaps over 10 seeds, largest dMIX={worst}, violations={bad}")


def test_criterion_03_mix_chain_high_tau():
    p, runs = high_tau_small_runs()
    assert p.w * (2 * p.tau - 1) > 1 - p.tau
    stages, bad = 0, 0
    for _, tr in runs:
        S = tr.samples
        ok = chain_ok(S[:, 1], S[:, 5], S[:, 2] + S[:, 3], p.w, p.tau)
        stages += len(S)
        bad += int(np.count_nonzero(~ok))
    verdict(3, bad == 0, f"{stages} recorded stages over 10 seeds, violations={bad}")


def test_criterion_04_dormant_bound():
    cases = []
    p3, runs3 = high_tau_small_runs()
    cases += [(p3, s) for s, _ in runs3]
    p8, runs8 = phase_runs("11/20")
    cases += [(p8, s) for s in runs8]
    extra = ProcessParams(5000, 20, "11/20", "1/5")
    cases += [(extra, run(RunConfig(extra, seed=s, record_every=10**6, record_swaps=False,
                                    max_stages=10**6))[0]) for s in range(10)]
    occurrences, bad = 0, []
    for p, s in cases:
        if s.outcome != Outcome.DORMANT:
            continue
        if not (p.tau > Fraction(1, 2) and s.rho_star < p.tau and p.w * (2 * p.tau - 1) > 1):
            continue
        occurrences += 1
        m = s.final_metrics
        cap = 2 * math.ceil((1 - p.tau) * p.w)
        if not (m.mixing_index > p.n * (p.w + 1) * p.tau * s.rho_star
                and m.longest_beta_block <= cap):
            bad.append((p.n, p.w, m.mixing_index, m.longest_beta_block))
    verdict(4, not bad, f"{occurrences} dormant terminations checked, violations={bad[:3]}")


def test_criterion_05_threshold_constants():
    th = solve_thresholds(1e-8)
    ok = abs(th.kappa0 - 0.35309) <= 1e-5 and abs(th.lambda0 - 0.41149) <= 1e-5
    verdict(5, ok, f"kappa0={th.kappa0:.7f} lambda0={th.lambda0:.7f}")


def test_criterion_06_g_anchors():
    th = solve_thresholds(1e-12)
    a = g_func(th.kappa0, 0.5)
    b = g_func(th.lambda0, th.lambda0)
    limits = [abs(g_func(0.499, r) - (0.25 - r)) for r in (0.05, 0.2, 0.35, 0.5)]
    ok = abs(a) <= 1e-6 and abs(b) <= 1e-6 and max(limits) <= 5e-3
    verdict(6, ok, f"g(k0,.5)={a:.2e} g(l0,l0)={b:.2e} max|g(.499,r)-(.25-r)|={max(limits):.2e}")


def test_criterion_07_binomial_oracle():
    worst, count = 0.0, 0
    bad = []
    for t in range(31):
        for num in range(1, 6):
            p = Fraction(num, 10)
            for k in range(t + 2):
                exact = binomial_tail_exact(t, p, k)
                got = log_binomial_tail(t, p, k)
                count += 1
                if exact == 0:
                    if got != -math.inf:
                        bad.append((t, p, k))
                    continue
                rel = abs(math.exp(got) - float(exact)) / float(exact)
                worst = max(worst, rel)
                if rel > 1e-9:
                    bad.append((t, p, k))
    verdict(7, not bad, f"{count} (t, p, k) triples, worst relative error {worst:.2e}")


def test_criterion_08_phase_transition():
    p_hi, hi = phase_runs("11/20")
    p_lo, lo = phase_runs("9/20")
    n, rho = p_hi.n, p_hi.rho
    cs = [s for s in hi if s.outcome == Outcome.COMPLETE_SEGREGATION]
    cs_frac = len(cs) / len(hi)
    cs_long = all(s.swap_count > n * rho / 5 for s in cs)
    hi_outcomes = {o.value: sum(s.outcome == o for s in hi) for o in Outcome}
    dormant = all(s.outcome == Outcome.DORMANT for s in lo)
    changed = float(np.mean([s.distinct_swapped_nodes / n for s in lo]))
    few_swaps = all(s.swap_count <= 0.05 * n for s in lo)
    ok = cs_frac >= 0.9 and cs_long and dormant and changed <= 0.05 and few_swaps
    verdict(8, ok, f"tau=0.55: {cs_frac:.0%} CompleteSegregation {hi_outcomes}, "
                   f"max swaps {max(s.swap_count for s in hi)}; tau=0.45: all Dormant={dormant}, "
                   f"mean changed={changed:.4f}, max swaps {max(s.swap_count for s in lo)}")


def test_criterion_09_initial_expectations():
    n, rho = 100000, Fraction(3, 10)
    p = ProcessParams(n, 20, "3/5", rho)
    mixes = np.array([sample_initial(p, seed=s).stats[0] for s in range(200)], dtype=float)
    expect = float(2 * n * 20 * rho * (1 - rho))
    se = mixes.std(ddof=1) / math.sqrt(len(mixes))
    mix_ok = abs(mixes.mean() - expect) <= 3 * se
    fracs, incs = {}, {}
    for w in (10, 20, 40):
        pw = ProcessParams(n, w, "3/5", rho)
        ua = alpha = inc = 0
        for s in range(20):
            st = sample_initial(pw, seed=1000 + s)
            ua += int(st.ucount[ALPHA])
            alpha += n - st.n_beta()
            inc += detect_incubators(st).C
        fracs[w] = ua / alpha
        incs[w] = inc / (20 * n)
    logs = [math.log(fracs[w]) for w in (10, 20, 40)]
    ratios = [logs[1] / logs[0], logs[2] / logs[1]]
    mono = fracs[10] > fracs[20] > fracs[40]
    inc_mono = incs[10] > incs[20] > incs[40]
    ok = mix_ok and mono and all(r >= 1.5 for r in ratios) and inc_mono
    verdict(9, ok, f"mean MIX {mixes.mean():.0f} vs {expect:.0f} (3se={3 * se:.0f}); "
                   f"unhappy-alpha fractions {[round(fracs[w], 5) for w in (10, 20, 40)]}, "
                   f"ln ratios {[round(r, 3) for r in ratios]} (need >= 1.5); "
                   f"incubator fractions {[round(incs[w], 4) for w in (10, 20, 40)]}")


def test_criterion_10_infected_area():
    p, runs = infected_runs()
    n, w, tau = p.n, p.w, p.tau
    tn, td = tau.numerator, tau.denominator
    bounds_bad = z_bad = bogus_bad = 0
    t_match = 0
    notes = []
    for summary, tr in runs:
        S = tr.samples
        C = tr.metadata["C"]
        t_g = summary.stopping.t_g
        t_y = summary.stopping.t_y
        before = S[:, 0] < t_g if t_g is not None else np.ones(len(S), bool)
        s_, ua, ub, Z, Y, G = S[:, 0], S[:, 2], S[:, 3], S[:, 6], S[:, 7], S[:, 9]
        u = ua + ub
        ok = ((Y * (td - tn) <= Z * td + 2 * w * C * (td - tn))
              & (u * (td - tn) <= (w * C + G) * (td - tn) + 2 * Z * td))
        bounds_bad += int(np.count_nonzero(~ok[before]))
        low_g = np.flatnonzero(G < 0.05 * n)
        until = low_g[0] if low_g.size else len(S)
        z_bad += int(np.count_nonzero(Z[:until] >= 0.05 * n))
        stages = summary.stages_executed
        freq = S[-1, 10] / stages if stages else 0.0
        pos = G > 0
        max_ratio = float((Y[pos] / G[pos]).max()) if pos.any() else math.inf
        bogus_bad += int(freq > max_ratio + 0.02)
        if t_g is not None and t_y == t_g and t_g < n:
            t_match += 1
        notes.append(f"t_g={t_g} t_y={t_y} C={C} Z0={Z[0]} G0={G[0]} bogus={freq:.3f} "
                     f"maxY/G={max_ratio:.2f}")
    ok = bounds_bad == 0 and z_bad == 0 and bogus_bad == 0 and t_match >= 4
    verdict(10, ok, f"bound violations={bounds_bad}, Z>=0.05n before G<0.05n at {z_bad} samples, "
                    f"bogus excess runs={bogus_bad}, t_y=t_g<n in {t_match}/5; "
                    + "; ".join(notes))


def test_criterion_11_planner():
    p = ProcessParams(500, 8, "3/5", "3/10")
    seed, states = 0, []
    while len(states) < 100:
        st = sample_initial(p, seed=seed)
        seed += 1
        if classify_state(st) == StateClass.LIVE:
            states.append(st)
    terminal = infeasible = illegal = 0
    for st in states:
        try:
            plan = plan_to_terminal(st)
        except PlanInfeasible:
            infeasible += 1
            continue
        try:
            final = replay(st, plan)
        except IllegalSwap:
            illegal += 1
            continue
        if classify_state(final) in (StateClass.COMPLETE_SEGREGATION, StateClass.DORMANT):
            terminal += 1
    ok = terminal >= 95 and illegal == 0 and terminal + infeasible == 100
    verdict(11, ok, f"terminal={terminal} infeasible={infeasible} illegal={illegal}")


def test_criterion_12_zstar_drift():
    p = ProcessParams(200000, 50, "3/5", "3/10")
    increments, t_ys, floor_hits = [], [], 0
    for seed in range(50):
        cfg = RunConfig(p, seed=seed, track_infected=True, stop_at="t_y", record_every=1,
                        record_swaps=False, max_stages=p.n)
        summary, tr = run(cfg)
        S = tr.samples
        C = tr.metadata["C"]
        zstar = np.maximum(S[:, 6] - S[:, 8], 11 * p.w ** 2 * C)
        floor_hits += int(np.count_nonzero(zstar == 11 * p.w ** 2 * C))
        t_y = summary.stopping.t_y
        t_ys.append(t_y)
        keep = S[:, 0] < (t_y if t_y is not None else S[-1, 0] + 1)
        increments.extend(np.diff(zstar[: int(np.count_nonzero(keep)) + 1]).tolist())
    inc = np.array(increments, dtype=float)
    if inc.size == 0:
        verdict(12, True, f"vacuous: no stage precedes t_y in any of 50 runs "
                          f"(t_y values {sorted(set(t_ys))}); Z* sat on its floor 11w^2C "
                          f"at {floor_hits} of the recorded stages")
        return
    se = inc.std(ddof=1) / math.sqrt(inc.size) if inc.size > 1 else 0.0
    verdict(12, inc.mean() <= 3 * se,
            f"{inc.size} increments before t_y, mean={inc.mean():.3g}, 3se={3 * se:.3g}")


def test_criterion_13_stable_interval_immunity():
    p = ProcessParams(10000, 20, "2/5", "1/5")
    moved, protected_total, swaps = 0, 0, 0
    for seed in range(10):
        r = Runner(RunConfig(p, seed=seed, record_every=10**6))
        init = r.initial.copy()
        r.run()
        tr = r.trace()
        prot = np.zeros(p.n, bool)
        for iv in stable_intervals(init, ALPHA):
            prot[iv.sites(p.n)] = True
        protected_total += int(prot.sum())
        swaps += len(tr.swaps)
        touched = np.zeros(p.n, bool)
        touched[tr.swaps[:, :2].ravel()] = True
        moved += int(np.count_nonzero(prot & (touched | (init.types != r.state.types))))
    verdict(13, moved == 0, f"{protected_total} protected sites over 10 seeds, {swaps} swaps, "
                            f"changed protected sites={moved}")
