import numpy as np
import pytest

from schelling1d import ProcessParams, StateClass, build_state, classify_state, sample_initial
from schelling1d.planner import (
    PlanInfeasible,
    PlannerConfig,
    _longest_block,
    plan_extend_block,
    plan_finish,
    plan_greedy,
    plan_seed_block,
    plan_shortage,
    plan_to_terminal,
    replay,
)

from conftest import make


def short_runs_state(seed, n=1500, w=4, tau="3/5"):
    """Alternating runs of length 1-3, so no block of length w exists."""
    rng = np.random.default_rng(seed)
    parts, t, total = [], 0, 0
    while total < n:
        k = int(rng.integers(1, 4))
        parts.append("ab"[t] * k)
        total += k
        t ^= 1
    labels = "".join(parts)[:n]
    if labels[0] == labels[-1]:
        labels = labels[:-1] + "ab"[labels[0] == "a"]
    return build_state(ProcessParams(n, w, tau, "1/2"), labels)


def check_replay(state, plan):
    final = replay(state, plan)  # raises on an illegal swap
    assert classify_state(final) == plan.claimed_terminal
    return final


class TestTrivial:
    def test_dormant_input(self):
        s = make("aaaaaaabaaaaaaab" "aaaa", 2, tau="3/5")
        plan = plan_to_terminal(s)
        assert plan.swaps == [] and plan.claimed_terminal == StateClass.DORMANT

    def test_segregated_input(self):
        plan = plan_to_terminal(make("a" * 12 + "b" * 9, 3, tau="3/5"))
        assert plan.swaps == [] and plan.claimed_terminal == StateClass.COMPLETE_SEGREGATION

    def test_plan_json_shape(self):
        s = sample_initial(ProcessParams(300, 4, "3/5", "3/10"), seed=1)
        d = plan_to_terminal(s).as_dict()
        assert set(d) == {"route", "swaps", "claimed_terminal"}


class TestLowTau:
    @pytest.mark.parametrize("seed", range(5))
    def test_greedy_lowers_mix(self, seed):
        s = sample_initial(ProcessParams(600, 8, "9/20", "3/10"), seed=seed)
        plan = plan_to_terminal(s)
        assert plan.route == [] or {p for p, _ in plan.route} == {"greedy"}
        work = s.copy()
        mix0 = work.metrics.mixing_index
        for u, v in plan.swaps:
            assert work.apply_swap(u, v).mix <= -4
        assert len(plan.swaps) <= mix0 // 4
        check_replay(s, plan)

    def test_greedy_fragment(self):
        s = sample_initial(ProcessParams(300, 3, "2/5", "2/5"), seed=2)
        frag = plan_greedy(s)
        assert frag.swaps and classify_state(replay(s, frag)) != StateClass.LIVE


class TestHighTau:
    @pytest.mark.parametrize("seed", range(10))
    def test_corpus(self, seed):
        s = sample_initial(ProcessParams(500, 8, "3/5", "3/10"), seed=seed)
        try:
            plan = plan_to_terminal(s)
        except PlanInfeasible:
            return
        check_replay(s, plan)

    @pytest.mark.parametrize("seed", range(6))
    def test_seed_and_extend(self, seed):
        s = short_runs_state(seed)
        w = s.w
        assert _longest_block(s, w) is None
        frag = plan_seed_block(s)
        assert 0 < len(frag.swaps) < w * w
        mid = replay(s, frag)
        assert _longest_block(mid, w) is not None
        ext = plan_extend_block(mid)
        end = replay(mid, ext)
        assert _longest_block(end, 2 * w) is not None
        plan = plan_to_terminal(s, PlannerConfig(shortage_coeff=0))
        assert plan.route[0][0] == "seed"
        check_replay(s, plan)

    def test_extend_noop_on_long_block(self):
        s = make("a" * 10 + "bab" * 10, 4, tau="3/5")
        assert plan_extend_block(s).swaps == []
        assert plan_shortage(s).swaps == []

    def test_seed_infeasible_when_crowded(self):
        s = short_runs_state(0, n=60, w=4)
        with pytest.raises(PlanInfeasible):
            plan_seed_block(s, pool_size=100)

    def test_finish_reaches_w_w_plus_one(self):
        for seed in range(5):
            s = short_runs_state(seed, n=800, w=4)
            mid = replay(s, plan_to_terminal(s, PlannerConfig(shortage_coeff=0)))
            if classify_state(mid) == StateClass.COMPLETE_SEGREGATION:
                assert mid.metrics.mixing_index == 4 * 5

    def test_finish_from_long_block(self):
        s = sample_initial(ProcessParams(400, 3, "3/5", "3/10"), seed=9)
        assert _longest_block(s, 6) is not None
        frag = plan_finish(s)
        final = replay(s, frag)
        assert classify_state(final) != StateClass.LIVE

    def test_max_swaps(self):
        s = sample_initial(ProcessParams(500, 8, "3/5", "3/10"), seed=0)
        with pytest.raises(PlanInfeasible):
            plan_to_terminal(s, PlannerConfig(max_swaps=3))
