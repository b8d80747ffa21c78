"""Policy semantics: eligibility under fuzzing, documented tie-breaks,
exploration schedule, agent purity, ablated-net gradients."""

import math

import numpy as np
import pytest

from edgesched.core import (
    GlobalState,
    JointAction,
    joint_action_space,
    offload_action_space,
    post_decision,
    post_local_indices,
    schedule_action_space,
    sojourn_rate,
)
from edgesched.policies import (
    AlwaysOffloadPolicy,
    ExploreSchedule,
    IcfmoAgent,
    IcoAgent,
    MyopicPolicy,
    QueueAwarePolicy,
    argmin_first,
    epsilon_greedy,
    ico_forward,
    ico_loss_gradients,
    ico_value_at,
    init_ico,
)
from edgesched.valuenet import (
    EpochRecord,
    encode,
    init_learner,
    init_params,
)
from edgesched.core import local_state_count

from tests.test_core import make_params, random_state


def make_icfmo(params, seed, explore=None, learn=True):
    d = local_state_count(params)
    rng = np.random.default_rng(seed)
    net = init_params(params.n_devices, d, rng)
    learner = init_learner(params.n_devices, d)
    return IcfmoAgent(params, net, learner, explore=explore, learn=learn)


def make_ico_agent(params, seed, explore=None, learn=True):
    d = local_state_count(params)
    rng = np.random.default_rng(seed)
    ico = init_ico(params.n_devices, d, rng)
    learner = init_learner(params.n_devices, d)
    return IcoAgent(params, ico, learner, explore=explore, learn=learn)


class TestExploreSchedule:
    def test_published_constants(self):
        sched = ExploreSchedule()
        assert sched.probability(0) == pytest.approx(0.5)
        assert sched.probability(2000) == pytest.approx(0.25)

    def test_vanishes(self):
        sched = ExploreSchedule()
        assert sched.probability(10**9) < 1e-5

    def test_epsilon_greedy_draw_alignment(self):
        # two generators seeded alike stay aligned whatever branch is taken
        sched = ExploreSchedule()
        a = np.random.default_rng(0)
        b = np.random.default_rng(0)
        for k in range(200):
            pa = epsilon_greedy(k, a, 0, 5, sched)
            pb = epsilon_greedy(k, b, 0, 5, sched)
            assert pa == pb
        assert a.random() == b.random()

    def test_exploration_uniform_over_joint_actions(self):
        sched = ExploreSchedule(g1=1.0, g2=1.0)  # p(0) = 1: always explore
        rng = np.random.default_rng(1)
        counts = np.zeros(6)
        for _ in range(12000):
            pick, explored = epsilon_greedy(0, rng, 0, 6, sched)
            assert explored
            counts[pick] += 1
        assert counts.min() > 1800  # each of 6 actions near 2000


class TestQueueAware:
    def test_offloads_shorter_tx_queue(self):
        p = make_params()
        s = GlobalState((2, 1), (5, 0), 1, 1)
        assert QueueAwarePolicy(p).decide(s, 0, None).action.offload == 1

    def test_tie_processes_locally(self):
        p = make_params()
        s = GlobalState((3, 1), (3, 0), 1, 1)
        assert QueueAwarePolicy(p).decide(s, 0, None).action.offload == 0

    def test_longest_queue_scheduled_lowest_tie(self):
        p = make_params(n=3)
        s = GlobalState((3, 7, 7), (0, 0, 0), 0, 2)
        assert QueueAwarePolicy(p).decide(s, 0, None).action.schedule == 2

    def test_respects_forced_offload(self):
        p = make_params()
        s = GlobalState((7, 0), (3, 0), 1, 1)  # tx full: must go local
        assert QueueAwarePolicy(p).decide(s, 0, None).action.offload == 0


class TestMyopic:
    def test_prefers_fast_local_cpu_on_empty_system(self):
        p = make_params(n=2, lam=1.0, mu=2.0, mu_loc=50.0, p_tx=0.2, p_loc=0.2)
        s = GlobalState((0, 0), (0, 0), 1, 0)
        assert MyopicPolicy(p).decide(s, 0, None).action.offload == 0

    def test_prefers_fast_uplink_when_local_slow(self):
        p = make_params(n=2, lam=1.0, mu=50.0, mu_loc=0.5, p_tx=0.0001, p_loc=0.9)
        s = GlobalState((0, 0), (0, 0), 1, 0)
        assert MyopicPolicy(p).decide(s, 0, None).action.offload == 1

    def test_tie_breaks_to_first_candidate(self):
        # symmetric rates and powers make offload/local identical estimates
        p = make_params(n=1, lam=1.0, mu=2.0, mu_loc=2.0, p_tx=0.5, p_loc=0.5)
        s = GlobalState((0,), (0,), 1, 0)
        decision = MyopicPolicy(p).decide(s, 0, None)
        scores = dict((a, v) for a, v in decision.candidate_scores)
        assert len(set(scores.values())) < len(scores)
        assert decision.action == JointAction(0, 0)

    def test_never_drops_unless_forced(self):
        p = make_params(n=2, m_tx=1, m_proc=1)
        rng = np.random.default_rng(2)
        saw_forced_drop = False
        for _ in range(2000):
            s = random_state(rng, p)
            a = MyopicPolicy(p).decide(s, 0, None).action
            if a.offload == -1:
                assert offload_action_space(s, p) == (-1,)
                saw_forced_drop = True
        assert saw_forced_drop


class TestEligibilityFuzz:
    @pytest.mark.parametrize("make", [
        lambda p: QueueAwarePolicy(p),
        lambda p: MyopicPolicy(p),
        lambda p: AlwaysOffloadPolicy(p),
        lambda p: make_icfmo(p, 3),
        lambda p: make_ico_agent(p, 4),
    ])
    def test_actions_always_eligible(self, make):
        p = make_params(n=3, m_tx=2, m_proc=2)
        policy = make(p)
        rng = np.random.default_rng(5)
        for _ in range(500):
            s = random_state(rng, p)
            a = policy.decide(s, 0, rng).action
            assert a.offload in offload_action_space(s, p)
            assert a.schedule in schedule_action_space(s, a.offload, p)


class TestIcfmoDecide:
    def test_candidate_count_bound(self):
        p = make_params(n=3)
        agent = make_icfmo(p, 6)
        rng = np.random.default_rng(6)
        for _ in range(300):
            s = random_state(rng, p)
            d = agent.decide(s, 0, rng)
            agent._pending = None
            assert 1 <= len(d.candidate_scores) <= 3 * (p.n_devices + 1)

    def test_zero_net_reduces_to_reward_comparison(self):
        from edgesched.core import local_reward
        p = make_params(n=2, lam=1.0, mu=4.0, mu_loc=1.0, p_tx=0.1, p_loc=0.9)
        agent = make_icfmo(p, 7)
        agent.net.node_values[:] = 0.0
        s = GlobalState((0, 0), (0, 0), 1, 0)
        d = agent.decide(s, 0, np.random.default_rng(0))
        for action, score in d.candidate_scores:
            post = post_decision(s, action, p)
            beta = sojourn_rate(post, p)
            expected = sum(local_reward(post, n, p, beta) for n in (1, 2))
            assert score == pytest.approx(expected, rel=1e-12)
        best = min(s_ for _, s_ in d.candidate_scores)
        assert dict(d.candidate_scores)[d.action] == best

    def test_decide_is_pure(self):
        p = make_params(n=2)
        agent = make_icfmo(p, 8)
        rng = np.random.default_rng(3)
        s = random_state(rng, p)
        d1 = agent.decide(s, 5, np.random.default_rng(1))
        agent._pending = None
        d2 = agent.decide(s, 5, np.random.default_rng(1))
        agent._pending = None
        assert d1.action == d2.action
        for (a1, s1), (a2, s2) in zip(d1.candidate_scores, d2.candidate_scores):
            assert a1 == a2 and s1 == s2

    def test_identical_idle_devices_symmetric_scores(self):
        p = make_params(n=2, lam=1.0, mu=3.0, mu_loc=1.0)
        agent = make_icfmo(p, 9)
        # symmetric parameters across the two devices
        agent.net.node_values[1] = agent.net.node_values[0]
        agent.net.f_weights[1] = agent.net.f_weights[0]
        agent.net.f_weights[:, :, 1] = agent.net.f_weights[:, :, 0]
        s1 = GlobalState((1, 0), (0, 0), 0, 1)
        s2 = GlobalState((0, 1), (0, 0), 0, 2)
        d1 = agent.decide(s1, 0, np.random.default_rng(0))
        agent._pending = None
        d2 = agent.decide(s2, 0, np.random.default_rng(0))
        agent._pending = None
        assert min(s for _, s in d1.candidate_scores) == pytest.approx(
            min(s for _, s in d2.candidate_scores), rel=1e-12)


class TestIcoNet:
    def test_zero_weights_zero_value(self):
        ico = init_ico(2, 8, np.random.default_rng(0))
        ico.c_weights[:] = 0.0
        assert ico_forward(encode([1, 5], 2, 8), ico) == 0.0

    def test_parameter_count(self):
        p = make_params(n=3)
        d = local_state_count(p)
        ico = init_ico(3, d, np.random.default_rng(0))
        full = d + 3 * (3 * d) + 3 * d
        assert ico.parameter_count == d + 3
        assert ico.parameter_count < full

    def test_value_at_matches_forward(self):
        rng = np.random.default_rng(1)
        ico = init_ico(3, 16, rng)
        ico.out_weights[:] = rng.normal(size=3)
        for _ in range(50):
            idx = list(rng.integers(0, 16, size=3))
            assert ico_value_at(idx, ico) == pytest.approx(
                ico_forward(encode(idx, 3, 16), ico), abs=1e-12)

    def test_gradient_check(self):
        rng = np.random.default_rng(2)
        n, d = 2, 32
        ico = init_ico(n, d, rng)
        ico.out_weights[:] = rng.normal(size=n)
        theta = rng.normal(scale=0.1, size=n)
        for _ in range(20):
            prev_idx = list(rng.integers(0, d, size=n))
            new_idx = list(rng.integers(0, d, size=n))
            prev = EpochRecord(prev_idx, ico.c_weights[np.asarray(prev_idx)],
                               np.tanh(ico.c_weights[np.asarray(prev_idx)]),
                               rng.random(n), 2.0 + rng.random())
            new = EpochRecord(new_idx, ico.c_weights[np.asarray(new_idx)],
                              np.tanh(ico.c_weights[np.asarray(new_idx)]),
                              rng.random(n), 2.0 + rng.random())
            out_g, wc_g = ico_loss_gradients(prev, new, ico, theta)
            target = sum(new.rewards[i] + ico.eta * new.phibar[i] * ico.out_weights[i]
                         - theta[i] / new.beta for i in range(n))
            h = 1e-6

            def loss():
                value = sum(ico.out_weights[i] * math.tanh(ico.c_weights[prev_idx[i]])
                            for i in range(n))
                return 0.5 * (target - value) ** 2

            for i in range(n):
                base = ico.out_weights[i]
                ico.out_weights[i] = base + h
                up = loss()
                ico.out_weights[i] = base - h
                down = loss()
                ico.out_weights[i] = base
                fd = (up - down) / (2 * h)
                assert abs(fd - out_g[i]) <= 1e-5 * max(abs(fd), abs(out_g[i])) + 1e-9
            for j in set(prev_idx):
                base = ico.c_weights[j]
                ico.c_weights[j] = base + h
                up = loss()
                ico.c_weights[j] = base - h
                down = loss()
                ico.c_weights[j] = base
                fd = (up - down) / (2 * h)
                assert abs(fd - wc_g[j]) <= 1e-5 * max(abs(fd), abs(wc_g[j])) + 1e-9


class TestAgentsInSimulation:
    def test_icfmo_learns_and_stays_reproducible(self):
        from edgesched.engine import Simulation
        p = make_params(n=2, lam=1.0, mu=3.0, mu_loc=1.0, m_tx=2, m_proc=2)

        def run_once():
            agent = make_icfmo(p, 11, explore=ExploreSchedule())
            sim = Simulation(p, agent, seed=42)
            sim.run(3000)
            return agent

        a = run_once()
        b = run_once()
        assert np.array_equal(a.net.node_values, b.net.node_values)
        assert np.array_equal(a.net.c_weights, b.net.c_weights)
        assert np.array_equal(a.net.f_weights, b.net.f_weights)
        assert np.array_equal(a.learner.theta, b.learner.theta)
        assert a.learner.epoch == b.learner.epoch > 0
        assert np.any(a.net.node_values != 0.0)

    def test_ico_learns_and_stays_reproducible(self):
        from edgesched.engine import Simulation
        p = make_params(n=2, lam=1.0, mu=3.0, mu_loc=1.0, m_tx=2, m_proc=2)

        def run_once():
            agent = make_ico_agent(p, 12, explore=ExploreSchedule())
            sim = Simulation(p, agent, seed=43)
            sim.run(3000)
            return agent

        a = run_once()
        b = run_once()
        assert np.array_equal(a.ico.c_weights, b.ico.c_weights)
        assert np.array_equal(a.ico.out_weights, b.ico.out_weights)
        assert np.any(a.ico.out_weights != 0.0)

    def test_frozen_copy_stops_learning(self):
        from edgesched.engine import Simulation
        p = make_params(n=2, lam=1.0, mu=3.0, mu_loc=1.0, m_tx=2, m_proc=2)
        agent = make_icfmo(p, 13, explore=ExploreSchedule())
        Simulation(p, agent, seed=44).run(2000)
        frozen = agent.frozen_copy()
        before = frozen.net.node_values.copy()
        theta_before = frozen.learner.theta.copy()
        Simulation(p, frozen, seed=45).run(2000)
        assert np.array_equal(frozen.net.node_values, before)
        assert np.array_equal(frozen.learner.theta, theta_before)


def test_argmin_first_keeps_first_minimum():
    assert argmin_first([3.0, 1.0, 1.0, 2.0]) == 1
    assert argmin_first([0.5]) == 0
