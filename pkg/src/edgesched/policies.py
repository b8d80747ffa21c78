"""Decision makers: learned agents and deterministic baselines.

All policies enumerate the eligible joint actions in the canonical order of
``core.joint_action_space`` and break score ties by keeping the first
minimum, so runs are reproducible and a distributed evaluation of the same
scores lands on the same action.

Score-based policies decompose every candidate's score into per-device
terms (reward share + feature-weighted value - average-reward credit) and
sum them in device order; the same kernels back the auction protocol, which
is what makes the centralized and message-passing runs bit-identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import (
    GlobalState,
    JointAction,
    apply_offload,
    joint_action_space,
    local_reward_parts,
    offload_action_space,
    ordered_sum,
    post_decision,
    post_local_indices,
    schedule_action_space,
    sojourn_rate,
)
from .valuenet import (
    EpochRecord,
    LearnerState,
    NetParams,
    active_features,
    local_bid,
    record_visit,
    td_update,
)


@dataclass
class PolicyDecision:
    action: JointAction
    candidate_scores: tuple = ()
    explored: bool = False


@dataclass(frozen=True)
class ExploreSchedule:
    """Exploration probability p(k) = g1 / (g2 + k)."""

    g1: float = 1000.0
    g2: float = 2000.0

    def probability(self, epoch: int) -> float:
        return self.g1 / (self.g2 + epoch)


def argmin_first(scores) -> int:
    best, best_i = None, 0
    for i, s in enumerate(scores):
        if best is None or s < best:
            best, best_i = s, i
    return best_i


def epsilon_greedy(epoch: int, rng, greedy_index: int, n_candidates: int,
                   schedule: ExploreSchedule):
    """Index of the action to take: greedy, or uniform over all eligible
    joint actions with probability p(epoch).  Consumes one uniform draw
    always and a second only when exploring, keeping generator streams
    aligned across runs that agree on every draw."""
    if rng.random() < schedule.probability(epoch):
        return int(rng.integers(n_candidates)), True
    return greedy_index, False


# ---------------------------------------------------------------------------
# learned controller


class IcfmoAgent:
    """Greedy (optionally exploring) controller over the masked value net,
    updating online from consecutive post-decision states."""

    def __init__(self, params, net: NetParams, learner: LearnerState,
                 explore: Optional[ExploreSchedule] = None, learn: bool = True):
        self.params = params
        self.net = net
        self.learner = learner
        self.explore = explore
        self.learn = learn
        self._prev: Optional[EpochRecord] = None
        self._pending: Optional[EpochRecord] = None

    def evaluate(self, state: GlobalState, action: JointAction):
        """Score one candidate action; returns (record, score)."""
        p = self.params
        post = post_decision(state, action, p)
        beta = sojourn_rate(post, p)
        indices = post_local_indices(post, state.sched_prev, p)
        conv, phibar = active_features(indices, self.net)
        n = p.n_devices
        rewards = np.empty(n)
        bids = []
        values = self.net.node_values
        theta = self.learner.theta
        for i in range(n):
            g = local_reward_parts(post.tx[i], post.proc[i], post.sched == i + 1,
                                   beta, i + 1, p)
            rewards[i] = g
            bids.append(local_bid(g, phibar[i], values[i, indices[i]],
                                  theta[i], beta))
        score = ordered_sum(bids)
        return EpochRecord(indices, conv, phibar, rewards, beta), score

    def decide(self, state: GlobalState, epoch: int, rng) -> PolicyDecision:
        candidates = joint_action_space(state, self.params)
        evals = [self.evaluate(state, a) for a in candidates]
        scores = [s for _, s in evals]
        pick = argmin_first(scores)
        explored = False
        if self.explore is not None:
            pick, explored = epsilon_greedy(epoch, rng, pick, len(candidates),
                                            self.explore)
        self._pending = evals[pick][0]
        return PolicyDecision(candidates[pick],
                              tuple(zip(candidates, scores)), explored)

    def observe(self, post, tau_prev: float) -> None:
        record = self._pending
        self._pending = None
        if self.learn and self._prev is not None:
            td_update(self._prev, record, tau_prev, self.net, self.learner)
        record_visit(self.learner, record.indices)
        self._prev = record

    def frozen_copy(self) -> "IcfmoAgent":
        """Greedy evaluator sharing the trained parameters, no exploration,
        no further updates."""
        return IcfmoAgent(self.params, self.net, self.learner,
                          explore=None, learn=False)

    # -- checkpoint support --------------------------------------------------

    def snapshot(self) -> dict:
        return {
            "kind": "icfmo",
            "net": _net_state(self.net),
            "learner": _learner_state(self.learner),
            "prev": _record_state(self._prev),
        }

    def restore(self, snap: dict) -> None:
        _restore_net(self.net, snap["net"])
        _restore_learner(self.learner, snap["learner"])
        self._prev = _record_from_state(snap["prev"])
        self._pending = None


# ---------------------------------------------------------------------------
# ablated controller: input -> conv -> output only


@dataclass
class IcoParams:
    n: int
    d: int
    c_weights: np.ndarray            # (D,) shared filter
    out_weights: np.ndarray          # (N,) per-device output weight
    eta: float = 0.99

    def copy(self) -> "IcoParams":
        return IcoParams(self.n, self.d, self.c_weights.copy(),
                         self.out_weights.copy(), self.eta)

    @property
    def parameter_count(self) -> int:
        return self.d + self.n


def init_ico(n: int, d: int, rng, eta: float = 0.99) -> IcoParams:
    return IcoParams(n, d, rng.uniform(-0.1, 0.1, d), np.zeros(n), eta)


def ico_forward(x: np.ndarray, ico: IcoParams) -> float:
    """Reference forward for the two-weight-layer net: V = <v, tanh(x wc)>."""
    conv = x @ ico.c_weights
    value = float(ico.out_weights @ np.tanh(conv))
    if not np.isfinite(value):
        raise FloatingPointError("non-finite network output")
    return value


def ico_value_at(indices, ico: IcoParams) -> float:
    return ordered_sum(ico.out_weights[i] * math.tanh(ico.c_weights[j])
                       for i, j in enumerate(indices))


def ico_loss_gradients(prev: EpochRecord, new: EpochRecord, ico: IcoParams,
                       theta: np.ndarray):
    """Analytic semi-gradients of the frozen-target TD loss for the ablated
    net (out[i] pairs with device i, cweight is dense)."""
    n = ico.n
    dv = _ico_td_error(prev, new, ico, theta)
    out = np.array([-dv * prev.phibar[i] for i in range(n)])
    cweight = np.zeros(ico.d)
    for i in range(n):
        cweight[prev.indices[i]] -= dv * ico.out_weights[i] \
            * (1.0 - prev.phibar[i] * prev.phibar[i])
    return out, cweight


def _ico_td_error(prev, new, ico, theta) -> float:
    terms = [
        new.rewards[i]
        + ico.eta * new.phibar[i] * ico.out_weights[i]
        - prev.phibar[i] * ico.out_weights[i]
        - theta[i] / new.beta
        for i in range(ico.n)
    ]
    return ordered_sum(terms)


class IcoAgent:
    """Same decision rule and average-reward tracking as the full agent but
    with the two-layer approximator; both weight layers step with the
    epoch-indexed size (the net has no per-local-state output weights to
    key a visit count to)."""

    def __init__(self, params, ico: IcoParams, learner: LearnerState,
                 explore: Optional[ExploreSchedule] = None, learn: bool = True):
        self.params = params
        self.ico = ico
        self.learner = learner
        self.explore = explore
        self.learn = learn
        self._prev: Optional[EpochRecord] = None
        self._pending: Optional[EpochRecord] = None

    def evaluate(self, state: GlobalState, action: JointAction):
        p = self.params
        post = post_decision(state, action, p)
        beta = sojourn_rate(post, p)
        indices = post_local_indices(post, state.sched_prev, p)
        conv = self.ico.c_weights[np.asarray(indices)]
        n = p.n_devices
        phibar = np.empty(n)
        rewards = np.empty(n)
        bids = []
        theta = self.learner.theta
        for i in range(n):
            phibar[i] = math.tanh(conv[i])
            g = local_reward_parts(post.tx[i], post.proc[i], post.sched == i + 1,
                                   beta, i + 1, p)
            rewards[i] = g
            bids.append(local_bid(g, phibar[i], self.ico.out_weights[i],
                                  theta[i], beta))
        score = ordered_sum(bids)
        return EpochRecord(indices, conv, phibar, rewards, beta), score

    def decide(self, state, epoch, rng) -> PolicyDecision:
        candidates = joint_action_space(state, self.params)
        evals = [self.evaluate(state, a) for a in candidates]
        scores = [s for _, s in evals]
        pick = argmin_first(scores)
        explored = False
        if self.explore is not None:
            pick, explored = epsilon_greedy(epoch, rng, pick, len(candidates),
                                            self.explore)
        self._pending = evals[pick][0]
        return PolicyDecision(candidates[pick],
                              tuple(zip(candidates, scores)), explored)

    def observe(self, post, tau_prev: float) -> None:
        record = self._pending
        self._pending = None
        if self.learn and self._prev is not None:
            self._update(self._prev, record, tau_prev)
        record_visit(self.learner, record.indices)
        self._prev = record

    def _update(self, prev: EpochRecord, new: EpochRecord, tau_prev: float):
        ico = self.ico
        learner = self.learner
        n = ico.n
        k = learner.epoch + 1
        dv = _ico_td_error(prev, new, ico, learner.theta)
        if not math.isfinite(dv):
            raise FloatingPointError("non-finite temporal-difference error")
        from .valuenet import decay_step, reward_step
        eps_k = decay_step(k)
        old_out = ico.out_weights.copy()
        for i in range(n):
            ico.out_weights[i] += eps_k * dv * prev.phibar[i]
        for i in range(n):
            ico.c_weights[prev.indices[i]] += eps_k * dv * old_out[i] \
                * (1.0 - prev.phibar[i] * prev.phibar[i])
        alpha = reward_step(k)
        learner.reward_totals += prev.rewards
        learner.time_total += tau_prev
        learner.theta = (1.0 - alpha) * learner.theta \
            + alpha * (learner.reward_totals / learner.time_total)
        learner.epoch = k

    def frozen_copy(self) -> "IcoAgent":
        return IcoAgent(self.params, self.ico, self.learner,
                        explore=None, learn=False)

    def snapshot(self) -> dict:
        return {
            "kind": "ico",
            "c_weights": self.ico.c_weights.copy(),
            "out_weights": self.ico.out_weights.copy(),
            "learner": _learner_state(self.learner),
            "prev": _record_state(self._prev),
        }

    def restore(self, snap: dict) -> None:
        self.ico.c_weights[:] = snap["c_weights"]
        self.ico.out_weights[:] = snap["out_weights"]
        _restore_learner(self.learner, snap["learner"])
        self._prev = _record_from_state(snap["prev"])
        self._pending = None


# ---------------------------------------------------------------------------
# baselines


class QueueAwarePolicy:
    """Load balancing: offload the arrival iff its transmission queue is
    strictly shorter than its processing queue (ties process locally); when
    the channel is up for grabs, schedule the longest post-offload
    transmission queue (ties to the lowest device id)."""

    def __init__(self, params):
        self.params = params

    def decide(self, state: GlobalState, epoch: int, rng) -> PolicyDecision:
        p = self.params
        offloads = offload_action_space(state, p)
        if len(offloads) == 1:
            ao = offloads[0]
        else:
            i = state.event - 1
            ao = 1 if state.tx[i] < state.proc[i] else 0
        schedules = schedule_action_space(state, ao, p)
        if len(schedules) == 1:
            as_ = schedules[0]
        else:
            tx, _ = apply_offload(state, ao, p)
            as_ = schedules[0]
            best = tx[as_ - 1]
            for cand in schedules[1:]:
                if tx[cand - 1] > best:
                    best = tx[cand - 1]
                    as_ = cand
        return PolicyDecision(JointAction(ao, as_))


class MyopicPolicy:
    """Per-epoch static minimizer ("mumto" in configs): scores each eligible
    action by one-shot estimates, drain time of the post-decision queues at
    the device's own rates for delay and the instantaneous powers for power,
    ignoring all future epochs."""

    def __init__(self, params):
        self.params = params

    def decide(self, state: GlobalState, epoch: int, rng) -> PolicyDecision:
        p = self.params
        candidates = joint_action_space(state, p)
        scores = []
        for action in candidates:
            post = post_decision(state, action, p)
            total = 0.0
            for i in range(p.n_devices):
                delay = post.tx[i] / p.tx_rates[i] + post.proc[i] / p.proc_rates[i]
                power = 0.0
                if post.sched == i + 1:
                    power += p.tx_powers[i]
                if post.proc[i]:
                    power += p.proc_powers[i]
                total += p.omega[i] * delay + p.gamma[i] * power
            scores.append(total)
        pick = argmin_first(scores)
        return PolicyDecision(candidates[pick], tuple(zip(candidates, scores)))


class AlwaysOffloadPolicy:
    """Test policy: offload whenever eligible, schedule the lowest eligible
    device.  With one device this makes the transmission queue a textbook
    single-server finite queue."""

    def __init__(self, params):
        self.params = params

    def decide(self, state: GlobalState, epoch: int, rng) -> PolicyDecision:
        p = self.params
        offloads = offload_action_space(state, p)
        ao = 1 if 1 in offloads else offloads[0]
        as_ = schedule_action_space(state, ao, p)[0]
        return PolicyDecision(JointAction(ao, as_))


# ---------------------------------------------------------------------------
# snapshot plumbing shared by the agents


def _net_state(net: NetParams) -> dict:
    return {
        "c_weights": net.c_weights.copy(),
        "f_weights": net.f_weights.copy(),
        "node_values": net.node_values.copy(),
    }


def _restore_net(net: NetParams, s: dict) -> None:
    net.c_weights[:] = s["c_weights"]
    net.f_weights[:] = s["f_weights"]
    net.node_values[:] = s["node_values"]


def _learner_state(learner: LearnerState) -> dict:
    return {
        "visit_counts": learner.visit_counts.copy(),
        "theta": learner.theta.copy(),
        "reward_totals": learner.reward_totals.copy(),
        "time_total": learner.time_total,
        "epoch": learner.epoch,
    }


def _restore_learner(learner: LearnerState, s: dict) -> None:
    learner.visit_counts[:] = s["visit_counts"]
    learner.theta = s["theta"].copy()
    learner.reward_totals[:] = s["reward_totals"]
    learner.time_total = s["time_total"]
    learner.epoch = s["epoch"]


def _record_state(record: Optional[EpochRecord]):
    if record is None:
        return None
    return {
        "indices": list(record.indices),
        "conv": record.conv.copy(),
        "phibar": record.phibar.copy(),
        "rewards": record.rewards.copy(),
        "beta": record.beta,
    }


def _record_from_state(s) -> Optional[EpochRecord]:
    if s is None:
        return None
    return EpochRecord(list(s["indices"]), s["conv"].copy(), s["phibar"].copy(),
                       s["rewards"].copy(), s["beta"])
