"""Exact solutions on the fully enumerated chain (small instances only).

Decisions happen at pre-decision states; rewards, durations and transition
laws attach to the post-decision states they map to.  After enumerating the
reachable graph this is a finite average-cost semi-Markov decision problem,
solved here by relative value iteration on the standard uniformized
discrete-time equivalent: per-epoch costs become cost rates and transitions
are slowed by the ratio of a common time constant to the expected epoch
duration.  The optimal cost rate and relative values transfer back
unchanged, and the converged solution is verified against the post-decision
optimality equation directly.

Also provides exact average-cost evaluation of a fixed policy through the
stationary distribution of its embedded chain, used as an independent
cross-check of simulated long-run metrics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    GlobalState,
    joint_action_space,
    local_reward,
    post_decision,
    next_state,
    sojourn_rate,
    transition_distribution,
)

MAX_STATES = 200_000


@dataclass
class ChainModel:
    """Reachable pre/post-decision states and the maps between them."""

    pre_states: list
    post_states: list
    pre_index: dict
    post_index: dict
    actions: list          # per pre state: list of eligible actions
    action_post: list      # per pre state: post index per action
    post_reward: np.ndarray    # expected epoch cost of holding each post state
    post_rate: np.ndarray      # sojourn rate of each post state
    post_next: list        # per post state: list of (probability, pre index)


def enumerate_chain(params) -> ChainModel:
    """Breadth-first closure from the empty system under all eligible
    actions."""
    zeros = (0,) * params.n_devices
    frontier = [GlobalState(zeros, zeros, e, 0)
                for e in range(1, params.n_devices + 1)]
    pre_index, pre_states = {}, []
    post_index, post_states = {}, []
    actions, action_post = [], []
    post_next_raw = []

    for s in frontier:
        pre_index[s] = len(pre_states)
        pre_states.append(s)
    head = 0
    while head < len(pre_states):
        s = pre_states[head]
        head += 1
        if len(pre_states) > MAX_STATES:
            raise RuntimeError("state space too large to enumerate")
        acts = joint_action_space(s, params)
        actions.append(acts)
        row = []
        for a in acts:
            post = post_decision(s, a, params)
            if post not in post_index:
                post_index[post] = len(post_states)
                post_states.append(post)
                post_next_raw.append(None)
            row.append(post_index[post])
        action_post.append(row)
        for pi in row:
            if post_next_raw[pi] is not None:
                continue
            post = post_states[pi]
            nxt = []
            for event, prob in transition_distribution(post, params):
                if prob <= 0.0:
                    continue
                s2 = next_state(post, event, params)
                if s2 not in pre_index:
                    pre_index[s2] = len(pre_states)
                    pre_states.append(s2)
                nxt.append((prob, pre_index[s2]))
            post_next_raw[pi] = nxt

    n_post = len(post_states)
    post_reward = np.empty(n_post)
    post_rate = np.empty(n_post)
    for i, post in enumerate(post_states):
        beta = sojourn_rate(post, params)
        post_rate[i] = beta
        post_reward[i] = sum(local_reward(post, n, params, beta)
                             for n in range(1, params.n_devices + 1))
    return ChainModel(pre_states, post_states, pre_index, post_index,
                      actions, action_post, post_reward, post_rate,
                      post_next_raw)


@dataclass
class ExactSolution:
    theta: float                  # optimal average cost rate
    pre_values: np.ndarray        # relative values at decision points
    post_values: np.ndarray       # relative values of post-decision states
    policy: dict                  # pre state -> greedy action
    residual: float               # sup-norm defect of the optimality equation
    iterations: int


def relative_value_iteration(params, tol: float = 1e-12,
                             max_iterations: int = 200_000) -> ExactSolution:
    """Optimal average cost rate of the enumerated chain.

    Iterates V <- TV - TV[ref] on the uniformized problem until the span of
    the increment drops below ``tol``; the subtracted offset converges to
    the optimal cost rate.
    """
    chain = enumerate_chain(params)
    n_pre = len(chain.pre_states)
    tau = 1.0 / chain.post_rate                  # expected epoch durations
    rate_cost = chain.post_reward / tau          # cost per unit time
    c = 0.5 * float(tau.min())                   # uniformization constant

    v = np.zeros(n_pre)
    theta = 0.0
    iterations = 0
    for iterations in range(1, max_iterations + 1):
        w = np.empty(n_pre)
        for si in range(n_pre):
            best = None
            for pi in chain.action_post[si]:
                ev = 0.0
                for prob, s2 in chain.post_next[pi]:
                    ev += prob * v[s2]
                scale = c / tau[pi]
                val = rate_cost[pi] + scale * (ev - v[si]) + v[si]
                if best is None or val < best:
                    best = val
            w[si] = best
        offset = w[0]
        w -= offset
        delta = w - v
        span = float(delta.max() - delta.min())
        v = w
        theta = offset
        if span < tol:
            break

    # relative values of the original (non-uniformized) problem
    h = c * v
    post_values = np.empty(len(chain.post_states))
    for pi in range(len(chain.post_states)):
        post_values[pi] = sum(prob * h[s2] for prob, s2 in chain.post_next[pi])

    # greedy policy and defect of the post-decision optimality equation
    policy = {}
    pre_bellman = np.empty(n_pre)
    for si, s in enumerate(chain.pre_states):
        best, best_a = None, None
        for a, pi in zip(chain.actions[si], chain.action_post[si]):
            val = (chain.post_reward[pi] - theta * tau[pi] + post_values[pi])
            if best is None or val < best:
                best, best_a = val, a
        policy[s] = best_a
        pre_bellman[si] = best
    residual = 0.0
    for pi in range(len(chain.post_states)):
        rhs = sum(prob * pre_bellman[s2] for prob, s2 in chain.post_next[pi])
        residual = max(residual, abs(post_values[pi] - rhs))

    return ExactSolution(theta, h, post_values, policy, residual, iterations)


def policy_average_cost(params, policy) -> float:
    """Exact long-run cost rate of a fixed policy via the stationary
    distribution of its embedded post-decision chain.

    ``policy`` must expose ``decide(state, epoch, rng)``; it is queried once
    per reachable pre-decision state (deterministic policies only).
    """
    chain = enumerate_chain(params)
    choice = {}
    for si, s in enumerate(chain.pre_states):
        action = policy.decide(s, 0, None).action
        row = chain.actions[si]
        if action not in row:
            raise ValueError(f"policy returned ineligible action {action} at {s}")
        choice[si] = chain.action_post[si][row.index(action)]

    reachable_posts = sorted(set(choice.values()))
    pidx = {pi: i for i, pi in enumerate(reachable_posts)}
    # closure under the policy: a post state may lead to pre states whose
    # chosen post was not yet included
    frontier = list(reachable_posts)
    while frontier:
        pi = frontier.pop()
        for prob, s2 in chain.post_next[pi]:
            nxt = choice[s2]
            if nxt not in pidx:
                pidx[nxt] = len(pidx)
                reachable_posts.append(nxt)
                frontier.append(nxt)

    m = len(reachable_posts)
    p = np.zeros((m, m))
    for pi in reachable_posts:
        i = pidx[pi]
        for prob, s2 in chain.post_next[pi]:
            p[i, pidx[choice[s2]]] += prob
    # stationary distribution: solve (P^T - I) x = 0 with sum x = 1
    a = np.vstack([p.T - np.eye(m), np.ones(m)])
    b = np.zeros(m + 1)
    b[-1] = 1.0
    pi_stat, *_ = np.linalg.lstsq(a, b, rcond=None)
    rewards = np.array([chain.post_reward[pi] for pi in reachable_posts])
    taus = np.array([1.0 / chain.post_rate[pi] for pi in reachable_posts])
    return float(pi_stat @ rewards) / float(pi_stat @ taus)
