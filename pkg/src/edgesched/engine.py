"""Embedded-chain discrete-event simulation driver.

One run walks the chain of decision epochs: ask the policy for a joint
action, form the post-decision state, draw the epoch duration from
Exponential(beta), accumulate time-weighted metrics, draw the next event
from the competing rates and advance.  Everything is driven by a single
seeded generator with a fixed call order (policy draws, then duration, then
event), which makes whole runs reproducible and lets a distributed policy
replay the exact stream of a centralized one.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .core import (
    GlobalState,
    PostDecisionState,
    next_state,
    post_decision,
    reward_rate,
    sojourn_rate,
    validate_state,
)


@dataclass
class SimClock:
    epoch: int = 0
    time: float = 0.0
    last_tau: float = 0.0


@dataclass
class Metrics:
    """Time-weighted accumulators over the accounted (post-warm-up) window.

    Queue time integrals divide by elapsed time for time-average occupancy;
    dividing again by the arrival rate gives the average delay per device.
    Busy-time integrals scale the constant transmit/processing powers.
    """

    n: int
    elapsed: float = 0.0
    epochs: int = 0
    tx_queue_time: np.ndarray = field(default=None)
    proc_queue_time: np.ndarray = field(default=None)
    tx_busy_time: np.ndarray = field(default=None)
    proc_busy_time: np.ndarray = field(default=None)
    reward_time: float = 0.0
    arrivals: np.ndarray = field(default=None)
    to_tx: np.ndarray = field(default=None)
    to_proc: np.ndarray = field(default=None)
    drops: np.ndarray = field(default=None)
    tx_departures: np.ndarray = field(default=None)
    proc_departures: np.ndarray = field(default=None)
    first_post: PostDecisionState | None = None
    last_post: PostDecisionState | None = None

    def __post_init__(self):
        for name in ("tx_queue_time", "proc_queue_time", "tx_busy_time", "proc_busy_time"):
            if getattr(self, name) is None:
                setattr(self, name, np.zeros(self.n))
        for name in ("arrivals", "to_tx", "to_proc", "drops",
                     "tx_departures", "proc_departures"):
            if getattr(self, name) is None:
                setattr(self, name, np.zeros(self.n, dtype=np.int64))

    def mean_delay(self, params) -> np.ndarray:
        """Average delay per device by Little's law: time-averaged total
        occupancy over the raw arrival rate."""
        if self.elapsed <= 0.0:
            raise ZeroDivisionError("no accounted simulation time")
        lam = np.asarray(params.arrival_rates)
        return (self.tx_queue_time + self.proc_queue_time) / (self.elapsed * lam)

    def mean_power(self, params) -> np.ndarray:
        if self.elapsed <= 0.0:
            raise ZeroDivisionError("no accounted simulation time")
        p_tx = np.asarray(params.tx_powers)
        p_loc = np.asarray(params.proc_powers)
        return (p_tx * self.tx_busy_time + p_loc * self.proc_busy_time) / self.elapsed

    def drop_rate(self) -> float:
        total = int(self.arrivals.sum())
        return float(self.drops.sum()) / total if total else 0.0


def weighted_objective(metrics: Metrics, params) -> float:
    """J = sum_n omega_n * mean_delay_n + sum_n gamma_n * mean_power_n.

    Identical, up to float association, to the time integral of the reward
    rate divided by elapsed time; ``Metrics.reward_time`` tracks the latter
    independently as a cross-check.
    """
    if metrics.epochs == 0:
        raise ValueError("weighted objective of an empty run")
    delay = metrics.mean_delay(params)
    power = metrics.mean_power(params)
    omega = np.asarray(params.omega)
    gamma = np.asarray(params.gamma)
    return float(omega @ delay + gamma @ power)


class Simulation:
    """One sequential run.  Policies expose ``decide(state, epoch, rng)`` and
    optionally ``observe(post, tau_prev)`` for online learners."""

    def __init__(self, params, policy, seed, warmup_epochs: int = 0,
                 on_epoch=None, check_invariants: bool = False):
        self.params = params
        self.policy = policy
        self.rng = np.random.default_rng(seed)
        self.warmup_epochs = warmup_epochs
        self.on_epoch = on_epoch
        self.check_invariants = check_invariants
        self.clock = SimClock()
        self.metrics = Metrics(params.n_devices)
        self.state = self._initial_state()

    def _initial_state(self) -> GlobalState:
        """All queues empty; the first event is an arrival drawn from the
        arrival rates alone (nothing else can fire in an empty system)."""
        zeros = (0,) * self.params.n_devices
        u = self.rng.random() * self.params.total_arrival_rate
        acc = 0.0
        event = self.params.n_devices
        for i, lam in enumerate(self.params.arrival_rates):
            acc += lam
            if u < acc:
                event = i + 1
                break
        return GlobalState(zeros, zeros, event, 0)

    def _sample_event(self, post: PostDecisionState, beta: float) -> int:
        """Inverse-CDF draw over the competing rates, same ordering as
        ``transition_distribution``."""
        p = self.params
        u = self.rng.random() * beta
        acc = 0.0
        last = 0
        for i, lam in enumerate(p.arrival_rates):
            acc += lam
            last = i + 1
            if u < acc:
                return last
        if post.sched:
            acc += p.tx_rates[post.sched - 1]
            last = 0
            if u < acc:
                return 0
        for i, q in enumerate(post.proc):
            if q:
                acc += p.proc_rates[i]
                last = -(i + 1)
                if u < acc:
                    return last
        return last  # numerical tail lands on the final competing event

    def step(self):
        k = self.clock.epoch
        state = self.state
        decision = self.policy.decide(state, k, self.rng)
        post = post_decision(state, decision.action, self.params)
        observe = getattr(self.policy, "observe", None)
        if observe is not None:
            observe(post, self.clock.last_tau)
        beta = sojourn_rate(post, self.params)
        tau = self.rng.exponential() / beta
        if k >= self.warmup_epochs:
            self._account(state, decision.action, post, tau, k)
        if self.on_epoch is not None:
            self.on_epoch(k, post, tau)
        event = self._sample_event(post, beta)
        self.state = next_state(post, event, self.params)
        if self.check_invariants:
            validate_state(self.state, self.params)
        self.clock.epoch = k + 1
        self.clock.time += tau
        self.clock.last_tau = tau
        return decision.action, post, tau

    def _account(self, state, action, post, tau, k):
        m = self.metrics
        m.elapsed += tau
        m.epochs += 1
        for i in range(self.params.n_devices):
            m.tx_queue_time[i] += post.tx[i] * tau
            m.proc_queue_time[i] += post.proc[i] * tau
            if post.proc[i]:
                m.proc_busy_time[i] += tau
        if post.sched:
            m.tx_busy_time[post.sched - 1] += tau
        m.reward_time += reward_rate(post, self.params) * tau
        if m.first_post is None:
            m.first_post = post
        else:
            # count the event that opened this epoch (the first accounted
            # epoch only snapshots, so flows match the post-state window)
            e = state.event
            if e > 0:
                m.arrivals[e - 1] += 1
                if action.offload == 1:
                    m.to_tx[e - 1] += 1
                elif action.offload == 0:
                    m.to_proc[e - 1] += 1
                else:
                    m.drops[e - 1] += 1
            elif e == 0:
                m.tx_departures[state.sched_prev - 1] += 1
            else:
                m.proc_departures[-e - 1] += 1
        m.last_post = post

    def run(self, epochs: int) -> Metrics:
        if epochs < 1:
            raise ValueError("horizon must be at least one epoch")
        for _ in range(epochs):
            self.step()
        return self.metrics

    # -- whole-run checkpointing -------------------------------------------

    def snapshot(self) -> dict:
        m = self.metrics
        snap = {
            "state": (list(self.state.tx), list(self.state.proc),
                      self.state.event, self.state.sched_prev),
            "clock": (self.clock.epoch, self.clock.time, self.clock.last_tau),
            "warmup_epochs": self.warmup_epochs,
            "rng": json.dumps(self.rng.bit_generator.state),
            "metrics": {
                "elapsed": m.elapsed, "epochs": m.epochs,
                "reward_time": m.reward_time,
                "tx_queue_time": m.tx_queue_time.tolist(),
                "proc_queue_time": m.proc_queue_time.tolist(),
                "tx_busy_time": m.tx_busy_time.tolist(),
                "proc_busy_time": m.proc_busy_time.tolist(),
                "arrivals": m.arrivals.tolist(), "to_tx": m.to_tx.tolist(),
                "to_proc": m.to_proc.tolist(), "drops": m.drops.tolist(),
                "tx_departures": m.tx_departures.tolist(),
                "proc_departures": m.proc_departures.tolist(),
                "first_post": _post_tuple(m.first_post),
                "last_post": _post_tuple(m.last_post),
            },
        }
        policy_snap = getattr(self.policy, "snapshot", None)
        if policy_snap is not None:
            snap["policy"] = policy_snap()
        return snap

    def restore(self, snap: dict) -> None:
        tx, proc, event, sched = snap["state"]
        self.state = GlobalState(tuple(tx), tuple(proc), event, sched)
        self.clock.epoch, self.clock.time, self.clock.last_tau = snap["clock"]
        self.warmup_epochs = snap["warmup_epochs"]
        self.rng.bit_generator.state = json.loads(snap["rng"])
        ms = snap["metrics"]
        m = self.metrics
        m.elapsed = ms["elapsed"]
        m.epochs = ms["epochs"]
        m.reward_time = ms["reward_time"]
        for name in ("tx_queue_time", "proc_queue_time", "tx_busy_time", "proc_busy_time"):
            setattr(m, name, np.array(ms[name], dtype=float))
        for name in ("arrivals", "to_tx", "to_proc", "drops",
                     "tx_departures", "proc_departures"):
            setattr(m, name, np.array(ms[name], dtype=np.int64))
        m.first_post = _post_from_tuple(ms["first_post"])
        m.last_post = _post_from_tuple(ms["last_post"])
        if "policy" in snap:
            self.policy.restore(snap["policy"])


def _post_tuple(post):
    if post is None:
        return None
    return (list(post.tx), list(post.proc), post.event, post.sched)


def _post_from_tuple(t):
    if t is None:
        return None
    tx, proc, event, sched = t
    return PostDecisionState(tuple(tx), tuple(proc), event, sched)


def run(params, policy, horizon_epochs: int, seed,
        warmup_fraction: float = 0.1, on_epoch=None) -> Metrics:
    """Convenience wrapper: fresh simulation, run, return metrics."""
    if horizon_epochs < 1:
        raise ValueError("horizon must be at least one epoch")
    warmup = int(horizon_epochs * warmup_fraction)
    if warmup >= horizon_epochs:
        warmup = horizon_epochs - 1
    sim = Simulation(params, policy, seed, warmup_epochs=warmup, on_epoch=on_epoch)
    return sim.run(horizon_epochs)
