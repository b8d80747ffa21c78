"""Message-level semi-distributed execution of the learned controller.

Parameter partition: each device actor owns its per-local-state value
vector, its f-weight columns and its own average-reward bookkeeping; the
base station owns the shared filter and arbitrates.  One epoch is a strict
six-phase barrier:

  1  the BS enumerates the eligible joint actions, derives per candidate
     the filter feature vector and sojourn rate of the post-decision state,
     and broadcasts them (ConvBroadcast)
  2  every device submits its additive bid per candidate, computed from its
     own queues, features received in phase 1, and its own parameters
     (BidSubmit)
  3  the BS sums bids in device order, takes the argmin (with the shared
     exploration schedule when learning) and notifies the winner
     (ActionNotify)
  4  devices submit their local temporal-difference terms (DeltaVSubmit)
  5  the BS broadcasts the summed TD error (DeltaVBroadcast)
  6  devices update their values/f-weights, and their filter-gradient
     contributions are aggregated uplink into one vector the BS applies to
     the filter (DeltaCSubmit)

Phases 4-6 run only while learning and only once a previous epoch exists.
Every numeric kernel is the same function the centralized agent calls, so a
distributed run reproduces the centralized one bit for bit; the equivalence
driver at the bottom verifies exactly that.

Message sizes follow the fixed accounting table (in 4-byte words):
broadcast N+1, bids 2N, notify 1, TD terms N, TD broadcast 1, filter
contributions N; device submissions are counted as one aggregated uplink
message per phase.  Simulation payloads are float64; the accounting model,
not the payload precision, is what the size field reports.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from enum import IntEnum
from typing import Optional

import numpy as np

from .core import (
    _EVENT_CODE,
    GlobalState,
    JointAction,
    LocalState,
    joint_action_space,
    local_event,
    local_next,
    local_reward_parts,
    ordered_sum,
    post_decision_local,
    post_local_indices,
    post_decision,
    sojourn_rate,
)
from .engine import Simulation
from .policies import ExploreSchedule, IcfmoAgent, PolicyDecision, argmin_first, epsilon_greedy
from .valuenet import (
    LearnerState,
    NetParams,
    decay_step,
    init_learner,
    local_bid,
    reward_step,
    sum_rows,
)


class MessageKind(IntEnum):
    CONV_BROADCAST = 1
    BID_SUBMIT = 2
    ACTION_NOTIFY = 3
    DELTA_V_SUBMIT = 4
    DELTA_V_BROADCAST = 5
    DELTA_C_SUBMIT = 6


def table_words(kind: MessageKind, n_devices: int) -> int:
    """Per-epoch signaling cost of each message in 4-byte words."""
    return {
        MessageKind.CONV_BROADCAST: n_devices + 1,
        MessageKind.BID_SUBMIT: 2 * n_devices,
        MessageKind.ACTION_NOTIFY: 1,
        MessageKind.DELTA_V_SUBMIT: n_devices,
        MessageKind.DELTA_V_BROADCAST: 1,
        MessageKind.DELTA_C_SUBMIT: n_devices,
    }[kind]


def learning_words(n: int) -> int:
    """Total learning-phase words per epoch: (N+1) + 2N + 1 + N + 1 + N."""
    return 5 * n + 3


def converged_words(n: int) -> int:
    """Words per epoch once learning messages stop: (N+1) + 2N + 1."""
    return 3 * n + 2


@dataclass
class ProtocolMessage:
    epoch: int
    kind: MessageKind
    sender: str                   # "bs" or "devices"
    payload: object
    size_words: int

    @property
    def size_bytes(self) -> int:
        return 4 * self.size_words


@dataclass
class CandidateView:
    """Everything the BS publishes about one eligible action."""

    action: JointAction
    conv: np.ndarray              # filter features of the candidate post state
    beta: float
    indices: list[int]            # BS-side record (filter update pattern)


@dataclass
class _Evaluation:
    index: int                    # this device's post-decision local index
    post_local: LocalState
    conv: np.ndarray
    phibar: float
    reward: float
    beta: float


class DeviceActor:
    """One device: its own value vector, f-weight columns, visit counts and
    average-reward accumulators, plus purely local queue tracking."""

    def __init__(self, device_id: int, params, values: np.ndarray,
                 f_cols: np.ndarray, eta: float,
                 visits: Optional[np.ndarray] = None):
        self.id = device_id
        self.params = params
        self.values = values                 # (D,)
        self.f_cols = f_cols                 # (D, N)
        self.eta = eta
        d = values.shape[0]
        self.visits = visits if visits is not None else np.zeros(d, dtype=np.int64)
        self.theta = 0.0
        self.reward_total = 0.0
        self.time_total = 0.0
        self.epoch = 0
        self.local_post: Optional[LocalState] = None
        self._prev: Optional[_Evaluation] = None
        self._pending: Optional[_Evaluation] = None
        self._candidates: list[_Evaluation] = []

    def _pre_local(self, event: int) -> LocalState:
        if self.local_post is None:
            ev = local_event(self.id, event, 0)
            return LocalState(0, 0, ev, 0)
        return local_next(self.local_post, event, self.id)

    def make_bids(self, views: list[CandidateView], event: int) -> list[float]:
        """Phase 2: one additive score share per broadcast candidate."""
        local = self._pre_local(event)
        p = self.params
        bids = []
        self._candidates = []
        for view in views:
            post_local = post_decision_local(local, view.action, self.id)
            idx = ((post_local.tx_len * (p.m_proc + 1) + post_local.proc_len) * 4
                   + _EVENT_CODE[post_local.event]) * 2 + post_local.sched
            phibar = math.tanh(float(np.dot(view.conv, self.f_cols[idx])))
            g = local_reward_parts(post_local.tx_len, post_local.proc_len,
                                   post_local.sched == 1, view.beta, self.id, p)
            bids.append(local_bid(g, phibar, self.values[idx], self.theta, view.beta))
            self._candidates.append(_Evaluation(idx, post_local, view.conv,
                                                phibar, g, view.beta))
        return bids

    def on_action(self, chosen: int) -> None:
        """Phase 3 receipt: remember the winning candidate's evaluation."""
        self._pending = self._candidates[chosen]
        self._candidates = []
        self.local_post = self._pending.post_local

    def delta_v(self) -> float:
        """Phase 4: local TD term from the previous and current epochs."""
        prev, new = self._prev, self._pending
        return (new.reward
                + self.eta * new.phibar * self.values[new.index]
                - prev.phibar * self.values[prev.index]
                - self.theta / new.beta)

    def apply_updates(self, dv: float, tau_prev: float) -> np.ndarray:
        """Phase 6 device side: value and f-weight steps, average-reward
        bookkeeping; returns this device's filter-gradient contribution."""
        prev = self._prev
        k = self.epoch + 1
        dw = dv * self.values[prev.index] * (1.0 - prev.phibar * prev.phibar)
        delta_c = dw * self.f_cols[prev.index]
        eps_nu = decay_step(int(self.visits[prev.index]))
        self.values[prev.index] += eps_nu * prev.phibar * dv
        self.f_cols[prev.index] += (eps_nu * dw) * prev.conv
        alpha = reward_step(k)
        self.reward_total += prev.reward
        self.time_total += tau_prev
        self.theta = (1.0 - alpha) * self.theta \
            + alpha * (self.reward_total / self.time_total)
        self.epoch = k
        return delta_c

    def finish_epoch(self) -> None:
        self.visits[self._pending.index] += 1
        self._prev = self._pending
        self._pending = None


class BsActor:
    """Base station: shared filter, candidate construction, arbitration."""

    def __init__(self, params, c_weights: np.ndarray):
        self.params = params
        self.c_weights = c_weights
        self.epoch = 0
        self._prev_indices: Optional[list[int]] = None
        self._pending_indices: Optional[list[int]] = None

    def build_candidates(self, state: GlobalState) -> list[CandidateView]:
        """Phase 1: per eligible action, the candidate post-decision state's
        filter features and sojourn rate."""
        p = self.params
        views = []
        for action in joint_action_space(state, p):
            post = post_decision(state, action, p)
            beta = sojourn_rate(post, p)
            indices = post_local_indices(post, state.sched_prev, p)
            conv = self.c_weights[np.asarray(indices)]
            views.append(CandidateView(action, conv, beta, indices))
        return views

    def choose(self, views, bids_per_device, epoch, rng,
               explore: Optional[ExploreSchedule]):
        """Phase 3: sum bids in device order per candidate, argmin with
        first-minimum tie-break, exploration overlay while learning."""
        n_cand = len(views)
        scores = [ordered_sum(bids[c] for bids in bids_per_device)
                  for c in range(n_cand)]
        pick = argmin_first(scores)
        explored = False
        if explore is not None:
            pick, explored = epsilon_greedy(epoch, rng, pick, n_cand, explore)
        self._pending_indices = views[pick].indices
        return pick, scores, explored

    def apply_filter_update(self, agg: np.ndarray) -> None:
        """Phase 6 BS side: deposit the aggregated contributions at the
        previous epoch's active indices."""
        k = self.epoch + 1
        eps_k = decay_step(k)
        prev = self._prev_indices
        for i in range(self.params.n_devices):
            self.c_weights[prev[i]] += eps_k * agg[i]
        self.epoch = k

    def finish_epoch(self) -> None:
        self._prev_indices = self._pending_indices
        self._pending_indices = None


class DistributedController:
    """Policy adapter running the six-phase choreography each epoch.

    Drop-in replacement for the centralized agent inside ``Simulation``;
    also appends one ``ProtocolMessage`` per phase to ``message_log`` when
    given one.
    """

    def __init__(self, params, bs: BsActor, devices: list[DeviceActor],
                 explore: Optional[ExploreSchedule] = None, learn: bool = True,
                 message_log: Optional[list] = None):
        self.params = params
        self.bs = bs
        self.devices = devices
        self.explore = explore
        self.learn = learn
        self.message_log = message_log
        self._has_prev = False
        self._epoch = 0

    def _log(self, kind: MessageKind, sender: str, payload) -> None:
        if self.message_log is not None:
            self.message_log.append(ProtocolMessage(
                self._epoch, kind, sender, payload,
                table_words(kind, self.params.n_devices)))

    def decide(self, state: GlobalState, epoch: int, rng) -> PolicyDecision:
        self._epoch = epoch
        views = self.bs.build_candidates(state)
        self._log(MessageKind.CONV_BROADCAST, "bs",
                  [(v.action, v.conv, v.beta) for v in views])
        bids = [dev.make_bids(views, state.event) for dev in self.devices]
        self._log(MessageKind.BID_SUBMIT, "devices", bids)
        pick, scores, explored = self.bs.choose(views, bids, epoch, rng,
                                                self.explore if self.learn else None)
        self._log(MessageKind.ACTION_NOTIFY, "bs", pick)
        for dev in self.devices:
            dev.on_action(pick)
        actions = [v.action for v in views]
        return PolicyDecision(actions[pick], tuple(zip(actions, scores)), explored)

    def observe(self, post, tau_prev: float) -> None:
        if self.learn and self._has_prev:
            dvs = [dev.delta_v() for dev in self.devices]
            self._log(MessageKind.DELTA_V_SUBMIT, "devices", list(dvs))
            dv = ordered_sum(dvs)
            self._log(MessageKind.DELTA_V_BROADCAST, "bs", dv)
            rows = [dev.apply_updates(dv, tau_prev) for dev in self.devices]
            agg = sum_rows(rows)
            self._log(MessageKind.DELTA_C_SUBMIT, "devices", agg)
            self.bs.apply_filter_update(agg)
        for dev in self.devices:
            dev.finish_epoch()
        self.bs.finish_epoch()
        self._has_prev = True


# ---------------------------------------------------------------------------
# assembly, disassembly, equivalence


def build_distributed(params, net: NetParams,
                      explore: Optional[ExploreSchedule] = None,
                      learn: bool = True,
                      message_log: Optional[list] = None) -> DistributedController:
    """Partition a parameter bundle into actors (deep copies: no sharing)."""
    n = params.n_devices
    bs = BsActor(params, net.c_weights.copy())
    devices = [DeviceActor(i + 1, params, net.node_values[i].copy(),
                           net.f_weights[i].copy(), net.eta)
               for i in range(n)]
    return DistributedController(params, bs, devices, explore, learn, message_log)


def gather_params(system: DistributedController) -> tuple[NetParams, LearnerState]:
    """Reassemble the partitioned parameters for comparison/inspection."""
    n = system.params.n_devices
    d = system.bs.c_weights.shape[0]
    net = NetParams(
        n, d,
        system.bs.c_weights.copy(),
        np.stack([dev.f_cols for dev in system.devices]).copy(),
        np.stack([dev.values for dev in system.devices]).copy(),
        system.devices[0].eta if system.devices else 0.99,
    )
    learner = init_learner(n, d)
    learner.visit_counts = np.stack([dev.visits for dev in system.devices]).copy()
    learner.theta = np.array([dev.theta for dev in system.devices])
    learner.reward_totals = np.array([dev.reward_total for dev in system.devices])
    learner.time_total = system.devices[0].time_total if system.devices else 0.0
    learner.epoch = system.devices[0].epoch if system.devices else 0
    return net, learner


@dataclass
class EquivalenceReport:
    equal: bool
    epochs: int
    first_divergence: Optional[tuple[int, str]] = None
    learning_bytes_per_epoch: int = 0
    total_message_words: int = 0

    def __bool__(self) -> bool:  # pragma: no cover
        return self.equal


def _compare(agent: IcfmoAgent, system: DistributedController, epoch: int):
    net, learner = gather_params(system)
    if not np.array_equal(agent.net.c_weights, net.c_weights):
        return (epoch, "c_weights")
    if not np.array_equal(agent.net.node_values, net.node_values):
        return (epoch, "node_values")
    if not np.array_equal(agent.net.f_weights, net.f_weights):
        return (epoch, "f_weights")
    if not np.array_equal(agent.learner.theta, learner.theta):
        return (epoch, "theta")
    if not np.array_equal(agent.learner.visit_counts, learner.visit_counts):
        return (epoch, "visit_counts")
    if agent.learner.time_total != learner.time_total:
        return (epoch, "time_total")
    return None


def run_equivalence(params, net: NetParams, seed: int, horizon: int,
                    explore: Optional[ExploreSchedule] = None,
                    learn: bool = True,
                    compare_stride: int = 1,
                    message_log: Optional[list] = None) -> EquivalenceReport:
    """Lockstep a centralized and a distributed run from identical seeds and
    parameters; report the first diverging epoch and field, if any."""
    n = params.n_devices
    d = net.d
    agent = IcfmoAgent(params, net.copy(), init_learner(n, d),
                       explore=explore if learn else None, learn=learn)
    system = build_distributed(params, net.copy(), explore=explore,
                               learn=learn, message_log=message_log)
    sim_c = Simulation(params, agent, seed)
    sim_d = Simulation(params, system, seed)
    for k in range(horizon):
        action_c, _, _ = sim_c.step()
        action_d, _, _ = sim_d.step()
        if action_c != action_d:
            return EquivalenceReport(False, k + 1, (k, "action"))
        if (k + 1) % compare_stride == 0 or k == horizon - 1:
            diff = _compare(agent, system, k)
            if diff is not None:
                return EquivalenceReport(False, k + 1, diff)
    words = sum(m.size_words for m in message_log) if message_log else 0
    return EquivalenceReport(True, horizon, None,
                             learning_bytes_per_epoch=4 * learning_words(n),
                             total_message_words=words)


def write_message_csv(path, log: list[ProtocolMessage]) -> None:
    """Export: epoch, message kind, direction, payload words, running bytes."""
    cumulative = 0
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "message", "direction", "payload_words",
                         "cumulative_bytes"])
        for m in log:
            cumulative += m.size_bytes
            direction = "downlink" if m.sender == "bs" else "uplink"
            writer.writerow([m.epoch, int(m.kind), direction, m.size_words,
                             cumulative])
