"""State algebra of the edge-cell queueing control model.

Every quantity here lives on the embedded chain observed at packet
arrival/departure events.  A global state holds, per device, a transmission
queue (packets waiting to be uploaded to the edge server) and a processing
queue (packets computed locally), plus the event that opened the epoch and
the device whose transmission queue was scheduled in the previous epoch.

Epochs unfold in two phases:

  1. a joint action ``(offload, schedule)`` maps the state to a
     post-decision state (deterministic),
  2. the next event is drawn from rates competing out of the post-decision
     state (arrivals, the scheduled transmission, busy local processors),
.    and a deterministic event map produces the next state.

All functions are pure and side-effect free; states are immutable.  Device
ids are 1-based in the event/schedule encoding (``event = n`` is an arrival
at device n, ``event = -n`` a local-processing departure at device n,
``event = 0`` a departure from the scheduled transmission queue;
``schedule = 0`` means no queue is scheduled).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Optional

if TYPE_CHECKING:  # pragma: no cover
    from .scenario import ScenarioParams


@dataclass(frozen=True, slots=True)
class GlobalState:
    """System state at the start of a decision epoch."""

    tx: tuple[int, ...]      # transmission queue length per device
    proc: tuple[int, ...]    # processing queue length per device
    event: int               # n arrival / 0 tx departure / -n proc departure
    sched_prev: int          # device scheduled in the previous epoch, 0 = none


@dataclass(frozen=True, slots=True)
class JointAction:
    offload: int             # 1 offload, 0 process locally, -1 drop (both queues full)
    schedule: int            # device whose tx queue transmits this epoch, 0 = none


@dataclass(frozen=True, slots=True)
class PostDecisionState:
    """Queue contents holding for the whole epoch, after the action is applied."""

    tx: tuple[int, ...]
    proc: tuple[int, ...]
    event: int               # event that opened the epoch, carried over
    sched: int               # schedule chosen this epoch


@dataclass(frozen=True, slots=True)
class LocalState:
    """The slice of a (post-)decision state visible to one device.

    ``event`` is the device-local view of the global event: 1 own arrival,
    0 own tx departure, -1 own proc departure, None when the event happened
    elsewhere.  ``sched`` is 1 iff this device holds the channel.
    """

    tx_len: int
    proc_len: int
    event: Optional[int]
    sched: int


@dataclass(frozen=True)
class RewardWeights:
    """Per-device objective weights.

    ``omega_prime`` and ``gamma_prime`` weight the delay and power shares of
    the per-device reward.  The weights of the global objective follow as
    ``omega_n = omega'_n * lambda_n / sum(lambda)`` and
    ``gamma_n = gamma'_n / N``, which makes the per-device rewards sum
    exactly to the global reward rate divided by the sojourn rate.
    """

    omega_prime: tuple[float, ...]
    gamma_prime: tuple[float, ...]

    def global_weights(self, arrival_rates):
        total = sum(arrival_rates)
        omega = tuple(w * lam / total for w, lam in zip(self.omega_prime, arrival_rates))
        n = len(self.omega_prime)
        gamma = tuple(g / n for g in self.gamma_prime)
        return omega, gamma


# ---------------------------------------------------------------------------
# action spaces


def offload_action_space(state: GlobalState, params) -> tuple[int, ...]:
    """Eligible offload decisions given the event that opened the epoch.

    Departure events admit only the no-op 0.  An arrival is forced into
    whichever queue still has room when the other is saturated, and dropped
    (-1) when both are full; otherwise both 0 and 1 are eligible.
    """
    e = state.event
    if e <= 0:
        return (0,)
    i = e - 1
    tx_full = state.tx[i] >= params.m_tx
    proc_full = state.proc[i] >= params.m_proc
    if tx_full and proc_full:
        return (-1,)
    if tx_full:
        return (0,)
    if proc_full:
        return (1,)
    return (0, 1)


def apply_offload(state: GlobalState, offload: int, params):
    """Queue vectors right after the offload decision, before scheduling.

    Only an arrival changes anything: offload=1 enqueues the packet in the
    device's transmission queue, offload=0 in its processing queue, and
    offload=-1 discards it.  Caller must pass an eligible offload.
    """
    e = state.event
    if e <= 0 or offload == -1:
        return state.tx, state.proc
    i = e - 1
    if offload == 1:
        tx = state.tx[:i] + (state.tx[i] + 1,) + state.tx[i + 1:]
        return tx, state.proc
    proc = state.proc[:i] + (state.proc[i] + 1,) + state.proc[i + 1:]
    return state.tx, proc


def schedule_action_space(state: GlobalState, offload: int, params) -> tuple[int, ...]:
    """Eligible schedule choices once the offload decision is fixed.

    Scheduling is non-preemptive: the channel is reassigned only after a
    transmission completes (event 0) or when an arrival finds the channel
    idle.  In those cases any device with a non-empty post-offload
    transmission queue may be picked; otherwise the previous assignment
    stands.  When every transmission queue is empty nothing is scheduled.
    """
    tx, _ = apply_offload(state, offload, params)
    if not any(tx):
        return (0,)
    e = state.event
    if e == 0 or (e > 0 and state.sched_prev == 0):
        return tuple(n + 1 for n, q in enumerate(tx) if q > 0)
    return (state.sched_prev,)


def joint_action_space(state: GlobalState, params) -> list[JointAction]:
    """All eligible joint actions, in canonical tie-break order.

    Offload options enumerate as 0 before 1 (drop only ever appears alone),
    schedules ascend by device id.  Argmin consumers keep the first minimum,
    so this ordering is the deterministic tie-break rule.
    """
    out = []
    for ao in offload_action_space(state, params):
        for as_ in schedule_action_space(state, ao, params):
            out.append(JointAction(ao, as_))
    return out


# ---------------------------------------------------------------------------
# two-phase transition


def post_decision(state: GlobalState, action: JointAction, params) -> PostDecisionState:
    tx, proc = apply_offload(state, action.offload, params)
    return PostDecisionState(tx, proc, state.event, action.schedule)


def sojourn_rate(post: PostDecisionState, params) -> float:
    """Total event rate out of a post-decision state.

    beta = sum(lambda) + mu[scheduled] + sum of local processing rates over
    busy processing queues; the epoch duration is Exponential(beta).
    A zero schedule contributes no transmission rate.
    """
    rate = params.total_arrival_rate
    if post.sched:
        rate += params.tx_rates[post.sched - 1]
    for i, q in enumerate(post.proc):
        if q:
            rate += params.proc_rates[i]
    return rate


def transition_distribution(post: PostDecisionState, params) -> list[tuple[int, float]]:
    """Embedded-chain event distribution out of a post-decision state.

    Returns (event, probability) pairs for every event with nonzero rate:
    arrival at n with lambda_n/beta, scheduled transmission completion with
    mu[sched]/beta, local completion at n with mu_loc_n/beta when that
    processing queue is busy.  Probabilities sum to 1.
    """
    beta = sojourn_rate(post, params)
    out = []
    for i, lam in enumerate(params.arrival_rates):
        out.append((i + 1, lam / beta))
    if post.sched:
        out.append((0, params.tx_rates[post.sched - 1] / beta))
    for i, q in enumerate(post.proc):
        if q:
            out.append((-(i + 1), params.proc_rates[i] / beta))
    return out


def next_state(post: PostDecisionState, event: int, params) -> GlobalState:
    """Deterministic event map closing the epoch.

    Arrivals keep the queues as they are (the offload decision belongs to
    the next epoch); event 0 pops the scheduled transmission queue; event -n
    pops processing queue n.  Events with zero probability under the
    transition distribution are rejected, they indicate a driver bug.
    """
    n = len(post.tx)
    if event > 0:
        if event > n:
            raise ValueError(f"arrival event {event} out of range for {n} devices")
        return GlobalState(post.tx, post.proc, event, post.sched)
    if event == 0:
        j = post.sched
        if j == 0 or post.tx[j - 1] == 0:
            raise ValueError("transmission departure without a scheduled non-empty queue")
        tx = post.tx[:j - 1] + (post.tx[j - 1] - 1,) + post.tx[j:]
        return GlobalState(tx, post.proc, 0, post.sched)
    i = -event - 1
    if i >= n or post.proc[i] == 0:
        raise ValueError(f"processing departure {event} from an empty or unknown queue")
    proc = post.proc[:i] + (post.proc[i] - 1,) + post.proc[i + 1:]
    return GlobalState(post.tx, proc, event, post.sched)


# ---------------------------------------------------------------------------
# rewards (costs: lower is better throughout)


def reward_rate(post: PostDecisionState, params) -> float:
    """Weighted cost rate c accrued while the post-decision state holds.

    Delay enters through queue occupancy scaled by omega_n/lambda_n (queue
    length over arrival rate is delay, so the time integral of this term
    recovers the weighted delay); power enters through the transmit power of
    the scheduled device and the processing power of busy local CPUs.
    """
    c = 0.0
    for i in range(params.n_devices):
        c += params.omega[i] / params.arrival_rates[i] * (post.tx[i] + post.proc[i])
        p = 0.0
        if post.sched == i + 1:
            p += params.tx_powers[i]
        if post.proc[i]:
            p += params.proc_powers[i]
        c += params.gamma[i] * p
    return c


def local_reward_parts(tx_len: int, proc_len: int, scheduled: bool, beta: float,
                       device: int, params) -> float:
    """Device share of the expected epoch cost, from device-local quantities.

    This is the kernel both the monolithic evaluation and the per-device
    bidders call, so the two always produce identical floats.
    """
    i = device - 1
    p = 0.0
    if scheduled:
        p += params.tx_powers[i]
    if proc_len:
        p += params.proc_powers[i]
    return (params.omega_prime[i] / (beta * params.total_arrival_rate) * (tx_len + proc_len)
            + params.gamma_prime[i] / (beta * params.n_devices) * p)


def local_reward(post: PostDecisionState, device: int, params,
                 beta: Optional[float] = None) -> float:
    """Per-device expected epoch cost; the sum over devices times beta equals
    the global reward rate under the weight correspondence."""
    if beta is None:
        beta = sojourn_rate(post, params)
    i = device - 1
    return local_reward_parts(post.tx[i], post.proc[i], post.sched == device,
                              beta, device, params)


# ---------------------------------------------------------------------------
# local-state decomposition


def local_event(device: int, event: int, sched_prev: int) -> Optional[int]:
    """Device-local view of a global event: 1 own arrival, 0 own transmission
    departure (only the scheduled device sees one), -1 own processing
    departure, None otherwise."""
    if event == device:
        return 1
    if event == 0 and sched_prev == device:
        return 0
    if event == -device:
        return -1
    return None


def local_state(state: GlobalState, device: int) -> LocalState:
    return LocalState(state.tx[device - 1], state.proc[device - 1],
                      local_event(device, state.event, state.sched_prev),
                      1 if state.sched_prev == device else 0)


def post_decision_local(local: LocalState, action: JointAction, device: int) -> LocalState:
    """Device-local image of the post-decision map: the offload lands here
    only when this device had the arrival; the schedule bit tracks whether
    this device holds the channel for the epoch."""
    tx, proc = local.tx_len, local.proc_len
    if local.event == 1:
        if action.offload == 1:
            tx += 1
        elif action.offload == 0:
            proc += 1
    return LocalState(tx, proc, local.event, 1 if action.schedule == device else 0)


def local_next(local_post: LocalState, event: int, device: int) -> LocalState:
    """Device-local image of the event map.

    The local event derived from the next global event uses this epoch's
    schedule bit, since only the channel holder sees a transmission
    departure.  Events elsewhere leave the local queues untouched.
    """
    if event == device:
        ev: Optional[int] = 1
    elif event == 0 and local_post.sched:
        ev = 0
    elif event == -device:
        ev = -1
    else:
        ev = None
    tx, proc = local_post.tx_len, local_post.proc_len
    if ev == 0:
        tx -= 1
    elif ev == -1:
        proc -= 1
    return LocalState(tx, proc, ev, local_post.sched)


def decompose(state: GlobalState) -> list[LocalState]:
    return [local_state(state, n) for n in range(1, len(state.tx) + 1)]


def aggregate_locals(locals_: list[LocalState]) -> GlobalState:
    """Rebuild the global state from the N device views (inverse of
    ``decompose`` on consistent inputs)."""
    tx = tuple(l.tx_len for l in locals_)
    proc = tuple(l.proc_len for l in locals_)
    event = None
    for n, l in enumerate(locals_, start=1):
        if l.event == 1:
            ev = n
        elif l.event == 0:
            ev = 0
        elif l.event == -1:
            ev = -n
        else:
            continue
        if event is not None:
            raise ValueError("multiple devices claim the epoch event")
        event = ev
    if event is None:
        raise ValueError("no device claims the epoch event")
    sched = 0
    for n, l in enumerate(locals_, start=1):
        if l.sched:
            if sched:
                raise ValueError("multiple devices claim the channel")
            sched = n
    return GlobalState(tx, proc, event, sched)


# ---------------------------------------------------------------------------
# local-state indexing (fixed layout consumed by the value network encoding)

_EVENT_CODE = {None: 0, 1: 1, 0: 2, -1: 3}
_EVENT_FROM_CODE = {0: None, 1: 1, 2: 0, 3: -1}


def local_state_count(params) -> int:
    """Cardinality of one device's local state space."""
    return (params.m_tx + 1) * (params.m_proc + 1) * 4 * 2


def local_state_index(local: LocalState, params) -> int:
    """Injective index in [0, D): queues major, then event code
    (null, arrival, tx departure, proc departure), then schedule bit."""
    code = _EVENT_CODE[local.event]
    return ((local.tx_len * (params.m_proc + 1) + local.proc_len) * 4 + code) * 2 + local.sched


def local_state_from_index(index: int, params) -> LocalState:
    sched = index & 1
    index >>= 1
    code = index % 4
    index //= 4
    proc_len = index % (params.m_proc + 1)
    tx_len = index // (params.m_proc + 1)
    return LocalState(tx_len, proc_len, _EVENT_FROM_CODE[code], sched)


def post_local_indices(post: PostDecisionState, sched_prev: int, params) -> list[int]:
    """Local-state index of every device under a post-decision state.

    ``sched_prev`` is the pre-decision channel holder, needed to attribute a
    transmission-departure event to the device that sent the packet.
    Equivalent to indexing ``post_decision_local(local_state(...))`` per
    device, without building the intermediate objects.
    """
    mp1 = params.m_proc + 1
    ev = post.event
    out = []
    for n in range(1, params.n_devices + 1):
        if ev == n:
            code = 1
        elif ev == 0 and sched_prev == n:
            code = 2
        elif ev == -n:
            code = 3
        else:
            code = 0
        sbit = 1 if post.sched == n else 0
        out.append(((post.tx[n - 1] * mp1 + post.proc[n - 1]) * 4 + code) * 2 + sbit)
    return out


# ---------------------------------------------------------------------------
# validation helpers


def validate_state(state: GlobalState, params) -> None:
    n = params.n_devices
    if len(state.tx) != n or len(state.proc) != n:
        raise ValueError("queue vector length does not match the device count")
    for q in state.tx:
        if not 0 <= q <= params.m_tx:
            raise ValueError(f"transmission queue length {q} out of [0, {params.m_tx}]")
    for q in state.proc:
        if not 0 <= q <= params.m_proc:
            raise ValueError(f"processing queue length {q} out of [0, {params.m_proc}]")
    if not -n <= state.event <= n:
        raise ValueError(f"event {state.event} out of range")
    if not 0 <= state.sched_prev <= n:
        raise ValueError(f"previous schedule {state.sched_prev} out of range")


def ordered_sum(values) -> float:
    """Left-to-right float accumulation.

    Shared by the monolithic scorer and the base-station aggregation so both
    produce bit-identical sums of per-device terms.
    """
    total = 0.0
    for v in values:
        total += v
    return total


def random_reachable_state(rng, params) -> GlobalState:
    """Draw a dynamically reachable state for fuzzing.

    Constraints beyond plain bounds: a transmission departure implies some
    device was scheduled; an idle channel implies empty transmission queues
    (non-preemptive service only releases the channel when nothing is
    left); a busy channel at a non-departure event still holds the packet
    being transmitted.
    """
    n = params.n_devices
    proc = tuple(int(rng.integers(0, params.m_proc + 1)) for _ in range(n))
    event = int(rng.integers(-n, n + 1))
    if event == 0:
        sched_prev = int(rng.integers(1, n + 1))
    else:
        sched_prev = int(rng.integers(0, n + 1))
    if sched_prev == 0:
        tx = (0,) * n
    else:
        tx = [int(rng.integers(0, params.m_tx + 1)) for _ in range(n)]
        if event != 0 and tx[sched_prev - 1] == 0:
            tx[sched_prev - 1] = int(rng.integers(1, params.m_tx + 1))
        tx = tuple(tx)
    return GlobalState(tx, proc, event, sched_prev)
