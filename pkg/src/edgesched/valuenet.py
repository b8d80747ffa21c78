"""Masked five-layer value approximator with hand-rolled online TD(0).

The network scores a post-decision global state through per-device local
states.  Layer by layer:

  input            N x D one-hot matrix, row n marks device n's local state
  convolutional    c_n = <filter, row n>, one scalar feature per device
  fully connected  phibar = tanh(c @ W_f), one unit per (device, local state)
  multiplication   phi = phibar masked by the flattened input, so at most N
                   units stay active (one per device)
  output           V = <node_values, phi>, the output weights double as
                   per-device per-local-state value estimates

Because of the mask, a learning step touches exactly the N node values and
the N fully-connected weight columns of the previous epoch's active units,
plus the shared filter.  Updates are plain semi-gradient SGD on the squared
temporal-difference error with the bootstrapped target held constant; the
delay/power trade-off enters through per-device rewards and a per-device
average-reward estimate maintained alongside.

Everything is float64.  The hot path (``active_features``) evaluates only
the active units; the reference path (``forward``) materializes all layers
and exists so tests can check the two against each other.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import ordered_sum


@dataclass
class NetParams:
    """Learnable parameters.

    ``f_weights`` is stored as (device, local state, conv unit) so one
    device's weight columns are contiguous; ``f_matrix`` exposes the
    canonical (conv unit, device*D + state) layout.
    """

    n: int
    d: int
    c_weights: np.ndarray            # (D,)
    f_weights: np.ndarray            # (N, D, N)
    node_values: np.ndarray          # (N, D)
    eta: float = 0.99

    @property
    def f_matrix(self) -> np.ndarray:
        return self.f_weights.reshape(self.n * self.d, self.n).T

    @property
    def node_vector(self) -> np.ndarray:
        return self.node_values.reshape(-1)

    def copy(self) -> "NetParams":
        return NetParams(self.n, self.d, self.c_weights.copy(),
                         self.f_weights.copy(), self.node_values.copy(), self.eta)


@dataclass
class LearnerState:
    """Bookkeeping that accompanies the parameters during training."""

    visit_counts: np.ndarray         # (N, D) visits per (device, local state)
    theta: np.ndarray                # (N,) per-device average reward rate
    reward_totals: np.ndarray        # (N,) accumulated per-device rewards
    time_total: float = 0.0
    epoch: int = 0

    def copy(self) -> "LearnerState":
        return LearnerState(self.visit_counts.copy(), self.theta.copy(),
                            self.reward_totals.copy(), self.time_total, self.epoch)


@dataclass
class ForwardTrace:
    """All layer activations of one reference forward pass."""

    x: np.ndarray                    # (N, D) 0/1
    conv: np.ndarray                 # (N,)
    fc: np.ndarray                   # (N*D,)
    masked: np.ndarray               # (N*D,)
    value: float


@dataclass
class EpochRecord:
    """Active-path cache of one post-decision state: everything an update
    referencing this epoch later needs."""

    indices: list[int]               # active local-state index per device
    conv: np.ndarray                 # (N,) filter taps at the active indices
    phibar: np.ndarray               # (N,) fc activations of the active units
    rewards: np.ndarray              # (N,) per-device epoch rewards
    beta: float                      # sojourn rate of the state


def init_params(n: int, d: int, rng, eta: float = 0.99) -> NetParams:
    """Small symmetric init keeps tanh in its linear region; output weights
    start at zero so initial values are exactly zero."""
    c = rng.uniform(-0.1, 0.1, d)
    bound = 1.0 / math.sqrt(n)
    f = rng.uniform(-bound, bound, (n, d, n))
    return NetParams(n, d, c, f, np.zeros((n, d)), eta)


def init_learner(n: int, d: int) -> LearnerState:
    return LearnerState(np.zeros((n, d), dtype=np.int64), np.zeros(n), np.zeros(n))


# ---------------------------------------------------------------------------
# forward passes


def encode(local_indices, n: int, d: int) -> np.ndarray:
    """One-hot input matrix; row per device, column per local state."""
    x = np.zeros((n, d))
    for i, j in enumerate(local_indices):
        if not 0 <= j < d:
            raise IndexError(f"local state index {j} out of [0, {d})")
        x[i, j] = 1.0
    return x


def forward(x: np.ndarray, params: NetParams) -> ForwardTrace:
    """Reference forward pass materializing every layer."""
    conv = x @ params.c_weights
    fc = np.tanh(conv @ params.f_matrix)
    masked = fc * x.reshape(-1)
    value = float(params.node_vector @ masked)
    if not np.isfinite(value):
        raise FloatingPointError("non-finite network output")
    return ForwardTrace(x, conv, fc, masked, value)


def active_features(indices, params: NetParams):
    """Hot-path forward: conv vector and the N active fc activations.

    The conv activation of device m is just the filter tap at its local
    state index, so the whole layer is a gather; each active fc unit needs
    one length-N dot product.
    """
    conv = params.c_weights[np.asarray(indices)]
    n = params.n
    phibar = np.empty(n)
    fw = params.f_weights
    for i in range(n):
        phibar[i] = math.tanh(float(np.dot(conv, fw[i, indices[i]])))
    return conv, phibar


def value_at(indices, params: NetParams) -> float:
    """Network value of the state with the given active local indices."""
    _, phibar = active_features(indices, params)
    return ordered_sum(phibar[i] * params.node_values[i, indices[i]]
                       for i in range(params.n))


def local_bid(reward: float, phibar: float, node_value: float,
              theta: float, beta: float) -> float:
    """One device's additive share of a candidate action's score.

    Summed over devices this is the quantity the action argmin minimizes;
    the same expression is what a device submits in the auction round.
    """
    return reward + phibar * node_value - theta / beta


# ---------------------------------------------------------------------------
# step-size schedules


def decay_step(m: int) -> float:
    """log(m+1)/(m+1): positive from the first use, eventually decreasing,
    diverging sum, converging square sum (shifted so m=0,1 are defined)."""
    return math.log(m + 1.0) / (m + 1.0)


def reward_step(k: int) -> float:
    """Average-reward smoothing that decays faster than the value step."""
    return 9000.0 / (10000.0 + k)


def step_sizes(k: int, nu: int):
    """(value/f-weight step at visit count nu, filter step at epoch k,
    average-reward step at epoch k)."""
    return decay_step(nu), decay_step(k), reward_step(k)


# ---------------------------------------------------------------------------
# the online update


def sum_rows(rows) -> np.ndarray:
    """Left-to-right accumulation of equal-length vectors; shared with the
    distributed aggregation so both sides sum in the same order."""
    agg = rows[0].copy()
    for row in rows[1:]:
        agg += row
    return agg


def td_update(prev: EpochRecord, new: EpochRecord, tau_prev: float,
              params: NetParams, learner: LearnerState) -> float:
    """One semi-gradient TD(0) step from consecutive post-decision records.

    All deltas are computed from a frozen snapshot first, then applied in
    order: node values, f-weight columns, filter, average reward.  Node
    values and f-weights step with the visit-count-indexed size of the
    previous local state, the filter with the epoch-indexed size.  Returns
    the summed TD error.
    """
    n = params.n
    k = learner.epoch + 1
    values = params.node_values
    fw = params.f_weights
    eta = params.eta
    theta = learner.theta

    dv_terms = [
        new.rewards[i]
        + eta * new.phibar[i] * values[i, new.indices[i]]
        - prev.phibar[i] * values[i, prev.indices[i]]
        - theta[i] / new.beta
        for i in range(n)
    ]
    dv = ordered_sum(dv_terms)
    if not math.isfinite(dv):
        raise FloatingPointError("non-finite temporal-difference error")

    dw = [dv * values[i, prev.indices[i]] * (1.0 - prev.phibar[i] * prev.phibar[i])
          for i in range(n)]
    delta_c = [dw[i] * fw[i, prev.indices[i]] for i in range(n)]
    agg = sum_rows(delta_c)

    for i in range(n):
        j = prev.indices[i]
        eps_nu = decay_step(int(learner.visit_counts[i, j]))
        values[i, j] += eps_nu * prev.phibar[i] * dv
        fw[i, j] += (eps_nu * dw[i]) * prev.conv

    eps_k = decay_step(k)
    for i in range(n):
        params.c_weights[prev.indices[i]] += eps_k * agg[i]

    alpha = reward_step(k)
    learner.reward_totals += prev.rewards
    learner.time_total += tau_prev
    learner.theta = (1.0 - alpha) * theta + alpha * (learner.reward_totals / learner.time_total)
    learner.epoch = k
    return dv


def record_visit(learner: LearnerState, indices) -> None:
    for i, j in enumerate(indices):
        learner.visit_counts[i, j] += 1


# ---------------------------------------------------------------------------
# gradients exposed for verification


def td_error(prev: EpochRecord, new: EpochRecord, params: NetParams,
             theta: np.ndarray) -> float:
    terms = [
        new.rewards[i]
        + params.eta * new.phibar[i] * params.node_values[i, new.indices[i]]
        - prev.phibar[i] * params.node_values[i, prev.indices[i]]
        - theta[i] / new.beta
        for i in range(params.n)
    ]
    return ordered_sum(terms)


def loss_gradients(prev: EpochRecord, new: EpochRecord, params: NetParams,
                   theta: np.ndarray):
    """Analytic semi-gradients of the frozen-target squared TD loss.

    Returns (node, fweight, cweight): node[i] and fweight[i] attach to
    device i's previous active entry/column, cweight is the dense filter
    gradient.  Only the previous-state path is differentiated; the target is
    a constant, exactly as ``td_update`` treats it.
    """
    n = params.n
    dv = td_error(prev, new, params, theta)
    node = np.array([-dv * prev.phibar[i] for i in range(n)])
    fweight = np.stack([
        -dv * params.node_values[i, prev.indices[i]]
        * (1.0 - prev.phibar[i] * prev.phibar[i]) * prev.conv
        for i in range(n)
    ])
    cweight = np.zeros(params.d)
    for i in range(n):
        dw = dv * params.node_values[i, prev.indices[i]] \
            * (1.0 - prev.phibar[i] * prev.phibar[i])
        row = dw * params.f_weights[i, prev.indices[i]]
        for m in range(n):
            cweight[prev.indices[m]] -= row[m]
    return node, fweight, cweight


def frozen_target(new: EpochRecord, params: NetParams, theta: np.ndarray) -> float:
    """Bootstrapped target held constant while differentiating."""
    terms = [
        new.rewards[i]
        + params.eta * new.phibar[i] * params.node_values[i, new.indices[i]]
        - theta[i] / new.beta
        for i in range(params.n)
    ]
    return ordered_sum(terms)


def frozen_td_loss(prev_indices, target: float, params: NetParams) -> float:
    """0.5 * (target - V(prev))^2 with V evaluated by the reference forward,
    so finite differences of this function are an independent oracle for
    ``loss_gradients``."""
    x = encode(prev_indices, params.n, params.d)
    trace = forward(x, params)
    return 0.5 * (target - trace.value) ** 2


# ---------------------------------------------------------------------------
# checkpointing

CHECKPOINT_VERSION = 1


def save_checkpoint(path, params: NetParams, learner: LearnerState) -> None:
    """Single-file npz dump; float64 arrays round-trip bit-exactly."""
    np.savez(
        path,
        version=np.int64(CHECKPOINT_VERSION),
        n=np.int64(params.n),
        d=np.int64(params.d),
        eta=np.float64(params.eta),
        c_weights=params.c_weights,
        f_weights=params.f_weights,
        node_values=params.node_values,
        visit_counts=learner.visit_counts,
        theta=learner.theta,
        reward_totals=learner.reward_totals,
        time_total=np.float64(learner.time_total),
        epoch=np.int64(learner.epoch),
    )


def load_checkpoint(path):
    with np.load(path) as data:
        version = int(data["version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        params = NetParams(
            int(data["n"]), int(data["d"]),
            data["c_weights"].copy(), data["f_weights"].copy(),
            data["node_values"].copy(), float(data["eta"]),
        )
        learner = LearnerState(
            data["visit_counts"].copy(), data["theta"].copy(),
            data["reward_totals"].copy(), float(data["time_total"]),
            int(data["epoch"]),
        )
    return params, learner
