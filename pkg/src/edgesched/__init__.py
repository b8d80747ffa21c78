"""Simulator and learned controller for a multi-device edge-computing cell.

Subsystems:

  core      state algebra of the controlled queueing model
  scenario  cell geometry and per-device parameter derivation
  engine    embedded-chain discrete-event simulation
  valuenet  masked value-function approximator with online TD(0)
  policies  learned agents and deterministic baselines
  exact     enumerated-chain solver (optimal average reward oracle)
  auction   message-level semi-distributed execution of the learner
  harness   experiment sweeps, traces, checkpoints, CSV output
  cli       command-line entry point
"""

from .core import (
    GlobalState,
    JointAction,
    LocalState,
    PostDecisionState,
    RewardWeights,
    joint_action_space,
    local_reward,
    next_state,
    offload_action_space,
    post_decision,
    reward_rate,
    schedule_action_space,
    sojourn_rate,
    transition_distribution,
)
from .engine import Metrics, Simulation, run, weighted_objective
from .scenario import CellGeometry, DeviceConstants, ScenarioParams, build_scenario

__version__ = "0.1.0"
