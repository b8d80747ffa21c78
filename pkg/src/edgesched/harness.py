"""Experiment harness: grid sweeps, convergence traces, whole-run
checkpoints, the programmatic invariant battery, and the protocol report.

Every result row is reproducible from (config, seed) alone: the row seed
drives device placement, network initialization and the training run, and
the evaluation runs on a fixed offset of it with exploration disabled and
parameters frozen.
"""

from __future__ import annotations

import csv
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import auction
from .config import ExperimentConfig, config_from_dict
from .core import (
    joint_action_space,
    local_state_count,
    post_decision,
    random_reachable_state,
    transition_distribution,
    validate_state,
    next_state,
    local_state,
    local_state_index,
    local_next,
    post_decision_local,
    post_local_indices,
)
from .engine import Metrics, Simulation, weighted_objective
from .exact import relative_value_iteration
from .policies import (
    ExploreSchedule,
    IcfmoAgent,
    IcoAgent,
    MyopicPolicy,
    QueueAwarePolicy,
    init_ico,
    ico_value_at,
)
from .scenario import CellGeometry, DeviceConstants, build_scenario
from .valuenet import init_learner, init_params, value_at

EVAL_SEED_OFFSET = 1_000_003
RUN_CHECKPOINT_VERSION = 1


def scenario_from_config(cfg: ExperimentConfig, n_devices: int,
                         arrival_rate: float, seed: int):
    s = cfg.scenario
    geometry = CellGeometry(
        radius_m=s.cell_radius_m,
        n_zones=s.n_zones,
        boundaries_m=tuple(s.zone_boundaries_m),
        rate_table_bps=tuple(s.rate_table_bps),
        p0_dbm=s.p0_dbm,
        pathloss_compensation=s.pathloss_compensation,
        p_cmax_dbm=s.p_cmax_dbm,
    )
    constants = DeviceConstants(
        cycles_per_bit=s.cycles_per_bit,
        packet_bits=s.packet_bits,
        kappa=s.kappa,
        f_loc_min=s.f_loc_min,
        f_loc_max=s.f_loc_max,
    )
    return build_scenario(n_devices, arrival_rate, seed, geometry, constants,
                          m_tx=s.m_tx, m_proc=s.m_proc,
                          omega_prime=s.omega_prime, gamma_prime=s.gamma_prime)


def build_policy(name: str, params, cfg: ExperimentConfig, seed: int,
                 learn: bool = True):
    """Instantiate a policy by its config name."""
    if name == "qa":
        return QueueAwarePolicy(params)
    if name == "mumto":
        return MyopicPolicy(params)
    explore = ExploreSchedule(cfg.learning.explore_g1, cfg.learning.explore_g2) \
        if learn else None
    d = local_state_count(params)
    rng = np.random.default_rng(seed)
    if name == "icfmo":
        net = init_params(params.n_devices, d, rng, eta=cfg.learning.eta)
        return IcfmoAgent(params, net, init_learner(params.n_devices, d),
                          explore=explore, learn=learn)
    if name == "ico":
        ico = init_ico(params.n_devices, d, rng, eta=cfg.learning.eta)
        return IcoAgent(params, ico, init_learner(params.n_devices, d),
                        explore=explore, learn=learn)
    raise ValueError(f"unknown policy {name!r}")


def tracked_value(policy) -> float:
    """Network value of the empty-system post-decision state."""
    if isinstance(policy, IcfmoAgent):
        return float(value_at([0] * policy.params.n_devices, policy.net))
    if isinstance(policy, IcoAgent):
        return float(ico_value_at([0] * policy.params.n_devices, policy.ico))
    raise ValueError("tracked value requires a learned policy")


# ---------------------------------------------------------------------------
# sweep


@dataclass
class ResultRow:
    policy: str
    n_devices: int
    arrival_rate: float
    seed: int
    objective: float
    mean_delay: float
    mean_power: float
    drop_rate: float
    epochs: int
    wall_clock_s: float
    delay_per_device: tuple
    power_per_device: tuple
    omega: tuple
    gamma: tuple

    HEADER = ("policy", "n_devices", "arrival_rate", "seed", "objective",
              "mean_delay", "mean_power", "drop_rate", "epochs",
              "wall_clock_s", "delay_per_device", "power_per_device",
              "omega", "gamma")

    def to_csv(self) -> list:
        join = lambda xs: ";".join(repr(float(x)) for x in xs)
        return [self.policy, self.n_devices, repr(self.arrival_rate), self.seed,
                repr(self.objective), repr(self.mean_delay), repr(self.mean_power),
                repr(self.drop_rate), self.epochs, f"{self.wall_clock_s:.3f}",
                join(self.delay_per_device), join(self.power_per_device),
                join(self.omega), join(self.gamma)]


def _metrics_to_row(policy_name, n, lam, seed, metrics: Metrics, params,
                    wall) -> ResultRow:
    delay = metrics.mean_delay(params)
    power = metrics.mean_power(params)
    return ResultRow(
        policy=policy_name, n_devices=n, arrival_rate=lam, seed=seed,
        objective=weighted_objective(metrics, params),
        mean_delay=float(delay.mean()),
        mean_power=float(power.mean()),
        drop_rate=metrics.drop_rate(),
        epochs=metrics.epochs,
        wall_clock_s=wall,
        delay_per_device=tuple(delay),
        power_per_device=tuple(power),
        omega=tuple(params.omega),
        gamma=tuple(params.gamma),
    )


def run_grid_point(cfg: ExperimentConfig, policy_name: str, n: int,
                   lam: float, seed: int) -> ResultRow:
    """Train (if the policy learns) and evaluate one grid point."""
    start = time.perf_counter()
    params = scenario_from_config(cfg, n, lam, seed)
    lc = cfg.learning
    if policy_name in ("icfmo", "ico"):
        agent = build_policy(policy_name, params, cfg, seed, learn=True)
        Simulation(params, agent, seed).run(lc.horizon_epochs)
        policy = agent.frozen_copy()
    else:
        policy = build_policy(policy_name, params, cfg, seed)
    warmup = int(lc.eval_epochs * lc.warmup_fraction)
    sim = Simulation(params, policy, seed + EVAL_SEED_OFFSET,
                     warmup_epochs=warmup)
    metrics = sim.run(lc.eval_epochs)
    wall = time.perf_counter() - start
    return _metrics_to_row(policy_name, n, lam, seed, metrics, params, wall)


def _grid_worker(args):
    cfg_dict, policy_name, n, lam, seed = args
    cfg = config_from_dict(cfg_dict)
    return run_grid_point(cfg, policy_name, n, lam, seed)


def run_sweep(cfg: ExperimentConfig, out_path=None, workers=None) -> list[ResultRow]:
    """One row per (policy, n, arrival rate, seed), optionally in parallel;
    rows come back in deterministic grid order regardless of worker count."""
    grid = [(policy, n, lam, seed)
            for policy in cfg.sweep_policies()
            for n in cfg.sweep.n_devices
            for lam in cfg.sweep.arrival_rates
            for seed in cfg.sweep.seeds]
    workers = workers or cfg.output.workers
    if workers > 1 and len(grid) > 1:
        cfg_dict = cfg.to_dict()
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_grid_worker,
                                 [(cfg_dict, *point) for point in grid]))
    else:
        rows = [run_grid_point(cfg, *point) for point in grid]
    if out_path is not None:
        write_results_csv(out_path, rows)
    return rows


def write_results_csv(path, rows: list[ResultRow]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(ResultRow.HEADER)
        for row in rows:
            writer.writerow(row.to_csv())


def read_results_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------------------
# convergence trace


def convergence_trace(cfg: ExperimentConfig, out_path=None) -> list[tuple]:
    """Training-time trace of (epoch, empty-state value, running objective)
    sampled every ``output.trace_stride`` epochs plus the final epoch."""
    if cfg.policy not in ("icfmo", "ico"):
        raise ValueError("convergence traces require a learned policy")
    n = cfg.sweep.n_devices[0]
    lam = cfg.sweep.arrival_rates[0]
    seed = cfg.sweep.seeds[0]
    params = scenario_from_config(cfg, n, lam, seed)
    agent = build_policy(cfg.policy, params, cfg, seed, learn=True)
    stride = cfg.output.trace_stride
    horizon = cfg.learning.horizon_epochs
    rows = []
    sim = Simulation(params, agent, seed)

    def sample(epoch):
        m = sim.metrics
        running = m.reward_time / m.elapsed if m.elapsed > 0 else 0.0
        rows.append((epoch, tracked_value(agent), running))

    for k in range(horizon):
        if k % stride == 0:
            sample(k)
        sim.step()
    sample(horizon)
    if out_path is not None:
        with open(out_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "tracked_value", "running_objective"])
            for row in rows:
                writer.writerow([row[0], repr(row[1]), repr(row[2])])
    return rows


# ---------------------------------------------------------------------------
# whole-run file checkpoints


def save_run_checkpoint(path, sim: Simulation) -> None:
    """Serialize a full mid-run snapshot (engine + policy + generator)."""
    snap = sim.snapshot()
    payload = {"version": np.int64(RUN_CHECKPOINT_VERSION)}
    tx, proc, event, sched = snap["state"]
    payload["state_tx"] = np.asarray(tx, dtype=np.int64)
    payload["state_proc"] = np.asarray(proc, dtype=np.int64)
    payload["state_event_sched"] = np.asarray([event, sched], dtype=np.int64)
    payload["clock_epoch"] = np.int64(snap["clock"][0])
    payload["clock_times"] = np.asarray(snap["clock"][1:], dtype=np.float64)
    payload["warmup"] = np.int64(snap["warmup_epochs"])
    payload["rng_json"] = np.asarray(snap["rng"])
    m = snap["metrics"]
    payload["metrics_scalars"] = np.asarray([m["elapsed"], m["reward_time"]])
    payload["metrics_epochs"] = np.int64(m["epochs"])
    for key in ("tx_queue_time", "proc_queue_time", "tx_busy_time",
                "proc_busy_time"):
        payload[f"metrics_{key}"] = np.asarray(m[key], dtype=np.float64)
    for key in ("arrivals", "to_tx", "to_proc", "drops", "tx_departures",
                "proc_departures"):
        payload[f"metrics_{key}"] = np.asarray(m[key], dtype=np.int64)
    for name in ("first_post", "last_post"):
        post = m[name]
        payload[f"metrics_{name}_set"] = np.int64(post is not None)
        if post is not None:
            payload[f"metrics_{name}_tx"] = np.asarray(post[0], dtype=np.int64)
            payload[f"metrics_{name}_proc"] = np.asarray(post[1], dtype=np.int64)
            payload[f"metrics_{name}_es"] = np.asarray(post[2:], dtype=np.int64)
    if "policy" in snap:
        payload["policy_json_keys"] = np.asarray(json.dumps(_policy_layout(snap["policy"])))
        for key, value in _flatten_policy(snap["policy"]).items():
            payload[f"policy_{key}"] = value
    np.savez(path, **payload)


def load_run_checkpoint(path, sim: Simulation) -> None:
    """Restore a snapshot written by ``save_run_checkpoint`` into ``sim``
    (which must have been constructed with the same scenario and policy
    shape)."""
    with np.load(path) as data:
        if int(data["version"]) != RUN_CHECKPOINT_VERSION:
            raise ValueError("unsupported run checkpoint version")
        event, sched = (int(x) for x in data["state_event_sched"])
        snap = {
            "state": (data["state_tx"].tolist(), data["state_proc"].tolist(),
                      event, sched),
            "clock": (int(data["clock_epoch"]), float(data["clock_times"][0]),
                      float(data["clock_times"][1])),
            "warmup_epochs": int(data["warmup"]),
            "rng": str(data["rng_json"]),
            "metrics": {
                "elapsed": float(data["metrics_scalars"][0]),
                "reward_time": float(data["metrics_scalars"][1]),
                "epochs": int(data["metrics_epochs"]),
                **{key: data[f"metrics_{key}"].tolist()
                   for key in ("tx_queue_time", "proc_queue_time",
                               "tx_busy_time", "proc_busy_time", "arrivals",
                               "to_tx", "to_proc", "drops", "tx_departures",
                               "proc_departures")},
            },
        }
        for name in ("first_post", "last_post"):
            if int(data[f"metrics_{name}_set"]):
                es = data[f"metrics_{name}_es"]
                snap["metrics"][name] = (data[f"metrics_{name}_tx"].tolist(),
                                         data[f"metrics_{name}_proc"].tolist(),
                                         int(es[0]), int(es[1]))
            else:
                snap["metrics"][name] = None
        if "policy_json_keys" in data:
            layout = json.loads(str(data["policy_json_keys"]))
            snap["policy"] = _unflatten_policy(layout, data)
    sim.restore(snap)


def _policy_layout(policy_snap: dict) -> dict:
    """Structure descriptor: which keys exist and which are nested/None."""
    layout = {"kind": policy_snap["kind"], "none": [], "scalars": {}}
    flat = _flatten_policy(policy_snap)
    layout["arrays"] = sorted(k for k, v in flat.items()
                              if isinstance(v, np.ndarray))
    return layout


def _flatten_policy(policy_snap: dict) -> dict:
    flat = {}

    def walk(prefix, obj):
        if obj is None:
            flat[f"{prefix}__none"] = np.int64(1)
            return
        if isinstance(obj, dict):
            for key, value in obj.items():
                walk(f"{prefix}.{key}" if prefix else key, value)
            return
        if isinstance(obj, np.ndarray):
            flat[prefix] = obj
            return
        if isinstance(obj, (list, tuple)):
            flat[prefix] = np.asarray(obj)
            return
        if isinstance(obj, str):
            flat[prefix] = np.asarray(obj)
            return
        flat[prefix] = np.asarray(obj)

    for key, value in policy_snap.items():
        if key == "kind":
            continue
        walk(key, value)
    return flat


def _unflatten_policy(layout: dict, data) -> dict:
    snap: dict = {"kind": layout["kind"]}
    for key in data.files:
        if not key.startswith("policy_") or key == "policy_json_keys":
            continue
        name = key[len("policy_"):]
        if name.endswith("__none"):
            _assign(snap, name[:-len("__none")], None)
            continue
        value = data[key]
        if value.dtype.kind in "US":
            _assign(snap, name, str(value))
        elif value.ndim == 0:
            kind = value.dtype.kind
            _assign(snap, name, int(value) if kind in "iu" else float(value))
        else:
            _assign(snap, name, value.copy())
    # nested record fields arrive as dotted "prev.indices" keys; the agents
    # expect plain lists for index vectors
    prev = snap.get("prev")
    if isinstance(prev, dict) and "indices" in prev:
        prev["indices"] = list(np.asarray(prev["indices"]).tolist())
    return snap


def _assign(tree: dict, dotted: str, value) -> None:
    parts = dotted.split(".")
    node = tree
    for part in parts[:-1]:
        node = node.setdefault(part, {})
    node[parts[-1]] = value


# ---------------------------------------------------------------------------
# invariant battery (CLI `check`)


def check_suite(verbose=False) -> list[tuple[str, bool, str]]:
    """Fast self-contained invariant checks; each entry is
    (name, passed, detail)."""
    from .scenario import ScenarioParams
    results = []

    def record(name, fn):
        try:
            detail = fn()
            results.append((name, True, detail or "ok"))
        except Exception as exc:  # noqa: BLE001 (reported, not swallowed)
            results.append((name, False, f"{type(exc).__name__}: {exc}"))

    params = ScenarioParams(
        arrival_rates=(1.0, 1.3, 0.7), tx_rates=(4.0, 3.0, 5.0),
        tx_powers=(0.05, 0.04, 0.06), proc_rates=(1.5, 2.0, 1.0),
        proc_powers=(0.9, 0.4, 1.3), m_tx=3, m_proc=3)

    def transition_normalization():
        rng = np.random.default_rng(0)
        worst = 0.0
        for _ in range(10_000):
            s = random_reachable_state(rng, params)
            for a in joint_action_space(s, params):
                probs = [q for _, q in
                         transition_distribution(post_decision(s, a, params), params)]
                worst = max(worst, abs(sum(probs) - 1.0))
        if worst >= 1e-12:
            raise AssertionError(f"normalization defect {worst:.2e}")
        return f"max defect {worst:.1e} over 10k states"

    def queue_bounds():
        rng = np.random.default_rng(1)
        s = random_reachable_state(rng, params)
        for _ in range(100_000):
            actions = joint_action_space(s, params)
            a = actions[int(rng.integers(len(actions)))]
            post = post_decision(s, a, params)
            dist = transition_distribution(post, params)
            u = rng.random()
            acc = 0.0
            event = dist[-1][0]
            for e, q in dist:
                acc += q
                if u < acc:
                    event = e
                    break
            s = next_state(post, event, params)
            validate_state(s, params)
        return "100k random transitions in bounds"

    def commutation():
        rng = np.random.default_rng(2)
        for _ in range(10_000):
            s = random_reachable_state(rng, params)
            for a in joint_action_space(s, params):
                post = post_decision(s, a, params)
                fast = post_local_indices(post, s.sched_prev, params)
                slow = [local_state_index(
                    post_decision_local(local_state(s, n), a, n), params)
                    for n in range(1, 4)]
                if fast != slow:
                    raise AssertionError(f"index mismatch at {s} {a}")
        return "10k states commute"

    def mask_sparsity():
        from .valuenet import encode, forward, init_params as initp
        rng = np.random.default_rng(3)
        d = local_state_count(params)
        net = initp(3, d, rng)
        net.node_values[:] = rng.normal(size=(3, d))
        for _ in range(200):
            idx = list(rng.integers(0, d, size=3))
            trace = forward(encode(idx, 3, d), net)
            nz = set(np.nonzero(trace.masked)[0])
            expected = {n * d + j for n, j in enumerate(idx)}
            if not nz <= expected:
                raise AssertionError("mask admits a non-active unit")
            direct = sum(trace.fc[n * d + j] * net.node_values[n, j]
                         for n, j in enumerate(idx))
            if abs(direct - trace.value) > 1e-12:
                raise AssertionError("masked value disagrees with direct sum")
        return "200 random forwards sparse and consistent"

    def gradient_fidelity():
        from .valuenet import (frozen_target, frozen_td_loss, init_learner as initl,
                               init_params as initp, loss_gradients)
        rng = np.random.default_rng(4)
        small = ScenarioParams(
            arrival_rates=(1.0, 1.0), tx_rates=(2.0, 2.0),
            tx_powers=(0.1, 0.1), proc_rates=(1.5, 1.5),
            proc_powers=(0.7, 0.7), m_tx=1, m_proc=1)
        d = local_state_count(small)
        for trial in range(5):
            net = initp(2, d, rng)
            net.node_values[:] = rng.normal(size=(2, d))
            learner = initl(2, d)
            learner.theta = rng.normal(scale=0.1, size=2)
            agent = IcfmoAgent(small, net, learner)
            s1 = random_reachable_state(rng, small)
            a1 = joint_action_space(s1, small)[0]
            prev, _ = agent.evaluate(s1, a1)
            s2 = random_reachable_state(rng, small)
            a2 = joint_action_space(s2, small)[0]
            new, _ = agent.evaluate(s2, a2)
            node_g, fw_g, wc_g = loss_gradients(prev, new, net, learner.theta)
            target = frozen_target(new, net, learner.theta)
            h = 1e-6
            for i in range(2):
                j = prev.indices[i]
                base = net.node_values[i, j]
                net.node_values[i, j] = base + h
                up = frozen_td_loss(prev.indices, target, net)
                net.node_values[i, j] = base - h
                down = frozen_td_loss(prev.indices, target, net)
                net.node_values[i, j] = base
                fd = (up - down) / (2 * h)
                if abs(fd - node_g[i]) > 1e-5 * max(abs(fd), abs(node_g[i])) + 1e-9:
                    raise AssertionError("node gradient defect")
        return "5 random instances match central differences"

    def protocol():
        small = ScenarioParams(
            arrival_rates=(1.0, 1.0), tx_rates=(3.0, 3.0),
            tx_powers=(0.1, 0.1), proc_rates=(1.2, 1.2),
            proc_powers=(0.7, 0.7), m_tx=2, m_proc=2)
        d = local_state_count(small)
        net = init_params(2, d, np.random.default_rng(5))
        log = []
        report = auction.run_equivalence(small, net, seed=6, horizon=300,
                                         explore=ExploreSchedule(),
                                         message_log=log)
        if not report.equal:
            raise AssertionError(f"divergence {report.first_divergence}")
        by_epoch = {}
        for m in log:
            by_epoch.setdefault(m.epoch, 0)
            by_epoch[m.epoch] += m.size_words
        for k, words in by_epoch.items():
            expected = auction.learning_words(2) if k >= 1 \
                else auction.converged_words(2)
            if words != expected:
                raise AssertionError(f"epoch {k} accounting {words} != {expected}")
        return "300-epoch run equivalent, accounting exact"

    def chain_oracle():
        small = ScenarioParams(
            arrival_rates=(1.5,), tx_rates=(2.0,), tx_powers=(0.3,),
            proc_rates=(2.0,), proc_powers=(0.6,), m_tx=1, m_proc=1)
        sol = relative_value_iteration(small)
        if sol.residual >= 1e-8:
            raise AssertionError(f"optimality residual {sol.residual:.2e}")
        return f"residual {sol.residual:.1e}, optimal rate {sol.theta:.4f}"

    record("transition-normalization", transition_normalization)
    record("queue-bounds", queue_bounds)
    record("local-global-commutation", commutation)
    record("mask-sparsity", mask_sparsity)
    record("gradient-fidelity", gradient_fidelity)
    record("protocol-equivalence", protocol)
    record("chain-oracle", chain_oracle)
    return results


# ---------------------------------------------------------------------------
# protocol report (CLI `proto`)


def proto_report(cfg: ExperimentConfig, out_dir, epochs: int = 10_000):
    """Distributed-vs-centralized equivalence across the sweep grid plus a
    message log of the first grid point."""
    os.makedirs(out_dir, exist_ok=True)
    verdicts = []
    first_log = None
    for n in cfg.sweep.n_devices:
        for seed in cfg.sweep.seeds:
            lam = cfg.sweep.arrival_rates[0]
            params = scenario_from_config(cfg, n, lam, seed)
            d = local_state_count(params)
            net = init_params(n, d, np.random.default_rng(seed),
                              eta=cfg.learning.eta)
            log = [] if first_log is None else None
            report = auction.run_equivalence(
                params, net, seed=seed, horizon=epochs,
                explore=ExploreSchedule(cfg.learning.explore_g1,
                                        cfg.learning.explore_g2),
                compare_stride=100, message_log=log)
            if log is not None:
                first_log = log
            verdicts.append((n, seed, report))
    if first_log:
        auction.write_message_csv(os.path.join(out_dir, "messages.csv"), first_log)
    with open(os.path.join(out_dir, "equivalence.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["n_devices", "seed", "epochs", "equal",
                         "first_divergence", "learning_bytes_per_epoch"])
        for n, seed, report in verdicts:
            writer.writerow([n, seed, report.epochs, report.equal,
                             report.first_divergence or "",
                             report.learning_bytes_per_epoch])
    return verdicts
