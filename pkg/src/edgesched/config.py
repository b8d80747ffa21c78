"""Experiment configuration: a sectioned YAML document with defaults.

Sections and keys (defaults in parentheses):

  scenario:
    cell_radius_m (500), n_zones (10), rate_table_bps (built-in table),
    zone_boundaries_m (equal-width annuli), p0_dbm (-100),
    pathloss_compensation (1.0), p_cmax_dbm (23),
    cycles_per_bit (1e5), packet_bits (1e4), kappa (1e-28),
    f_loc_min (1e9), f_loc_max (3e9), m_tx (7), m_proc (7),
    omega_prime (0.5), gamma_prime (0.5)
  policy: icfmo | ico | qa | mumto  (icfmo)
  learning:
    eta (0.99), explore_g1 (1000), explore_g2 (2000),
    horizon_epochs (2_000_000), eval_epochs (200_000),
    warmup_fraction (0.1)
  sweep:
    n_devices ([2]), arrival_rates ([1.0]), seeds ([1]),
    policies (defaults to [policy])
  output:
    directory ("out"), trace_stride (1000), workers (1)

Unknown keys and malformed values are rejected with the offending key path.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import yaml

from .scenario import DEFAULT_RATE_TABLE_BPS

POLICY_NAMES = ("icfmo", "ico", "qa", "mumto")


class ConfigError(ValueError):
    pass


@dataclass
class ScenarioConfig:
    cell_radius_m: float = 500.0
    n_zones: int = 10
    rate_table_bps: tuple = DEFAULT_RATE_TABLE_BPS
    zone_boundaries_m: tuple = ()
    p0_dbm: float = -100.0
    pathloss_compensation: float = 1.0
    p_cmax_dbm: float = 23.0
    cycles_per_bit: float = 1e5
    packet_bits: float = 1e4
    kappa: float = 1e-28
    f_loc_min: float = 1e9
    f_loc_max: float = 3e9
    m_tx: int = 7
    m_proc: int = 7
    omega_prime: float = 0.5
    gamma_prime: float = 0.5


@dataclass
class LearningConfig:
    eta: float = 0.99
    explore_g1: float = 1000.0
    explore_g2: float = 2000.0
    horizon_epochs: int = 2_000_000
    eval_epochs: int = 200_000
    warmup_fraction: float = 0.1


@dataclass
class SweepConfig:
    n_devices: tuple = (2,)
    arrival_rates: tuple = (1.0,)
    seeds: tuple = (1,)
    policies: tuple = ()


@dataclass
class OutputConfig:
    directory: str = "out"
    trace_stride: int = 1000
    workers: int = 1


@dataclass
class ExperimentConfig:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    policy: str = "icfmo"
    learning: LearningConfig = field(default_factory=LearningConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def sweep_policies(self) -> tuple:
        return self.sweep.policies or (self.policy,)

    def to_dict(self) -> dict:
        return asdict(self)


_SECTION_TYPES = {
    "scenario": ScenarioConfig,
    "learning": LearningConfig,
    "sweep": SweepConfig,
    "output": OutputConfig,
}

_LIST_KEYS = {"rate_table_bps", "zone_boundaries_m", "n_devices",
              "arrival_rates", "seeds", "policies"}


def _coerce(section: str, key: str, value, target_type):
    path = f"{section}.{key}"
    if key in _LIST_KEYS:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a list, got {value!r}")
        if key in ("n_devices", "seeds"):
            return tuple(int(v) for v in value)
        if key == "policies":
            for v in value:
                if v not in POLICY_NAMES:
                    raise ConfigError(f"{path}: unknown policy {v!r}")
            return tuple(value)
        return tuple(float(v) for v in value)
    if target_type is float:
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if target_type is int:
        if not isinstance(value, int) or isinstance(value, bool):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if target_type is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    return value


def config_from_dict(raw: dict) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("top level must be a mapping of sections")
    for section, payload in raw.items():
        if section == "policy":
            if payload not in POLICY_NAMES:
                raise ConfigError(f"policy: unknown policy {payload!r}, "
                                  f"expected one of {POLICY_NAMES}")
            cfg.policy = payload
            continue
        if section not in _SECTION_TYPES:
            raise ConfigError(f"unknown section {section!r}")
        if not isinstance(payload, dict):
            raise ConfigError(f"{section}: expected a mapping")
        target = getattr(cfg, section)
        fields = {f: type(getattr(target, f)) for f in vars(target)}
        for key, value in payload.items():
            if key not in fields:
                raise ConfigError(f"{section}.{key}: unknown key")
            setattr(target, key, _coerce(section, key, value, fields[key]))
    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig) -> None:
    s = cfg.scenario
    checks = [
        (s.cell_radius_m > 0, "scenario.cell_radius_m must be positive"),
        (s.n_zones >= 1, "scenario.n_zones must be at least 1"),
        (len(s.rate_table_bps) == s.n_zones,
         "scenario.rate_table_bps must have one entry per zone"),
        (all(r > 0 for r in s.rate_table_bps),
         "scenario.rate_table_bps entries must be positive"),
        (s.packet_bits > 0, "scenario.packet_bits must be positive"),
        (s.cycles_per_bit > 0, "scenario.cycles_per_bit must be positive"),
        (s.kappa > 0, "scenario.kappa must be positive"),
        (0 < s.f_loc_min <= s.f_loc_max, "scenario CPU frequency range invalid"),
        (s.m_tx >= 1 and s.m_proc >= 1, "scenario queue capacities must be >= 1"),
        (s.omega_prime >= 0 and s.gamma_prime >= 0,
         "scenario weights must be nonnegative"),
        (cfg.learning.eta > 0 and cfg.learning.eta < 1,
         "learning.eta must lie in (0, 1)"),
        (cfg.learning.explore_g1 > 0 and cfg.learning.explore_g2 > 0,
         "learning exploration constants must be positive"),
        (cfg.learning.horizon_epochs >= 1, "learning.horizon_epochs must be >= 1"),
        (cfg.learning.eval_epochs >= 1, "learning.eval_epochs must be >= 1"),
        (0 <= cfg.learning.warmup_fraction < 1,
         "learning.warmup_fraction must lie in [0, 1)"),
        (len(cfg.sweep.n_devices) >= 1, "sweep.n_devices must be non-empty"),
        (all(n >= 1 for n in cfg.sweep.n_devices),
         "sweep.n_devices entries must be >= 1"),
        (all(l > 0 for l in cfg.sweep.arrival_rates),
         "sweep.arrival_rates entries must be positive"),
        (len(cfg.sweep.seeds) >= 1, "sweep.seeds must be non-empty"),
        (cfg.output.trace_stride >= 1, "output.trace_stride must be >= 1"),
        (cfg.output.workers >= 1, "output.workers must be >= 1"),
    ]
    for ok, message in checks:
        if not ok:
            raise ConfigError(message)


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        try:
            raw = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    return config_from_dict(raw)


def default_config() -> ExperimentConfig:
    return ExperimentConfig()
