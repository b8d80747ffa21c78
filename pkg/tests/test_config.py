"""Configuration parsing and validation diagnostics."""

import pytest

from edgesched.config import (
    ConfigError,
    config_from_dict,
    default_config,
    load_config,
)


class TestDefaults:
    def test_table_defaults(self):
        cfg = default_config()
        assert cfg.scenario.m_tx == 7 and cfg.scenario.m_proc == 7
        assert cfg.scenario.omega_prime == 0.5
        assert cfg.scenario.gamma_prime == 0.5
        assert cfg.scenario.packet_bits == 1e4
        assert cfg.scenario.p_cmax_dbm == 23.0
        assert cfg.scenario.kappa == 1e-28
        assert cfg.scenario.cycles_per_bit == 1e5
        assert cfg.learning.explore_g1 == 1000.0
        assert cfg.learning.explore_g2 == 2000.0
        assert cfg.learning.eta == 0.99

    def test_sweep_policies_fallback(self):
        cfg = default_config()
        assert cfg.sweep_policies() == ("icfmo",)
        cfg.sweep.policies = ("qa", "mumto")
        assert cfg.sweep_policies() == ("qa", "mumto")


class TestParsing:
    def test_example_config_loads(self):
        cfg = load_config("configs/example.yaml")
        assert cfg.policy == "icfmo"
        assert cfg.sweep.seeds == (1, 2, 3)
        assert cfg.sweep.policies == ("icfmo", "ico", "qa", "mumto")

    def test_partial_override(self):
        cfg = config_from_dict({"learning": {"horizon_epochs": 5000},
                                "sweep": {"n_devices": [4, 8]}})
        assert cfg.learning.horizon_epochs == 5000
        assert cfg.sweep.n_devices == (4, 8)
        assert cfg.learning.eta == 0.99

    def test_round_trip_through_dict(self):
        cfg = default_config()
        cfg.sweep.seeds = (7, 8)
        again = config_from_dict(cfg.to_dict())
        assert again.to_dict() == cfg.to_dict()


class TestDiagnostics:
    def test_unknown_section(self):
        with pytest.raises(ConfigError, match="unknown section"):
            config_from_dict({"mystery": {}})

    def test_unknown_key_names_path(self):
        with pytest.raises(ConfigError, match="scenario.bogus"):
            config_from_dict({"scenario": {"bogus": 1}})

    def test_unknown_policy(self):
        with pytest.raises(ConfigError, match="policy"):
            config_from_dict({"policy": "dqn"})

    def test_type_error_names_path(self):
        with pytest.raises(ConfigError, match="learning.eta"):
            config_from_dict({"learning": {"eta": "high"}})

    def test_rate_table_zone_mismatch(self):
        with pytest.raises(ConfigError, match="rate_table_bps"):
            config_from_dict({"scenario": {"n_zones": 3}})

    def test_eta_bounds(self):
        with pytest.raises(ConfigError, match="eta"):
            config_from_dict({"learning": {"eta": 1.5}})

    def test_bad_yaml_reports_path(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("scenario: [unclosed")
        with pytest.raises(ConfigError, match="bad.yaml"):
            load_config(path)
