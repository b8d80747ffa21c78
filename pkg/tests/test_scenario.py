"""Scenario construction: placement law, parameter derivation, defaults."""

import math

import numpy as np
import pytest

from edgesched.scenario import (
    CellGeometry,
    DeviceConstants,
    ScenarioParams,
    build_scenario,
    dbm_to_watts,
    derive_device_params,
    place_devices,
)


class TestPlacement:
    def test_seeded_placement_repeats(self):
        g = CellGeometry()
        a = place_devices(g, 50, np.random.default_rng(42))
        b = place_devices(g, 50, np.random.default_rng(42))
        assert np.array_equal(a, b)

    def test_zone_fractions_match_area_ratios(self):
        g = CellGeometry()
        zones = place_devices(g, 100_000, np.random.default_rng(1))
        r = g.radius_m
        for k in range(1, g.n_zones + 1):
            lo, hi = g.boundaries_m[k - 1], g.boundaries_m[k]
            expected = (hi * hi - lo * lo) / (r * r)
            observed = float(np.mean(zones == k))
            assert observed == pytest.approx(expected, abs=0.01)

    def test_single_zone(self):
        g = CellGeometry(n_zones=1, rate_table_bps=(100_000.0,))
        zones = place_devices(g, 200, np.random.default_rng(0))
        assert set(zones) == {1}

    def test_zone_index_in_range(self):
        g = CellGeometry()
        zones = place_devices(g, 10_000, np.random.default_rng(5))
        assert zones.min() >= 1 and zones.max() <= g.n_zones


class TestDeviceParams:
    def test_processing_rate_from_cpu(self):
        g = CellGeometry()
        c = DeviceConstants()
        _, _, mu_loc, _ = derive_device_params(1, g, c, f_loc=2e9)
        assert mu_loc == pytest.approx(2.0)

    def test_processing_power_cubic(self):
        g = CellGeometry()
        c = DeviceConstants()
        _, _, _, p_loc = derive_device_params(1, g, c, f_loc=2e9)
        assert p_loc == pytest.approx(0.8)

    def test_pathloss_at_275m(self):
        g = CellGeometry()
        assert g.pathloss_db(275.0) == pytest.approx(15.3 + 37.6 * math.log10(275.0))
        assert g.pathloss_db(275.0) == pytest.approx(107.0, abs=0.05)

    def test_transmit_power_never_exceeds_cap(self):
        g = CellGeometry()
        c = DeviceConstants()
        cap_w = dbm_to_watts(g.p_cmax_dbm)
        for zone in range(1, g.n_zones + 1):
            _, p_tx, _, _ = derive_device_params(zone, g, c, f_loc=2e9)
            assert p_tx <= cap_w + 1e-15

    def test_rate_monotone_when_table_monotone(self):
        g = CellGeometry()
        c = DeviceConstants()
        mus = [derive_device_params(z, g, c, 2e9)[0] for z in range(1, g.n_zones + 1)]
        assert all(a >= b for a, b in zip(mus, mus[1:]))

    def test_zone_out_of_range_rejected(self):
        g = CellGeometry()
        with pytest.raises(ValueError):
            derive_device_params(0, g, DeviceConstants(), 2e9)


class TestBuildScenario:
    def test_reproducible_from_seed(self):
        a = build_scenario(8, 1.0, seed=7)
        b = build_scenario(8, 1.0, seed=7)
        assert a == b

    def test_different_seed_differs(self):
        a = build_scenario(8, 1.0, seed=7)
        b = build_scenario(8, 1.0, seed=8)
        assert a != b

    def test_defaults(self):
        p = build_scenario(3, 1.0, seed=0)
        assert p.m_tx == 7 and p.m_proc == 7
        assert p.omega_prime == (0.5, 0.5, 0.5)
        assert p.n_devices == 3
        assert p.total_arrival_rate == pytest.approx(3.0)

    def test_per_device_arrival_rates(self):
        p = build_scenario(2, (0.5, 1.5), seed=0)
        assert p.arrival_rates == (0.5, 1.5)

    def test_derived_weights(self):
        p = build_scenario(4, 2.0, seed=0)
        assert p.omega == pytest.approx((0.5 * 2.0 / 8.0,) * 4)
        assert p.gamma == pytest.approx((0.125,) * 4)


class TestScenarioParamsValidation:
    def test_rejects_nonpositive_rates(self):
        with pytest.raises(ValueError):
            ScenarioParams((1.0,), (0.0,), (0.1,), (1.0,), (0.5,))

    def test_rejects_mismatched_lengths(self):
        with pytest.raises(ValueError):
            ScenarioParams((1.0, 1.0), (2.0,), (0.1, 0.1), (1.0, 1.0), (0.5, 0.5))

    def test_rejects_bad_geometry(self):
        with pytest.raises(ValueError):
            CellGeometry(boundaries_m=(0.0, 600.0, 500.0), n_zones=2,
                         rate_table_bps=(1e5, 1e5))
