"""Per-device rate and power parameters from cell geometry.

Devices are dropped uniformly over a disk-shaped cell split into concentric
annular zones; each zone maps to one uplink data rate.  Transmit power
follows open-loop control against the zone-midpoint pathloss, local
processing rate and power follow from the device CPU frequency.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import RewardWeights

# Default zone rate table in bits/s, monotone decreasing with distance.
# Project default spanning roughly 20-200 kbit/s; replace via config for any
# concrete radio parameterization.
DEFAULT_RATE_TABLE_BPS = (
    200_000.0, 155_000.0, 120_000.0, 93_000.0, 72_000.0,
    56_000.0, 43_000.0, 33_000.0, 26_000.0, 20_000.0,
)


@dataclass(frozen=True)
class CellGeometry:
    """Circular cell of radius R around the base station, cut into
    ``n_zones`` annuli; zone k spans [boundaries[k-1], boundaries[k])."""

    radius_m: float = 500.0
    n_zones: int = 10
    boundaries_m: tuple[float, ...] = ()
    rate_table_bps: tuple[float, ...] = DEFAULT_RATE_TABLE_BPS
    pathloss_fixed_db: float = 15.3
    pathloss_slope_db: float = 37.6
    p0_dbm: float = -100.0
    pathloss_compensation: float = 1.0
    p_cmax_dbm: float = 23.0

    def __post_init__(self):
        if self.radius_m <= 0:
            raise ValueError("cell radius must be positive")
        if self.n_zones < 1:
            raise ValueError("need at least one zone")
        if not self.boundaries_m:
            step = self.radius_m / self.n_zones
            bounds = tuple(step * k for k in range(self.n_zones + 1))
            object.__setattr__(self, "boundaries_m", bounds)
        b = self.boundaries_m
        if len(b) != self.n_zones + 1 or b[0] != 0.0 or not math.isclose(b[-1], self.radius_m):
            raise ValueError("boundaries must run 0 = d_0 < ... < d_K = R")
        if any(b[i] >= b[i + 1] for i in range(len(b) - 1)):
            raise ValueError("zone boundaries must be strictly increasing")
        if len(self.rate_table_bps) != self.n_zones:
            raise ValueError("rate table length must equal the zone count")

    def zone_midpoint_m(self, zone: int) -> float:
        return 0.5 * (self.boundaries_m[zone - 1] + self.boundaries_m[zone])

    def pathloss_db(self, distance_m: float) -> float:
        return self.pathloss_fixed_db + self.pathloss_slope_db * math.log10(distance_m)


@dataclass(frozen=True)
class DeviceConstants:
    """Compute-side constants shared by all devices."""

    cycles_per_bit: float = 1e5          # CPU cycles to process one bit
    packet_bits: float = 1e4             # mean packet size
    kappa: float = 1e-28                 # effective switched capacitance
    f_loc_min: float = 1e9               # CPU frequency range, cycles/s
    f_loc_max: float = 3e9


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** (dbm / 10.0) * 1e-3


@dataclass(frozen=True)
class ScenarioParams:
    """Immutable per-run parameter bundle consumed by the whole stack.

    Global objective weights ``omega``/``gamma`` are derived from the
    per-device weights so that the per-device reward decomposition is exact.
    """

    arrival_rates: tuple[float, ...]     # packets/s
    tx_rates: tuple[float, ...]          # packets/s while scheduled
    tx_powers: tuple[float, ...]         # watts while transmitting
    proc_rates: tuple[float, ...]        # packets/s of the local CPU
    proc_powers: tuple[float, ...]       # watts while the local CPU is busy
    m_tx: int = 7
    m_proc: int = 7
    omega_prime: tuple[float, ...] = ()
    gamma_prime: tuple[float, ...] = ()
    # derived in __post_init__
    n_devices: int = field(init=False)
    total_arrival_rate: float = field(init=False)
    omega: tuple[float, ...] = field(init=False)
    gamma: tuple[float, ...] = field(init=False)

    def __post_init__(self):
        n = len(self.arrival_rates)
        if n == 0:
            raise ValueError("at least one device required")
        for name in ("tx_rates", "tx_powers", "proc_rates", "proc_powers"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} must have one entry per device")
        if not self.omega_prime:
            object.__setattr__(self, "omega_prime", (0.5,) * n)
        if not self.gamma_prime:
            object.__setattr__(self, "gamma_prime", (0.5,) * n)
        if len(self.omega_prime) != n or len(self.gamma_prime) != n:
            raise ValueError("weights must have one entry per device")
        for rates in (self.arrival_rates, self.tx_rates, self.proc_rates):
            if any(r <= 0 for r in rates):
                raise ValueError("all rates must be strictly positive")
        if any(p <= 0 for p in self.tx_powers) or any(p <= 0 for p in self.proc_powers):
            raise ValueError("all powers must be strictly positive")
        if any(w < 0 for w in self.omega_prime) or any(w < 0 for w in self.gamma_prime):
            raise ValueError("weights must be nonnegative")
        if self.m_tx < 1 or self.m_proc < 1:
            raise ValueError("queue capacities must be at least 1")
        object.__setattr__(self, "n_devices", n)
        object.__setattr__(self, "total_arrival_rate", sum(self.arrival_rates))
        weights = RewardWeights(self.omega_prime, self.gamma_prime)
        omega, gamma = weights.global_weights(self.arrival_rates)
        object.__setattr__(self, "omega", omega)
        object.__setattr__(self, "gamma", gamma)


def place_devices(geometry: CellGeometry, n_devices: int, rng) -> np.ndarray:
    """Zone assignment (1-based) of devices dropped area-uniformly.

    Radius = R * sqrt(u) gives the uniform-over-the-disk law; the zone is
    the annulus containing the radius.
    """
    if n_devices < 1:
        raise ValueError("need at least one device")
    radii = geometry.radius_m * np.sqrt(rng.random(n_devices))
    bounds = np.asarray(geometry.boundaries_m[1:-1])
    return np.searchsorted(bounds, radii, side="right") + 1


def derive_device_params(zone: int, geometry: CellGeometry,
                         constants: DeviceConstants, f_loc: float):
    """Rates and powers of one device in the given zone.

    mu      = zone rate / packet size                    [packets/s]
    P_tx    = min(P_CMAX, P0 + alpha * PL(zone mid))     [dBm -> watts]
    mu_loc  = f / (cycles_per_bit * packet size)         [packets/s]
    P_loc   = kappa * f^3                                [watts]
    """
    if not 1 <= zone <= geometry.n_zones:
        raise ValueError(f"zone {zone} out of range")
    mu = geometry.rate_table_bps[zone - 1] / constants.packet_bits
    pl = geometry.pathloss_db(geometry.zone_midpoint_m(zone))
    p_dbm = min(geometry.p_cmax_dbm, geometry.p0_dbm + geometry.pathloss_compensation * pl)
    p_tx = dbm_to_watts(p_dbm)
    mu_loc = f_loc / (constants.cycles_per_bit * constants.packet_bits)
    p_loc = constants.kappa * f_loc ** 3
    if mu <= 0 or mu_loc <= 0:
        raise ValueError("derived service rates must be positive")
    return mu, p_tx, mu_loc, p_loc


def build_scenario(n_devices: int, arrival_rate, seed: int,
                   geometry: CellGeometry | None = None,
                   constants: DeviceConstants | None = None,
                   m_tx: int = 7, m_proc: int = 7,
                   omega_prime: float = 0.5, gamma_prime: float = 0.5) -> ScenarioParams:
    """Sample a full scenario: placement, CPU draws, derived parameters.

    Fully reproducible from (seed, configuration).  ``arrival_rate`` may be
    a scalar applied to every device or a per-device sequence.
    """
    geometry = geometry or CellGeometry()
    constants = constants or DeviceConstants()
    rng = np.random.default_rng(seed)
    zones = place_devices(geometry, n_devices, rng)
    f_loc = rng.uniform(constants.f_loc_min, constants.f_loc_max, n_devices)
    mu, p_tx, mu_loc, p_loc = [], [], [], []
    for z, f in zip(zones, f_loc):
        a, b, c, d = derive_device_params(int(z), geometry, constants, float(f))
        mu.append(a)
        p_tx.append(b)
        mu_loc.append(c)
        p_loc.append(d)
    if np.isscalar(arrival_rate):
        lams = (float(arrival_rate),) * n_devices
    else:
        lams = tuple(float(x) for x in arrival_rate)
    return ScenarioParams(
        arrival_rates=lams,
        tx_rates=tuple(mu),
        tx_powers=tuple(p_tx),
        proc_rates=tuple(mu_loc),
        proc_powers=tuple(p_loc),
        m_tx=m_tx,
        m_proc=m_proc,
        omega_prime=(omega_prime,) * n_devices,
        gamma_prime=(gamma_prime,) * n_devices,
    )
