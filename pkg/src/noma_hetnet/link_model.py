"""SINR, rate, interference, and utility evaluation kernels.

Every operation here is a pure function of an immutable
(scenario, association, allocation) triple, so evaluations are safe to run
in parallel without locking.

Conventions:
  * Access points are indexed 0..M-1 for RSUs; index M is the platform.
  * Uplink interference always charges the interferer's own channel gain
    toward the receiving access point.
  * Within a cell, interference cancellation removes every user decoded
    earlier; a user therefore only hears cell members ranked after it.
  * The noise floor follows the allocated band: (1-eta)B on access links,
    eta*B/M on each OFDMA backhaul link.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from .config import SystemConfig, noise_power
from .scenario import CacheMatrix, Scenario


def hap_index(scenario: Scenario) -> int:
    """Column index of the platform in the assignment matrix."""
    return scenario.num_rsus


def sigma2_access(config: SystemConfig, eta: float) -> float:
    """Noise power over the shared access band (1-eta)B, watts."""
    return noise_power(config.noise_psd, (1.0 - eta) * config.total_bandwidth)


def sigma2_backhaul(config: SystemConfig, eta: float) -> float:
    """Noise power over one OFDMA backhaul link eta*B/M, watts."""
    return noise_power(config.noise_psd, eta * config.total_bandwidth / config.num_rsus)


# ---------------------------------------------------------------------------
# association / allocation containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Association:
    """One access point per VUE plus per-AP interference-cancellation orders.

    `ap[n]` is the serving access point of VUE n (M = platform). The
    decoding order of each AP lists exactly its members, strongest gain
    first; equal gains break toward the lower VUE id.
    """

    ap: np.ndarray                      # (N,), int
    decoding_orders: tuple              # M+1 tuples of VUE ids

    def __post_init__(self):
        self.ap.setflags(write=False)

    @property
    def assignment(self) -> np.ndarray:
        """Materialized binary matrix, shape (N, M+1), one 1 per row."""
        n = self.ap.shape[0]
        num_aps = len(self.decoding_orders)
        u = np.zeros((n, num_aps), dtype=np.int8)
        u[np.arange(n), self.ap] = 1
        return u

    def members(self, ap_id: int) -> tuple:
        return self.decoding_orders[ap_id]

    def validate(self, scenario: Scenario) -> "Association":
        m = scenario.num_rsus
        if self.ap.shape != (scenario.num_vues,):
            raise ValueError("assignment must hold one AP per VUE")
        if self.ap.min() < 0 or self.ap.max() > m:
            raise ValueError("AP indices must lie in 0..M (M = platform)")
        seen = [vue for order in self.decoding_orders for vue in order]
        if sorted(seen) != list(range(scenario.num_vues)):
            raise ValueError("decoding orders must partition the VUE set")
        for ap_id, order in enumerate(self.decoding_orders):
            if any(self.ap[v] != ap_id for v in order):
                raise ValueError("decoding order lists a VUE from another AP")
        return self


def sic_decoding_order(scenario: Scenario, ap: np.ndarray) -> tuple:
    """Per-AP decoding orders: members sorted by gain toward that AP.

    Strongest |h|^2 decodes first; ties break toward the lower VUE id. A
    user only suffers intra-cell interference from users ranked after it.
    Empty APs yield empty orders.
    """
    m = scenario.num_rsus
    gains_hap = scenario.channel.gain_vue_hap
    gains_rsu = scenario.channel.gain_vue_rsu
    orders = []
    for ap_id in range(m + 1):
        members = np.flatnonzero(ap == ap_id)
        if members.size == 0:
            orders.append(())
            continue
        g = gains_hap[members] if ap_id == m else gains_rsu[members, ap_id]
        ranked = members[np.lexsort((members, -g))]
        orders.append(tuple(int(v) for v in ranked))
    return tuple(orders)


def make_association(scenario: Scenario, ap) -> Association:
    """Build an Association (with fresh decoding orders) from an AP vector."""
    ap = np.asarray(ap, dtype=np.int64).copy()
    assoc = Association(ap=ap, decoding_orders=sic_decoding_order(scenario, ap))
    return assoc.validate(scenario)


def rebind(scenario: Scenario, association: Association, vue: int, ap_id: int) -> Association:
    """New association with one VUE moved; decoding orders refreshed."""
    ap = association.ap.copy()
    ap[vue] = ap_id
    return make_association(scenario, ap)


def nearest_rsu_association(scenario: Scenario, hap_ids=()) -> Association:
    """Every VUE on its nearest RSU, except `hap_ids` on the platform."""
    ap = scenario.nearest_rsu.astype(np.int64).copy()
    ids = np.asarray(sorted(int(v) for v in hap_ids), dtype=np.int64)
    if ids.size:
        ap[ids] = hap_index(scenario)
    return make_association(scenario, ap)


@dataclass(frozen=True)
class ResourceAllocation:
    """Bandwidth split plus transmit powers, all in SI units.

    `power[n]` is the uplink power of VUE n toward its serving AP. Entries
    of platform-served VUEs are ignored at evaluation time: those users
    transmit at the constant config.hap_vue_power. RSU backhaul powers are
    likewise fixed operating points, not optimization variables.
    """

    eta: float                       # backhaul fraction, in (0, 1)
    power: np.ndarray                # (N,), watts
    rsu_backhaul_power: np.ndarray   # (M,), watts

    def __post_init__(self):
        self.power.setflags(write=False)
        self.rsu_backhaul_power.setflags(write=False)

    def with_eta(self, eta: float) -> "ResourceAllocation":
        return replace(self, eta=float(eta))

    def with_power(self, power: np.ndarray) -> "ResourceAllocation":
        return replace(self, power=np.asarray(power, dtype=float).copy())

    def validate(self, config: SystemConfig) -> "ResourceAllocation":
        if not 0.0 < self.eta < 1.0:
            raise ValueError(f"eta must lie in (0, 1), got {self.eta}")
        p_max = config.max_power_vue_watt
        if (self.power < 0).any() or (self.power > p_max * (1 + 1e-12)).any():
            raise ValueError(f"powers must lie in [0, {p_max}] W")
        return self


def default_allocation(scenario: Scenario, eta: float = 0.5) -> ResourceAllocation:
    """Half the band to backhaul, every VUE at half its power cap."""
    cfg = scenario.config
    return ResourceAllocation(
        eta=eta,
        power=np.full(scenario.num_vues, cfg.max_power_vue_watt / 2.0),
        rsu_backhaul_power=np.full(scenario.num_rsus, cfg.max_power_rsu_watt),
    )


# ---------------------------------------------------------------------------
# SINR kernels
# ---------------------------------------------------------------------------


def effective_power(scenario: Scenario, association: Association,
                    allocation: ResourceAllocation) -> np.ndarray:
    """Transmit power per VUE: allocation entries, HAP users pinned constant."""
    p = allocation.power.astype(float).copy()
    hap_members = association.ap == hap_index(scenario)
    p[hap_members] = scenario.config.hap_vue_power_watt
    return p


def sinr_all(scenario: Scenario, association: Association,
             allocation: ResourceAllocation):
    """SINR and interference breakdown for every VUE at its serving AP.

    Returns (gamma, phi_i1, phi_i2, phi_i3), each shape (N,), watts for the
    phi terms. For platform users phi_i1 is the residual intra-platform
    term, phi_i2 the cross-tier power received from all RSU-served VUEs,
    and phi_i3 is zero.
    """
    cfg = scenario.config
    n, m = scenario.num_vues, scenario.num_rsus
    sigma2 = sigma2_access(cfg, allocation.eta)
    p = effective_power(scenario, association, allocation)
    gain_rsu = scenario.channel.gain_vue_rsu
    gain_hap = scenario.channel.gain_vue_hap

    gamma = np.zeros(n)
    phi1 = np.zeros(n)
    phi2 = np.zeros(n)
    phi3 = np.zeros(n)

    recv = p[:, None] * gain_rsu                     # (N, M) power landing on each RSU
    terr_mask = association.ap < m
    tot_terr = recv[terr_mask].sum(axis=0)           # per-RSU, all terrestrial VUEs
    tot_hap_users = recv[~terr_mask].sum(axis=0)     # per-RSU, cross-tier from HAP users

    for cell in range(m):
        order = np.asarray(association.decoding_orders[cell], dtype=np.int64)
        if order.size == 0:
            continue
        w = recv[order, cell]
        later = np.concatenate([np.cumsum(w[::-1])[::-1][1:], [0.0]])
        phi1[order] = later
        phi2[order] = tot_terr[cell] - w.sum()
        phi3[order] = tot_hap_users[cell]
        gamma[order] = w / (later + phi2[order] + phi3[order] + sigma2)

    order = np.asarray(association.decoding_orders[m], dtype=np.int64)
    if order.size:
        recv_hap = p * gain_hap
        w = recv_hap[order]
        later = np.concatenate([np.cumsum(w[::-1])[::-1][1:], [0.0]])
        phi1[order] = later
        phi2[order] = recv_hap[terr_mask].sum()
        gamma[order] = w / (later + phi2[order] + sigma2)

    return gamma, phi1, phi2, phi3


def sinr_terrestrial(scenario: Scenario, association: Association,
                     allocation: ResourceAllocation, vue: int) -> float:
    """Uplink SINR of an RSU-served VUE at its serving RSU."""
    if association.ap[vue] >= hap_index(scenario):
        raise ValueError(f"VUE {vue} is served by the platform, not an RSU")
    return float(sinr_all(scenario, association, allocation)[0][vue])


def sinr_hap(scenario: Scenario, association: Association,
             allocation: ResourceAllocation, vue: int) -> float:
    """Uplink SINR of a platform-served VUE at the platform."""
    if association.ap[vue] != hap_index(scenario):
        raise ValueError(f"VUE {vue} is served by an RSU, not the platform")
    return float(sinr_all(scenario, association, allocation)[0][vue])


def rate_fronthaul(gamma: float, eta: float, bandwidth: float) -> float:
    """Access-link rate (1-eta) * B * log2(1 + gamma), bit/s."""
    if np.any(np.asarray(gamma) < 0):
        raise ValueError("SINR must be nonnegative")
    if not 0.0 < eta < 1.0:
        raise ValueError(f"eta must lie in (0, 1), got {eta}")
    return (1.0 - eta) * bandwidth * np.log1p(gamma) / np.log(2.0)


def backhaul_sinr(scenario: Scenario, allocation: ResourceAllocation) -> np.ndarray:
    """Per-RSU feeder SINR toward the platform, shape (M,).

    Each RSU's interference term charges its own platform gain against the
    other RSUs' transmit powers; noise follows the per-link OFDMA band.
    """
    cfg = scenario.config
    sigma2 = sigma2_backhaul(cfg, allocation.eta)
    p = allocation.rsu_backhaul_power
    g = scenario.channel.gain_rsu_hap
    interference = g * (p.sum() - p)
    return p * g / (interference + sigma2)


def cell_cache_stats(scenario: Scenario, association: Association,
                     cache: CacheMatrix | None = None):
    """(cell size, cached count) per RSU under the given association."""
    cache = scenario.cache if cache is None else cache
    m = scenario.num_rsus
    size = np.zeros(m, dtype=np.int64)
    cached = np.zeros(m, dtype=np.int64)
    for cell in range(m):
        members = np.asarray(association.decoding_orders[cell], dtype=np.int64)
        size[cell] = members.size
        if members.size:
            cached[cell] = int(cache.entries[members, cell].sum())
    return size, cached


def backhaul_bandwidth_share(scenario: Scenario, association: Association,
                             allocation: ResourceAllocation,
                             cache: CacheMatrix | None = None) -> np.ndarray:
    """Effective backhaul band per RSU: uncached fraction of eta*B/M, Hz.

    Empty cells carry no traffic and get share zero.
    """
    cfg = scenario.config
    size, cached = cell_cache_stats(scenario, association, cache)
    share = np.zeros(scenario.num_rsus)
    nonempty = size > 0
    share[nonempty] = (
        (size[nonempty] - cached[nonempty]) / size[nonempty]
        * allocation.eta * cfg.total_bandwidth / cfg.num_rsus
    )
    return share


def backhaul_rate(scenario: Scenario, association: Association,
                  allocation: ResourceAllocation, cache: CacheMatrix,
                  rsu: int) -> float:
    """Feeder rate of one RSU: uncached band share times log2(1 + SINR)."""
    share = backhaul_bandwidth_share(scenario, association, allocation, cache)[rsu]
    if share == 0.0:
        return 0.0
    gamma = backhaul_sinr(scenario, allocation)[rsu]
    return float(share * np.log1p(gamma) / np.log(2.0))


def total_backhaul_rate(scenario: Scenario, association: Association,
                        allocation: ResourceAllocation,
                        cache: CacheMatrix) -> float:
    """Sum of all per-RSU feeder rates, bit/s."""
    return float(
        sum(backhaul_rate(scenario, association, allocation, cache, rsu)
            for rsu in range(scenario.num_rsus))
    )


# ---------------------------------------------------------------------------
# utility
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class UtilityReport:
    """Full per-VUE / per-RSU breakdown of one allocation's performance."""

    ap: np.ndarray                  # (N,)
    sinr: np.ndarray                # (N,)
    rate_bps: np.ndarray            # (N,), access rate (platform rows informational)
    phi_i1_w: np.ndarray            # (N,), post-cancellation intra-cell interference
    phi_i2_w: np.ndarray            # (N,), inter-cell (or cross-tier at the platform)
    phi_i3_w: np.ndarray            # (N,), cross-tier at RSUs
    utility_per_vue: np.ndarray     # (N,), rate minus interference price; 0 on platform rows
    rsu_rate: np.ndarray            # (M,), sum access rate per cell
    backhaul_rate_bps: np.ndarray   # (M,)
    total_backhaul_bps: float
    rsu_utility: np.ndarray         # (M,)
    total_utility: float
    c1_slack: np.ndarray            # (N,), rate minus QoS floor; NaN on platform rows
    c2_slack: np.ndarray            # (M,), feeder rate minus uncached access demand
    eta: float
    omega: float


def utility(scenario: Scenario, association: Association,
            allocation: ResourceAllocation, omega: float | None = None) -> UtilityReport:
    """Evaluate rates, interference, and the priced utility of a state.

    The utility of an RSU-served VUE is its access rate minus
    omega * (its gain toward the platform) * (its transmit power): the
    price of the cross-tier interference it injects. Platform users carry
    no utility terms. Constraint slacks are reported, never raised.
    """
    cfg = scenario.config
    if omega is None:
        omega = cfg.pricing_omega_init
    n, m = scenario.num_vues, scenario.num_rsus
    gamma, phi1, phi2, phi3 = sinr_all(scenario, association, allocation)
    rate = rate_fronthaul(gamma, allocation.eta, cfg.total_bandwidth)
    p = effective_power(scenario, association, allocation)

    terr = association.ap < m
    util = np.where(terr, rate - omega * scenario.channel.gain_vue_hap * p, 0.0)

    rsu_rate = np.zeros(m)
    rsu_util = np.zeros(m)
    c2 = np.zeros(m)
    share = backhaul_bandwidth_share(scenario, association, allocation)
    gamma_bh = backhaul_sinr(scenario, allocation)
    bh_rate = share * np.log1p(gamma_bh) / np.log(2.0)
    for cell in range(m):
        members = np.asarray(association.decoding_orders[cell], dtype=np.int64)
        if members.size:
            rsu_rate[cell] = rate[members].sum()
            rsu_util[cell] = util[members].sum()
            uncached = 1.0 - scenario.cache.entries[members, cell]
            c2[cell] = bh_rate[cell] - float((uncached * rate[members]).sum())
        else:
            c2[cell] = bh_rate[cell]

    c1 = np.where(terr, rate - cfg.qos_rate, np.nan)
    return UtilityReport(
        ap=association.ap.copy(),
        sinr=gamma,
        rate_bps=rate,
        phi_i1_w=phi1,
        phi_i2_w=phi2,
        phi_i3_w=phi3,
        utility_per_vue=util,
        rsu_rate=rsu_rate,
        backhaul_rate_bps=bh_rate,
        total_backhaul_bps=float(bh_rate.sum()),
        rsu_utility=rsu_util,
        total_utility=float(rsu_util.sum()),
        c1_slack=c1,
        c2_slack=c2,
        eta=allocation.eta,
        omega=float(omega),
    )


def verify_theorem_1(scenario: Scenario, association: Association) -> bool:
    """True iff every decoding order is sorted by gain, strongest first."""
    m = scenario.num_rsus
    for ap_id, order in enumerate(association.decoding_orders):
        if len(order) < 2:
            continue
        ids = np.asarray(order, dtype=np.int64)
        g = (scenario.channel.gain_vue_hap[ids] if ap_id == m
             else scenario.channel.gain_vue_rsu[ids, ap_id])
        if np.any(g[:-1] < g[1:]):
            return False
    return True


REPORT_CSV_COLUMNS = ("vue_id", "ap_id", "sinr", "rate_bps",
                      "phi_i1_w", "phi_i2_w", "phi_i3_w", "utility")


def report_to_csv(report: UtilityReport, path) -> None:
    """One row per VUE plus a `total` footer row."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(REPORT_CSV_COLUMNS)
        for n in range(report.ap.shape[0]):
            writer.writerow([
                n, int(report.ap[n]), repr(float(report.sinr[n])),
                repr(float(report.rate_bps[n])), repr(float(report.phi_i1_w[n])),
                repr(float(report.phi_i2_w[n])), repr(float(report.phi_i3_w[n])),
                repr(float(report.utility_per_vue[n])),
            ])
        writer.writerow([
            "total", "", "",
            repr(float(report.rate_bps.sum())), repr(float(report.phi_i1_w.sum())),
            repr(float(report.phi_i2_w.sum())), repr(float(report.phi_i3_w.sum())),
            repr(float(report.total_utility)),
        ])
