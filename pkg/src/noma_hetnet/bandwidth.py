"""Stage 2: optimal backhaul bandwidth fraction.

With association and powers fixed, the utility is nonincreasing in the
backhaul fraction eta while each cell's feeder constraint (uncached access
demand must fit the feeder rate) caps eta from below. The optimum is
therefore the smallest feasible eta: the largest of the per-cell bounds.

Each per-cell bound has a closed form. Because the noise floor follows the
allocated band, the bound itself depends weakly on eta through the SINRs,
so `optimal_eta` iterates the closed form to its (rapidly convergent)
fixed point; `bisection_eta` searches the same feasibility predicate
directly and serves as the independent cross-check.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .link_model import (
    Association,
    ResourceAllocation,
    backhaul_sinr,
    cell_cache_stats,
    sinr_all,
    utility,
)
from .scenario import Scenario

# numeric realization of the open interval (0, 1) for eta
ETA_FLOOR = 1e-6


class InfeasibleBackhaulError(RuntimeError):
    """No eta < 1 can carry the uncached access demand over the feeders."""


@dataclass(frozen=True)
class BandwidthSolution:
    jb_values: np.ndarray   # (M,) per-cell lower bounds on eta
    eta_star: float
    clamped: bool           # True when every bound sat below the eta floor


def _jb_all(scenario: Scenario, association: Association,
            allocation: ResourceAllocation) -> np.ndarray:
    """Per-cell eta lower bound A/(psi*theta + A), SINRs taken at `allocation`.

    A sums the uncached members' spectral efficiencies, psi is the
    uncached traffic fraction over the M-way OFDMA split, theta the feeder
    spectral efficiency. Cells without uncached traffic bound nothing and
    contribute 0.
    """
    m = scenario.num_rsus
    gamma = sinr_all(scenario, association, allocation)[0]
    theta = np.log1p(backhaul_sinr(scenario, allocation)) / np.log(2.0)
    size, cached = cell_cache_stats(scenario, association)
    jb = np.zeros(m)
    for cell in range(m):
        members = np.asarray(association.decoding_orders[cell], dtype=np.int64)
        if members.size == 0:
            continue
        uncached = 1.0 - scenario.cache.entries[members, cell]
        a = float((uncached * np.log1p(gamma[members]) / np.log(2.0)).sum())
        if a == 0.0:
            continue
        psi = (size[cell] - cached[cell]) / size[cell] / m
        jb[cell] = a / (psi * theta[cell] + a)
    return jb


def compute_jb(scenario: Scenario, association: Association,
               allocation: ResourceAllocation, rsu: int) -> float:
    """Eta lower bound of one cell; 0 for empty or fully cached cells."""
    return float(_jb_all(scenario, association, allocation)[rsu])


def optimal_eta(scenario: Scenario, association: Association,
                allocation: ResourceAllocation,
                fixed_point_tol: float = 1e-13,
                max_refinements: int = 50) -> BandwidthSolution:
    """Smallest feasible backhaul fraction, clamped into [floor, 1-floor].

    Iterates eta <- max(max_cell_bound(eta), floor) until the bounds are
    evaluated at the eta they imply, so the binding cell's feeder
    constraint holds with (numerically) zero slack at the result.
    """
    eta = allocation.eta
    jb = _jb_all(scenario, association, allocation)
    for _ in range(max_refinements):
        if jb.max() >= 1.0 - ETA_FLOOR:
            raise InfeasibleBackhaulError(
                f"cell {int(jb.argmax())} needs eta >= {jb.max():.9f}; "
                "the access demand cannot be carried"
            )
        eta_new = max(float(jb.max()), ETA_FLOOR)
        if abs(eta_new - eta) <= fixed_point_tol:
            eta = eta_new
            break
        eta = eta_new
        jb = _jb_all(scenario, association, allocation.with_eta(eta))
    return BandwidthSolution(jb_values=jb, eta_star=eta, clamped=bool(jb.max() < ETA_FLOOR))


def _feasible(scenario, association, allocation, eta, rel_tol=1e-12) -> bool:
    report = utility(scenario, association, allocation.with_eta(eta), omega=0.0)
    scale = max(1.0, float(np.abs(report.rate_bps).sum()))
    return bool((report.c2_slack >= -rel_tol * scale).all())


def bisection_eta(scenario: Scenario, association: Association,
                  allocation: ResourceAllocation, tol: float = 1e-9) -> float:
    """Bisect for the smallest eta whose feeder constraints all hold.

    Evaluates the constraint self-consistently at each trial eta (noise
    floor included), which makes it an independent oracle for
    `optimal_eta`.
    """
    if tol <= 0:
        raise ValueError(f"tol must be > 0, got {tol}")
    lo, hi = ETA_FLOOR, 1.0 - ETA_FLOOR
    if _feasible(scenario, association, allocation, lo):
        return lo
    if not _feasible(scenario, association, allocation, hi):
        raise InfeasibleBackhaulError("feeder constraints fail over the whole eta range")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if _feasible(scenario, association, allocation, mid):
            hi = mid
        else:
            lo = mid
    return hi
