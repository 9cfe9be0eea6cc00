"""Seeded cross-checks of each solver stage against its brute-force oracle.

These routines back both the `validate` CLI command and the acceptance
test suite: they return raw per-instance metrics so callers can apply
their own thresholds.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from .association import run_association
from .bandwidth import bisection_eta, optimal_eta
from .config import SystemConfig
from .link_model import default_allocation, verify_theorem_1
from .oracles import exhaustive_association_oracle, grid_power_oracle
from .power import sca_power_allocation, true_objective
from .scenario import generate_scenario

ASSOCIATION_FIXTURE = SystemConfig(
    num_vues=5, num_rsus=2, hap_user_count=1,
    cache_hit_prob=0.3, cache_capacity=3,
)

POWER_FIXTURE = SystemConfig(
    num_vues=2, num_rsus=1, hap_user_count=0,
    cache_hit_prob=0.5, cache_capacity=2,
)

BANDWIDTH_FIXTURE = SystemConfig(
    num_vues=12, num_rsus=3, hap_user_count=2,
    cache_hit_prob=0.5, cache_capacity=4,
)


def association_oracle_check(num_instances: int = 100, seed0: int = 1000) -> list:
    """Stage-1 matching vs exhaustive enumeration on tiny instances.

    Returns one record per instance with the achieved/optimal utility
    ratio and the decoding-order sanity flag.
    """
    records = []
    for i in range(num_instances):
        scenario = generate_scenario(replace(ASSOCIATION_FIXTURE, seed=seed0 + i))
        allocation = default_allocation(scenario)
        result = run_association(scenario, allocation)
        _, best_f = exhaustive_association_oracle(scenario, allocation)
        records.append({
            "seed": seed0 + i,
            "achieved": result.utility,
            "optimal": best_f,
            "ratio": result.utility / best_f if best_f > 0 else float("nan"),
            "theorem_ok": verify_theorem_1(scenario, result.association),
            "events": len(result.events),
        })
    return records


def power_oracle_check(num_instances: int = 50, seed0: int = 2000,
                       grid_points: int = 200) -> list:
    """Stage-3 SCA vs a dense grid search on 2-VUE single-cell instances."""
    records = []
    for i in range(num_instances):
        scenario = generate_scenario(replace(POWER_FIXTURE, seed=seed0 + i))
        allocation = default_allocation(scenario)
        result = run_association(scenario, allocation)
        association = result.association
        eta = optimal_eta(scenario, association, allocation).eta_star
        omega = scenario.config.pricing_omega_init
        report = sca_power_allocation(scenario, association, eta, omega0=omega,
                                      delta=0.0, p0=allocation.power)
        f_sca = true_objective(scenario, association, eta, report.power, omega)
        _, f_grid = grid_power_oracle(scenario, association, eta, omega,
                                      grid_points=grid_points)
        gap = (f_grid - f_sca) / abs(f_grid) if f_grid != 0 else 0.0
        records.append({
            "seed": seed0 + i,
            "sca": f_sca,
            "grid": f_grid,
            "relative_gap": gap,
            "theorem_ok": verify_theorem_1(scenario, association),
        })
    return records


def bandwidth_agreement_check(num_instances: int = 50, seed0: int = 3000) -> list:
    """Closed-form eta vs the bisection oracle."""
    records = []
    for i in range(num_instances):
        scenario = generate_scenario(replace(BANDWIDTH_FIXTURE, seed=seed0 + i))
        allocation = default_allocation(scenario)
        result = run_association(scenario, allocation)
        association = result.association
        closed = optimal_eta(scenario, association, allocation).eta_star
        bisected = bisection_eta(scenario, association, allocation)
        records.append({
            "seed": seed0 + i,
            "closed_form": closed,
            "bisection": bisected,
            "difference": abs(closed - bisected),
            "theorem_ok": verify_theorem_1(scenario, association),
        })
    return records
