"""Outer loop: alternate association, bandwidth split, and power control.

Each stage maximizes the total utility over its own block with the other
blocks fixed, so the utility climbs across outer iterations. A monotone
safeguard stops the loop if an iterate ever fails to improve (alternating
optimization can start cycling once the blocks disagree at the boundary of
the feeder-feasible region); the best iterate seen is returned either way.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .association import run_association
from .bandwidth import ETA_FLOOR, optimal_eta
from .link_model import (
    Association,
    ResourceAllocation,
    default_allocation,
    nearest_rsu_association,
    utility,
    UtilityReport,
)
from .power import sca_power_allocation
from .scenario import Scenario
from .association import select_hap_users


@dataclass(frozen=True)
class SolverConfig:
    outer_tol: float = 1e-4        # relative utility change declaring convergence
    outer_cap: int = 20
    sca_t_max: int = 100
    sca_epsilon: float | None = None   # None -> 1e-4 * total_bandwidth
    inner_tol: float = 1e-6
    inner_max_iter: int = 500
    sense_sweep_cap: int = 100
    swap_stall_factor: int = 10        # convergence after 10*N consecutive rejections
    swap_proposal_cap: int | None = None
    initial_eta: float = 0.5
    freeze_association: bool = False   # keep the nearest-RSU matching (baseline)
    ideal_backhaul: bool = False       # drop the feeder constraint: eta pinned at the floor


@dataclass
class OuterRecord:
    iteration: int
    utility: float
    eta: float
    omega: float
    assoc_changes: int
    wall_time: float   # seconds; excluded from the CSV so traces stay byte-stable


@dataclass
class SolveTrace:
    records: list = field(default_factory=list)
    final_report: UtilityReport | None = None
    converged: bool = False
    status: str = "converged"   # converged | truncated

    TRACE_CSV_COLUMNS = ("iteration", "utility", "eta", "omega", "assoc_changes")

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(self.TRACE_CSV_COLUMNS)
            for r in self.records:
                writer.writerow([r.iteration, repr(float(r.utility)),
                                 repr(float(r.eta)), repr(float(r.omega)),
                                 r.assoc_changes])

    @property
    def utilities(self) -> np.ndarray:
        return np.array([r.utility for r in self.records])


def three_stage_solve(scenario: Scenario,
                      solver: SolverConfig | None = None) -> tuple:
    """Run the three stages to a utility fixed point.

    Returns (association, allocation, trace); the returned pair is the
    best iterate by total utility, not necessarily the last one.
    """
    cfg = scenario.config
    solver = solver or SolverConfig()

    hap_ids = select_hap_users(scenario, cfg.resolved_hap_user_count)
    association = nearest_rsu_association(scenario, hap_ids)
    allocation = default_allocation(scenario, eta=solver.initial_eta)
    omega = cfg.pricing_omega_init

    trace = SolveTrace()
    best = None
    f_prev = None
    assoc_events_total = 0

    for outer in range(1, solver.outer_cap + 1):
        tick = time.perf_counter()

        if solver.freeze_association:
            assoc_changes = 0
        else:
            result = run_association(
                scenario, allocation, omega, initial=association,
                sense_sweep_cap=solver.sense_sweep_cap,
                swap_stall_factor=solver.swap_stall_factor,
                swap_proposal_cap=solver.swap_proposal_cap,
            )
            association = result.association
            assoc_changes = result.change_count
            assoc_events_total += len(result.events)

        if solver.ideal_backhaul:
            allocation = allocation.with_eta(ETA_FLOOR)
        else:
            allocation = allocation.with_eta(
                optimal_eta(scenario, association, allocation).eta_star)

        power_report = sca_power_allocation(
            scenario, association, allocation.eta,
            omega0=omega, t_max=solver.sca_t_max, epsilon=solver.sca_epsilon,
            p0=allocation.power, inner_tol=solver.inner_tol,
            inner_max_iter=solver.inner_max_iter,
        )
        allocation = allocation.with_power(power_report.power)
        omega = power_report.final_omega

        report = utility(scenario, association, allocation, omega)
        f_now = report.total_utility

        if f_prev is not None and f_now < f_prev - 1e-6 * abs(f_prev):
            # the new iterate regressed: alternating has stopped helping
            trace.converged = True
            break

        trace.records.append(OuterRecord(
            iteration=outer, utility=f_now, eta=allocation.eta,
            omega=omega, assoc_changes=assoc_changes,
            wall_time=time.perf_counter() - tick,
        ))
        if best is None or f_now > best[0]:
            best = (f_now, association, allocation, report)
        if f_prev is not None and abs(f_now - f_prev) <= solver.outer_tol * max(1.0, abs(f_prev)):
            trace.converged = True
            break
        f_prev = f_now
    else:
        trace.status = "truncated"

    _, association, allocation, report = best
    trace.final_report = report
    if not trace.converged and trace.status == "converged":
        trace.status = "truncated"
    return association, allocation, trace


def complexity_probe(sizes, base_config=None, solver: SolverConfig | None = None,
                     seed: int = 7) -> list:
    """Measure solver cost over a (num_vues, num_rsus) grid.

    Returns one row per size with wall time and work counters, for
    comparison against the expected per-outer-iteration cost
    N*M (association scan) + N*M*log(1/eps) (power rounds) + N^2*M (swaps).
    """
    from .config import SystemConfig
    from .scenario import generate_scenario

    if not sizes:
        raise ValueError("sizes must be nonempty")
    base = base_config if base_config is not None else SystemConfig()
    rows = []
    for n, m in sizes:
        cfg = replace(base, num_vues=int(n), num_rsus=int(m), seed=seed)
        scenario = generate_scenario(cfg)
        tick = time.perf_counter()
        _assoc, _alloc, trace = three_stage_solve(scenario, solver)
        elapsed = time.perf_counter() - tick

        alloc0 = default_allocation(scenario)
        assoc_result = run_association(scenario, alloc0)
        rows.append({
            "num_vues": int(n),
            "num_rsus": int(m),
            "wall_time_s": elapsed,
            "outer_iterations": len(trace.records),
            "assoc_events": len(assoc_result.events),
            "utility": trace.records[-1].utility if trace.records else float("nan"),
        })
    return rows
