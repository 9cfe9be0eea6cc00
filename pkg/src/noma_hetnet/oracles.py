"""Brute-force reference solvers for validating the staged algorithm.

Both oracles search exhaustively and independently of the solvers they
check: the association oracle enumerates every terrestrial assignment, and
the power oracle sweeps a dense grid with its own closed-form objective
evaluation.
"""

from __future__ import annotations

import itertools

import numpy as np

from .association import select_hap_users
from .link_model import (
    Association,
    ResourceAllocation,
    hap_index,
    make_association,
    sigma2_access,
    utility,
)
from .scenario import Scenario


class GuardError(RuntimeError):
    """The instance exceeds the oracle's enumeration budget."""


def exhaustive_association_oracle(scenario: Scenario,
                                  allocation: ResourceAllocation,
                                  omega: float | None = None,
                                  hap_ids=None,
                                  guard: int = 10**6) -> tuple:
    """Best terrestrial assignment by total utility, HAP set held fixed.

    Enumerates all M^(N - |hap set|) assignments in lexicographic order and
    keeps the first maximizer, so ties resolve toward the lexicographically
    smallest assignment. Returns (association, utility).
    """
    cfg = scenario.config
    if omega is None:
        omega = cfg.pricing_omega_init
    if hap_ids is None:
        hap_ids = select_hap_users(scenario, cfg.resolved_hap_user_count)
    hap_ids = np.asarray(sorted(int(v) for v in hap_ids), dtype=np.int64)
    m = scenario.num_rsus
    terrestrial = np.array(
        [v for v in range(scenario.num_vues) if v not in set(hap_ids.tolist())],
        dtype=np.int64,
    )
    count = m ** terrestrial.size
    if count > guard:
        raise GuardError(
            f"{m}^{terrestrial.size} = {count} assignments exceeds the guard ({guard})"
        )

    best_f = -np.inf
    best_assoc = None
    ap = np.empty(scenario.num_vues, dtype=np.int64)
    ap[hap_ids] = hap_index(scenario)
    for combo in itertools.product(range(m), repeat=terrestrial.size):
        ap[terrestrial] = combo
        candidate = make_association(scenario, ap)
        f = utility(scenario, candidate, allocation, omega).total_utility
        if f > best_f:
            best_f, best_assoc = f, candidate
    return best_assoc, float(best_f)


def _grid_objective_batch(scenario: Scenario, association: Association,
                          eta: float, omega: float,
                          points: np.ndarray) -> np.ndarray:
    """Priced utility for a batch of power vectors over the optimized VUEs.

    Reconstructs the objective from scratch (interference sums written out
    per receiver) rather than reusing the solver-side evaluation.
    """
    cfg = scenario.config
    m = scenario.num_rsus
    gains = scenario.channel.gain_vue_rsu
    terr = np.flatnonzero(association.ap < m)
    sigma2 = sigma2_access(cfg, eta)
    bw = (1.0 - eta) * cfg.total_bandwidth

    platform_users = np.flatnonzero(association.ap == m)
    cross_at = np.zeros(m)
    for cell in range(m):
        for v in platform_users:
            cross_at[cell] += cfg.hap_vue_power_watt * gains[v, cell]

    rank = {}
    for order in association.decoding_orders[:m]:
        for pos, vue in enumerate(order):
            rank[vue] = pos

    total = np.zeros(points.shape[0])
    for a, vue in enumerate(terr):
        cell = int(association.ap[vue])
        interference = np.full(points.shape[0], cross_at[cell] + sigma2)
        for b, other in enumerate(terr):
            if other == vue:
                continue
            other_cell = int(association.ap[other])
            if other_cell != cell or rank[int(other)] > rank[int(vue)]:
                interference += points[:, b] * gains[other, cell]
        gamma = points[:, a] * gains[vue, cell] / interference
        total += bw * np.log1p(gamma) / np.log(2.0)
        total -= omega * scenario.channel.gain_vue_hap[vue] * points[:, a]
    return total


def grid_power_oracle(scenario: Scenario, association: Association, eta: float,
                      omega: float, grid_points: int = 200) -> tuple:
    """Dense-grid argmax of the priced utility over [0, P_max]^k.

    Guarded to at most 3 optimized VUEs. Ties resolve toward the
    lexicographically smallest grid indices. Returns (power, utility) with
    the full-length power vector (platform entries at their constant).
    """
    cfg = scenario.config
    terr = np.flatnonzero(association.ap < scenario.num_rsus)
    k = terr.size
    if k > 3:
        raise GuardError(f"{k} optimized VUEs exceed the 3-dimensional grid guard")
    axis = np.linspace(0.0, cfg.max_power_vue_watt, grid_points)
    if k == 0:
        p = np.full(scenario.num_vues, cfg.hap_vue_power_watt)
        return p, 0.0
    mesh = np.meshgrid(*([axis] * k), indexing="ij")
    points = np.column_stack([g.ravel() for g in mesh])
    values = _grid_objective_batch(scenario, association, eta, omega, points)
    best = int(np.argmax(values))
    p = np.full(scenario.num_vues, cfg.hap_vue_power_watt)
    p[terr] = points[best]
    return p, float(values[best])
