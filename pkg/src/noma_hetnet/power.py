"""Stage 3: transmit power allocation by successive concave minorization.

The priced sum-utility splits into a difference of two concave terms,

    F(p) = (1-eta) B [ sum log2(signal_n + interf_n) - sum log2(interf_n) ]
           - omega * sum gain_to_platform_n * p_n,

both sums running over RSU-served VUEs. Each round replaces the second
(interference) term by its tangent plane at the current point, which
overestimates it, so the resulting concave surrogate is a global lower
bound on F that touches it at the expansion point. Maximizing the
surrogate over the power box (projected gradient ascent with backtracking,
plus a log barrier when per-VUE rate floors are active) therefore never
decreases F. The interference price omega is adapted between rounds:
raised when any feeder link is overloaded, lowered when the platform sees
more cross-tier interference than the configured threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .link_model import (
    Association,
    ResourceAllocation,
    hap_index,
    sigma2_access,
    utility,
)
from .scenario import Scenario

LN2 = math.log(2.0)


class QosInfeasibleError(RuntimeError):
    """No power vector in the box meets every active rate floor."""

    def __init__(self, vues, violations):
        self.vues = list(vues)
        self.violations = list(violations)
        worst = ", ".join(f"VUE {v}: short by {s:.3e}" for v, s in zip(self.vues, self.violations))
        super().__init__(f"rate floors unreachable ({worst})")


class _PowerProblem:
    """Affine interference structure of one (scenario, association, eta) state.

    For RSU-served VUE n, interf_n(q) = C[n] . q + base_n where q stacks
    the optimized (RSU-served) powers, C holds each interferer's gain
    toward n's serving RSU, and base_n bundles the cross-tier power from
    platform users plus the access-band noise floor.
    """

    def __init__(self, scenario: Scenario, association: Association, eta: float):
        cfg = scenario.config
        m = scenario.num_rsus
        if not 0.0 < eta < 1.0:
            raise ValueError(f"eta must lie in (0, 1), got {eta}")
        self.scenario = scenario
        self.association = association
        self.eta = float(eta)
        self.bw = (1.0 - eta) * cfg.total_bandwidth
        self.p_max = cfg.max_power_vue_watt
        self.num_vues = scenario.num_vues

        self.terr = np.flatnonzero(association.ap < m)
        k = self.terr.size
        gains = scenario.channel.gain_vue_rsu
        self.cells = association.ap[self.terr].astype(np.int64)
        self.own = gains[self.terr, self.cells] if k else np.zeros(0)
        self.gain_platform = scenario.channel.gain_vue_hap[self.terr]

        sigma2 = sigma2_access(cfg, eta)
        platform_users = np.flatnonzero(association.ap == m)
        if platform_users.size:
            cross = (cfg.hap_vue_power_watt * gains[platform_users, :]).sum(axis=0)
        else:
            cross = np.zeros(m)
        self.base = cross[self.cells] + sigma2 if k else np.zeros(0)

        rank = {}
        for order in association.decoding_orders[:m]:
            for pos, vue in enumerate(order):
                rank[vue] = pos
        coeff = np.zeros((k, k))
        for a in range(k):
            cell_a = self.cells[a]
            for b in range(k):
                if a == b:
                    continue
                vue_b = int(self.terr[b])
                if self.cells[b] != cell_a or rank[vue_b] > rank[int(self.terr[a])]:
                    coeff[a, b] = gains[vue_b, cell_a]
        self.coeff = coeff

    # all methods below work on q = p[self.terr]

    def q_of(self, p: np.ndarray) -> np.ndarray:
        return np.asarray(p, dtype=float)[self.terr]

    def full_p(self, q: np.ndarray, template: np.ndarray) -> np.ndarray:
        p = np.asarray(template, dtype=float).copy()
        p[self.terr] = q
        return p

    def interf(self, q: np.ndarray) -> np.ndarray:
        return self.coeff @ q + self.base

    def signal_plus_interf(self, q: np.ndarray) -> np.ndarray:
        return self.own * q + self.interf(q)

    def access_log_sum(self, q: np.ndarray) -> float:
        return float(np.log(self.signal_plus_interf(q)).sum() / LN2) if q.size else 0.0

    def interf_log_sum(self, q: np.ndarray) -> float:
        return float(np.log(self.interf(q)).sum() / LN2) if q.size else 0.0

    def interf_log_sum_grad(self, q: np.ndarray) -> np.ndarray:
        if not q.size:
            return np.zeros(0)
        return self.coeff.T @ (1.0 / self.interf(q)) / LN2

    def access_log_sum_grad(self, q: np.ndarray) -> np.ndarray:
        if not q.size:
            return np.zeros(0)
        inv = 1.0 / self.signal_plus_interf(q)
        return (self.own * inv + self.coeff.T @ inv) / LN2

    def objective_q(self, q: np.ndarray, omega: float) -> float:
        rate_part = self.access_log_sum(q) - self.interf_log_sum(q)
        return self.bw * rate_part - omega * float(self.gain_platform @ q)


def _check_box(problem: _PowerProblem, p: np.ndarray) -> None:
    q = problem.q_of(p)
    if q.size and ((q < -1e-15).any() or (q > problem.p_max * (1 + 1e-12)).any()):
        raise ValueError(f"powers must lie in [0, {problem.p_max}] W")


def true_objective(scenario: Scenario, association: Association, eta: float,
                   p: np.ndarray, omega: float) -> float:
    """Priced sum-utility of the RSU tier at power vector p, bit/s."""
    problem = _PowerProblem(scenario, association, eta)
    _check_box(problem, p)
    return problem.objective_q(problem.q_of(p), omega)


def interference_log_sum(scenario: Scenario, association: Association,
                         eta: float, p: np.ndarray) -> float:
    """The concave term that gets linearized: sum of log2 interference."""
    problem = _PowerProblem(scenario, association, eta)
    return problem.interf_log_sum(problem.q_of(p))


@dataclass(frozen=True)
class SurrogateModel:
    """Concave global lower bound on the priced utility, tight at p[t]."""

    expansion_point: np.ndarray   # (N,), watts
    linear_coeffs: np.ndarray     # gradient of the interference log-sum at p[t], 1/W
    constant_term: float          # interference log-sum at p[t]
    omega: float
    problem: _PowerProblem = field(repr=False)

    def _value_q(self, q: np.ndarray) -> float:
        prob = self.problem
        q_t = prob.q_of(self.expansion_point)
        linearized = self.constant_term + float(self.linear_coeffs @ (q - q_t))
        return (prob.bw * (prob.access_log_sum(q) - linearized)
                - self.omega * float(prob.gain_platform @ q))

    def _grad_q(self, q: np.ndarray) -> np.ndarray:
        prob = self.problem
        return (prob.bw * (prob.access_log_sum_grad(q) - self.linear_coeffs)
                - self.omega * prob.gain_platform)

    def value(self, p: np.ndarray) -> float:
        return self._value_q(self.problem.q_of(p))


def build_surrogate(scenario: Scenario, association: Association, eta: float,
                    p_t: np.ndarray, omega: float) -> SurrogateModel:
    """Linearize the interference log-sum at p_t (tangent overestimates a
    concave function, and it enters negatively, so the surrogate minorizes
    the true objective everywhere and matches it at p_t)."""
    problem = _PowerProblem(scenario, association, eta)
    return _surrogate_from_problem(problem, p_t, omega)


def _surrogate_from_problem(problem: _PowerProblem, p_t, omega: float) -> SurrogateModel:
    p_t = np.asarray(p_t, dtype=float).copy()
    _check_box(problem, p_t)
    q_t = problem.q_of(p_t)
    return SurrogateModel(
        expansion_point=p_t,
        linear_coeffs=problem.interf_log_sum_grad(q_t),
        constant_term=problem.interf_log_sum(q_t),
        omega=float(omega),
        problem=problem,
    )


@dataclass(frozen=True)
class QosConstraintSet:
    """Concave inner approximations of the per-VUE rate floors at p[t].

    Each row rewrites rate >= floor as
        log2(signal+interf) - log2(interf) >= floor / ((1-eta) B)
    and replaces -log2(interf) by its tangent at p[t]; satisfying the
    approximation implies the true floor.
    """

    problem: _PowerProblem = field(repr=False)
    q_t: np.ndarray
    interf_t: np.ndarray        # interference at the expansion point
    rate_floor_norm: float      # floor / ((1-eta) B)

    @property
    def active(self) -> bool:
        return self.rate_floor_norm > 0.0 and self.q_t.size > 0

    def value_q(self, q: np.ndarray) -> np.ndarray:
        prob = self.problem
        linearized = (np.log(self.interf_t) / LN2
                      + (prob.coeff @ (q - self.q_t)) / (self.interf_t * LN2))
        return np.log(prob.signal_plus_interf(q)) / LN2 - linearized - self.rate_floor_norm

    def grad_q(self, q: np.ndarray) -> np.ndarray:
        """Jacobian, shape (k, k): row n is the gradient of constraint n."""
        prob = self.problem
        inv = 1.0 / prob.signal_plus_interf(q)
        jac = prob.coeff * inv[:, None]
        jac[np.arange(q.size), np.arange(q.size)] += prob.own * inv
        jac -= prob.coeff / self.interf_t[:, None]
        return jac / LN2

    def true_value_q(self, q: np.ndarray) -> np.ndarray:
        prob = self.problem
        return (np.log(prob.signal_plus_interf(q)) - np.log(prob.interf(q))) / LN2 \
            - self.rate_floor_norm

    def value(self, p: np.ndarray) -> np.ndarray:
        return self.value_q(self.problem.q_of(p))

    def true_value(self, p: np.ndarray) -> np.ndarray:
        return self.true_value_q(self.problem.q_of(p))


def qos_constraint_transform(scenario: Scenario, association: Association,
                             eta: float, p_t: np.ndarray) -> QosConstraintSet:
    problem = _PowerProblem(scenario, association, eta)
    return _qos_from_problem(problem, p_t)


def _qos_from_problem(problem: _PowerProblem, p_t) -> QosConstraintSet:
    q_t = problem.q_of(np.asarray(p_t, dtype=float))
    return QosConstraintSet(
        problem=problem,
        q_t=q_t.copy(),
        interf_t=problem.interf(q_t),
        rate_floor_norm=problem.scenario.config.qos_rate / problem.bw,
    )


# ---------------------------------------------------------------------------
# inner solver: projected gradient ascent + backtracking (+ log barrier)
# ---------------------------------------------------------------------------


def _pgd(value_fn, grad_fn, q0, p_max, tol, max_iter):
    """Maximize a concave function over the box [0, p_max]^k.

    Stops when the unit-step projected-gradient residual falls below
    tol * p_max, progress stalls, the step collapses, or max_iter is hit.
    """
    q = q0.copy()
    v = value_fn(q)
    step = 1.0
    for _ in range(max_iter):
        g = grad_fn(q)
        residual = np.abs(np.clip(q + g, 0.0, p_max) - q).max() if q.size else 0.0
        if residual <= tol * p_max:
            break
        alpha = step
        accepted = False
        for _bt in range(60):
            q_new = np.clip(q + alpha * g, 0.0, p_max)
            move = q_new - q
            if not move.any():
                break
            v_new = value_fn(q_new)
            if np.isfinite(v_new) and v_new >= v + 1e-4 * float(g @ move):
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            break
        stalled = v_new - v <= 1e-12 * max(1.0, abs(v))
        q, v = q_new, v_new
        step = alpha * 2.0
        if stalled:
            break
    return q


def _restore_feasibility(constraints: QosConstraintSet, q0, p_max, tol, max_iter):
    """Push q into the interior of the approximated floors via a smoothed
    max-min ascent; raise with the worst offenders if none exists."""
    tau = 20.0

    def smoothed_min(q):
        c = constraints.value_q(q)
        return -float(np.log(np.exp(-tau * (c - c.min())).sum()) / tau) + float(c.min())

    def smoothed_min_grad(q):
        c = constraints.value_q(q)
        w = np.exp(-tau * (c - c.min()))
        w /= w.sum()
        return constraints.grad_q(q).T @ w

    q = _pgd(smoothed_min, smoothed_min_grad, q0, p_max, tol=1e-9, max_iter=max_iter)
    c = constraints.value_q(q)
    margin = 1e-9 * max(1.0, constraints.rate_floor_norm)
    if c.min() <= margin:
        bad = np.flatnonzero(c <= margin)
        vues = [int(constraints.problem.terr[i]) for i in bad]
        return q, False, vues, list(-c[bad])
    return q, True, [], []


def solve_inner(surrogate: SurrogateModel, constraints: QosConstraintSet,
                p_start: np.ndarray | None = None, tol: float = 1e-6,
                max_iter: int = 500) -> np.ndarray:
    """Maximize the surrogate over the power box and approximated floors.

    Returns a full-length power vector; platform entries pass through from
    the start point. When floors are active the box ascent runs inside a
    decreasing log-barrier schedule, and the best strictly feasible
    iterate by surrogate value is returned (the start point qualifies, so
    the surrogate value never regresses).
    """
    problem = surrogate.problem
    template = surrogate.expansion_point if p_start is None else np.asarray(p_start, dtype=float)
    q = problem.q_of(template).copy()
    p_max = problem.p_max
    if not q.size:
        return problem.full_p(q, template)

    bw_scale = max(problem.bw, 1.0)

    def s_value(qq):
        return surrogate._value_q(qq) / bw_scale

    def s_grad(qq):
        return surrogate._grad_q(qq) / bw_scale

    if not constraints.active:
        q = _pgd(s_value, s_grad, q, p_max, tol, max_iter)
        return problem.full_p(q, template)

    if constraints.value_q(q).min() <= 0.0:
        q, ok, vues, gaps = _restore_feasibility(constraints, q, p_max, tol, max_iter)
        if not ok:
            raise QosInfeasibleError(vues, gaps)

    best_q = q.copy()
    best_s = s_value(q)
    mu = 1e-2 * max(1.0, abs(best_s))
    mu_final = 1e-9 * max(1.0, abs(best_s))
    while True:
        def merit(qq, mu=mu):
            c = constraints.value_q(qq)
            if (c <= 0.0).any():
                return -np.inf
            return s_value(qq) + mu * float(np.log(c).sum())

        def merit_grad(qq, mu=mu):
            c = constraints.value_q(qq)
            return s_grad(qq) + mu * (constraints.grad_q(qq).T @ (1.0 / c))

        q = _pgd(merit, merit_grad, q, p_max, tol, max_iter)
        if constraints.value_q(q).min() > 0.0 and s_value(q) > best_s:
            best_q, best_s = q.copy(), s_value(q)
        if mu <= mu_final:
            break
        mu *= 0.1
    return problem.full_p(best_q, template)


# ---------------------------------------------------------------------------
# outer SCA loop with dynamic pricing
# ---------------------------------------------------------------------------


@dataclass
class PowerSolveReport:
    power: np.ndarray
    objective_trace: list
    omega_trace: list
    iterations: int
    converged: bool
    final_omega: float
    max_c1_violation: list
    max_c2_violation: list

    def to_csv(self, path) -> None:
        import csv

        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(("t", "objective", "omega",
                             "max_c1_violation", "max_c2_violation"))
            for t in range(len(self.objective_trace)):
                writer.writerow([t + 1, repr(float(self.objective_trace[t])),
                                 repr(float(self.omega_trace[t])),
                                 repr(float(self.max_c1_violation[t])),
                                 repr(float(self.max_c2_violation[t]))])


def _mean_platform_cross_tier(report, platform_idx: int) -> float:
    rows = report.ap == platform_idx
    if not rows.any():
        return 0.0
    return float(report.phi_i2_w[rows].mean())


def sca_power_allocation(scenario: Scenario, association: Association, eta: float,
                         omega0: float | None = None, delta: float | None = None,
                         t_max: int = 100, epsilon: float | None = None,
                         p0: np.ndarray | None = None,
                         omega_max: float | None = None,
                         inner_tol: float = 1e-6,
                         inner_max_iter: int = 500) -> PowerSolveReport:
    """Iterate surrogate builds and inner solves, adapting the price omega.

    Per round: linearize at the incumbent, maximize the surrogate, then
    raise omega by delta if any feeder link is overloaded, or cut it by
    delta (never below 0, never above omega_max) if the platform-side
    cross-tier interference exceeds its threshold. Stops when successive
    objectives differ by at most epsilon or after t_max rounds.
    """
    cfg = scenario.config
    if omega0 is None:
        omega0 = cfg.pricing_omega_init
    if delta is None:
        delta = cfg.resolved_omega_step
    if epsilon is None:
        epsilon = 1e-4 * cfg.total_bandwidth
    if omega_max is None:
        omega_max = cfg.resolved_omega_max
    if t_max < 1:
        raise ValueError(f"t_max must be >= 1, got {t_max}")
    if not epsilon > 0:
        raise ValueError(f"epsilon must be > 0, got {epsilon}")
    if delta < 0:
        raise ValueError(f"delta must be >= 0, got {delta}")

    problem = _PowerProblem(scenario, association, eta)
    if p0 is None:
        p = np.full(scenario.num_vues, cfg.max_power_vue_watt / 2.0)
    else:
        p = np.asarray(p0, dtype=float).copy()
    omega = float(omega0)
    rsu_power = np.full(scenario.num_rsus, cfg.max_power_rsu_watt)

    f_prev = problem.objective_q(problem.q_of(p), omega)
    objective_trace, omega_trace, c1_trace, c2_trace = [], [], [], []
    converged = False
    iterations = 0
    for t in range(1, t_max + 1):
        iterations = t
        surrogate = _surrogate_from_problem(problem, p, omega)
        constraints = _qos_from_problem(problem, p)
        p = solve_inner(surrogate, constraints, p_start=p,
                        tol=inner_tol, max_iter=inner_max_iter)

        allocation = ResourceAllocation(eta=eta, power=p, rsu_backhaul_power=rsu_power)
        report = utility(scenario, association, allocation, omega)
        # a cell sitting exactly on its feeder boundary is not congested
        slack_tol = 1e-9 * max(1.0, float(np.abs(report.rate_bps).sum()))
        congested = bool((report.c2_slack < -slack_tol).any())
        noisy_platform = (_mean_platform_cross_tier(report, hap_index(scenario))
                          > cfg.hap_interference_threshold)
        if congested:
            omega = min(omega + delta, omega_max)
        elif noisy_platform:
            omega = max(omega - delta, 0.0)

        f_t = problem.objective_q(problem.q_of(p), omega)
        objective_trace.append(f_t)
        omega_trace.append(omega)
        terr = report.ap < hap_index(scenario)
        c1_trace.append(float(np.maximum(cfg.qos_rate - report.rate_bps[terr], 0.0).max())
                        if terr.any() else 0.0)
        c2_trace.append(float(np.maximum(-report.c2_slack, 0.0).max()))

        if abs(f_t - f_prev) <= epsilon:
            converged = True
            break
        f_prev = f_t

    return PowerSolveReport(
        power=p,
        objective_trace=objective_trace,
        omega_trace=omega_trace,
        iterations=iterations,
        converged=converged,
        final_omega=omega,
        max_c1_violation=c1_trace,
        max_c2_violation=c2_trace,
    )
