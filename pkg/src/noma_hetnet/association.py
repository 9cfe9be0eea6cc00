"""Stage 1: caching-aware user association.

Platform users are picked once by channel-gain ratio; the remaining VUEs
then run two refinement phases against the fixed bandwidth/power point:

  1. sense-and-act sweeps, where each VUE proposes a serving RSU from its
     caching state (stay with the caching RSU, defect to a cheaper closer
     one, or best-respond on utility when uncached), and
  2. randomized swap matching between users of distinct cells.

Every proposed rebinding or swap is accepted only if it strictly raises
the total utility, which keeps the search an ascent over a finite state
space and rules out cycles.

Because transmit powers are fixed during this stage, moving a VUE between
cells only changes the rates inside the two cells involved (an
interferer's gain toward any third cell is the same whichever cell serves
it), so proposals are scored by re-evaluating just those cells.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .link_model import (
    Association,
    ResourceAllocation,
    backhaul_sinr,
    effective_power,
    hap_index,
    make_association,
    nearest_rsu_association,
    rebind,
    sigma2_access,
)
from .scenario import Scenario

# seed tag keeping the swap-proposal stream disjoint from the scenario streams
_SWAP_STREAM_TAG = 0x5BA9

LN2 = math.log(2.0)


@dataclass(frozen=True)
class PreferenceState:
    """Per-VUE association preferences at one evaluation point."""

    kappa: np.ndarray             # (N,) platform-to-nearest-RSU gain ratio
    preference_lists: np.ndarray  # (N, M) RSUs by descending gain
    candidate_sets: tuple         # per VUE: RSUs strictly closer than its reference RSU

    def rank_of(self, vue: int, rsu: int) -> int:
        """Position of `rsu` in the VUE's preference list (0 = best)."""
        return int(np.flatnonzero(self.preference_lists[vue] == rsu)[0])


def channel_ratio(scenario: Scenario) -> np.ndarray:
    """Platform gain over nearest-RSU gain, per VUE."""
    n = scenario.num_vues
    near = scenario.channel.gain_vue_rsu[np.arange(n), scenario.nearest_rsu]
    return scenario.channel.gain_vue_hap / near


def select_hap_users(scenario: Scenario, count: int) -> np.ndarray:
    """The `count` VUEs with the largest gain ratio; ties favor lower ids."""
    if not 0 <= count < scenario.num_vues:
        raise ValueError(
            f"platform user count must satisfy 0 <= count < {scenario.num_vues}, got {count}"
        )
    kappa = channel_ratio(scenario)
    ids = np.arange(scenario.num_vues)
    ranked = ids[np.lexsort((ids, -kappa))]
    return np.sort(ranked[:count])


def closer_rsus(scenario: Scenario, vue: int, reference_rsu: int) -> np.ndarray:
    """RSUs strictly closer to the VUE than the reference RSU."""
    d = scenario.dist_vue_rsu[vue]
    return np.flatnonzero(d < d[reference_rsu])


def build_preference_state(scenario: Scenario, association: Association) -> PreferenceState:
    n, m = scenario.num_vues, scenario.num_rsus
    gains = scenario.channel.gain_vue_rsu
    ids = np.arange(m)
    pref = np.stack([ids[np.lexsort((ids, -gains[v]))] for v in range(n)])
    candidates = []
    for v in range(n):
        ref = scenario.cache.caching_rsu(v)
        if ref is None:
            ref = int(association.ap[v]) if association.ap[v] < m else int(scenario.nearest_rsu[v])
        candidates.append(closer_rsus(scenario, v, ref))
    return PreferenceState(channel_ratio(scenario), pref, tuple(candidates))


class _StageOneEvaluator:
    """Incremental utility bookkeeping for a fixed (allocation, HAP set).

    Holds the per-cell received-power landscape, which is invariant under
    terrestrial reassignment, and memoizes per-cell utilities so that
    single-VUE moves and pair swaps cost only the touched cells.
    """

    def __init__(self, scenario: Scenario, allocation: ResourceAllocation,
                 omega: float, ap: np.ndarray):
        cfg = scenario.config
        self.scenario = scenario
        self.m = scenario.num_rsus
        self.gains = scenario.channel.gain_vue_rsu
        self.sigma2 = sigma2_access(cfg, allocation.eta)
        self.bw = (1.0 - allocation.eta) * cfg.total_bandwidth

        assoc0 = make_association(scenario, ap)
        self.p = effective_power(scenario, assoc0, allocation)
        self.recv = self.p[:, None] * self.gains          # (N, M)
        terr_mask = ap < self.m
        self.tot_terr = self.recv[terr_mask].sum(axis=0)  # per-RSU, invariant
        self.cross_tier = self.recv[~terr_mask].sum(axis=0)
        self.penalty = omega * scenario.channel.gain_vue_hap * self.p

        self.ap = ap.copy()
        self.cells = [sorted(np.flatnonzero(ap == c).tolist(),
                             key=lambda v: (-self.gains[v, c], v))
                      for c in range(self.m)]
        self.cell_f = np.array([self._cell_value(c, self.cells[c])
                                for c in range(self.m)])

    def _cell_value(self, cell: int, members) -> float:
        if not members:
            return 0.0
        ids = np.asarray(members, dtype=np.int64)
        w = self.recv[ids, cell]
        later = np.concatenate([np.cumsum(w[::-1])[::-1][1:], [0.0]])
        inter = self.tot_terr[cell] - w.sum()
        gamma = w / (later + inter + self.cross_tier[cell] + self.sigma2)
        rates = self.bw * np.log1p(gamma) / LN2
        return float(rates.sum() - self.penalty[ids].sum())

    def _sorted_with(self, cell: int, members, vue: int):
        out = [v for v in members if v != vue]
        out.append(vue)
        out.sort(key=lambda v: (-self.gains[v, cell], v))
        return out

    def member_sinr(self, cell: int, members, vue: int) -> float:
        """SINR the VUE sees inside `cell` with the given member set."""
        ids = np.asarray(members, dtype=np.int64)
        w = self.recv[ids, cell]
        later = np.concatenate([np.cumsum(w[::-1])[::-1][1:], [0.0]])
        inter = self.tot_terr[cell] - w.sum()
        k = members.index(vue)
        return float(w[k] / (later[k] + inter + self.cross_tier[cell] + self.sigma2))

    def hypothetical_sinr(self, vue: int, cell: int) -> float:
        members = self._sorted_with(cell, self.cells[cell], vue)
        return self.member_sinr(cell, members, vue)

    @property
    def total(self) -> float:
        return float(self.cell_f.sum())

    def move_gain(self, vue: int, target: int) -> float:
        """Utility change from rebinding one VUE (no state change)."""
        src = int(self.ap[vue])
        if target == src:
            return 0.0
        new_src = [v for v in self.cells[src] if v != vue]
        new_tgt = self._sorted_with(target, self.cells[target], vue)
        return (self._cell_value(src, new_src) + self._cell_value(target, new_tgt)
                - self.cell_f[src] - self.cell_f[target])

    def apply_move(self, vue: int, target: int) -> None:
        src = int(self.ap[vue])
        self.cells[src] = [v for v in self.cells[src] if v != vue]
        self.cells[target] = self._sorted_with(target, self.cells[target], vue)
        self.cell_f[src] = self._cell_value(src, self.cells[src])
        self.cell_f[target] = self._cell_value(target, self.cells[target])
        self.ap[vue] = target

    def swap_gain(self, v1: int, v2: int) -> float:
        """Utility change from exchanging the cells of two VUEs."""
        c1, c2 = int(self.ap[v1]), int(self.ap[v2])
        new_c1 = self._sorted_with(c1, [v for v in self.cells[c1] if v != v1], v2)
        new_c2 = self._sorted_with(c2, [v for v in self.cells[c2] if v != v2], v1)
        return (self._cell_value(c1, new_c1) + self._cell_value(c2, new_c2)
                - self.cell_f[c1] - self.cell_f[c2])

    def apply_swap(self, v1: int, v2: int) -> None:
        c1, c2 = int(self.ap[v1]), int(self.ap[v2])
        self.apply_move(v1, c2)
        self.apply_move(v2, c1)


def backhaul_preference_exponent(scenario: Scenario, eta: float) -> float:
    """Exponent weighting the feeder-link term of the caching evaluation.

    Kept as its own function so alternative weightings can be swapped in
    one place.
    """
    return (1.0 - scenario.config.weight_alpha) * eta / scenario.num_rsus


def _caching_score(scenario, evaluator, eta, feeder_gamma, vue, caching, candidate) -> float:
    alpha = scenario.config.weight_alpha
    front_exp = alpha * (1.0 - eta)
    gamma_cache = evaluator.hypothetical_sinr(vue, caching)
    gamma_cand = evaluator.hypothetical_sinr(vue, candidate)
    feeder_exp = backhaul_preference_exponent(scenario, eta)
    xi = (1.0 + gamma_cand) ** front_exp / (1.0 + feeder_gamma[candidate]) ** feeder_exp
    return (1.0 + gamma_cache) ** front_exp / xi


def caching_evaluation(scenario: Scenario, association: Association,
                       allocation: ResourceAllocation, vue: int,
                       candidate: int) -> float:
    """Score a closer RSU against the VUE's caching RSU.

    Values >= 1 mean the cached content outweighs the closer candidate's
    channel advantage; values in (0, 1) favor the candidate. Uncached VUEs
    score 0.
    """
    caching = scenario.cache.caching_rsu(vue)
    if caching is None:
        return 0.0
    if candidate not in closer_rsus(scenario, vue, caching):
        raise ValueError(
            f"RSU {candidate} is not strictly closer to VUE {vue} than its caching RSU {caching}"
        )
    evaluator = _StageOneEvaluator(scenario, allocation,
                                   scenario.config.pricing_omega_init, association.ap)
    feeder_gamma = backhaul_sinr(scenario, allocation)
    return _caching_score(scenario, evaluator, allocation.eta, feeder_gamma,
                          vue, caching, candidate)


def _propose(scenario, evaluator, eta, feeder_gamma, vue) -> int:
    """Target RSU under the sense-and-act rules (see propose_action)."""
    caching = scenario.cache.caching_rsu(vue)
    if caching is not None:
        candidates = closer_rsus(scenario, vue, caching)
        if candidates.size == 0:
            return caching
        scores = np.array([
            _caching_score(scenario, evaluator, eta, feeder_gamma, vue, caching, int(v))
            for v in candidates
        ])
        if (scores >= 1.0).all():
            return caching
        return int(candidates[int(np.argmin(scores))])
    current = int(evaluator.ap[vue])
    best_rsu, best_gain = current, 0.0
    for rsu in range(scenario.num_rsus):
        if rsu == current:
            continue
        gain = evaluator.move_gain(vue, rsu)
        if gain > best_gain:
            best_gain, best_rsu = gain, rsu
    return best_rsu


def propose_action(scenario: Scenario, association: Association,
                   allocation: ResourceAllocation, vue: int,
                   omega: float | None = None) -> int:
    """Serving RSU the VUE asks for under the sense-and-act rules.

    Cached VUEs weigh their caching RSU against strictly closer ones via
    the caching evaluation; uncached VUEs best-respond on total utility
    over all RSUs (current RSU kept on ties).
    """
    if association.ap[vue] >= scenario.num_rsus:
        raise ValueError(f"VUE {vue} is served by the platform")
    if omega is None:
        omega = scenario.config.pricing_omega_init
    evaluator = _StageOneEvaluator(scenario, allocation, omega, association.ap)
    feeder_gamma = backhaul_sinr(scenario, allocation)
    return _propose(scenario, evaluator, allocation.eta, feeder_gamma, int(vue))


def apply_action(scenario: Scenario, association: Association,
                 allocation: ResourceAllocation, vue: int,
                 omega: float | None = None) -> Association:
    """Bind the VUE to the RSU its sense-and-act rule selects."""
    target = propose_action(scenario, association, allocation, vue, omega)
    if target == association.ap[vue]:
        return association
    return rebind(scenario, association, int(vue), target)


@dataclass(frozen=True)
class AssociationEvent:
    index: int
    kind: str          # hap_select | rebind | swap_accept | swap_reject
    vues: tuple
    delta_utility: float


@dataclass
class AssociationResult:
    association: Association
    utility: float
    events: list = field(default_factory=list)
    truncated: bool = False
    state_hashes: list = field(default_factory=list)

    @property
    def change_count(self) -> int:
        return sum(1 for e in self.events if e.kind in ("rebind", "swap_accept"))


def swap_matching(scenario: Scenario, association: Association,
                  allocation: ResourceAllocation, omega: float | None = None,
                  rng: np.random.Generator | None = None,
                  stall_limit: int | None = None,
                  proposal_cap: int | None = None,
                  events: list | None = None,
                  state_hashes: list | None = None) -> Association:
    """Randomized utility-improving swaps between users of distinct cells.

    Samples ordered pairs of RSU-served VUEs from different cells and
    exchanges them whenever the total utility strictly increases.
    Convergence is declared after `stall_limit` consecutive rejections
    (default 10 N); platform users never move.
    """
    cfg = scenario.config
    n = scenario.num_vues
    if omega is None:
        omega = cfg.pricing_omega_init
    if rng is None:
        rng = np.random.Generator(np.random.PCG64(
            np.random.SeedSequence((cfg.seed, _SWAP_STREAM_TAG))))
    if stall_limit is None:
        stall_limit = 10 * n
    if proposal_cap is None:
        proposal_cap = 200 * n
    if events is None:
        events = []

    evaluator = _StageOneEvaluator(scenario, allocation, omega, association.ap)
    _swap_phase(scenario, evaluator, rng, stall_limit, proposal_cap, events, state_hashes)
    return make_association(scenario, evaluator.ap)


def _swap_phase(scenario, evaluator, rng, stall_limit, proposal_cap,
                events, state_hashes) -> bool:
    """Run the swap loop on an evaluator in place; True when truncated."""
    m = scenario.num_rsus
    terrestrial = np.flatnonzero(evaluator.ap < m)
    if terrestrial.size < 2 or np.unique(evaluator.ap[terrestrial]).size < 2:
        return False
    gate = 1e-9 * max(1.0, abs(evaluator.total))
    stall = 0
    proposals = 0
    while stall < stall_limit:
        if proposals >= proposal_cap:
            return True
        v1, v2 = (int(v) for v in rng.choice(terrestrial, size=2, replace=False))
        if evaluator.ap[v1] == evaluator.ap[v2]:
            continue
        proposals += 1
        gain = evaluator.swap_gain(v1, v2)
        if gain > gate:
            evaluator.apply_swap(v1, v2)
            events.append(AssociationEvent(len(events), "swap_accept", (v1, v2), gain))
            if state_hashes is not None:
                state_hashes.append(hash(tuple(evaluator.ap.tolist())))
            stall = 0
        else:
            events.append(AssociationEvent(len(events), "swap_reject", (v1, v2), gain))
            stall += 1
    return False


def run_association(scenario: Scenario, allocation: ResourceAllocation,
                    omega: float | None = None,
                    initial: Association | None = None,
                    sense_sweep_cap: int = 100,
                    swap_stall_factor: int = 10,
                    swap_proposal_cap: int | None = None) -> AssociationResult:
    """Full stage-1 pass: platform selection, sense-and-act, swap matching.

    Bandwidth and powers are held at the given allocation throughout.
    Decoding orders refresh with every accepted change, and each accepted
    change strictly increases the total utility, so visited association
    states never repeat.
    """
    cfg = scenario.config
    if omega is None:
        omega = cfg.pricing_omega_init
    n = scenario.num_vues
    if swap_proposal_cap is None:
        swap_proposal_cap = 200 * n

    hap_ids = select_hap_users(scenario, cfg.resolved_hap_user_count)
    if initial is None:
        ap = nearest_rsu_association(scenario, hap_ids).ap.copy()
    else:
        ap = initial.ap.copy()
        on_platform = ap == hap_index(scenario)
        ap[on_platform] = scenario.nearest_rsu[on_platform]
        ap[hap_ids] = hap_index(scenario)

    evaluator = _StageOneEvaluator(scenario, allocation, omega, ap)
    feeder_gamma = backhaul_sinr(scenario, allocation)
    events = [AssociationEvent(0, "hap_select", tuple(int(v) for v in hap_ids), 0.0)]
    hashes = [hash(tuple(evaluator.ap.tolist()))]
    truncated = False
    gate = 1e-9 * max(1.0, abs(evaluator.total))

    terrestrial = [int(v) for v in np.flatnonzero(evaluator.ap < hap_index(scenario))]
    for _sweep in range(sense_sweep_cap):
        accepted = 0
        for vue in terrestrial:
            target = _propose(scenario, evaluator, allocation.eta, feeder_gamma, vue)
            if target == evaluator.ap[vue]:
                continue
            gain = evaluator.move_gain(vue, target)
            if gain > gate:
                evaluator.apply_move(vue, target)
                events.append(AssociationEvent(len(events), "rebind", (vue,), gain))
                hashes.append(hash(tuple(evaluator.ap.tolist())))
                accepted += 1
        if accepted == 0:
            break
    else:
        truncated = True

    swap_truncated = _swap_phase(
        scenario, evaluator,
        rng=np.random.Generator(np.random.PCG64(
            np.random.SeedSequence((cfg.seed, _SWAP_STREAM_TAG)))),
        stall_limit=swap_stall_factor * n,
        proposal_cap=swap_proposal_cap,
        events=events,
        state_hashes=hashes,
    )
    return AssociationResult(
        association=make_association(scenario, evaluator.ap),
        utility=evaluator.total,
        events=events,
        truncated=truncated or swap_truncated,
        state_hashes=hashes,
    )


EVENT_CSV_COLUMNS = ("iteration", "event_type", "vue_ids", "delta_utility")


def events_to_csv(events, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(EVENT_CSV_COLUMNS)
        for i, event in enumerate(events):
            writer.writerow([i, event.kind,
                             "|".join(str(v) for v in event.vues),
                             repr(float(event.delta_utility))])
