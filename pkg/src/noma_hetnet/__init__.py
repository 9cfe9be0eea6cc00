"""Uplink NOMA vehicular HetNet simulator and staged resource allocator."""

from .config import ConfigError, SystemConfig, dbm_to_watt, load_config, noise_power
from .scenario import CacheMatrix, ChannelSet, Scenario, generate_scenario, make_scenario
from .link_model import (
    Association,
    ResourceAllocation,
    UtilityReport,
    default_allocation,
    make_association,
    nearest_rsu_association,
    rate_fronthaul,
    sic_decoding_order,
    sinr_hap,
    sinr_terrestrial,
    utility,
    verify_theorem_1,
)
from .association import (
    AssociationResult,
    caching_evaluation,
    run_association,
    select_hap_users,
    swap_matching,
)
from .bandwidth import (
    BandwidthSolution,
    InfeasibleBackhaulError,
    bisection_eta,
    compute_jb,
    optimal_eta,
)
from .power import (
    PowerSolveReport,
    QosInfeasibleError,
    SurrogateModel,
    build_surrogate,
    qos_constraint_transform,
    sca_power_allocation,
    solve_inner,
    true_objective,
)
from .orchestrator import SolverConfig, SolveTrace, complexity_probe, three_stage_solve
from .oracles import GuardError, exhaustive_association_oracle, grid_power_oracle
from .experiments import PRESETS, ExperimentPreset, run_experiment, run_scheme

__version__ = "0.1.0"
