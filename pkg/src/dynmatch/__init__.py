"""Simulator and analysis toolkit for dynamic two-type matching markets."""

__version__ = "0.1.0"

from .compat import (
    AgentType,
    CompatibilityGraph,
    CompatModel,
    HomogeneousModel,
    Matching,
    MatrixModel,
    TwoTypeModel,
    compatible,
    fwp,
    load_pool_matrix,
    sample_static_pool,
    save_pool_matrix,
    sequential_greedy_match,
    smm,
)
from .matching import (
    brute_force_matching,
    has_augmenting_path,
    max_cardinality_matching,
    max_matching_h_priority,
    pool_matching_h_priority,
)
from .sim import (
    Batching,
    Greedy,
    Patient,
    Policy,
    SimConfig,
    SimTrace,
    run_simulation,
)
from .stats import (
    KSResult,
    Report,
    TypeStats,
    dominance_check,
    ks_exponential,
    littles_law_check,
    summarize,
    waiting_samples,
)
from .theory import (
    BirthDeathChain,
    Ctmc2D,
    Predictions,
    any_policy_upper_bound,
    batching_bounds,
    bd_stationary,
    bd_stationary_adaptive,
    ctmc_stationary_2d,
    greedy_ctmc,
    greedy_limits,
    greedy_loss_ratio_bound,
    ml_chain,
    mu_chain,
    patient_limits,
    small_lambda_limits,
)

__all__ = [name for name in dir() if not name.startswith("_")]
