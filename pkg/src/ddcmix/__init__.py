"""EM-NPL(q): truncated nested pseudo-likelihood estimation of dynamic
discrete choice models and games with finite-mixture unobserved types."""

from .dgp import (
    EntryExitSpec,
    EntryGameSpec,
    SieveInitConfig,
    build_entry_exit_model,
    build_entry_game_model,
    frequency_ccp,
    sieve_logit_init,
    simulate_panel,
    solve_game_equilibrium,
    solve_true_ccps,
)
from .errors import (
    ConfigError,
    DDCError,
    DimensionError,
    DivergenceError,
    EstimationError,
    InputError,
    SingularSystemError,
)
from .estimator import (
    METHODS,
    EstimationResult,
    EstimationState,
    em_npl_q_run,
    match_labels,
    multi_start,
    parameter_mse,
    run_method,
    standard_errors_linear,
)
from .harness import StudyConfig, build_design, emit_tables, load_config, run_study
from .kernels import BACKEND
from .linalg import INF, anderson_accelerate, gmres, newton_kantorovich, successive_approx
from .model import MixtureDDCModel, logit_ccp, social_surplus
from .panel import PanelData

__version__ = "0.1.0"
