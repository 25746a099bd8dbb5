"""Coverage-based ensemble Q-learning over n-hop environment families."""

from .coverage import (
    CoverageReport,
    attach_bounds,
    bound_prop1,
    bound_prop2,
    cc_star,
    coverage_coefficient,
    coverage_report,
    estimate_lambda,
    estimate_theta,
    exploration_dist,
    variance_vs_k_trend,
)
from .ensemble import EnsembleConfig, EnsembleState, feedback, fuse, run_ensemble
from .exceptions import ConvergenceError, SizeLimitError, StageError, ValidationError
from .mdp import (
    TabularMdp,
    average_policy_error,
    greedy_policy,
    load_mdp,
    occupancy_distribution,
    random_mdp,
    save_mdp,
    value_iteration,
)
from .ordering import (
    OrderingResult,
    Verdict,
    ccq,
    compare_envs,
    empirical_lambda_ordering,
    f_gamma,
    order_environments,
    pairwise_agreement,
)
from .qlearning import (
    LearningSchedule,
    QTrace,
    TraceSpec,
    epsilon_greedy,
    q_update,
    train_agent,
    train_double_q,
)
from .synthesis import (
    EnvironmentFamily,
    EstimatedModel,
    build_family,
    build_nhop,
    cost_bounds,
    estimate_model,
)
from .wireless import MimoParams, MisoParams, build_mimo, build_miso

__version__ = "0.1.0"
