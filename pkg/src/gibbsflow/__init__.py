"""Discrete Gibbs sampling as entropy-regularized control on DAG MDPs.

The package builds DAG-structured soft MDPs, corrects their rewards with
backward transition policies so the optimal entropy-regularized policy
samples terminating states from a Gibbs distribution, trains tabular
parameters under the matching control and flow-matching objectives, and
verifies everything against exact desk-scale oracles.
"""

__version__ = "0.1.0"

from .envs import (
    EnergyModel,
    FactorGraphSpec,
    PhyloSpec,
    build_factor_graph_env,
    build_phylo_env,
    build_subset_env,
    build_toy_dag,
    fitch_root_mutations,
)
from .graph import (
    SINK,
    SoftMdpGraph,
    Trajectory,
    ValidationReport,
    count_trajectories,
    enumerate_complete_trajectories,
    topological_order,
    validate_dag,
)
from .gradients import analytic_gradient, finite_diff_gradient, objective_loss
from .metrics import jsd, pearson_logprob_return
from .objectives import (
    ObjectiveKind,
    check_equivalence,
    residual_db,
    residual_fldb,
    residual_mdb,
    residual_pcl,
    residual_pisql,
    residual_sql,
    residual_subtb,
    residual_tb,
    sac_step_losses,
)
from .oracles import (
    DistributionTable,
    SoftValues,
    gibbs_target,
    optimal_policy,
    oracle_params,
    soft_value_iteration,
    terminating_distribution,
)
from .params import (
    ParamMode,
    TabularParams,
    apply_correspondence,
    init_params,
)
from .rewards import (
    BackwardPolicy,
    RewardKind,
    RewardScheme,
    counting_backward_policy,
    reward,
    uniform_backward_policy,
    verify_return_identity,
)
from .training import (
    MetricsRow,
    ReplayBuffer,
    TrainConfig,
    TrainResult,
    sample_trajectory,
    train,
)

__all__ = [
    "__version__",
    "SINK",
    "SoftMdpGraph",
    "Trajectory",
    "ValidationReport",
    "validate_dag",
    "topological_order",
    "count_trajectories",
    "enumerate_complete_trajectories",
    "EnergyModel",
    "FactorGraphSpec",
    "PhyloSpec",
    "build_toy_dag",
    "build_factor_graph_env",
    "build_subset_env",
    "build_phylo_env",
    "fitch_root_mutations",
    "BackwardPolicy",
    "RewardKind",
    "RewardScheme",
    "uniform_backward_policy",
    "counting_backward_policy",
    "reward",
    "verify_return_identity",
    "SoftValues",
    "DistributionTable",
    "soft_value_iteration",
    "optimal_policy",
    "oracle_params",
    "terminating_distribution",
    "gibbs_target",
    "jsd",
    "pearson_logprob_return",
    "ParamMode",
    "TabularParams",
    "init_params",
    "apply_correspondence",
    "ObjectiveKind",
    "residual_pcl",
    "residual_subtb",
    "residual_tb",
    "residual_db",
    "residual_sql",
    "residual_fldb",
    "residual_mdb",
    "residual_pisql",
    "sac_step_losses",
    "check_equivalence",
    "analytic_gradient",
    "finite_diff_gradient",
    "objective_loss",
    "TrainConfig",
    "ReplayBuffer",
    "MetricsRow",
    "TrainResult",
    "sample_trajectory",
    "train",
]

from .estimator import GibbsPolicyEstimator  # noqa: E402  (needs the above)

__all__.append("GibbsPolicyEstimator")
