"""Offline policy optimization for sequential recommendation.

Learns target policies from logged interaction sequences by weighted
maximum likelihood: behavior-policy cloning, reward-weighted variants,
importance-sampling corrections, Q-learning heads, and a KL-regularized
local policy improvement objective whose per-example weights come from a
jointly trained action-value head. Ships exact tabular oracles, off-policy
value estimators, ranking/divergence metrics, and a seeded synthetic world
for end-to-end checks.
"""

from .config import ConfigError, RunConfig, load_config, parse_config_text
from .data import (
    Dataset,
    EmptyDatasetError,
    Interaction,
    PreprocessRules,
    SessionSequence,
    TrainingExample,
    expand_examples,
    load_interactions_csv,
    preprocess,
    split,
)
from .encoder import Adam, EncoderConfig, TrainingDivergedError, adam_step
from .estimators import (
    DegenerateContextError,
    ImprovementCheck,
    IpsEstimate,
    SupportViolationError,
    direct_method_value,
    empirical_behavior_tabular,
    ips_value_estimate,
    lmu_objective_value,
    lpi_objective_value,
    policy_improvement_check,
    project_to_simplex,
    projected_gradient_policy,
    tabular_advantages,
    tabular_optimal_lmu,
    tabular_optimal_lpi,
    tabular_q_values,
    tabular_td_learning,
    tabular_value,
    value_iteration,
)
from .metrics import (
    MetricsReport,
    MetricSummary,
    breakdown_report,
    hr_at_k,
    js_divergence,
    kl_divergence,
    mean_divergence,
    model_selection_score,
    ndcg_at_k,
    summarize,
)
from .objectives import (
    ExampleBatch,
    ObjectiveConfig,
    advantage_from_q,
    attach_reward_to_go,
    build_batch,
    ce_loss,
    composite_loss,
    ips_ce_loss,
    lpi_loss,
    lpi_weight,
    reward_weighted_ce,
    td_q_loss,
)
from .policy import (
    CheckpointError,
    SequenceModel,
    load_checkpoint,
    save_checkpoint,
)
from .synth import (
    ImputationModel,
    SyntheticWorld,
    TabularInstance,
    exact_state_visitation,
    fit_weighted_mf,
    generate_sessions,
    impute_reward,
    make_random_world,
    random_instance,
    sample_bandit_logs,
    simulate_policy_value,
    world_policy_value,
)
from .training import (
    TrainResult,
    evaluate_split,
    fit_behavior_model,
    load_dataset,
    run_diagnose,
    run_eval,
    run_train,
    train_model,
)

__version__ = "0.1.0"

__all__ = [
    "Adam",
    "CheckpointError",
    "ConfigError",
    "Dataset",
    "DegenerateContextError",
    "EmptyDatasetError",
    "EncoderConfig",
    "ExampleBatch",
    "ImprovementCheck",
    "ImputationModel",
    "Interaction",
    "IpsEstimate",
    "MetricSummary",
    "MetricsReport",
    "ObjectiveConfig",
    "PreprocessRules",
    "RunConfig",
    "SequenceModel",
    "SessionSequence",
    "SupportViolationError",
    "SyntheticWorld",
    "TabularInstance",
    "TrainResult",
    "TrainingDivergedError",
    "TrainingExample",
    "adam_step",
    "advantage_from_q",
    "attach_reward_to_go",
    "breakdown_report",
    "build_batch",
    "ce_loss",
    "composite_loss",
    "direct_method_value",
    "empirical_behavior_tabular",
    "evaluate_split",
    "exact_state_visitation",
    "expand_examples",
    "fit_behavior_model",
    "fit_weighted_mf",
    "generate_sessions",
    "hr_at_k",
    "impute_reward",
    "ips_ce_loss",
    "ips_value_estimate",
    "js_divergence",
    "kl_divergence",
    "lmu_objective_value",
    "load_checkpoint",
    "load_config",
    "load_dataset",
    "load_interactions_csv",
    "lpi_loss",
    "lpi_objective_value",
    "lpi_weight",
    "make_random_world",
    "mean_divergence",
    "model_selection_score",
    "ndcg_at_k",
    "parse_config_text",
    "policy_improvement_check",
    "preprocess",
    "project_to_simplex",
    "projected_gradient_policy",
    "random_instance",
    "reward_weighted_ce",
    "run_diagnose",
    "run_eval",
    "run_train",
    "sample_bandit_logs",
    "save_checkpoint",
    "simulate_policy_value",
    "split",
    "summarize",
    "tabular_advantages",
    "tabular_optimal_lmu",
    "tabular_optimal_lpi",
    "tabular_q_values",
    "tabular_td_learning",
    "tabular_value",
    "td_q_loss",
    "train_model",
    "value_iteration",
    "world_policy_value",
]
