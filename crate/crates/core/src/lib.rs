//! Core library: reward-shaping selection, a two-agent kitchen gridworld,
//! population training with a best-response agent, mode-vote ensembles, and
//! cross-play evaluation.

pub mod checkpoint;
pub mod ensemble;
pub mod env;
pub mod llm;
pub mod marl;
pub mod nn;
pub mod rng;
pub mod shaping;
pub mod surrogate;

pub use checkpoint::Checkpoint;
pub use ensemble::{
    build_baseline_ensemble, ensemble_action, ensemble_from_populations, evaluate_method,
    report_table_csv, xp_return, Actor, EnsembleError, EnsemblePolicy, EvalReport, MatchSpec,
    RolloutRecord, TieBreak, XpOutcome,
};
pub use env::{
    densify, observe, reset, reset_with_horizon, step, Action, KitchenState, Layout, LayoutError,
    ShapingFeatures, HORIZON, NUM_ACTIONS, OBS_DIM,
};
pub use llm::{
    build_prompt, llm_select, llm_select_with, LlmError, LlmResponse, ProviderConfig,
    ProviderMode, TextProvider,
};
pub use marl::{
    collect_rollouts, jsd_gamma, jsd_of_distributions, ppo_update, train_partner,
    train_population, CurvePoint, MarlError, PolicyParams, Population, Role, TrajeDiConfig,
    TrajectoryBatch, POLICY_INPUT_DIM,
};
pub use rng::{stream_rng, substream};
pub use shaping::{
    diversity_metrics, lhs_select, random_select, validate_shaping_set, DiversityReport,
    FeatureId, SelectionMethod, ShapingError, ShapingSet, ShapingVector, WeightRange,
    NUM_FEATURES,
};
pub use surrogate::{load_results, surrogate_select, MlpModel, ResultRecord, SurrogateError};
