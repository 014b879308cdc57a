//! Shapley value attribution for templated LLM prompts.
//!
//! A prompt is split into template fields; each field is a player in a
//! cooperative game whose payoff is the model's probability of a target
//! choice relative to an all-reference prompt. [`shapley`] computes the
//! attributions exactly or by permutation sampling, [`analysis`] turns them
//! into normalized importance profiles, and [`experiment`] runs whole
//! prompt-variant studies end to end.

pub mod analysis;
pub mod experiment;
pub mod oracle;
pub mod report;
pub mod shapley;
pub mod template;

pub use oracle::{
    choice_probability, ChoiceDistribution, ChoiceSpec, Oracle, OracleConfig, OracleError, Query,
    ResponseCache,
};
pub use shapley::{
    coalition_value, efficiency_residual, exact_shapley, mc_shapley, shapley_weight, AttributionVector,
    EstimatorConfig, Method, ShapleyError, ValueFunctionBinding,
};
pub use template::{
    compose, field_info_classes, parse_template, Coalition, FieldDescriptor, InfoClass, PromptTemplate,
    PromptVector, ReferenceVector, TemplateError, TemplateSegment,
};
pub use analysis::{
    compare_attributions, cosine_similarity, normalize_abs, token_noise_share, AnalysisError, Comparison,
    NoiseBreakdown, NormalizedAttribution,
};
pub use experiment::{
    run_attribution_experiment, run_framing_experiment, run_perturbation_comparison, Experiment,
    ExperimentConfig, ExperimentError, ExperimentKind, ExperimentReport,
};
pub use report::{AttributionReport, ReportError};
