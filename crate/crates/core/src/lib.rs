//! Aggregation models for predicting a per-user binary property from a
//! variable-size set of relational observations (movie ratings), plus the
//! benchmark harness that compares them on a temporal split.
//!
//! The numeric core is generic over the scalar type (f32 or f64) through
//! [`scalar::Scalar`]; the harness and CLI run everything at f64, and the
//! aliases at the crate root expose that concrete surface.

pub mod count_models;
pub mod dataset;
pub mod factorization;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod neighborhood;
pub mod optim;
pub mod rlr;
pub mod scalar;

pub use dataset::{
    load_ratings, load_user_labels, temporal_split, AuditedLabels, BinaryRating, DatasetFormat,
    Gender, ItemId, ItemIdx, LabeledSplit, RatingGraph, RatingRecord, UserId, UserIdx,
};
pub use model::GenderPredictor;
pub use optim::{
    grad_check, kfold_plan, sgd_minimize, sgd_minimize_monitored, tune, FoldPlan, Objective,
    SgdConfig, Stopping, TuneMetric,
};
pub use scalar::Scalar;

/// Scalar type used by the harness, the CLI, and the committed configs.
pub type DefaultScalar = f64;

/// f64 instantiations of the generic core types.
pub type Prediction = metrics::Prediction<DefaultScalar>;
pub type EvalPair = metrics::EvalPair<DefaultScalar>;
pub type SgdRun = optim::SgdRun<DefaultScalar>;
pub type CountSigmoidModel = count_models::CountSigmoidModel<DefaultScalar>;
pub type NoisyOrModel = count_models::NoisyOrModel<DefaultScalar>;
pub type NaiveBayesModel = neighborhood::NaiveBayesModel<DefaultScalar>;
pub type PerItemRlrModel = rlr::PerItemRlrModel<DefaultScalar>;
pub type MfModel = factorization::MfModel<DefaultScalar>;
pub type StackedGenderModel = factorization::StackedGenderModel<DefaultScalar>;
