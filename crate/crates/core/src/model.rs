//! The uniform prediction contract every trained aggregator satisfies.

use thiserror::Error;

use crate::dataset::{RatingGraph, UserId};
use crate::metrics::Prediction;
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum PredictError {
    #[error("user {0} is not covered by the trained model")]
    UserNotInModel(UserId),
    #[error("model parameters invalid for prediction: {0}")]
    InvalidParams(String),
}

/// Predict the probability that a user is Female from their rating
/// neighborhood. A user absent from the graph is treated as zero-degree;
/// models without a zero-degree fallback return an error instead.
pub trait GenderPredictor<S: Scalar> {
    fn predict(&self, graph: &RatingGraph, user: &UserId) -> Result<Prediction<S>, PredictError>;
}
