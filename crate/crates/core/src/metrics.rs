//! Mean squared error and base-2 log loss over probabilistic predictions.

use thiserror::Error;

use crate::dataset::Gender;
use crate::scalar::{s, Scalar};

/// Model outputs are clipped into `[CLIP_EPSILON, 1 - CLIP_EPSILON]` so log
/// loss stays finite without materially changing rankings.
pub const CLIP_EPSILON: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("probability {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("metric over an empty pair list")]
    Empty,
    #[error("log loss undefined: prediction {p} with actual {actual}")]
    UndefinedLog { p: f64, actual: u8 },
}

/// Probability that the user is Female.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Prediction<S: Scalar>(S);

impl<S: Scalar> Prediction<S> {
    /// Store a probability as-is; it must be finite and in [0, 1].
    pub fn new(p: S) -> Result<Self, MetricsError> {
        if !p.is_finite() || p < S::zero() || p > S::one() {
            return Err(MetricsError::OutOfRange(p.to_f64().unwrap_or(f64::NAN)));
        }
        Ok(Prediction(p))
    }

    /// Clamp into [0, 1] and then into the clipped interval. This is the
    /// constructor every model output goes through.
    pub fn clipped(p: S) -> Self {
        assert!(p.is_finite(), "prediction must be finite, got {p}");
        let eps = s::<S>(CLIP_EPSILON);
        Prediction(p.max(S::zero()).min(S::one()).max(eps).min(S::one() - eps))
    }

    #[inline]
    pub fn value(self) -> S {
        self.0
    }
}

/// A prediction paired with the held-out truth.
#[derive(Debug, Clone, Copy)]
pub struct EvalPair<S: Scalar> {
    pub prediction: Prediction<S>,
    pub actual: Gender,
}

impl<S: Scalar> EvalPair<S> {
    pub fn new(prediction: Prediction<S>, actual: Gender) -> Self {
        EvalPair { prediction, actual }
    }
}

/// Mean squared error of the probabilities against the 0/1 truth.
pub fn mse<S: Scalar>(pairs: &[EvalPair<S>]) -> Result<S, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::Empty);
    }
    let total: S = pairs
        .iter()
        .map(|pair| {
            let d = pair.prediction.value() - pair.actual.indicator::<S>();
            d * d
        })
        .sum();
    Ok(total / s(pairs.len() as f64))
}

/// Mean negative base-2 log likelihood of the truth under the predictions.
/// Errors if an exact 0/1 prediction disagrees with the truth, where the
/// logarithm is undefined.
pub fn log_loss<S: Scalar>(pairs: &[EvalPair<S>]) -> Result<S, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut total = S::zero();
    for pair in pairs {
        let p = pair.prediction.value();
        let term = match pair.actual {
            Gender::Female => {
                if p == S::zero() {
                    return Err(MetricsError::UndefinedLog { p: 0.0, actual: 1 });
                }
                -p.log2()
            }
            Gender::Male => {
                if p == S::one() {
                    return Err(MetricsError::UndefinedLog { p: 1.0, actual: 0 });
                }
                -(S::one() - p).log2()
            }
        };
        total += term;
    }
    Ok(total / s(pairs.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(p: f64, female: bool) -> EvalPair<f64> {
        EvalPair::new(
            Prediction::new(p).unwrap(),
            if female { Gender::Female } else { Gender::Male },
        )
    }

    #[test]
    fn predicting_half_scores_quarter_mse_and_one_bit() {
        let pairs = vec![
            pair(0.5, true),
            pair(0.5, false),
            pair(0.5, true),
            pair(0.5, false),
        ];
        assert_eq!(mse(&pairs).unwrap(), 0.25);
        assert_eq!(log_loss(&pairs).unwrap(), 1.0);
        // independent of the actual labels
        let skewed = vec![pair(0.5, true), pair(0.5, true), pair(0.5, true)];
        assert_eq!(mse(&skewed).unwrap(), 0.25);
        assert_eq!(log_loss(&skewed).unwrap(), 1.0);
    }

    #[test]
    fn perfect_predictions_have_zero_mse() {
        let pairs = vec![pair(1.0, true), pair(0.0, false)];
        assert_eq!(mse(&pairs).unwrap(), 0.0);
    }

    #[test]
    fn mse_hand_computed_example() {
        let pairs = vec![pair(0.8, true), pair(0.3, false)];
        assert!((mse(&pairs).unwrap() - 0.065).abs() < 1e-12);
    }

    #[test]
    fn log_loss_hand_computed_example() {
        let pairs = vec![pair(0.25, true)];
        assert!((log_loss(&pairs).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn empty_pairs_are_an_error() {
        let empty: Vec<EvalPair<f64>> = Vec::new();
        assert!(matches!(mse(&empty), Err(MetricsError::Empty)));
        assert!(matches!(log_loss(&empty), Err(MetricsError::Empty)));
    }

    #[test]
    fn mismatched_extreme_prediction_is_undefined() {
        let pairs = vec![pair(0.0, true)];
        assert!(matches!(
            log_loss(&pairs),
            Err(MetricsError::UndefinedLog { .. })
        ));
        let pairs = vec![pair(1.0, false)];
        assert!(matches!(
            log_loss(&pairs),
            Err(MetricsError::UndefinedLog { .. })
        ));
        // matched extremes are fine: -log2(1) = 0
        let pairs = vec![pair(1.0, true)];
        assert_eq!(log_loss(&pairs).unwrap(), 0.0);
    }

    #[test]
    fn clipping_bounds_the_output() {
        assert_eq!(Prediction::clipped(2.0f64).value(), 1.0 - CLIP_EPSILON);
        assert_eq!(Prediction::clipped(-1.0f64).value(), CLIP_EPSILON);
        assert_eq!(Prediction::clipped(0.3f64).value(), 0.3);
    }

    #[test]
    fn out_of_range_probability_rejected() {
        assert!(Prediction::new(1.5f64).is_err());
        assert!(Prediction::new(f64::NAN).is_err());
    }
}
