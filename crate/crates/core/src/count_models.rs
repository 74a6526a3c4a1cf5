//! Baselines and the two pure count-based models: the count-sigmoid model
//! (probability is the sigmoid of a weighted sum of positive- and
//! negative-rating counts) and the noisy-OR model (one minus a product of
//! per-observation failure terms).
//!
//! Noisy-OR parameters are deliberately unconstrained reals: the trained
//! optimum on real data leaves the unit box. Evaluation goes through
//! sign-tracked log-space products, and the resulting probability is
//! clipped.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::dataset::{Gender, RatingGraph, UserId};
use crate::metrics::{Prediction, CLIP_EPSILON};
use crate::model::{GenderPredictor, PredictError};
use crate::optim::{sgd_minimize, GradAccum, Objective, OptimError, SgdConfig, TermMode};
use crate::scalar::{ln2, logit, s, sigmoid, Scalar};

#[derive(Debug, Error)]
pub enum CountError {
    #[error("no training labels")]
    EmptyLabels,
    #[error("probability {0} outside [0, 1]")]
    InvalidProbability(f64),
    #[error(transparent)]
    Optim(#[from] OptimError),
}

/// Rating counts of one user: positives (>= 4 stars) and negatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CountFeatures {
    pub npr: usize,
    pub nnr: usize,
}

/// Count a user's positive and negative edges. Zero-degree users get (0, 0).
pub fn count_features(graph: &RatingGraph, user: crate::dataset::UserIdx) -> CountFeatures {
    let mut npr = 0;
    let mut nnr = 0;
    for &(_, polarity) in graph.user_edges(user) {
        if polarity.is_positive() {
            npr += 1;
        } else {
            nnr += 1;
        }
    }
    CountFeatures { npr, nnr }
}

fn features_by_id(graph: &RatingGraph, user: &UserId) -> CountFeatures {
    match graph.user_idx(user) {
        Some(idx) => count_features(graph, idx),
        None => CountFeatures { npr: 0, nnr: 0 },
    }
}

/// Predicts the same probability for every user.
#[derive(Debug, Clone, Copy)]
pub struct ConstantPredictor<S: Scalar> {
    p: S,
}

impl<S: Scalar> ConstantPredictor<S> {
    pub fn probability(&self) -> S {
        self.p
    }
}

impl<S: Scalar> GenderPredictor<S> for ConstantPredictor<S> {
    fn predict(&self, _graph: &RatingGraph, _user: &UserId) -> Result<Prediction<S>, PredictError> {
        Ok(Prediction::clipped(self.p))
    }
}

/// Constant predictor at probability `p`.
pub fn predict_constant<S: Scalar>(p: S) -> Result<ConstantPredictor<S>, CountError> {
    if !p.is_finite() || p < S::zero() || p > S::one() {
        return Err(CountError::InvalidProbability(
            p.to_f64().unwrap_or(f64::NAN),
        ));
    }
    Ok(ConstantPredictor { p })
}

/// Constant predictor at the Female fraction of the training labels.
pub fn training_average<S: Scalar>(
    labels: &BTreeMap<UserId, Gender>,
) -> Result<ConstantPredictor<S>, CountError> {
    if labels.is_empty() {
        return Err(CountError::EmptyLabels);
    }
    let females = labels.values().filter(|g| g.is_female()).count();
    Ok(ConstantPredictor {
        p: s::<S>(females as f64) / s(labels.len() as f64),
    })
}

#[derive(Debug, Clone, Copy)]
struct CountTerm {
    npr: u32,
    nnr: u32,
    female: bool,
}

fn count_terms(graph: &RatingGraph, labels: &BTreeMap<UserId, Gender>) -> Vec<CountTerm> {
    labels
        .iter()
        .map(|(user, gender)| {
            let f = features_by_id(graph, user);
            CountTerm {
                npr: f.npr as u32,
                nnr: f.nnr as u32,
                female: gender.is_female(),
            }
        })
        .collect()
}

fn clamped_female_fraction(labels: &BTreeMap<UserId, Gender>) -> f64 {
    let females = labels.values().filter(|g| g.is_female()).count() as f64;
    (females / labels.len() as f64).clamp(CLIP_EPSILON, 1.0 - CLIP_EPSILON)
}

/// ln(1 + e^x) without overflow.
fn softplus<S: Scalar>(x: S) -> S {
    if x > S::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Weights of the count-sigmoid model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CountSigmoidModel<S: Scalar> {
    pub w0: S,
    pub w1: S,
    pub w2: S,
}

/// Mean base-2 log loss of `sigmoid(w0 + w1*npr + w2*nnr)` over the labeled
/// users, plus an optional per-term L2 on w1 and w2.
pub struct CountSigmoidObjective {
    terms: Vec<CountTerm>,
    l2: f64,
}

impl CountSigmoidObjective {
    pub fn new(graph: &RatingGraph, labels: &BTreeMap<UserId, Gender>, l2: f64) -> Self {
        CountSigmoidObjective {
            terms: count_terms(graph, labels),
            l2,
        }
    }
}

impl<S: Scalar> Objective<S> for CountSigmoidObjective {
    fn dimension(&self) -> usize {
        3
    }

    fn num_terms(&self) -> usize {
        self.terms.len()
    }

    fn description(&self) -> String {
        "count-sigmoid log loss".to_owned()
    }

    fn terms_loss(
        &self,
        params: &[S],
        terms: &[usize],
        _mode: TermMode,
        mut grad: Option<&mut GradAccum<S>>,
    ) -> S {
        let (w0, w1, w2) = (params[0], params[1], params[2]);
        let inv = S::one() / s::<S>(terms.len() as f64);
        let lam = s::<S>(self.l2);
        let two = s::<S>(2.0);
        let mut total = S::zero();
        for &t in terms {
            let term = &self.terms[t];
            let a = s::<S>(term.npr as f64);
            let b = s::<S>(term.nnr as f64);
            let z = w0 + w1 * a + w2 * b;
            let loss = if term.female {
                softplus(-z)
            } else {
                softplus(z)
            } / ln2::<S>();
            total += loss + lam * (w1 * w1 + w2 * w2);
            if let Some(g) = grad.as_deref_mut() {
                let y = if term.female { S::one() } else { S::zero() };
                let err = (sigmoid(z) - y) / ln2::<S>() * inv;
                g.add(0, err);
                g.add(1, err * a + two * lam * w1 * inv);
                g.add(2, err * b + two * lam * w2 * inv);
            }
        }
        total * inv
    }
}

/// Fit the count-sigmoid model by SGD on its base-2 log loss.
pub fn train_count_sigmoid<S: Scalar>(
    graph: &RatingGraph,
    labels: &BTreeMap<UserId, Gender>,
    cfg: &SgdConfig,
) -> Result<CountSigmoidModel<S>, CountError> {
    train_count_sigmoid_impl(graph, labels, cfg, None)
}

/// As [`train_count_sigmoid`], but an external monitor picks the best
/// iterate (the test-loss replication mode).
pub fn train_count_sigmoid_monitored<S: Scalar>(
    graph: &RatingGraph,
    labels: &BTreeMap<UserId, Gender>,
    cfg: &SgdConfig,
    monitor: &dyn Fn(&CountSigmoidModel<S>) -> S,
) -> Result<CountSigmoidModel<S>, CountError> {
    train_count_sigmoid_impl(graph, labels, cfg, Some(monitor))
}

fn train_count_sigmoid_impl<S: Scalar>(
    graph: &RatingGraph,
    labels: &BTreeMap<UserId, Gender>,
    cfg: &SgdConfig,
    monitor: Option<crate::optim::Monitor<'_, CountSigmoidModel<S>, S>>,
) -> Result<CountSigmoidModel<S>, CountError> {
    if labels.is_empty() {
        return Err(CountError::EmptyLabels);
    }
    let objective = CountSigmoidObjective::new(graph, labels, cfg.l2_penalty);
    let init = [
        logit(s::<S>(clamped_female_fraction(labels))),
        S::zero(),
        S::zero(),
    ];
    let run = match monitor {
        None => sgd_minimize(&objective, &init, cfg)?,
        Some(monitor) => {
            let adapter = |params: &[S]| {
                monitor(&CountSigmoidModel {
                    w0: params[0],
                    w1: params[1],
                    w2: params[2],
                })
            };
            crate::optim::sgd_minimize_monitored(&objective, &init, cfg, &adapter)?
        }
    };
    Ok(CountSigmoidModel {
        w0: run.params[0],
        w1: run.params[1],
        w2: run.params[2],
    })
}

/// Evaluate the count-sigmoid model on a user's counts.
pub fn predict_count_sigmoid<S: Scalar>(
    model: &CountSigmoidModel<S>,
    features: CountFeatures,
) -> Prediction<S> {
    let z =
        model.w0 + model.w1 * s::<S>(features.npr as f64) + model.w2 * s::<S>(features.nnr as f64);
    Prediction::clipped(sigmoid(z))
}

/// Count-sigmoid model bound to the graph it predicts over.
pub struct CountSigmoidPredictor<S: Scalar> {
    pub model: CountSigmoidModel<S>,
}

impl<S: Scalar> GenderPredictor<S> for CountSigmoidPredictor<S> {
    fn predict(&self, graph: &RatingGraph, user: &UserId) -> Result<Prediction<S>, PredictError> {
        Ok(predict_count_sigmoid(
            &self.model,
            features_by_id(graph, user),
        ))
    }
}

/// Parameters of the noisy-OR model. Not constrained to [0, 1]; the trained
/// optimum is typically outside the box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoisyOrModel<S: Scalar> {
    pub w0: S,
    pub w1: S,
    pub w2: S,
}

/// Raw noisy-OR probability `1 - (1-w0)(1-w1)^npr (1-w2)^nnr`, evaluated in
/// sign-tracked log space. May fall outside [0, 1] for parameters outside
/// the box; callers clip.
fn noisy_or_raw<S: Scalar>(w0: S, w1: S, w2: S, npr: u32, nnr: u32) -> S {
    let bases = [
        (S::one() - w0, 1u32),
        (S::one() - w1, npr),
        (S::one() - w2, nnr),
    ];
    let mut log_abs = S::zero();
    let mut negative = false;
    for &(base, exponent) in &bases {
        if exponent == 0 {
            continue;
        }
        if base == S::zero() {
            return S::one(); // the product vanishes
        }
        log_abs += base.abs().ln() * s::<S>(exponent as f64);
        if base < S::zero() && exponent % 2 == 1 {
            negative = !negative;
        }
    }
    let magnitude = log_abs.exp();
    let q = if negative { -magnitude } else { magnitude };
    S::one() - q
}

/// Mean base-2 log loss of the clipped noisy-OR probability over the labeled
/// users, plus an optional per-term L2 on w1 and w2. The clipped region has
/// zero gradient.
pub struct NoisyOrObjective {
    terms: Vec<CountTerm>,
    l2: f64,
}

impl NoisyOrObjective {
    pub fn new(graph: &RatingGraph, labels: &BTreeMap<UserId, Gender>, l2: f64) -> Self {
        NoisyOrObjective {
            terms: count_terms(graph, labels),
            l2,
        }
    }
}

impl<S: Scalar> Objective<S> for NoisyOrObjective {
    fn dimension(&self) -> usize {
        3
    }

    fn num_terms(&self) -> usize {
        self.terms.len()
    }

    fn description(&self) -> String {
        "noisy-or log loss".to_owned()
    }

    fn terms_loss(
        &self,
        params: &[S],
        terms: &[usize],
        _mode: TermMode,
        mut grad: Option<&mut GradAccum<S>>,
    ) -> S {
        let (w0, w1, w2) = (params[0], params[1], params[2]);
        let eps = s::<S>(CLIP_EPSILON);
        let inv = S::one() / s::<S>(terms.len() as f64);
        let lam = s::<S>(self.l2);
        let two = s::<S>(2.0);
        let mut total = S::zero();
        for &t in terms {
            let term = &self.terms[t];
            let p_raw = noisy_or_raw(w0, w1, w2, term.npr, term.nnr);
            let p = p_raw.max(eps).min(S::one() - eps);
            let loss = if term.female {
                -p.log2()
            } else {
                -(S::one() - p).log2()
            };
            total += loss + lam * (w1 * w1 + w2 * w2);
            if let Some(g) = grad.as_deref_mut() {
                let interior = p_raw > eps && p_raw < S::one() - eps;
                let dl_dp = if interior {
                    let d = if term.female {
                        -(S::one() / p)
                    } else {
                        S::one() / (S::one() - p)
                    };
                    d / ln2::<S>()
                } else {
                    S::zero()
                };
                let q = S::one() - p_raw;
                let dp = |base: S, exponent: u32| -> S {
                    if exponent == 0 || !interior {
                        S::zero()
                    } else {
                        s::<S>(exponent as f64) * q / base
                    }
                };
                g.add(0, dl_dp * dp(S::one() - w0, 1) * inv + S::zero());
                g.add(
                    1,
                    dl_dp * dp(S::one() - w1, term.npr) * inv + two * lam * w1 * inv,
                );
                g.add(
                    2,
                    dl_dp * dp(S::one() - w2, term.nnr) * inv + two * lam * w2 * inv,
                );
            }
        }
        total * inv
    }
}

/// Fit the noisy-OR model by SGD on its base-2 log loss.
pub fn train_noisy_or<S: Scalar>(
    graph: &RatingGraph,
    labels: &BTreeMap<UserId, Gender>,
    cfg: &SgdConfig,
) -> Result<NoisyOrModel<S>, CountError> {
    train_noisy_or_impl(graph, labels, cfg, None)
}

/// As [`train_noisy_or`], but an external monitor picks the best iterate.
pub fn train_noisy_or_monitored<S: Scalar>(
    graph: &RatingGraph,
    labels: &BTreeMap<UserId, Gender>,
    cfg: &SgdConfig,
    monitor: &dyn Fn(&NoisyOrModel<S>) -> S,
) -> Result<NoisyOrModel<S>, CountError> {
    train_noisy_or_impl(graph, labels, cfg, Some(monitor))
}

fn train_noisy_or_impl<S: Scalar>(
    graph: &RatingGraph,
    labels: &BTreeMap<UserId, Gender>,
    cfg: &SgdConfig,
    monitor: Option<crate::optim::Monitor<'_, NoisyOrModel<S>, S>>,
) -> Result<NoisyOrModel<S>, CountError> {
    if labels.is_empty() {
        return Err(CountError::EmptyLabels);
    }
    let objective = NoisyOrObjective::new(graph, labels, cfg.l2_penalty);
    let init = [
        s::<S>(clamped_female_fraction(labels)),
        S::zero(),
        S::zero(),
    ];
    let run = match monitor {
        None => sgd_minimize(&objective, &init, cfg)?,
        Some(monitor) => {
            let adapter = |params: &[S]| {
                monitor(&NoisyOrModel {
                    w0: params[0],
                    w1: params[1],
                    w2: params[2],
                })
            };
            crate::optim::sgd_minimize_monitored(&objective, &init, cfg, &adapter)?
        }
    };
    Ok(NoisyOrModel {
        w0: run.params[0],
        w1: run.params[1],
        w2: run.params[2],
    })
}

/// Evaluate the noisy-OR model on a user's counts. Errors when a failure
/// base is nonpositive while its exponent is nonzero, where the model is not
/// meaningfully defined.
pub fn predict_noisy_or<S: Scalar>(
    model: &NoisyOrModel<S>,
    features: CountFeatures,
) -> Result<Prediction<S>, PredictError> {
    let check = |w: S, exponent: usize, name: &str| -> Result<(), PredictError> {
        if exponent > 0 && S::one() - w <= S::zero() {
            Err(PredictError::InvalidParams(format!(
                "nonpositive base 1-{name} with {exponent} observations"
            )))
        } else {
            Ok(())
        }
    };
    check(model.w1, features.npr, "w1")?;
    check(model.w2, features.nnr, "w2")?;
    let p = noisy_or_raw(
        model.w0,
        model.w1,
        model.w2,
        features.npr as u32,
        features.nnr as u32,
    );
    Ok(Prediction::clipped(p))
}

/// Noisy-OR model bound to the graph it predicts over.
pub struct NoisyOrPredictor<S: Scalar> {
    pub model: NoisyOrModel<S>,
}

impl<S: Scalar> GenderPredictor<S> for NoisyOrPredictor<S> {
    fn predict(&self, graph: &RatingGraph, user: &UserId) -> Result<Prediction<S>, PredictError> {
        predict_noisy_or(&self.model, features_by_id(graph, user))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::BinaryRating;
    use crate::optim::{grad_check, Stopping};

    fn labels_of(entries: &[(&str, Gender)]) -> BTreeMap<UserId, Gender> {
        entries.iter().map(|(u, g)| ((*u).into(), *g)).collect()
    }

    fn graph_of(edges: &[(&str, &str, BinaryRating)]) -> RatingGraph {
        RatingGraph::from_edges(
            edges
                .iter()
                .map(|&(u, i, p)| (UserId::from(u), crate::dataset::ItemId::from(i), p)),
        )
        .unwrap()
    }

    fn fixed_cfg(epochs: usize, lr: f64) -> SgdConfig {
        SgdConfig {
            learning_rate: lr,
            epochs,
            batch_size: usize::MAX,
            l2_penalty: 0.0,
            seed: 3,
            stopping: Stopping::FixedEpochs,
        }
    }

    /// Four users whose counts separate imperfectly; shared by the oracle
    /// comparisons here and in the acceptance suite.
    pub(crate) fn four_user_fixture() -> (RatingGraph, BTreeMap<UserId, Gender>) {
        use BinaryRating::*;
        let graph = graph_of(&[
            ("f1", "a", Positive),
            ("f1", "b", Positive),
            ("f1", "c", Negative),
            ("f2", "a", Positive),
            ("m1", "b", Negative),
            ("m1", "c", Negative),
            ("m1", "d", Negative),
            ("m2", "d", Positive),
            ("m2", "c", Negative),
        ]);
        let labels = labels_of(&[
            ("f1", Gender::Female),
            ("f2", Gender::Female),
            ("m1", Gender::Male),
            ("m2", Gender::Male),
        ]);
        (graph, labels)
    }

    #[test]
    fn count_features_counts_polarities() {
        use BinaryRating::*;
        let graph = graph_of(&[
            ("u", "a", Positive),
            ("u", "b", Positive),
            ("u", "c", Negative),
        ]);
        let idx = graph.user_idx(&"u".into()).unwrap();
        assert_eq!(
            count_features(&graph, idx),
            CountFeatures { npr: 2, nnr: 1 }
        );
    }

    #[test]
    fn zero_degree_user_has_zero_counts() {
        let graph = graph_of(&[("u", "a", BinaryRating::Positive)]);
        assert_eq!(
            features_by_id(&graph, &"ghost".into()),
            CountFeatures { npr: 0, nnr: 0 }
        );
    }

    #[test]
    fn all_positive_counts() {
        use BinaryRating::*;
        let graph = graph_of(&[
            ("u", "a", Positive),
            ("u", "b", Positive),
            ("u", "c", Positive),
            ("u", "d", Positive),
            ("u", "e", Positive),
        ]);
        let idx = graph.user_idx(&"u".into()).unwrap();
        assert_eq!(
            count_features(&graph, idx),
            CountFeatures { npr: 5, nnr: 0 }
        );
    }

    #[test]
    fn constant_predictor_returns_p() {
        let graph = graph_of(&[("u", "a", BinaryRating::Positive)]);
        let p = predict_constant::<f64>(0.5).unwrap();
        assert_eq!(p.predict(&graph, &"u".into()).unwrap().value(), 0.5);
        let p3 = predict_constant::<f64>(0.3).unwrap();
        assert_eq!(p3.predict(&graph, &"anyone".into()).unwrap().value(), 0.3);
        assert!(predict_constant::<f64>(1.5).is_err());
    }

    #[test]
    fn training_average_is_female_fraction() {
        let labels = labels_of(&[
            ("a", Gender::Female),
            ("b", Gender::Female),
            ("c", Gender::Male),
            ("d", Gender::Male),
        ]);
        assert_eq!(training_average::<f64>(&labels).unwrap().probability(), 0.5);
        let labels = labels_of(&[
            ("a", Gender::Female),
            ("b", Gender::Male),
            ("c", Gender::Male),
            ("d", Gender::Male),
        ]);
        assert_eq!(
            training_average::<f64>(&labels).unwrap().probability(),
            0.25
        );
        assert!(training_average::<f64>(&BTreeMap::new()).is_err());
    }

    #[test]
    fn count_sigmoid_zero_weights_give_half() {
        let model = CountSigmoidModel {
            w0: 0.0f64,
            w1: 0.0,
            w2: 0.0,
        };
        let p = predict_count_sigmoid(&model, CountFeatures { npr: 17, nnr: 3 });
        assert!((p.value() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn count_sigmoid_at_reported_weights_and_zero_counts() {
        let model = CountSigmoidModel {
            w0: 0.999f64,
            w1: 0.0023,
            w2: -0.0043,
        };
        let p = predict_count_sigmoid(&model, CountFeatures { npr: 0, nnr: 0 });
        assert!((p.value() - 0.7308619).abs() < 1e-6);
    }

    #[test]
    fn count_sigmoid_monotone_in_npr_for_positive_w1() {
        let model = CountSigmoidModel {
            w0: -0.2f64,
            w1: 0.3,
            w2: -0.1,
        };
        let mut last = 0.0;
        for npr in 0..6 {
            let p = predict_count_sigmoid(&model, CountFeatures { npr, nnr: 2 }).value();
            assert!(p > last, "not strictly increasing at npr={npr}");
            last = p;
        }
    }

    #[test]
    fn count_sigmoid_gradient_checks() {
        let (graph, labels) = four_user_fixture();
        let obj = CountSigmoidObjective::new(&graph, &labels, 0.0);
        for point in [[0.0, 0.0, 0.0], [0.4, -0.3, 0.2], [-1.0, 0.05, -0.02]] {
            let err = grad_check(&obj, &point, 1e-5f64).unwrap();
            assert!(err < 1e-6, "relative error {err} at {point:?}");
        }
        let with_l2 = CountSigmoidObjective::new(&graph, &labels, 0.1);
        let err = grad_check(&with_l2, &[0.4, -0.3, 0.2], 1e-5f64).unwrap();
        assert!(err < 1e-6, "relative error {err} with l2");
    }

    #[test]
    fn degenerate_all_female_labels_push_prediction_to_one() {
        // zero-degree users only: the graph is unrelated to the labels
        let graph = graph_of(&[("other", "a", BinaryRating::Positive)]);
        let labels = labels_of(&[("x", Gender::Female), ("y", Gender::Female)]);
        let model = train_count_sigmoid::<f64>(&graph, &labels, &fixed_cfg(2000, 1.0)).unwrap();
        let p = predict_count_sigmoid(&model, CountFeatures { npr: 0, nnr: 0 });
        assert!(p.value() > 0.99, "got {}", p.value());
    }

    #[test]
    fn count_sigmoid_training_reduces_loss() {
        let (graph, labels) = four_user_fixture();
        let obj = CountSigmoidObjective::new(&graph, &labels, 0.0);
        let init_loss = Objective::<f64>::loss(&obj, &[0.0, 0.0, 0.0]);
        let model = train_count_sigmoid::<f64>(&graph, &labels, &fixed_cfg(3000, 0.2)).unwrap();
        let final_loss = Objective::<f64>::loss(&obj, &[model.w0, model.w1, model.w2]);
        assert!(final_loss < init_loss);
    }

    #[test]
    fn noisy_or_zero_rate_weights_return_w0() {
        let model = NoisyOrModel {
            w0: 0.2f64,
            w1: 0.0,
            w2: 0.0,
        };
        let p = predict_noisy_or(&model, CountFeatures { npr: 4, nnr: 9 }).unwrap();
        assert!((p.value() - 0.2).abs() < 1e-12);
    }

    #[test]
    fn noisy_or_hand_computed_example() {
        let model = NoisyOrModel {
            w0: 0.2f64,
            w1: 0.1,
            w2: 0.1,
        };
        let p = predict_noisy_or(&model, CountFeatures { npr: 1, nnr: 1 }).unwrap();
        assert!((p.value() - 0.352).abs() < 1e-12, "got {}", p.value());
    }

    #[test]
    fn noisy_or_monotone_for_box_parameters() {
        let model = NoisyOrModel {
            w0: 0.1f64,
            w1: 0.2,
            w2: 0.05,
        };
        let mut last = 0.0;
        for n in 0..5 {
            let p = predict_noisy_or(&model, CountFeatures { npr: n, nnr: n })
                .unwrap()
                .value();
            assert!(p >= last);
            last = p;
        }
    }

    #[test]
    fn noisy_or_rejects_nonpositive_base_with_observations() {
        let model = NoisyOrModel {
            w0: 0.1f64,
            w1: 1.5,
            w2: 0.0,
        };
        assert!(predict_noisy_or(&model, CountFeatures { npr: 2, nnr: 0 }).is_err());
        // zero exponent makes the same base irrelevant
        assert!(predict_noisy_or(&model, CountFeatures { npr: 0, nnr: 3 }).is_ok());
    }

    #[test]
    fn noisy_or_allows_negative_weights() {
        // negative w2 means negative ratings lower the probability
        let model = NoisyOrModel {
            w0: 0.3f64,
            w1: 0.0,
            w2: -0.2,
        };
        let none = predict_noisy_or(&model, CountFeatures { npr: 0, nnr: 0 })
            .unwrap()
            .value();
        let some = predict_noisy_or(&model, CountFeatures { npr: 0, nnr: 3 })
            .unwrap()
            .value();
        assert!(some < none);
    }

    #[test]
    fn noisy_or_gradient_checks_inside_the_box() {
        let (graph, labels) = four_user_fixture();
        let obj = NoisyOrObjective::new(&graph, &labels, 0.0);
        for point in [[0.3, 0.1, 0.2], [0.5, 0.05, 0.01], [0.25, 0.2, -0.1]] {
            let err = grad_check(&obj, &point, 1e-6f64).unwrap();
            assert!(err < 1e-4, "relative error {err} at {point:?}");
        }
    }

    #[test]
    fn noisy_or_training_reduces_loss() {
        let (graph, labels) = four_user_fixture();
        let obj = NoisyOrObjective::new(&graph, &labels, 0.0);
        let init = [clamped_female_fraction(&labels), 0.0, 0.0];
        let init_loss = Objective::<f64>::loss(&obj, &init);
        let model = train_noisy_or::<f64>(&graph, &labels, &fixed_cfg(3000, 0.1)).unwrap();
        let final_loss = Objective::<f64>::loss(&obj, &[model.w0, model.w1, model.w2]);
        assert!(final_loss < init_loss);
    }

    #[test]
    fn count_models_train_at_f32_too() {
        let (graph, labels) = four_user_fixture();
        let model = train_count_sigmoid::<f32>(&graph, &labels, &fixed_cfg(500, 0.2)).unwrap();
        assert!(model.w0.is_finite());
        let p = predict_count_sigmoid(&model, CountFeatures { npr: 2, nnr: 1 });
        assert!(p.value() > 0.0 && p.value() < 1.0);
        let noisy = train_noisy_or::<f32>(&graph, &labels, &fixed_cfg(500, 0.1)).unwrap();
        let p = predict_noisy_or(&noisy, CountFeatures { npr: 1, nnr: 1 }).unwrap();
        assert!(p.value() > 0.0 && p.value() < 1.0);
    }

    #[test]
    fn all_female_zero_degree_noisy_or_pushes_w0_high() {
        let graph = graph_of(&[("other", "a", BinaryRating::Positive)]);
        let labels = labels_of(&[("x", Gender::Female), ("y", Gender::Female)]);
        let model = train_noisy_or::<f64>(&graph, &labels, &fixed_cfg(4000, 0.5)).unwrap();
        let p = predict_noisy_or(&model, CountFeatures { npr: 0, nnr: 0 }).unwrap();
        assert!(p.value() > 0.99, "got {}", p.value());
    }
}
