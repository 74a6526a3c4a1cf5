//! Per-item-weight relational logistic regression, trained plainly or with
//! relational dropout.
//!
//! The model keeps one weight per (item, polarity): a user's score is the
//! bias plus the sum of the weights of their observed edges, squashed
//! through a sigmoid. Plain training uses every edge of every user and
//! overfits. Relational dropout instead evaluates each user on a fresh
//! random fixed-size subset of their edges at every epoch, and predictions
//! average the sigmoid over many random subsets.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{BinaryRating, Gender, ItemIdx, RatingGraph, UserId, UserIdx};
use crate::metrics::{Prediction, CLIP_EPSILON};
use crate::model::{GenderPredictor, PredictError};
use crate::optim::{
    derive_seed, sgd_minimize, GradAccum, Objective, OptimError, SgdConfig, TermMode,
};
use crate::scalar::{ln2, logit, s, sigmoid, Scalar};

const TRAIN_SUBSET_TAG: u64 = 0x646f7472;
const TEST_SUBSET_TAG: u64 = 0x646f7465;

#[derive(Debug, Error)]
pub enum RlrError {
    #[error("no training labels")]
    EmptyLabels,
    #[error("invalid dropout config: {0}")]
    BadDropout(String),
    #[error(transparent)]
    Optim(#[from] OptimError),
}

/// Bias plus one weight per (item, polarity). Items beyond the trained range
/// contribute zero.
#[derive(Debug, Clone, PartialEq)]
pub struct PerItemRlrModel<S: Scalar> {
    pub w0: S,
    /// Weight applied when the user rated the item positively.
    pub h1: Vec<S>,
    /// Weight applied when the user rated the item negatively.
    pub h2: Vec<S>,
}

impl<S: Scalar> PerItemRlrModel<S> {
    fn weight(&self, item: ItemIdx, polarity: BinaryRating) -> S {
        let table = match polarity {
            BinaryRating::Positive => &self.h1,
            BinaryRating::Negative => &self.h2,
        };
        table.get(item.0 as usize).copied().unwrap_or_else(S::zero)
    }
}

/// Linear score of an edge multiset: `w0 + sum of per-edge weights`.
pub fn rlr_score<S: Scalar>(model: &PerItemRlrModel<S>, edges: &[(ItemIdx, BinaryRating)]) -> S {
    let mut z = model.w0;
    for &(item, polarity) in edges {
        z += model.weight(item, polarity);
    }
    z
}

/// Fixed-size subsetting used during training and prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropoutConfig {
    /// Edges kept per user per training epoch.
    pub k_train: usize,
    /// Edges kept per prediction sample.
    pub k_test: usize,
    /// Prediction samples averaged per user.
    pub n_test_samples: usize,
    pub seed: u64,
}

impl DropoutConfig {
    fn validate(&self) -> Result<(), RlrError> {
        if self.k_train == 0 || self.k_test == 0 || self.n_test_samples == 0 {
            return Err(RlrError::BadDropout(format!(
                "k_train={}, k_test={}, n_test_samples={} must all be positive",
                self.k_train, self.k_test, self.n_test_samples
            )));
        }
        Ok(())
    }
}

fn softplus<S: Scalar>(x: S) -> S {
    if x > S::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// L2-regularized base-2 log loss of the per-item RLR model over the labeled
/// users. With `dropout_k` set, each training-mode evaluation of a user term
/// draws a fresh per-epoch random subset of min(k, degree) edges; reference
/// evaluations always use every edge.
pub struct RlrObjective<'g> {
    graph: &'g RatingGraph,
    users: Vec<(UserIdx, bool)>,
    /// Zero-degree labeled users have no graph index but still anchor w0.
    zero_degree: Vec<bool>,
    l2: f64,
    dropout_k: Option<usize>,
    subset_seed: u64,
}

impl<'g> RlrObjective<'g> {
    pub fn new(
        graph: &'g RatingGraph,
        labels: &BTreeMap<UserId, Gender>,
        l2: f64,
        dropout_k: Option<usize>,
        subset_seed: u64,
    ) -> Self {
        let mut users = Vec::with_capacity(labels.len());
        let mut zero_degree = Vec::new();
        for (user, gender) in labels {
            match graph.user_idx(user) {
                Some(idx) => users.push((idx, gender.is_female())),
                None => zero_degree.push(gender.is_female()),
            }
        }
        RlrObjective {
            graph,
            users,
            zero_degree,
            l2,
            dropout_k,
            subset_seed,
        }
    }

    fn n_graph_terms(&self) -> usize {
        self.users.len()
    }

    /// The edges a term sees under the given mode, in canonical edge order.
    fn subset_for(&self, user: UserIdx, mode: TermMode, buf: &mut Vec<(ItemIdx, BinaryRating)>) {
        buf.clear();
        let edges = self.graph.user_edges(user);
        let keep = match (mode, self.dropout_k) {
            (TermMode::Train { .. }, Some(k)) if k < edges.len() => k,
            _ => {
                buf.extend_from_slice(edges);
                return;
            }
        };
        let epoch = match mode {
            TermMode::Train { epoch } => epoch,
            TermMode::Reference => unreachable!("reference mode keeps all edges"),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
            self.subset_seed,
            &[TRAIN_SUBSET_TAG, epoch, user.0 as u64],
        ));
        let mut picks = rand::seq::index::sample(&mut rng, edges.len(), keep).into_vec();
        picks.sort_unstable();
        buf.extend(picks.into_iter().map(|i| edges[i]));
    }
}

impl<S: Scalar> Objective<S> for RlrObjective<'_> {
    fn dimension(&self) -> usize {
        1 + 2 * self.graph.n_items()
    }

    fn num_terms(&self) -> usize {
        self.users.len() + self.zero_degree.len()
    }

    fn description(&self) -> String {
        match self.dropout_k {
            Some(k) => format!("per-item RLR log loss with dropout k={k}"),
            None => "per-item RLR log loss".to_owned(),
        }
    }

    fn terms_loss(
        &self,
        params: &[S],
        terms: &[usize],
        mode: TermMode,
        mut grad: Option<&mut GradAccum<S>>,
    ) -> S {
        let n_items = self.graph.n_items();
        let w0 = params[0];
        let inv = S::one() / s::<S>(terms.len() as f64);
        let lam = s::<S>(self.l2);
        let two = s::<S>(2.0);
        let mut subset = Vec::new();
        let mut total = S::zero();
        for &t in terms {
            let (z, female, has_edges) = if t < self.n_graph_terms() {
                let (user, female) = self.users[t];
                self.subset_for(user, mode, &mut subset);
                let mut z = w0;
                for &(item, polarity) in &subset {
                    let idx = param_index(item, polarity, n_items);
                    z += params[idx];
                }
                (z, female, true)
            } else {
                let female = self.zero_degree[t - self.n_graph_terms()];
                (w0, female, false)
            };
            let data_loss = if female { softplus(-z) } else { softplus(z) } / ln2::<S>();
            let mut term_loss = data_loss;
            let err = {
                let y = if female { S::one() } else { S::zero() };
                (sigmoid(z) - y) / ln2::<S>()
            };
            if let Some(g) = grad.as_deref_mut() {
                g.add(0, err * inv);
            }
            if has_edges {
                for &(item, polarity) in &subset {
                    let idx = param_index(item, polarity, n_items);
                    let h = params[idx];
                    term_loss += lam * h * h;
                    if let Some(g) = grad.as_deref_mut() {
                        g.add(idx, (err + two * lam * h) * inv);
                    }
                }
            }
            total += term_loss;
        }
        total * inv
    }
}

#[inline]
fn param_index(item: ItemIdx, polarity: BinaryRating, n_items: usize) -> usize {
    match polarity {
        BinaryRating::Positive => 1 + item.0 as usize,
        BinaryRating::Negative => 1 + n_items + item.0 as usize,
    }
}

fn init_params<S: Scalar>(graph: &RatingGraph, labels: &BTreeMap<UserId, Gender>) -> Vec<S> {
    let females = labels.values().filter(|g| g.is_female()).count() as f64;
    let base = (females / labels.len() as f64).clamp(CLIP_EPSILON, 1.0 - CLIP_EPSILON);
    let mut params = vec![S::zero(); 1 + 2 * graph.n_items()];
    params[0] = logit(s::<S>(base));
    params
}

fn model_from_params<S: Scalar>(params: &[S], n_items: usize) -> PerItemRlrModel<S> {
    PerItemRlrModel {
        w0: params[0],
        h1: params[1..1 + n_items].to_vec(),
        h2: params[1 + n_items..].to_vec(),
    }
}

/// Fit per-item RLR on every edge of every labeled user.
pub fn train_rlr<S: Scalar>(
    graph: &RatingGraph,
    labels: &BTreeMap<UserId, Gender>,
    cfg: &SgdConfig,
) -> Result<PerItemRlrModel<S>, RlrError> {
    train_impl(graph, labels, cfg, None, 0, None)
}

/// As [`train_rlr`], but an external monitor picks the best iterate.
pub fn train_rlr_monitored<S: Scalar>(
    graph: &RatingGraph,
    labels: &BTreeMap<UserId, Gender>,
    cfg: &SgdConfig,
    monitor: &dyn Fn(&PerItemRlrModel<S>) -> S,
) -> Result<PerItemRlrModel<S>, RlrError> {
    train_impl(graph, labels, cfg, None, 0, Some(monitor))
}

/// Fit per-item RLR where every epoch evaluates each user on a fresh random
/// subset of min(k_train, degree) edges.
pub fn train_rlr_dropout<S: Scalar>(
    graph: &RatingGraph,
    labels: &BTreeMap<UserId, Gender>,
    cfg: &SgdConfig,
    dropout: &DropoutConfig,
) -> Result<PerItemRlrModel<S>, RlrError> {
    dropout.validate()?;
    train_impl(
        graph,
        labels,
        cfg,
        Some(dropout.k_train),
        dropout.seed,
        None,
    )
}

/// As [`train_rlr_dropout`], but an external monitor picks the best iterate.
pub fn train_rlr_dropout_monitored<S: Scalar>(
    graph: &RatingGraph,
    labels: &BTreeMap<UserId, Gender>,
    cfg: &SgdConfig,
    dropout: &DropoutConfig,
    monitor: &dyn Fn(&PerItemRlrModel<S>) -> S,
) -> Result<PerItemRlrModel<S>, RlrError> {
    dropout.validate()?;
    train_impl(
        graph,
        labels,
        cfg,
        Some(dropout.k_train),
        dropout.seed,
        Some(monitor),
    )
}

fn train_impl<S: Scalar>(
    graph: &RatingGraph,
    labels: &BTreeMap<UserId, Gender>,
    cfg: &SgdConfig,
    dropout_k: Option<usize>,
    subset_seed: u64,
    monitor: Option<crate::optim::Monitor<'_, PerItemRlrModel<S>, S>>,
) -> Result<PerItemRlrModel<S>, RlrError> {
    if labels.is_empty() {
        return Err(RlrError::EmptyLabels);
    }
    let objective = RlrObjective::new(graph, labels, cfg.l2_penalty, dropout_k, subset_seed);
    let init = init_params::<S>(graph, labels);
    let n_items = graph.n_items();
    let run = match monitor {
        None => sgd_minimize(&objective, &init, cfg)?,
        Some(monitor) => {
            let adapter = |params: &[S]| monitor(&model_from_params(params, n_items));
            crate::optim::sgd_minimize_monitored(&objective, &init, cfg, &adapter)?
        }
    };
    Ok(model_from_params(&run.params, n_items))
}

/// Average, in probability space, the sigmoid of the score over
/// `n_test_samples` random size-min(k_test, degree) edge subsets. Users with
/// at most k_test edges (including zero-degree users) get the exact
/// full-edge prediction.
pub fn predict_rlr_dropout<S: Scalar>(
    model: &PerItemRlrModel<S>,
    graph: &RatingGraph,
    user: &UserId,
    dropout: &DropoutConfig,
) -> Prediction<S> {
    assert!(dropout.k_test >= 1, "k_test must be at least 1");
    assert!(
        dropout.n_test_samples >= 1,
        "n_test_samples must be at least 1"
    );
    let Some(idx) = graph.user_idx(user) else {
        return Prediction::clipped(sigmoid(model.w0));
    };
    let edges = graph.user_edges(idx);
    if dropout.k_test >= edges.len() {
        return Prediction::clipped(sigmoid(rlr_score(model, edges)));
    }
    let mut rng =
        ChaCha8Rng::seed_from_u64(derive_seed(dropout.seed, &[TEST_SUBSET_TAG, idx.0 as u64]));
    let mut total = S::zero();
    let mut subset = Vec::with_capacity(dropout.k_test);
    for _ in 0..dropout.n_test_samples {
        let mut picks = rand::seq::index::sample(&mut rng, edges.len(), dropout.k_test).into_vec();
        picks.sort_unstable();
        subset.clear();
        subset.extend(picks.into_iter().map(|i| edges[i]));
        total += sigmoid(rlr_score(model, &subset));
    }
    Prediction::clipped(total / s(dropout.n_test_samples as f64))
}

/// Plain RLR prediction over every edge of the user.
pub struct RlrPredictor<S: Scalar> {
    pub model: PerItemRlrModel<S>,
}

impl<S: Scalar> GenderPredictor<S> for RlrPredictor<S> {
    fn predict(&self, graph: &RatingGraph, user: &UserId) -> Result<Prediction<S>, PredictError> {
        let z = match graph.user_idx(user) {
            Some(idx) => rlr_score(&self.model, graph.user_edges(idx)),
            None => self.model.w0,
        };
        Ok(Prediction::clipped(sigmoid(z)))
    }
}

/// Dropout-averaged RLR prediction.
pub struct RlrDropoutPredictor<S: Scalar> {
    pub model: PerItemRlrModel<S>,
    pub dropout: DropoutConfig,
}

impl<S: Scalar> GenderPredictor<S> for RlrDropoutPredictor<S> {
    fn predict(&self, graph: &RatingGraph, user: &UserId) -> Result<Prediction<S>, PredictError> {
        Ok(predict_rlr_dropout(&self.model, graph, user, &self.dropout))
    }
}
