//! The "each movie as a dataset" estimators and naive Bayes with a limited
//! number of neighbors.
//!
//! P1 pools the gender counts of every rater of every movie the target user
//! rated into one smoothed ratio; P2 smooths each movie separately and
//! averages the per-movie ratios. Both are rating-polarity-blind by default
//! (an ablation flag makes them polarity-aware) and exclude the target
//! user's own label from the counts at prediction time, which only matters
//! for training users during cross-validation.

use std::collections::{BTreeMap, HashMap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dataset::{BinaryRating, Gender, ItemIdx, RatingGraph, UserId, UserIdx};
use crate::metrics::Prediction;
use crate::model::{GenderPredictor, PredictError};
use crate::optim::derive_seed;
use crate::scalar::{s, sigmoid, Scalar};

const NB_SAMPLE_TAG: u64 = 0x6e625f73;

#[derive(Debug, Error)]
pub enum NeighborhoodError {
    #[error("no training labels")]
    EmptyLabels,
    #[error("pseudo-count must be positive, got {0}")]
    InvalidPseudoCount(f64),
}

/// Additive smoothing constant (beta/Dirichlet prior).
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct PseudoCount(f64);

impl PseudoCount {
    pub fn new(c: f64) -> Result<Self, NeighborhoodError> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(NeighborhoodError::InvalidPseudoCount(c));
        }
        Ok(PseudoCount(c))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Labeled-rater counts for one item (or one item-polarity cell).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ItemCounts {
    pub n_female: u32,
    pub n_total: u32,
}

/// Per-item gender counts over the labeled training raters only.
#[derive(Debug, Clone)]
pub struct ItemGenderStats {
    totals: Vec<ItemCounts>,
    by_polarity: Vec<[ItemCounts; 2]>,
    counted: HashMap<UserIdx, Gender>,
}

fn polarity_slot(polarity: BinaryRating) -> usize {
    match polarity {
        BinaryRating::Positive => 0,
        BinaryRating::Negative => 1,
    }
}

/// Count, for every item, how many labeled users rated it and how many of
/// those are Female.
pub fn build_item_stats(graph: &RatingGraph, labels: &BTreeMap<UserId, Gender>) -> ItemGenderStats {
    let mut totals = vec![ItemCounts::default(); graph.n_items()];
    let mut by_polarity = vec![[ItemCounts::default(); 2]; graph.n_items()];
    let mut counted = HashMap::new();
    for (user, &gender) in labels {
        let Some(idx) = graph.user_idx(user) else {
            continue; // labeled but zero-degree
        };
        counted.insert(idx, gender);
        for &(item, polarity) in graph.user_edges(idx) {
            let t = &mut totals[item.0 as usize];
            t.n_total += 1;
            let p = &mut by_polarity[item.0 as usize][polarity_slot(polarity)];
            p.n_total += 1;
            if gender.is_female() {
                t.n_female += 1;
                p.n_female += 1;
            }
        }
    }
    ItemGenderStats {
        totals,
        by_polarity,
        counted,
    }
}

impl ItemGenderStats {
    pub fn item(&self, item: ItemIdx) -> ItemCounts {
        self.totals[item.0 as usize]
    }

    pub fn item_polarity(&self, item: ItemIdx, polarity: BinaryRating) -> ItemCounts {
        self.by_polarity[item.0 as usize][polarity_slot(polarity)]
    }

    /// The label this user contributed to the counts, if any.
    pub fn counted(&self, user: UserIdx) -> Option<Gender> {
        self.counted.get(&user).copied()
    }

    /// Items whose labeled raters include no females.
    pub fn n_items_without_female_raters(&self) -> usize {
        self.totals.iter().filter(|c| c.n_female == 0).count()
    }
}

/// Behavior switches shared by P1 and P2.
#[derive(Debug, Clone, Copy)]
pub struct NeighborhoodOptions {
    /// Exclude the predicted user's own label from the counts. Only training
    /// users can be affected; test users are never in the stats.
    pub leave_one_out: bool,
    /// Count only raters with the same rating polarity as the target user
    /// (the ablation); default counts every rater.
    pub polarity_aware: bool,
}

impl Default for NeighborhoodOptions {
    fn default() -> Self {
        NeighborhoodOptions {
            leave_one_out: true,
            polarity_aware: false,
        }
    }
}

fn edge_counts(
    stats: &ItemGenderStats,
    item: ItemIdx,
    polarity: BinaryRating,
    own: Option<Gender>,
    opts: NeighborhoodOptions,
) -> ItemCounts {
    let mut counts = if opts.polarity_aware {
        stats.item_polarity(item, polarity)
    } else {
        stats.item(item)
    };
    if opts.leave_one_out {
        if let Some(gender) = own {
            counts.n_total -= 1;
            if gender.is_female() {
                counts.n_female -= 1;
            }
        }
    }
    counts
}

/// Pooled estimator: one smoothed ratio over all raters of all movies the
/// user rated. Zero-degree users get the uninformed 0.5.
pub fn predict_p1<S: Scalar>(
    stats: &ItemGenderStats,
    graph: &RatingGraph,
    user: &UserId,
    c: PseudoCount,
) -> Prediction<S> {
    predict_p1_with(stats, graph, user, c, NeighborhoodOptions::default())
}

pub fn predict_p1_with<S: Scalar>(
    stats: &ItemGenderStats,
    graph: &RatingGraph,
    user: &UserId,
    c: PseudoCount,
    opts: NeighborhoodOptions,
) -> Prediction<S> {
    let mut sum_female = 0.0;
    let mut sum_total = 0.0;
    if let Some(idx) = graph.user_idx(user) {
        let own = stats.counted(idx);
        for &(item, polarity) in graph.user_edges(idx) {
            let counts = edge_counts(stats, item, polarity, own, opts);
            sum_female += counts.n_female as f64;
            sum_total += counts.n_total as f64;
        }
    }
    let p = (c.value() + sum_female) / (2.0 * c.value() + sum_total);
    Prediction::clipped(s(p))
}

/// Per-movie estimator: smooth each rated movie separately and average the
/// ratios. Zero-degree users get the uninformed 0.5.
pub fn predict_p2<S: Scalar>(
    stats: &ItemGenderStats,
    graph: &RatingGraph,
    user: &UserId,
    c: PseudoCount,
) -> Prediction<S> {
    predict_p2_with(stats, graph, user, c, NeighborhoodOptions::default())
}

pub fn predict_p2_with<S: Scalar>(
    stats: &ItemGenderStats,
    graph: &RatingGraph,
    user: &UserId,
    c: PseudoCount,
    opts: NeighborhoodOptions,
) -> Prediction<S> {
    let Some(idx) = graph.user_idx(user) else {
        return Prediction::clipped(s(0.5));
    };
    let edges = graph.user_edges(idx);
    if edges.is_empty() {
        return Prediction::clipped(s(0.5));
    }
    let own = stats.counted(idx);
    let mut total = 0.0;
    for &(item, polarity) in edges {
        let counts = edge_counts(stats, item, polarity, own, opts);
        total += (c.value() + counts.n_female as f64) / (2.0 * c.value() + counts.n_total as f64);
    }
    Prediction::clipped(s(total / edges.len() as f64))
}

/// P1 bound to its stats and smoothing.
pub struct P1Predictor<S: Scalar> {
    pub stats: ItemGenderStats,
    pub c: PseudoCount,
    pub opts: NeighborhoodOptions,
    _scalar: std::marker::PhantomData<fn() -> S>,
}

impl<S: Scalar> P1Predictor<S> {
    pub fn new(stats: ItemGenderStats, c: PseudoCount, opts: NeighborhoodOptions) -> Self {
        P1Predictor {
            stats,
            c,
            opts,
            _scalar: std::marker::PhantomData,
        }
    }
}

impl<S: Scalar> GenderPredictor<S> for P1Predictor<S> {
    fn predict(&self, graph: &RatingGraph, user: &UserId) -> Result<Prediction<S>, PredictError> {
        Ok(predict_p1_with(&self.stats, graph, user, self.c, self.opts))
    }
}

/// P2 bound to its stats and smoothing.
pub struct P2Predictor<S: Scalar> {
    pub stats: ItemGenderStats,
    pub c: PseudoCount,
    pub opts: NeighborhoodOptions,
    _scalar: std::marker::PhantomData<fn() -> S>,
}

impl<S: Scalar> P2Predictor<S> {
    pub fn new(stats: ItemGenderStats, c: PseudoCount, opts: NeighborhoodOptions) -> Self {
        P2Predictor {
            stats,
            c,
            opts,
            _scalar: std::marker::PhantomData,
        }
    }
}

impl<S: Scalar> GenderPredictor<S> for P2Predictor<S> {
    fn predict(&self, graph: &RatingGraph, user: &UserId) -> Result<Prediction<S>, PredictError> {
        Ok(predict_p2_with(&self.stats, graph, user, self.c, self.opts))
    }
}

/// Generative model: gender draws each observed (item, polarity) edge from a
/// smoothed categorical over the 2 * n_items event space. Absent ratings
/// contribute no factor.
#[derive(Debug, Clone)]
pub struct NaiveBayesModel<S: Scalar> {
    ln_prior_female: S,
    ln_prior_male: S,
    prior_female: S,
    /// Per item: ln P(edge | gender) for [pos|F, neg|F, pos|M, neg|M].
    ln_lik: Vec<[S; 4]>,
}

impl<S: Scalar> NaiveBayesModel<S> {
    pub fn prior_female(&self) -> S {
        self.prior_female
    }

    /// P(edge = (item, polarity) | gender).
    pub fn likelihood(&self, item: ItemIdx, polarity: BinaryRating, gender: Gender) -> S {
        self.ln_likelihood(item, polarity, gender).exp()
    }

    fn ln_likelihood(&self, item: ItemIdx, polarity: BinaryRating, gender: Gender) -> S {
        let slot = polarity_slot(polarity) + if gender.is_female() { 0 } else { 2 };
        self.ln_lik[item.0 as usize][slot]
    }

    /// Posterior P(Female | edges) under conditional independence.
    pub fn posterior(&self, edges: &[(ItemIdx, BinaryRating)]) -> Prediction<S> {
        let mut ln_f = self.ln_prior_female;
        let mut ln_m = self.ln_prior_male;
        for &(item, polarity) in edges {
            ln_f += self.ln_likelihood(item, polarity, Gender::Female);
            ln_m += self.ln_likelihood(item, polarity, Gender::Male);
        }
        Prediction::clipped(sigmoid(ln_f - ln_m))
    }
}

/// Fit the smoothed prior and per-(item, polarity) likelihood tables.
pub fn train_naive_bayes<S: Scalar>(
    graph: &RatingGraph,
    labels: &BTreeMap<UserId, Gender>,
    smoothing: PseudoCount,
) -> Result<NaiveBayesModel<S>, NeighborhoodError> {
    if labels.is_empty() {
        return Err(NeighborhoodError::EmptyLabels);
    }
    let c = smoothing.value();
    let n_items = graph.n_items();
    let mut counts = vec![[0u32; 4]; n_items];
    let mut edges_female = 0u64;
    let mut edges_male = 0u64;
    let mut n_female_users = 0u64;
    for (user, &gender) in labels {
        if gender.is_female() {
            n_female_users += 1;
        }
        let Some(idx) = graph.user_idx(user) else {
            continue;
        };
        for &(item, polarity) in graph.user_edges(idx) {
            let slot = polarity_slot(polarity) + if gender.is_female() { 0 } else { 2 };
            counts[item.0 as usize][slot] += 1;
            if gender.is_female() {
                edges_female += 1;
            } else {
                edges_male += 1;
            }
        }
    }
    let event_space = 2.0 * n_items as f64;
    let denom_f = edges_female as f64 + c * event_space;
    let denom_m = edges_male as f64 + c * event_space;
    let ln_lik = counts
        .iter()
        .map(|cell| {
            [
                s::<S>(((cell[0] as f64 + c) / denom_f).ln()),
                s::<S>(((cell[1] as f64 + c) / denom_f).ln()),
                s::<S>(((cell[2] as f64 + c) / denom_m).ln()),
                s::<S>(((cell[3] as f64 + c) / denom_m).ln()),
            ]
        })
        .collect();
    let prior = (n_female_users as f64 + c) / (labels.len() as f64 + 2.0 * c);
    Ok(NaiveBayesModel {
        ln_prior_female: s(prior.ln()),
        ln_prior_male: s((1.0 - prior).ln()),
        prior_female: s(prior),
        ln_lik,
    })
}

/// Average the naive Bayes posterior over random size-min(k, degree) subsets
/// of the user's edges, drawn without replacement. A user with at most k
/// ratings gets the exact full posterior; a zero-degree user gets the prior.
pub fn predict_nb_limited<S: Scalar>(
    model: &NaiveBayesModel<S>,
    graph: &RatingGraph,
    user: &UserId,
    k: usize,
    n_samples: usize,
    seed: u64,
) -> Prediction<S> {
    assert!(k >= 1, "k must be at least 1");
    assert!(n_samples >= 1, "n_samples must be at least 1");
    let Some(idx) = graph.user_idx(user) else {
        return Prediction::clipped(model.prior_female);
    };
    let edges = graph.user_edges(idx);
    if edges.is_empty() {
        return Prediction::clipped(model.prior_female);
    }
    if k >= edges.len() {
        return model.posterior(edges);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[NB_SAMPLE_TAG, idx.0 as u64]));
    let mut total = S::zero();
    let mut subset = Vec::with_capacity(k);
    for _ in 0..n_samples {
        let mut picks = rand::seq::index::sample(&mut rng, edges.len(), k).into_vec();
        picks.sort_unstable();
        subset.clear();
        subset.extend(picks.into_iter().map(|i| edges[i]));
        total += model.posterior(&subset).value();
    }
    Prediction::clipped(total / s(n_samples as f64))
}

/// Naive Bayes with limited neighbors, bound to its sampling settings.
pub struct NbLimitedPredictor<S: Scalar> {
    pub model: NaiveBayesModel<S>,
    pub k: usize,
    pub n_samples: usize,
    pub seed: u64,
}

impl<S: Scalar> GenderPredictor<S> for NbLimitedPredictor<S> {
    fn predict(&self, graph: &RatingGraph, user: &UserId) -> Result<Prediction<S>, PredictError> {
        Ok(predict_nb_limited(
            &self.model,
            graph,
            user,
            self.k,
            self.n_samples,
            self.seed,
        ))
    }
}
