//! Stochastic gradient descent over term-decomposed objectives, numerical
//! gradient verification, and the 5-fold cross-validation scaffolding shared
//! by all trained models.
//!
//! An [`Objective`] exposes its loss as a mean over terms (labeled users for
//! the gender models, observed edges for matrix factorization) so the same
//! engine can minibatch, hold out validation terms for early stopping, and
//! restrict itself to cross-validation folds without rebuilding anything.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Debug;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::UserId;
use crate::metrics::{log_loss, mse, EvalPair, MetricsError};
use crate::scalar::{s, Scalar};

/// How a loss evaluation should treat stochastic structure such as
/// relational dropout subsets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TermMode {
    /// Training pass for the given epoch; dropout objectives draw their
    /// per-epoch subsets from it.
    Train { epoch: u64 },
    /// Deterministic full-evidence evaluation, used for monitoring, best
    /// iterate selection, and gradient checks.
    Reference,
}

/// Sparse gradient accumulator: dense storage plus a dirty list so clearing
/// costs only as much as the batch touched.
#[derive(Debug)]
pub struct GradAccum<S: Scalar> {
    values: Vec<S>,
    touched: Vec<usize>,
    marked: Vec<bool>,
}

impl<S: Scalar> GradAccum<S> {
    pub fn new(dimension: usize) -> Self {
        GradAccum {
            values: vec![S::zero(); dimension],
            touched: Vec::new(),
            marked: vec![false; dimension],
        }
    }

    #[inline]
    pub fn add(&mut self, index: usize, value: S) {
        if !self.marked[index] {
            self.marked[index] = true;
            self.touched.push(index);
        }
        self.values[index] += value;
    }

    pub fn clear(&mut self) {
        for &i in &self.touched {
            self.values[i] = S::zero();
            self.marked[i] = false;
        }
        self.touched.clear();
    }

    pub fn touched(&self) -> &[usize] {
        &self.touched
    }

    #[inline]
    pub fn value(&self, index: usize) -> S {
        self.values[index]
    }

    pub fn to_dense(&self) -> Vec<S> {
        self.values.clone()
    }
}

/// A differentiable loss decomposed as a mean over terms.
pub trait Objective<S: Scalar> {
    fn dimension(&self) -> usize;
    fn num_terms(&self) -> usize;
    fn description(&self) -> String {
        "objective".to_owned()
    }

    /// Mean loss over `terms`; when `grad` is given, the gradient of that
    /// mean is accumulated into it.
    fn terms_loss(
        &self,
        params: &[S],
        terms: &[usize],
        mode: TermMode,
        grad: Option<&mut GradAccum<S>>,
    ) -> S;

    /// Full deterministic loss.
    fn loss(&self, params: &[S]) -> S {
        let all: Vec<usize> = (0..self.num_terms()).collect();
        self.terms_loss(params, &all, TermMode::Reference, None)
    }

    /// Full deterministic loss and dense gradient.
    fn loss_grad(&self, params: &[S]) -> (S, Vec<S>) {
        let all: Vec<usize> = (0..self.num_terms()).collect();
        let mut grad = GradAccum::new(self.dimension());
        let loss = self.terms_loss(params, &all, TermMode::Reference, Some(&mut grad));
        (loss, grad.to_dense())
    }
}

/// Stopping rule for [`sgd_minimize`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Stopping {
    /// Run every epoch and keep the best iterate by training loss.
    FixedEpochs,
    /// Hold out 20% of the terms, stop once the held-out loss has not
    /// improved for `patience` epochs, then refit on all terms for the best
    /// epoch count.
    ValidationEarlyStop { patience: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub l2_penalty: f64,
    pub seed: u64,
    pub stopping: Stopping,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            learning_rate: 0.05,
            epochs: 500,
            batch_size: 32,
            l2_penalty: 0.0,
            seed: 0,
            stopping: Stopping::ValidationEarlyStop { patience: 10 },
        }
    }
}

impl SgdConfig {
    fn validate(&self) -> Result<(), OptimError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(OptimError::BadConfig(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(OptimError::BadConfig("epochs must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(OptimError::BadConfig("batch_size must be positive".into()));
        }
        if !(self.l2_penalty >= 0.0 && self.l2_penalty.is_finite()) {
            return Err(OptimError::BadConfig(format!(
                "l2_penalty must be nonnegative, got {}",
                self.l2_penalty
            )));
        }
        Ok(())
    }
}

/// Result of one SGD fit: the best-seen parameters and the score trace.
#[derive(Debug, Clone)]
pub struct SgdRun<S: Scalar> {
    pub params: Vec<S>,
    /// Monitor score of the returned parameters (training loss unless a
    /// validation or external monitor was used).
    pub best_score: S,
    /// Epoch after which the returned parameters were taken; 0 means the
    /// initial point was never improved on.
    pub best_epoch: usize,
    pub epochs_run: usize,
    /// Monitor score after each epoch, with the initial score at index 0.
    pub scores: Vec<S>,
}

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("parameter vector has length {got}, objective expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid optimizer configuration: {0}")]
    BadConfig(String),
    #[error("non-finite {what} at epoch {epoch} ({description})")]
    NonFinite {
        what: String,
        epoch: usize,
        description: String,
    },
    #[error("objective has no terms")]
    NoTerms,
    #[error("k-fold plan needs at least 2 folds, got {0}")]
    BadK(usize),
    #[error("cannot split {n} users into {k} folds")]
    TooFewUsers { n: usize, k: usize },
    #[error("hyperparameter grid is empty")]
    EmptyGrid,
    #[error("fold {fold} failed for grid point {grid_point} (index {grid_index}): {message}")]
    FoldEval {
        grid_index: usize,
        grid_point: String,
        fold: usize,
        message: String,
    },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// External monitor scoring candidate models during training; smaller is
/// better.
pub type Monitor<'a, M, S> = &'a dyn Fn(&M) -> S;

/// Derive an independent stream seed from a base seed and a tag path.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    let mut state = splitmix(base);
    for &tag in tags {
        state = splitmix(state ^ tag);
    }
    state
}

fn run_sgd<S: Scalar>(
    objective: &dyn Objective<S>,
    terms: &[usize],
    init: &[S],
    cfg: &SgdConfig,
    max_epochs: usize,
    patience: Option<usize>,
    score_fn: &dyn Fn(&[S]) -> S,
) -> Result<SgdRun<S>, OptimError> {
    if terms.is_empty() {
        return Err(OptimError::NoTerms);
    }
    let lr = s::<S>(cfg.learning_rate);
    let mut params = init.to_vec();
    let mut grad = GradAccum::new(objective.dimension());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order = terms.to_vec();
    let batch = cfg.batch_size.min(order.len());

    let init_score = score_fn(&params);
    if !init_score.is_finite() {
        return Err(OptimError::NonFinite {
            what: "initial score".into(),
            epoch: 0,
            description: objective.description(),
        });
    }
    let mut best_params = params.clone();
    let mut best_score = init_score;
    let mut best_epoch = 0usize;
    let mut scores = vec![init_score];
    let mut stale = 0usize;
    let mut epochs_run = 0usize;

    for epoch in 0..max_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            grad.clear();
            let loss = objective.terms_loss(
                &params,
                chunk,
                TermMode::Train {
                    epoch: epoch as u64,
                },
                Some(&mut grad),
            );
            if !loss.is_finite() {
                return Err(OptimError::NonFinite {
                    what: "minibatch loss".into(),
                    epoch,
                    description: objective.description(),
                });
            }
            for &i in grad.touched() {
                let g = grad.value(i);
                if !g.is_finite() {
                    return Err(OptimError::NonFinite {
                        what: format!("gradient coordinate {i}"),
                        epoch,
                        description: objective.description(),
                    });
                }
                params[i] -= lr * g;
            }
        }
        epochs_run = epoch + 1;
        let score = score_fn(&params);
        if !score.is_finite() {
            return Err(OptimError::NonFinite {
                what: "epoch score".into(),
                epoch,
                description: objective.description(),
            });
        }
        scores.push(score);
        if score < best_score {
            best_score = score;
            best_params.copy_from_slice(&params);
            best_epoch = epoch + 1;
            stale = 0;
        } else {
            stale += 1;
            if let Some(patience) = patience {
                if stale > patience {
                    break;
                }
            }
        }
    }

    Ok(SgdRun {
        params: best_params,
        best_score,
        best_epoch,
        epochs_run,
        scores,
    })
}

/// Minimize an objective with minibatch SGD.
///
/// Deterministic given the config seed. Under [`Stopping::FixedEpochs`] the
/// best iterate by full training loss is returned, so the result never
/// scores worse than the initial point. Under
/// [`Stopping::ValidationEarlyStop`] 20% of the terms are held out to pick
/// the epoch budget, after which the model is refit on every term for that
/// many epochs; objectives too small to split fall back to fixed epochs.
pub fn sgd_minimize<S: Scalar>(
    objective: &dyn Objective<S>,
    init: &[S],
    cfg: &SgdConfig,
) -> Result<SgdRun<S>, OptimError> {
    cfg.validate()?;
    if init.len() != objective.dimension() {
        return Err(OptimError::Dimension {
            expected: objective.dimension(),
            got: init.len(),
        });
    }
    let all: Vec<usize> = (0..objective.num_terms()).collect();
    let full_score = |p: &[S]| objective.loss(p);

    match cfg.stopping {
        Stopping::FixedEpochs => run_sgd(objective, &all, init, cfg, cfg.epochs, None, &full_score),
        Stopping::ValidationEarlyStop { patience } => {
            let n_val = all.len() / 5;
            if n_val == 0 {
                return run_sgd(objective, &all, init, cfg, cfg.epochs, None, &full_score);
            }
            let mut shuffled = all.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[0x7a11da7e]));
            shuffled.shuffle(&mut rng);
            let (val_terms, fit_terms) = shuffled.split_at(n_val);
            let val_score = |p: &[S]| objective.terms_loss(p, val_terms, TermMode::Reference, None);
            let probe = run_sgd(
                objective,
                fit_terms,
                init,
                cfg,
                cfg.epochs,
                Some(patience),
                &val_score,
            )?;
            let budget = probe.best_epoch.max(1);
            run_sgd(objective, &all, init, cfg, budget, None, &full_score)
        }
    }
}

/// Minimize with an external monitor deciding the best iterate (and early
/// stopping, when the config asks for it). This is the replication path that
/// lets the harness stop on test loss.
pub fn sgd_minimize_monitored<S: Scalar>(
    objective: &dyn Objective<S>,
    init: &[S],
    cfg: &SgdConfig,
    monitor: &dyn Fn(&[S]) -> S,
) -> Result<SgdRun<S>, OptimError> {
    cfg.validate()?;
    if init.len() != objective.dimension() {
        return Err(OptimError::Dimension {
            expected: objective.dimension(),
            got: init.len(),
        });
    }
    let all: Vec<usize> = (0..objective.num_terms()).collect();
    let patience = match cfg.stopping {
        Stopping::FixedEpochs => None,
        Stopping::ValidationEarlyStop { patience } => Some(patience),
    };
    run_sgd(objective, &all, init, cfg, cfg.epochs, patience, monitor)
}

/// Compare the analytic gradient against central differences; returns the
/// worst relative error over coordinates.
pub fn grad_check<S: Scalar>(
    objective: &dyn Objective<S>,
    point: &[S],
    h: S,
) -> Result<S, OptimError> {
    if point.len() != objective.dimension() {
        return Err(OptimError::Dimension {
            expected: objective.dimension(),
            got: point.len(),
        });
    }
    // NaN steps must be rejected too
    if h.partial_cmp(&S::zero()) != Some(std::cmp::Ordering::Greater) {
        return Err(OptimError::BadConfig("step h must be positive".into()));
    }
    let (_, analytic) = objective.loss_grad(point);
    let mut work = point.to_vec();
    let mut worst = S::zero();
    for j in 0..point.len() {
        let orig = work[j];
        work[j] = orig + h;
        let plus = objective.loss(&work);
        work[j] = orig - h;
        let minus = objective.loss(&work);
        work[j] = orig;
        let numeric = (plus - minus) / (s::<S>(2.0) * h);
        let denom = S::one().max(analytic[j].abs());
        let rel = (analytic[j] - numeric).abs() / denom;
        if !rel.is_finite() {
            return Err(OptimError::NonFinite {
                what: format!("gradient check at coordinate {j}"),
                epoch: 0,
                description: objective.description(),
            });
        }
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// Assignment of users to cross-validation folds.
#[derive(Debug, Clone)]
pub struct FoldPlan {
    k: usize,
    assignments: BTreeMap<UserId, usize>,
}

impl FoldPlan {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn assignments(&self) -> &BTreeMap<UserId, usize> {
        &self.assignments
    }

    /// Users held out in `fold`, in id order.
    pub fn val_users(&self, fold: usize) -> Vec<UserId> {
        self.assignments
            .iter()
            .filter(|(_, &f)| f == fold)
            .map(|(u, _)| u.clone())
            .collect()
    }

    /// Users trained on in `fold`, in id order.
    pub fn train_users(&self, fold: usize) -> Vec<UserId> {
        self.assignments
            .iter()
            .filter(|(_, &f)| f != fold)
            .map(|(u, _)| u.clone())
            .collect()
    }
}

/// Deterministically assign users to `k` folds whose sizes differ by at
/// most one.
pub fn kfold_plan(users: &BTreeSet<UserId>, k: usize, seed: u64) -> Result<FoldPlan, OptimError> {
    if k < 2 {
        return Err(OptimError::BadK(k));
    }
    if users.len() < k {
        return Err(OptimError::TooFewUsers { n: users.len(), k });
    }
    let mut order: Vec<&UserId> = users.iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let assignments = order
        .into_iter()
        .enumerate()
        .map(|(pos, user)| (user.clone(), pos % k))
        .collect();
    Ok(FoldPlan { k, assignments })
}

/// Metric minimized by [`tune`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TuneMetric {
    LogLoss,
    Mse,
}

impl TuneMetric {
    pub fn evaluate<S: Scalar>(&self, pairs: &[EvalPair<S>]) -> Result<S, MetricsError> {
        match self {
            TuneMetric::LogLoss => log_loss(pairs),
            TuneMetric::Mse => mse(pairs),
        }
    }
}

/// Outcome of a grid search: the winning point plus the per-fold scores
/// that picked it.
#[derive(Debug, Clone)]
pub struct TuneOutcome<S: Scalar, H> {
    pub best: H,
    pub best_index: usize,
    /// `fold_scores[grid_index][fold]`
    pub fold_scores: Vec<Vec<S>>,
    pub mean_scores: Vec<S>,
}

/// Pick the grid point minimizing the mean held-out-fold metric. Folds
/// evaluate independently (and in parallel); ties break toward the earliest
/// grid entry.
///
/// `eval_fold(h, fold)` must train on the fold's training users and return
/// one [`EvalPair`] per held-out user.
pub fn tune<S, H, F>(
    grid: &[H],
    plan: &FoldPlan,
    metric: TuneMetric,
    eval_fold: F,
) -> Result<TuneOutcome<S, H>, OptimError>
where
    S: Scalar,
    H: Clone + Debug + Sync,
    F: Fn(&H, usize) -> Result<Vec<EvalPair<S>>, String> + Sync,
{
    if grid.is_empty() {
        return Err(OptimError::EmptyGrid);
    }
    let jobs: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|gi| (0..plan.k()).map(move |fold| (gi, fold)))
        .collect();
    let results: Vec<Result<S, OptimError>> = jobs
        .par_iter()
        .map(|&(gi, fold)| {
            let pairs = eval_fold(&grid[gi], fold).map_err(|message| OptimError::FoldEval {
                grid_index: gi,
                grid_point: format!("{:?}", grid[gi]),
                fold,
                message,
            })?;
            metric.evaluate(&pairs).map_err(|e| OptimError::FoldEval {
                grid_index: gi,
                grid_point: format!("{:?}", grid[gi]),
                fold,
                message: e.to_string(),
            })
        })
        .collect();

    let mut fold_scores: Vec<Vec<S>> = vec![Vec::with_capacity(plan.k()); grid.len()];
    for (&(gi, _fold), result) in jobs.iter().zip(results) {
        fold_scores[gi].push(result?);
    }
    let mean_scores: Vec<S> = fold_scores
        .iter()
        .map(|scores| scores.iter().copied().sum::<S>() / s(scores.len() as f64))
        .collect();
    let mut best_index = 0;
    for (i, &score) in mean_scores.iter().enumerate() {
        if score < mean_scores[best_index] {
            best_index = i;
        }
    }
    Ok(TuneOutcome {
        best: grid[best_index].clone(),
        best_index,
        fold_scores,
        mean_scores,
    })
}
