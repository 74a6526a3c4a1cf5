//! Experiment orchestration: configuration, method dispatch, CV tuning,
//! evaluation, and report emission.
//!
//! `run_experiment` is the single pipeline every method goes through:
//! ingest, split, tune where a grid is configured, train on the full
//! training labels, predict every test user, score. Test labels live in an
//! access-audited store; in the default mode any read before evaluation
//! aborts the experiment. The `paper_stopping` replication mode instead
//! monitors test loss during training and is flagged in the report.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::count_models::{
    predict_constant, train_count_sigmoid, train_count_sigmoid_monitored, train_noisy_or,
    train_noisy_or_monitored, training_average, CountError, CountSigmoidPredictor,
    NoisyOrPredictor,
};
use crate::dataset::{
    load_ratings, load_user_labels, temporal_split, DatasetError, DatasetFormat, Gender,
    LabeledSplit, UserId,
};
use crate::factorization::{
    train_logistic_mf, train_logistic_mf_l2_grid, train_stacked_gender,
    train_stacked_gender_monitored, MfError, MfInit, MfModel, MfStackedPredictor,
};
use crate::metrics::{log_loss, mse, EvalPair, MetricsError};
use crate::model::{GenderPredictor, PredictError};
use crate::neighborhood::{
    build_item_stats, train_naive_bayes, NbLimitedPredictor, NeighborhoodError,
    NeighborhoodOptions, P1Predictor, P2Predictor, PseudoCount,
};
use crate::optim::{derive_seed, kfold_plan, tune, OptimError, SgdConfig, Stopping, TuneMetric};
use crate::rlr::{
    train_rlr, train_rlr_dropout, train_rlr_dropout_monitored, train_rlr_monitored, DropoutConfig,
    RlrDropoutPredictor, RlrError, RlrPredictor,
};

type Predictor = Box<dyn GenderPredictor<f64>>;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(#[from] DatasetError),
    #[error("training failure: {0}")]
    Training(String),
    #[error("test labels were read {reads} time(s) before evaluation outside paper-stopping mode")]
    LabelLeak { reads: u64 },
    #[error("prediction failure: {0}")]
    Predict(#[from] PredictError),
    #[error("metric failure: {0}")]
    Metrics(#[from] MetricsError),
    #[error("failed to write {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl ExperimentError {
    /// CLI exit code: 1 config, 2 data, 3 training/evaluation.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_) => 1,
            ExperimentError::Data(_) | ExperimentError::Io { .. } => 2,
            ExperimentError::Training(_)
            | ExperimentError::LabelLeak { .. }
            | ExperimentError::Predict(_)
            | ExperimentError::Metrics(_) => 3,
        }
    }
}

impl From<OptimError> for ExperimentError {
    fn from(e: OptimError) -> Self {
        ExperimentError::Training(e.to_string())
    }
}

impl From<CountError> for ExperimentError {
    fn from(e: CountError) -> Self {
        ExperimentError::Training(e.to_string())
    }
}

impl From<NeighborhoodError> for ExperimentError {
    fn from(e: NeighborhoodError) -> Self {
        ExperimentError::Training(e.to_string())
    }
}

impl From<RlrError> for ExperimentError {
    fn from(e: RlrError) -> Self {
        ExperimentError::Training(e.to_string())
    }
}

impl From<MfError> for ExperimentError {
    fn from(e: MfError) -> Self {
        ExperimentError::Training(e.to_string())
    }
}

/// A split boundary: either an inclusive timestamp, or "the first N
/// ratings" resolved to the timestamp of the Nth earliest rating (ties at
/// that timestamp are included).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cutoff {
    Timestamp(i64),
    Count { count: usize },
}

impl Cutoff {
    fn resolve(self, sorted_timestamps: &[i64]) -> i64 {
        match self {
            Cutoff::Timestamp(ts) => ts,
            Cutoff::Count { count } => {
                if count == 0 || sorted_timestamps.is_empty() {
                    i64::MIN
                } else {
                    sorted_timestamps[count.min(sorted_timestamps.len()) - 1]
                }
            }
        }
    }
}

/// Where the data lives and how to split it.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub ratings: PathBuf,
    pub labels: PathBuf,
    pub format: DatasetFormat,
    pub rating_cutoff: Cutoff,
    pub label_cutoff: Cutoff,
}

/// SGD hyperparameters as they appear in config files; the run seed is
/// derived per experiment, not configured here.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SgdSettings {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub l2_penalty: f64,
    pub stopping: Stopping,
}

impl Default for SgdSettings {
    fn default() -> Self {
        SgdSettings {
            learning_rate: 0.05,
            epochs: 500,
            batch_size: 32,
            l2_penalty: 0.0,
            stopping: Stopping::ValidationEarlyStop { patience: 10 },
        }
    }
}

impl SgdSettings {
    pub fn to_config(self, seed: u64) -> SgdConfig {
        SgdConfig {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            l2_penalty: self.l2_penalty,
            seed,
            stopping: self.stopping,
        }
    }
}

/// Full-batch gradient descent defaults for the 3-parameter count models,
/// whose count features make the generic schedule diverge.
fn count_sgd_defaults() -> SgdSettings {
    SgdSettings {
        learning_rate: 1e-4,
        epochs: 20_000,
        batch_size: usize::MAX,
        l2_penalty: 0.0,
        stopping: Stopping::FixedEpochs,
    }
}

fn rlr_sgd_defaults() -> SgdSettings {
    SgdSettings {
        l2_penalty: 1e-3,
        ..SgdSettings::default()
    }
}

fn mf_sgd_defaults() -> SgdSettings {
    SgdSettings {
        l2_penalty: 1e-2,
        ..SgdSettings::default()
    }
}

fn stacked_sgd_defaults() -> SgdSettings {
    SgdSettings {
        l2_penalty: 1e-2,
        ..SgdSettings::default()
    }
}

fn default_half() -> f64 {
    0.5
}

fn default_true() -> bool {
    true
}

fn default_c_grid() -> Vec<f64> {
    vec![
        0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0, 200.0, 500.0, 1000.0,
    ]
}

fn default_nb_k_grid() -> Vec<usize> {
    vec![1, 2, 5, 10, 20, 40]
}

fn default_dropout_k_grid() -> Vec<usize> {
    vec![5, 10, 20, 40]
}

fn default_n_samples() -> usize {
    30
}

fn default_nb_smoothing() -> f64 {
    1.0
}

fn default_latent_dim() -> usize {
    8
}

fn default_cv_folds() -> usize {
    5
}

/// Initialization mode for the factorization, as configured.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MfInitMode {
    #[default]
    Random,
    GenderSeeded,
}

/// A method plus its hyperparameters or CV grids. Fixed values win over
/// grids; a grid runs 5-fold CV on the training labels.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MethodSpec {
    PredictHalf {
        #[serde(default = "default_half")]
        p: f64,
    },
    TrainAverage {},
    CountSigmoid {
        #[serde(default = "count_sgd_defaults")]
        sgd: SgdSettings,
    },
    NoisyOr {
        #[serde(default = "count_sgd_defaults")]
        sgd: SgdSettings,
    },
    P1 {
        #[serde(default)]
        pseudo_count: Option<f64>,
        #[serde(default = "default_c_grid")]
        pseudo_count_grid: Vec<f64>,
        #[serde(default)]
        polarity_aware: bool,
        #[serde(default = "default_true")]
        leave_one_out: bool,
    },
    P2 {
        #[serde(default)]
        pseudo_count: Option<f64>,
        #[serde(default = "default_c_grid")]
        pseudo_count_grid: Vec<f64>,
        #[serde(default)]
        polarity_aware: bool,
        #[serde(default = "default_true")]
        leave_one_out: bool,
    },
    NbLimited {
        #[serde(default)]
        k: Option<usize>,
        #[serde(default = "default_nb_k_grid")]
        k_grid: Vec<usize>,
        #[serde(default = "default_nb_smoothing")]
        smoothing: f64,
        #[serde(default = "default_n_samples")]
        n_samples: usize,
    },
    Rlr {
        #[serde(default = "rlr_sgd_defaults")]
        sgd: SgdSettings,
    },
    RlrDropout {
        #[serde(default = "rlr_sgd_defaults")]
        sgd: SgdSettings,
        #[serde(default)]
        k_train: Option<usize>,
        #[serde(default)]
        k_test: Option<usize>,
        #[serde(default = "default_dropout_k_grid")]
        k_grid: Vec<usize>,
        #[serde(default = "default_n_samples")]
        n_samples: usize,
    },
    MfStacked {
        #[serde(default = "default_latent_dim")]
        latent_dim: usize,
        #[serde(default)]
        init: MfInitMode,
        #[serde(default = "mf_sgd_defaults")]
        mf_sgd: SgdSettings,
        #[serde(default = "stacked_sgd_defaults")]
        lr_sgd: SgdSettings,
        #[serde(default)]
        mf_l2_grid: Option<Vec<f64>>,
        #[serde(default)]
        lr_l2_grid: Option<Vec<f64>>,
    },
}

impl MethodSpec {
    pub fn name(&self) -> &'static str {
        match self {
            MethodSpec::PredictHalf { .. } => "predict-half",
            MethodSpec::TrainAverage {} => "train-average",
            MethodSpec::CountSigmoid { .. } => "count-sigmoid",
            MethodSpec::NoisyOr { .. } => "noisy-or",
            MethodSpec::P1 { .. } => "p1",
            MethodSpec::P2 { .. } => "p2",
            MethodSpec::NbLimited { .. } => "nb-limited",
            MethodSpec::Rlr { .. } => "rlr",
            MethodSpec::RlrDropout { .. } => "rlr-dropout",
            MethodSpec::MfStacked { .. } => "mf-stacked",
        }
    }
}

/// One experiment: dataset, method, seed, and mode.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub method: MethodSpec,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub paper_stopping: bool,
    #[serde(default = "default_cv_folds")]
    pub cv_folds: usize,
}

/// The on-disk config: one dataset, shared seed, many methods.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    pub data: DataConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_cv_folds")]
    pub cv_folds: usize,
    pub methods: Vec<MethodSpec>,
}

impl BenchConfig {
    pub fn from_path(path: &Path) -> Result<Self, ExperimentError> {
        let text = fs::read_to_string(path)
            .map_err(|e| ExperimentError::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))
    }

    /// Experiment for one method; `name` picks from the method list, or the
    /// single configured method when omitted.
    pub fn experiment(&self, name: Option<&str>) -> Result<ExperimentConfig, ExperimentError> {
        let method = match name {
            Some(name) => self
                .methods
                .iter()
                .find(|m| m.name() == name)
                .cloned()
                .ok_or_else(|| {
                    ExperimentError::Config(format!(
                        "method {name:?} not in config (available: {})",
                        self.methods
                            .iter()
                            .map(|m| m.name())
                            .collect::<Vec<_>>()
                            .join(", ")
                    ))
                })?,
            None => {
                if self.methods.len() == 1 {
                    self.methods[0].clone()
                } else {
                    return Err(ExperimentError::Config(format!(
                        "config lists {} methods; pass --method to pick one",
                        self.methods.len()
                    )));
                }
            }
        };
        Ok(ExperimentConfig {
            data: self.data.clone(),
            method,
            seed: self.seed,
            paper_stopping: false,
            cv_folds: self.cv_folds,
        })
    }

    /// One experiment per configured method, in config order.
    pub fn experiments(&self) -> Vec<ExperimentConfig> {
        self.methods
            .iter()
            .map(|method| ExperimentConfig {
                data: self.data.clone(),
                method: method.clone(),
                seed: self.seed,
                paper_stopping: false,
                cv_folds: self.cv_folds,
            })
            .collect()
    }
}

/// Shape of the split an experiment ran on; the observed item count is the
/// number the split reports for the movie-count question.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct DatasetSummary {
    pub n_train_users: usize,
    pub n_test_users: usize,
    pub n_items: usize,
    pub n_edges: usize,
    /// Cutoffs after resolving any count-based bounds.
    pub rating_cutoff_ts: i64,
    pub label_cutoff_ts: i64,
}

/// Result of one experiment, sufficient to reproduce it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub mse: f64,
    pub log_loss: f64,
    pub hyperparameters: serde_json::Value,
    pub n_test: usize,
    pub seed: u64,
    pub wall_clock_secs: f64,
    pub spec_version: String,
    pub paper_stopping: bool,
    pub test_label_reads_before_eval: u64,
    pub dataset: DatasetSummary,
}

fn tag(s: &str) -> u64 {
    // FNV-1a
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in s.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Evaluation pairs for the test users, reading the audited labels.
fn test_pairs(
    split: &LabeledSplit,
    predictor: &dyn GenderPredictor<f64>,
) -> Result<Vec<EvalPair<f64>>, ExperimentError> {
    let mut pairs = Vec::with_capacity(split.test_users.len());
    for user in &split.test_users {
        let prediction = predictor.predict(&split.train_graph, user)?;
        let actual = split.test_labels.get(user).ok_or_else(|| {
            ExperimentError::Training(format!("test user {user} has no held-out label"))
        })?;
        pairs.push(EvalPair::new(prediction, actual));
    }
    Ok(pairs)
}

/// Test log loss of a predictor, for the paper-stopping monitor. Reads test
/// labels; only reachable in paper-stopping mode.
fn test_monitor_loss(split: &LabeledSplit, predictor: &dyn GenderPredictor<f64>) -> f64 {
    match test_pairs(split, predictor) {
        Ok(pairs) => log_loss(&pairs).unwrap_or(f64::INFINITY),
        Err(_) => f64::INFINITY,
    }
}

/// Run one experiment end to end.
pub fn run_experiment(config: &ExperimentConfig) -> Result<EvalReport, ExperimentError> {
    let start = Instant::now();
    if config.cv_folds < 2 {
        return Err(ExperimentError::Config(format!(
            "cv_folds must be at least 2, got {}",
            config.cv_folds
        )));
    }
    let records = load_ratings(&config.data.ratings, config.data.format)?;
    let labels = load_user_labels(&config.data.labels, config.data.format)?;
    let mut sorted_timestamps: Vec<i64> = records.iter().map(|r| r.timestamp).collect();
    sorted_timestamps.sort_unstable();
    let rating_cutoff_ts = config.data.rating_cutoff.resolve(&sorted_timestamps);
    let label_cutoff_ts = config.data.label_cutoff.resolve(&sorted_timestamps);
    let split = temporal_split(&records, &labels, rating_cutoff_ts, label_cutoff_ts)?;
    if split.test_users.is_empty() {
        return Err(ExperimentError::Training(
            "split produced no test users".into(),
        ));
    }

    let (predictor, hyperparameters) = build_predictor(&split, config)?;

    let reads_before_eval = split.test_labels.reads();
    if !config.paper_stopping && reads_before_eval > 0 {
        return Err(ExperimentError::LabelLeak {
            reads: reads_before_eval,
        });
    }

    let pairs = test_pairs(&split, predictor.as_ref())?;
    let mse = mse(&pairs)?;
    let log_loss = log_loss(&pairs)?;

    Ok(EvalReport {
        method: config.method.name().to_owned(),
        mse,
        log_loss,
        hyperparameters,
        n_test: pairs.len(),
        seed: config.seed,
        wall_clock_secs: start.elapsed().as_secs_f64(),
        spec_version: env!("CARGO_PKG_VERSION").to_owned(),
        paper_stopping: config.paper_stopping,
        test_label_reads_before_eval: reads_before_eval,
        dataset: DatasetSummary {
            n_train_users: split.train_labels.len(),
            n_test_users: split.test_users.len(),
            n_items: split.train_graph.n_items(),
            n_edges: split.train_graph.n_edges(),
            rating_cutoff_ts,
            label_cutoff_ts,
        },
    })
}

fn sgd_json(sgd: &SgdSettings) -> serde_json::Value {
    serde_json::to_value(sgd).expect("sgd settings serialize")
}

fn build_predictor(
    split: &LabeledSplit,
    config: &ExperimentConfig,
) -> Result<(Predictor, serde_json::Value), ExperimentError> {
    let method_seed = derive_seed(config.seed, &[tag(config.method.name())]);
    let graph = &split.train_graph;
    let train_labels = &split.train_labels;

    match &config.method {
        MethodSpec::PredictHalf { p } => {
            let predictor = predict_constant::<f64>(*p)?;
            Ok((Box::new(predictor), json!({ "p": p })))
        }

        MethodSpec::TrainAverage {} => {
            let predictor = training_average::<f64>(train_labels)?;
            let p = predictor.probability();
            Ok((Box::new(predictor), json!({ "training_average": p })))
        }

        MethodSpec::CountSigmoid { sgd } => {
            let cfg = sgd.to_config(derive_seed(method_seed, &[tag("sgd")]));
            let model = if config.paper_stopping {
                let monitor = |m: &crate::count_models::CountSigmoidModel<f64>| {
                    test_monitor_loss(split, &CountSigmoidPredictor { model: *m })
                };
                train_count_sigmoid_monitored(graph, train_labels, &cfg, &monitor)?
            } else {
                train_count_sigmoid(graph, train_labels, &cfg)?
            };
            let hyper = json!({
                "sgd": sgd_json(sgd),
                "weights": { "w0": model.w0, "w1": model.w1, "w2": model.w2 },
            });
            Ok((Box::new(CountSigmoidPredictor { model }), hyper))
        }

        MethodSpec::NoisyOr { sgd } => {
            let cfg = sgd.to_config(derive_seed(method_seed, &[tag("sgd")]));
            let model = if config.paper_stopping {
                let monitor = |m: &crate::count_models::NoisyOrModel<f64>| {
                    test_monitor_loss(split, &NoisyOrPredictor { model: *m })
                };
                train_noisy_or_monitored(graph, train_labels, &cfg, &monitor)?
            } else {
                train_noisy_or(graph, train_labels, &cfg)?
            };
            let hyper = json!({
                "sgd": sgd_json(sgd),
                "weights": { "w0": model.w0, "w1": model.w1, "w2": model.w2 },
            });
            Ok((Box::new(NoisyOrPredictor { model }), hyper))
        }

        MethodSpec::P1 {
            pseudo_count,
            pseudo_count_grid,
            polarity_aware,
            leave_one_out,
        }
        | MethodSpec::P2 {
            pseudo_count,
            pseudo_count_grid,
            polarity_aware,
            leave_one_out,
        } => {
            let is_p1 = matches!(config.method, MethodSpec::P1 { .. });
            let opts = NeighborhoodOptions {
                leave_one_out: *leave_one_out,
                polarity_aware: *polarity_aware,
            };
            let stats = build_item_stats(graph, train_labels);
            let (chosen_c, cv_scores) = match pseudo_count {
                Some(c) => (*c, None),
                None => {
                    let plan = kfold_plan(
                        &train_labels.keys().cloned().collect(),
                        config.cv_folds,
                        derive_seed(method_seed, &[tag("cv")]),
                    )?;
                    let outcome = tune(
                        pseudo_count_grid,
                        &plan,
                        TuneMetric::LogLoss,
                        |&c: &f64, fold| {
                            let c = PseudoCount::new(c).map_err(|e| e.to_string())?;
                            let mut pairs = Vec::new();
                            for user in plan.val_users(fold) {
                                let prediction = if is_p1 {
                                    crate::neighborhood::predict_p1_with::<f64>(
                                        &stats, graph, &user, c, opts,
                                    )
                                } else {
                                    crate::neighborhood::predict_p2_with::<f64>(
                                        &stats, graph, &user, c, opts,
                                    )
                                };
                                pairs.push(EvalPair::new(prediction, train_labels[&user]));
                            }
                            Ok(pairs)
                        },
                    )?;
                    (outcome.best, Some(outcome.mean_scores))
                }
            };
            let c = PseudoCount::new(chosen_c)?;
            let hyper = json!({
                "pseudo_count": chosen_c,
                "grid": pseudo_count_grid,
                "cv_mean_log_loss": cv_scores,
                "leave_one_out": leave_one_out,
                "polarity_aware": polarity_aware,
            });
            let predictor: Predictor = if is_p1 {
                Box::new(P1Predictor::<f64>::new(stats, c, opts))
            } else {
                Box::new(P2Predictor::<f64>::new(stats, c, opts))
            };
            Ok((predictor, hyper))
        }

        MethodSpec::NbLimited {
            k,
            k_grid,
            smoothing,
            n_samples,
        } => {
            let smoothing = PseudoCount::new(*smoothing)?;
            let sample_seed = derive_seed(method_seed, &[tag("nb-sample")]);
            let (chosen_k, cv_scores) = match k {
                Some(k) => (*k, None),
                None => {
                    let plan = kfold_plan(
                        &train_labels.keys().cloned().collect(),
                        config.cv_folds,
                        derive_seed(method_seed, &[tag("cv")]),
                    )?;
                    let outcome = tune(k_grid, &plan, TuneMetric::LogLoss, |&k: &usize, fold| {
                        if k == 0 {
                            return Err("k must be at least 1".to_owned());
                        }
                        let fold_labels: BTreeMap<UserId, Gender> = plan
                            .train_users(fold)
                            .into_iter()
                            .map(|u| (u.clone(), train_labels[&u]))
                            .collect();
                        let model = train_naive_bayes::<f64>(graph, &fold_labels, smoothing)
                            .map_err(|e| e.to_string())?;
                        let mut pairs = Vec::new();
                        for user in plan.val_users(fold) {
                            let prediction = crate::neighborhood::predict_nb_limited(
                                &model,
                                graph,
                                &user,
                                k,
                                *n_samples,
                                sample_seed,
                            );
                            pairs.push(EvalPair::new(prediction, train_labels[&user]));
                        }
                        Ok(pairs)
                    })?;
                    (outcome.best, Some(outcome.mean_scores))
                }
            };
            let model = train_naive_bayes::<f64>(graph, train_labels, smoothing)?;
            let hyper = json!({
                "k": chosen_k,
                "grid": k_grid,
                "cv_mean_log_loss": cv_scores,
                "smoothing": smoothing.value(),
                "n_samples": n_samples,
            });
            Ok((
                Box::new(NbLimitedPredictor {
                    model,
                    k: chosen_k,
                    n_samples: *n_samples,
                    seed: sample_seed,
                }),
                hyper,
            ))
        }

        MethodSpec::Rlr { sgd } => {
            let cfg = sgd.to_config(derive_seed(method_seed, &[tag("sgd")]));
            let model = if config.paper_stopping {
                let monitor = |m: &crate::rlr::PerItemRlrModel<f64>| {
                    test_monitor_loss(split, &RlrPredictor { model: m.clone() })
                };
                train_rlr_monitored(graph, train_labels, &cfg, &monitor)?
            } else {
                train_rlr(graph, train_labels, &cfg)?
            };
            let hyper = json!({ "sgd": sgd_json(sgd) });
            Ok((Box::new(RlrPredictor { model }), hyper))
        }

        MethodSpec::RlrDropout {
            sgd,
            k_train,
            k_test,
            k_grid,
            n_samples,
        } => {
            let cfg = sgd.to_config(derive_seed(method_seed, &[tag("sgd")]));
            let dropout_seed = derive_seed(method_seed, &[tag("dropout")]);
            let dropout_of = |k_train: usize, k_test: usize| DropoutConfig {
                k_train,
                k_test,
                n_test_samples: *n_samples,
                seed: dropout_seed,
            };
            let (chosen_k_train, cv_scores) = match k_train {
                Some(k) => (*k, None),
                None => {
                    let plan = kfold_plan(
                        &train_labels.keys().cloned().collect(),
                        config.cv_folds,
                        derive_seed(method_seed, &[tag("cv")]),
                    )?;
                    let outcome = tune(k_grid, &plan, TuneMetric::LogLoss, |&k: &usize, fold| {
                        let fold_labels: BTreeMap<UserId, Gender> = plan
                            .train_users(fold)
                            .into_iter()
                            .map(|u| (u.clone(), train_labels[&u]))
                            .collect();
                        let fold_cfg = SgdConfig {
                            seed: derive_seed(cfg.seed, &[fold as u64]),
                            ..cfg
                        };
                        let dropout = dropout_of(k, k);
                        let model =
                            train_rlr_dropout::<f64>(graph, &fold_labels, &fold_cfg, &dropout)
                                .map_err(|e| e.to_string())?;
                        let mut pairs = Vec::new();
                        for user in plan.val_users(fold) {
                            let prediction =
                                crate::rlr::predict_rlr_dropout(&model, graph, &user, &dropout);
                            pairs.push(EvalPair::new(prediction, train_labels[&user]));
                        }
                        Ok(pairs)
                    })?;
                    (outcome.best, Some(outcome.mean_scores))
                }
            };
            let chosen_k_test = k_test.unwrap_or(chosen_k_train);
            let dropout = dropout_of(chosen_k_train, chosen_k_test);
            let model = if config.paper_stopping {
                let monitor = |m: &crate::rlr::PerItemRlrModel<f64>| {
                    test_monitor_loss(
                        split,
                        &RlrDropoutPredictor {
                            model: m.clone(),
                            dropout,
                        },
                    )
                };
                train_rlr_dropout_monitored(graph, train_labels, &cfg, &dropout, &monitor)?
            } else {
                train_rlr_dropout(graph, train_labels, &cfg, &dropout)?
            };
            let hyper = json!({
                "sgd": sgd_json(sgd),
                "k_train": chosen_k_train,
                "k_test": chosen_k_test,
                "k_grid": k_grid,
                "cv_mean_log_loss": cv_scores,
                "n_samples": n_samples,
            });
            Ok((Box::new(RlrDropoutPredictor { model, dropout }), hyper))
        }

        MethodSpec::MfStacked {
            latent_dim,
            init,
            mf_sgd,
            lr_sgd,
            mf_l2_grid,
            lr_l2_grid,
        } => {
            let mf_seed = derive_seed(method_seed, &[tag("mf")]);
            let lr_seed = derive_seed(method_seed, &[tag("stacked")]);
            fn make_init<'a>(mode: MfInitMode, labels: &'a BTreeMap<UserId, Gender>) -> MfInit<'a> {
                match mode {
                    MfInitMode::Random => MfInit::Random,
                    MfInitMode::GenderSeeded => MfInit::GenderSeeded(labels),
                }
            }

            // factorize, optionally selecting the edge-level l2 on an edge
            // holdout
            let mf_cfg = mf_sgd.to_config(mf_seed);
            let (mf, chosen_mf_l2, mf_l2_scores) = match mf_l2_grid {
                Some(grid) => {
                    let (model, chosen, scores) = train_logistic_mf_l2_grid::<f64>(
                        graph,
                        *latent_dim,
                        &mf_cfg,
                        make_init(*init, train_labels),
                        grid,
                    )?;
                    (model, chosen, Some(scores))
                }
                None => (
                    train_logistic_mf::<f64>(
                        graph,
                        *latent_dim,
                        &mf_cfg,
                        make_init(*init, train_labels),
                    )?,
                    mf_sgd.l2_penalty,
                    None,
                ),
            };

            // stacked-head l2 by user-level CV; with gender-seeded init the
            // factorization is retrained once per fold (the fold's held-out
            // labels must not leak through the seeding), then shared by
            // every grid point
            let (chosen_lr_l2, lr_cv_scores) = match lr_l2_grid {
                None => (lr_sgd.l2_penalty, None),
                Some(grid) => {
                    let plan = kfold_plan(
                        &train_labels.keys().cloned().collect(),
                        config.cv_folds,
                        derive_seed(method_seed, &[tag("cv")]),
                    )?;
                    let fold_label_sets: Vec<BTreeMap<UserId, Gender>> = (0..plan.k())
                        .map(|fold| {
                            plan.train_users(fold)
                                .into_iter()
                                .map(|u| (u.clone(), train_labels[&u]))
                                .collect()
                        })
                        .collect();
                    let fold_mfs: Vec<MfModel<f64>> = match init {
                        MfInitMode::Random => vec![mf.clone(); plan.k()],
                        MfInitMode::GenderSeeded => {
                            let mf_fold_cfg = SgdConfig {
                                l2_penalty: chosen_mf_l2,
                                ..mf_cfg
                            };
                            fold_label_sets
                                .par_iter()
                                .map(|fold_labels| {
                                    train_logistic_mf::<f64>(
                                        graph,
                                        *latent_dim,
                                        &mf_fold_cfg,
                                        MfInit::GenderSeeded(fold_labels),
                                    )
                                })
                                .collect::<Result<_, _>>()?
                        }
                    };
                    let outcome = tune(grid, &plan, TuneMetric::LogLoss, |&l2: &f64, fold| {
                        let fold_labels = &fold_label_sets[fold];
                        let fold_mf = &fold_mfs[fold];
                        let fold_lr_cfg = SgdConfig {
                            l2_penalty: l2,
                            ..lr_sgd.to_config(derive_seed(lr_seed, &[fold as u64]))
                        };
                        let stacked =
                            train_stacked_gender(fold_mf, graph, fold_labels, &fold_lr_cfg)
                                .map_err(|e| e.to_string())?;
                        let mut pairs = Vec::new();
                        for user in plan.val_users(fold) {
                            let idx = graph
                                .user_idx(&user)
                                .ok_or_else(|| format!("user {user} missing from graph"))?;
                            let prediction =
                                crate::factorization::predict_gender_mf(&stacked, fold_mf, idx);
                            pairs.push(EvalPair::new(prediction, train_labels[&user]));
                        }
                        Ok(pairs)
                    })?;
                    (outcome.best, Some(outcome.mean_scores))
                }
            };

            let lr_cfg = SgdConfig {
                l2_penalty: chosen_lr_l2,
                ..lr_sgd.to_config(lr_seed)
            };
            let stacked = if config.paper_stopping {
                let monitor = |m: &crate::factorization::StackedGenderModel<f64>| {
                    test_monitor_loss(
                        split,
                        &MfStackedPredictor {
                            mf: mf.clone(),
                            stacked: m.clone(),
                        },
                    )
                };
                train_stacked_gender_monitored(&mf, graph, train_labels, &lr_cfg, &monitor)?
            } else {
                train_stacked_gender(&mf, graph, train_labels, &lr_cfg)?
            };
            let hyper = json!({
                "latent_dim": latent_dim,
                "init": init,
                "mf_sgd": sgd_json(mf_sgd),
                "lr_sgd": sgd_json(lr_sgd),
                "mf_l2": chosen_mf_l2,
                "mf_l2_grid": mf_l2_grid,
                "mf_l2_holdout_log_loss": mf_l2_scores,
                "lr_l2": chosen_lr_l2,
                "lr_l2_grid": lr_l2_grid,
                "lr_l2_cv_log_loss": lr_cv_scores,
            });
            Ok((Box::new(MfStackedPredictor { mf, stacked }), hyper))
        }
    }
}

/// Result of one suite entry: the method name survives even when the
/// experiment failed.
#[derive(Debug)]
pub struct SuiteEntry {
    pub method: String,
    pub result: Result<EvalReport, ExperimentError>,
}

/// Run every config, isolating failures. Output order equals input order.
pub fn run_suite(configs: &[ExperimentConfig]) -> Vec<SuiteEntry> {
    configs
        .iter()
        .map(|config| SuiteEntry {
            method: config.method.name().to_owned(),
            result: run_experiment(config),
        })
        .collect()
}

/// Text table with one row per method, 3-decimal metrics.
pub fn render_table(entries: &[SuiteEntry]) -> String {
    let mut out = String::new();
    out.push_str(&format!("{:<24} {:>7} {:>7}\n", "Method", "MSE", "LL"));
    for entry in entries {
        match &entry.result {
            Ok(report) => out.push_str(&format!(
                "{:<24} {:>7.3} {:>7.3}\n",
                report.method, report.mse, report.log_loss
            )),
            Err(e) => out.push_str(&format!("{:<24} ERROR: {e}\n", entry.method)),
        }
    }
    out
}

/// Output encoding for reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReportFormat {
    Json,
    TextTable,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "table" | "text-table" => Ok(ReportFormat::TextTable),
            other => Err(format!("unknown format {other:?} (expected json or table)")),
        }
    }
}

/// Render a single report in the requested format.
pub fn format_report(report: &EvalReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => {
            let mut text = serde_json::to_string(report).expect("report serializes");
            text.push('\n');
            text
        }
        ReportFormat::TextTable => render_table(&[SuiteEntry {
            method: report.method.clone(),
            result: Ok(report.clone()),
        }]),
    }
}

/// Render a suite: newline-delimited JSON objects (error entries carry the
/// method and message) or the comparison table.
pub fn format_suite(entries: &[SuiteEntry], format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => {
            let mut out = String::new();
            for entry in entries {
                let line = match &entry.result {
                    Ok(report) => serde_json::to_string(report).expect("report serializes"),
                    Err(e) => serde_json::to_string(&json!({
                        "method": entry.method,
                        "error": e.to_string(),
                    }))
                    .expect("error entry serializes"),
                };
                out.push_str(&line);
                out.push('\n');
            }
            out
        }
        ReportFormat::TextTable => render_table(entries),
    }
}

/// Write a single report to disk.
pub fn emit_report(
    report: &EvalReport,
    path: &Path,
    format: ReportFormat,
) -> Result<(), ExperimentError> {
    fs::write(path, format_report(report, format)).map_err(|source| ExperimentError::Io {
        path: path.to_owned(),
        source,
    })
}

/// Write a suite to disk.
pub fn emit_suite(
    entries: &[SuiteEntry],
    path: &Path,
    format: ReportFormat,
) -> Result<(), ExperimentError> {
    fs::write(path, format_suite(entries, format)).map_err(|source| ExperimentError::Io {
        path: path.to_owned(),
        source,
    })
}
