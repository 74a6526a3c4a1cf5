//! Acceptance suite: one test per criterion, each printing a PASS / SKIP
//! line (failures panic with a FAIL line).
//!
//! Criteria 1-8 need the public ml-100k files and criterion 9 the ml-1m
//! files; place them under `data/` at the repo root (or point
//! `RELAGG_DATA_DIR` at a directory containing `ml-100k/` and `ml-1m/`).
//! When the files are absent those criteria print SKIP and succeed, so the
//! suite stays runnable anywhere. Criterion 10 runs everywhere with no
//! external data.
//!
//! Run with `cargo test --test acceptance -- --nocapture` (use
//! `--test-threads 1` for ordered output).

// tolerance checks are written as `!(delta <= tol)` on purpose: a NaN metric
// must fail the criterion, not pass it
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use relagg_core::count_models::{
    train_count_sigmoid, train_noisy_or, CountFeatures, CountSigmoidObjective, NoisyOrObjective,
};
use relagg_core::dataset::{
    load_ratings, load_user_labels, temporal_split, BinaryRating, DatasetFormat, Gender, ItemId,
    RatingGraph, UserId,
};
use relagg_core::factorization::{
    predict_edge, train_logistic_mf, MfInit, MfObjective, StackedObjective,
};
use relagg_core::harness::{run_experiment, BenchConfig, ExperimentConfig, MethodSpec};
use relagg_core::metrics::{log_loss, mse, EvalPair, Prediction};
use relagg_core::neighborhood::{
    predict_nb_limited, predict_p1, predict_p2, train_naive_bayes, PseudoCount,
};
use relagg_core::optim::{grad_check, Objective, SgdConfig, Stopping};
use relagg_core::rlr::{
    predict_rlr_dropout, train_rlr, train_rlr_dropout, DropoutConfig, RlrObjective, RlrPredictor,
};
use relagg_core::GenderPredictor;

// ---------------------------------------------------------------------------
// data discovery and shared plumbing
// ---------------------------------------------------------------------------

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn data_root() -> PathBuf {
    std::env::var_os("RELAGG_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| repo_root().join("data"))
}

fn ml100k_files() -> Option<(PathBuf, PathBuf)> {
    let ratings = data_root().join("ml-100k/u.data");
    let labels = data_root().join("ml-100k/u.user");
    (ratings.is_file() && labels.is_file()).then_some((ratings, labels))
}

fn ml1m_files() -> Option<(PathBuf, PathBuf)> {
    let ratings = data_root().join("ml-1m/ratings.dat");
    let labels = data_root().join("ml-1m/users.dat");
    (ratings.is_file() && labels.is_file()).then_some((ratings, labels))
}

fn skip(criterion: &str, reason: &str) {
    println!("ACCEPTANCE {criterion}: SKIP — {reason}");
}

fn pass(criterion: &str, detail: &str) {
    println!("ACCEPTANCE {criterion}: PASS — {detail}");
}

macro_rules! check {
    ($criterion:expr, $cond:expr, $($msg:tt)*) => {
        if !$cond {
            panic!("ACCEPTANCE {}: FAIL — {}", $criterion, format!($($msg)*));
        }
    };
}

/// The committed Table-2 replication config with its data paths pointed at
/// the discovered dataset location.
fn bench_config(name: &str, ratings: PathBuf, labels: PathBuf) -> BenchConfig {
    let mut config = BenchConfig::from_path(&repo_root().join("configs").join(name))
        .expect("committed config parses");
    config.data.ratings = ratings;
    config.data.labels = labels;
    config
}

fn ml60k_experiment(method: &str, seed: u64) -> Option<ExperimentConfig> {
    let (ratings, labels) = ml100k_files()?;
    let config = bench_config("table2_ml60k.json", ratings, labels);
    let mut experiment = config.experiment(Some(method)).expect("method in config");
    experiment.seed = seed;
    Some(experiment)
}

const ML100K_NOT_FOUND: &str =
    "ml-100k not found (expected data/ml-100k/u.data and u.user; see README)";
const ML1M_NOT_FOUND: &str =
    "ml-1m not found (expected data/ml-1m/ratings.dat and users.dat; see README)";

// ---------------------------------------------------------------------------
// criterion 1: split fidelity
// ---------------------------------------------------------------------------

#[test]
fn c1_split_fidelity() {
    const C: &str = "1 (split fidelity)";
    let Some((ratings_path, labels_path)) = ml100k_files() else {
        skip(C, ML100K_NOT_FOUND);
        return;
    };
    let records = load_ratings(&ratings_path, DatasetFormat::Ml100k).unwrap();
    let labels = load_user_labels(&labels_path, DatasetFormat::Ml100k).unwrap();
    let split = temporal_split(&records, &labels, 884_673_930, 880_845_177).unwrap();

    check!(
        C,
        split.train_labels.len() == 419,
        "expected 419 training users, observed {}",
        split.train_labels.len()
    );
    check!(
        C,
        split.test_users.len() == 171,
        "expected 171 test users, observed {}",
        split.test_users.len()
    );
    // The published text and table disagree on the movie count (1451 vs
    // 1511); the split reports what the data yields without forcing either.
    let observed_items = split.train_graph.n_items();

    // Counting over every user in the evidence window (all genders known in
    // this data), 297 movies should have no female raters.
    let window_labels: BTreeMap<UserId, Gender> = labels
        .iter()
        .filter(|(u, _)| split.train_graph.user_idx(u).is_some())
        .map(|(u, g)| (u.clone(), *g))
        .collect();
    let stats = relagg_core::neighborhood::build_item_stats(&split.train_graph, &window_labels);
    let no_female = stats.n_items_without_female_raters();
    check!(
        C,
        no_female == 297,
        "expected 297 movies without female raters, observed {no_female}"
    );
    pass(
        C,
        &format!(
            "419 train / 171 test users; 297 movies with no female raters; observed {} movies (published text says 1451, published table says 1511)",
            observed_items
        ),
    );
}

// ---------------------------------------------------------------------------
// criterion 2: deterministic baselines
// ---------------------------------------------------------------------------

#[test]
fn c2_deterministic_baselines() {
    const C: &str = "2 (deterministic baselines)";
    let Some(half) = ml60k_experiment("predict-half", 1) else {
        skip(C, ML100K_NOT_FOUND);
        return;
    };
    let report = run_experiment(&half).unwrap();
    check!(
        C,
        report.mse == 0.25,
        "predict-half MSE {} != 0.250 exactly",
        report.mse
    );
    check!(
        C,
        report.log_loss == 1.0,
        "predict-half LL {} != 1.000 exactly",
        report.log_loss
    );

    let avg = ml60k_experiment("train-average", 1).unwrap();
    let report = run_experiment(&avg).unwrap();
    check!(
        C,
        (report.mse - 0.216).abs() <= 0.002,
        "training-average MSE {} outside 0.216 ± 0.002",
        report.mse
    );
    check!(
        C,
        (report.log_loss - 0.900).abs() <= 0.005,
        "training-average LL {} outside 0.900 ± 0.005",
        report.log_loss
    );
    pass(
        C,
        &format!(
            "predict-half exact; training-average mse={:.4} ll={:.4}",
            report.mse, report.log_loss
        ),
    );
}

// ---------------------------------------------------------------------------
// criteria 3 and 4: the count models
// ---------------------------------------------------------------------------

#[test]
fn c3_count_sigmoid() {
    const C: &str = "3 (count-sigmoid)";
    let Some(experiment) = ml60k_experiment("count-sigmoid", 1) else {
        skip(C, ML100K_NOT_FOUND);
        return;
    };
    let report = run_experiment(&experiment).unwrap();
    let w1 = report.hyperparameters["weights"]["w1"].as_f64().unwrap();
    let w2 = report.hyperparameters["weights"]["w2"].as_f64().unwrap();
    check!(
        C,
        (report.mse - 0.211).abs() <= 0.005,
        "MSE {} outside 0.211 ± 0.005",
        report.mse
    );
    check!(
        C,
        (report.log_loss - 0.881).abs() <= 0.010,
        "LL {} outside 0.881 ± 0.010",
        report.log_loss
    );
    check!(C, w1 > 0.0, "learned w1 = {w1}, expected > 0");
    check!(C, w2 < 0.0, "learned w2 = {w2}, expected < 0");
    check!(
        C,
        w1.abs() < 0.05 && w2.abs() < 0.05,
        "count weights unexpectedly large: w1={w1}, w2={w2}"
    );
    pass(
        C,
        &format!(
            "mse={:.4} ll={:.4} w1={w1:.5} w2={w2:.5}",
            report.mse, report.log_loss
        ),
    );
}

#[test]
fn c4_noisy_or() {
    const C: &str = "4 (noisy-or)";
    let Some(experiment) = ml60k_experiment("noisy-or", 1) else {
        skip(C, ML100K_NOT_FOUND);
        return;
    };
    let report = run_experiment(&experiment).unwrap();
    let w2 = report.hyperparameters["weights"]["w2"].as_f64().unwrap();
    check!(
        C,
        (report.mse - 0.211).abs() <= 0.005,
        "MSE {} outside 0.211 ± 0.005",
        report.mse
    );
    check!(
        C,
        (report.log_loss - 0.882).abs() <= 0.010,
        "LL {} outside 0.882 ± 0.010",
        report.log_loss
    );
    check!(C, w2 < 0.0, "learned w2 = {w2}, expected < 0");
    pass(
        C,
        &format!("mse={:.4} ll={:.4} w2={w2:.5}", report.mse, report.log_loss),
    );
}

// ---------------------------------------------------------------------------
// criteria 5 and 6: movies-as-dataset estimators
// ---------------------------------------------------------------------------

#[test]
fn c5_p1() {
    const C: &str = "5 (p1)";
    let Some(experiment) = ml60k_experiment("p1", 1) else {
        skip(C, ML100K_NOT_FOUND);
        return;
    };
    let report = run_experiment(&experiment).unwrap();
    let c = report.hyperparameters["pseudo_count"].as_f64().unwrap();
    check!(
        C,
        (report.mse - 0.207).abs() <= 0.005,
        "MSE {} outside 0.207 ± 0.005",
        report.mse
    );
    check!(
        C,
        (report.log_loss - 0.868).abs() <= 0.010,
        "LL {} outside 0.868 ± 0.010",
        report.log_loss
    );
    check!(
        C,
        c >= 50.0,
        "CV-selected pseudo-count {c} not in the upper half of the grid (>= 50)"
    );
    pass(
        C,
        &format!("mse={:.4} ll={:.4} c={c}", report.mse, report.log_loss),
    );
}

#[test]
fn c6_p2() {
    const C: &str = "6 (p2)";
    let Some(experiment) = ml60k_experiment("p2", 1) else {
        skip(C, ML100K_NOT_FOUND);
        return;
    };
    let report = run_experiment(&experiment).unwrap();
    let c = report.hyperparameters["pseudo_count"].as_f64().unwrap();
    check!(
        C,
        (report.mse - 0.209).abs() <= 0.005,
        "MSE {} outside 0.209 ± 0.005",
        report.mse
    );
    check!(
        C,
        (report.log_loss - 0.875).abs() <= 0.010,
        "LL {} outside 0.875 ± 0.010",
        report.log_loss
    );
    check!(C, c <= 5.0, "CV-selected pseudo-count {c} expected <= 5");
    pass(
        C,
        &format!("mse={:.4} ll={:.4} c={c}", report.mse, report.log_loss),
    );
}

// ---------------------------------------------------------------------------
// criterion 7: relational dropout vs plain RLR
// ---------------------------------------------------------------------------

#[test]
fn c7_rlr_dropout_vs_plain() {
    const C: &str = "7 (rlr-dropout)";
    if ml100k_files().is_none() {
        skip(C, ML100K_NOT_FOUND);
        return;
    }
    let seeds = [1u64, 2, 3, 4, 5];
    let mut mses = Vec::new();
    let mut lls = Vec::new();
    for &seed in &seeds {
        let experiment = ml60k_experiment("rlr-dropout", seed).unwrap();
        let report = run_experiment(&experiment).unwrap();
        mses.push(report.mse);
        lls.push(report.log_loss);
    }
    let mean_mse = mses.iter().sum::<f64>() / seeds.len() as f64;
    let mean_ll = lls.iter().sum::<f64>() / seeds.len() as f64;
    check!(
        C,
        (mean_mse - 0.199).abs() <= 0.010,
        "mean MSE over 5 seeds {mean_mse} outside 0.199 ± 0.010 (per-seed {mses:?})"
    );
    check!(
        C,
        (mean_ll - 0.849).abs() <= 0.020,
        "mean LL over 5 seeds {mean_ll} outside 0.849 ± 0.020 (per-seed {lls:?})"
    );

    let plain = run_experiment(&ml60k_experiment("rlr", 1).unwrap()).unwrap();
    check!(
        C,
        plain.log_loss >= 1.0,
        "plain RLR LL {} expected >= 1.0 (overconfidence direction)",
        plain.log_loss
    );
    check!(
        C,
        plain.log_loss - mean_ll >= 0.15,
        "LL(plain) - LL(dropout) = {} expected >= 0.15",
        plain.log_loss - mean_ll
    );
    pass(
        C,
        &format!(
            "dropout mean mse={mean_mse:.4} ll={mean_ll:.4}; plain ll={:.4}",
            plain.log_loss
        ),
    );
}

// ---------------------------------------------------------------------------
// criterion 8: matrix factorization + stacked head
// ---------------------------------------------------------------------------

#[test]
fn c8_mf_stacked() {
    const C: &str = "8 (mf-stacked)";
    if ml100k_files().is_none() {
        skip(C, ML100K_NOT_FOUND);
        return;
    }
    let seeds = [1u64, 2, 3, 4, 5];
    let mut outcome = None;
    let mut tried = Vec::new();
    for mode in ["gender-seeded", "random"] {
        let mut mses = Vec::new();
        let mut lls = Vec::new();
        for &seed in &seeds {
            let mut experiment = ml60k_experiment("mf-stacked", seed).unwrap();
            if let MethodSpec::MfStacked { init, .. } = &mut experiment.method {
                *init = match mode {
                    "gender-seeded" => relagg_core::harness::MfInitMode::GenderSeeded,
                    _ => relagg_core::harness::MfInitMode::Random,
                };
            }
            let report = run_experiment(&experiment).unwrap();
            mses.push(report.mse);
            lls.push(report.log_loss);
        }
        let mean_mse = mses.iter().sum::<f64>() / seeds.len() as f64;
        let mean_ll = lls.iter().sum::<f64>() / seeds.len() as f64;
        tried.push(format!("{mode}: mse={mean_mse:.4} ll={mean_ll:.4}"));
        if (mean_mse - 0.200).abs() <= 0.015 && (mean_ll - 0.844).abs() <= 0.030 {
            outcome = Some((mode, mean_mse, mean_ll));
            break;
        }
    }
    match outcome {
        Some((mode, mean_mse, mean_ll)) => pass(
            C,
            &format!(
                "init mode {mode} meets tolerance: mean mse={mean_mse:.4} ll={mean_ll:.4} over 5 seeds"
            ),
        ),
        None => panic!(
            "ACCEPTANCE {C}: FAIL — neither init mode met MSE 0.200 ± 0.015 and LL 0.844 ± 0.030 ({})",
            tried.join("; ")
        ),
    }
}

// ---------------------------------------------------------------------------
// criterion 9: MovieLens-600K ordering check
// ---------------------------------------------------------------------------

#[test]
fn c9_ml600k_ordering() {
    const C: &str = "9 (ml-600k ordering)";
    let Some((ratings, labels)) = ml1m_files() else {
        skip(C, ML1M_NOT_FOUND);
        return;
    };
    let config = bench_config("table2_ml600k.json", ratings, labels);
    let mut results: Vec<(String, f64)> = Vec::new();
    for experiment in config.experiments() {
        let name = experiment.method.name().to_owned();
        let report = run_experiment(&experiment)
            .unwrap_or_else(|e| panic!("ACCEPTANCE {C}: FAIL — {name} errored: {e}"));
        println!(
            "  ml-600k {name}: mse={:.4} ll={:.4}",
            report.mse, report.log_loss
        );
        results.push((name, report.log_loss));
    }
    let dropout_ll = results
        .iter()
        .find(|(name, _)| name == "rlr-dropout")
        .map(|(_, ll)| *ll)
        .expect("rlr-dropout in suite");
    check!(
        C,
        dropout_ll <= 0.75,
        "rlr-dropout LL {dropout_ll} expected <= 0.75"
    );
    for (name, ll) in &results {
        check!(
            C,
            dropout_ll <= *ll,
            "rlr-dropout LL {dropout_ll} not best: {name} has {ll}"
        );
    }
    pass(C, &format!("rlr-dropout best with LL {dropout_ll:.4}"));
}

// ---------------------------------------------------------------------------
// criterion 10: property suite (no external data)
// ---------------------------------------------------------------------------

fn labels_of(entries: &[(&str, Gender)]) -> BTreeMap<UserId, Gender> {
    entries.iter().map(|(u, g)| ((*u).into(), *g)).collect()
}

fn graph_of(edges: &[(&str, &str, BinaryRating)]) -> RatingGraph {
    RatingGraph::from_edges(
        edges
            .iter()
            .map(|&(u, i, p)| (UserId::from(u), ItemId::from(i), p)),
    )
    .unwrap()
}

/// Small fixture with exactly two count patterns, each carrying both
/// labels: (3,0) is female 2 times out of 3, (0,2) is female 1 time out
/// of 3. Both count models can realize the per-pattern Bayes rates
/// exactly, so their global optimum is the entropy floor — finite,
/// interior, and reachable by gradient descent from the natural init.
fn oracle_fixture() -> (RatingGraph, BTreeMap<UserId, Gender>) {
    use BinaryRating::{Negative, Positive};
    let mut edges = Vec::new();
    for user in ["f1", "f2", "m1"] {
        for item in ["a", "b", "c"] {
            edges.push((user, item, Positive));
        }
    }
    for user in ["f3", "m2", "m3"] {
        for item in ["d", "e"] {
            edges.push((user, item, Negative));
        }
    }
    let graph = graph_of(&edges);
    let labels = labels_of(&[
        ("f1", Gender::Female),
        ("f2", Gender::Female),
        ("f3", Gender::Female),
        ("m1", Gender::Male),
        ("m2", Gender::Male),
        ("m3", Gender::Male),
    ]);
    (graph, labels)
}

fn fixture_counts(graph: &RatingGraph, labels: &BTreeMap<UserId, Gender>) -> Vec<(f64, f64, f64)> {
    labels
        .iter()
        .map(|(user, gender)| {
            let idx = graph.user_idx(user).unwrap();
            let mut npr = 0.0;
            let mut nnr = 0.0;
            for &(_, p) in graph.user_edges(idx) {
                if p.is_positive() {
                    npr += 1.0;
                } else {
                    nnr += 1.0;
                }
            }
            (npr, nnr, if gender.is_female() { 1.0 } else { 0.0 })
        })
        .collect()
}

/// Exhaustive grid over (w0, w1, w2) in [-2, 2]^3 with step 0.01.
fn grid_search(loss: impl Fn(f64, f64, f64) -> f64 + Sync) -> (f64, (f64, f64, f64)) {
    (-200..=200i32)
        .into_par_iter()
        .map(|i0| {
            let w0 = i0 as f64 * 0.01;
            let mut best = (f64::INFINITY, (0.0, 0.0, 0.0));
            for i1 in -200..=200i32 {
                let w1 = i1 as f64 * 0.01;
                for i2 in -200..=200i32 {
                    let w2 = i2 as f64 * 0.01;
                    let value = loss(w0, w1, w2);
                    if value < best.0 {
                        best = (value, (w0, w1, w2));
                    }
                }
            }
            best
        })
        .reduce(
            || (f64::INFINITY, (0.0, 0.0, 0.0)),
            |a, b| if a.0 <= b.0 { a } else { b },
        )
}

fn converged_count_cfg(lr: f64) -> SgdConfig {
    SgdConfig {
        learning_rate: lr,
        epochs: 20_000,
        batch_size: usize::MAX,
        l2_penalty: 0.0,
        seed: 5,
        stopping: Stopping::FixedEpochs,
    }
}

#[test]
fn c10_brute_force_count_sigmoid_optimum() {
    const C: &str = "10 (count-sigmoid grid oracle)";
    let (graph, labels) = oracle_fixture();
    let terms = fixture_counts(&graph, &labels);
    // hand-written base-2 logistic loss, independent of the implementation
    let oracle_loss = |w0: f64, w1: f64, w2: f64| -> f64 {
        let mut total = 0.0;
        for &(a, b, y) in &terms {
            let z = w0 + w1 * a + w2 * b;
            let softplus = if -z > 0.0 {
                -z + (z).exp().ln_1p()
            } else {
                (-z).exp().ln_1p()
            };
            // softplus(-z) = -ln sigmoid(z); loss picks the right branch
            total += if y > 0.5 { softplus } else { softplus + z };
        }
        total / (terms.len() as f64 * std::f64::consts::LN_2)
    };
    let (grid_best, grid_point) = grid_search(oracle_loss);
    let model = train_count_sigmoid::<f64>(&graph, &labels, &converged_count_cfg(0.3)).unwrap();
    let trained = oracle_loss(model.w0, model.w1, model.w2);
    check!(
        C,
        (trained - grid_best).abs() < 1e-2,
        "trained loss {trained} vs grid optimum {grid_best} at {grid_point:?}"
    );
    pass(
        C,
        &format!("trained {trained:.5} vs grid {grid_best:.5} at {grid_point:?}"),
    );
}

#[test]
fn c10_brute_force_noisy_or_optimum() {
    const C: &str = "10 (noisy-or grid oracle)";
    let (graph, labels) = oracle_fixture();
    let terms = fixture_counts(&graph, &labels);
    let oracle_loss = |w0: f64, w1: f64, w2: f64| -> f64 {
        let mut total = 0.0;
        for &(a, b, y) in &terms {
            let q = (1.0 - w0) * (1.0 - w1).powi(a as i32) * (1.0 - w2).powi(b as i32);
            let p = (1.0 - q).clamp(1e-6, 1.0 - 1e-6);
            total += if y > 0.5 {
                -p.log2()
            } else {
                -(1.0 - p).log2()
            };
        }
        total / terms.len() as f64
    };
    let (grid_best, grid_point) = grid_search(oracle_loss);
    let model = train_noisy_or::<f64>(&graph, &labels, &converged_count_cfg(0.1)).unwrap();
    let trained = oracle_loss(model.w0, model.w1, model.w2);
    check!(
        C,
        (trained - grid_best).abs() < 1e-2,
        "trained loss {trained} vs grid optimum {grid_best} at {grid_point:?}"
    );
    pass(
        C,
        &format!("trained {trained:.5} vs grid {grid_best:.5} at {grid_point:?}"),
    );
}

#[test]
fn c10_grad_checks_below_tolerance() {
    const C: &str = "10 (grad checks)";
    let (graph, labels) = oracle_fixture();
    let mut worst: f64 = 0.0;

    // deterministic pseudo-random points
    let point = |dim: usize, salt: usize| -> Vec<f64> {
        (0..dim)
            .map(|i| (((i * 2654435761 + salt * 40503 + 12345) % 1000) as f64 / 1000.0 - 0.5) * 0.8)
            .collect()
    };

    let sigmoid_obj = CountSigmoidObjective::new(&graph, &labels, 0.01);
    for salt in 0..10 {
        let err = grad_check(&sigmoid_obj, &point(3, salt), 1e-5f64).unwrap();
        worst = worst.max(err);
        check!(
            C,
            err < 1e-4,
            "count-sigmoid grad check {err} at salt {salt}"
        );
    }

    let noisy_obj = NoisyOrObjective::new(&graph, &labels, 0.0);
    for salt in 0..10 {
        // keep the probe inside the box where the loss is smooth
        let mut p = point(3, salt);
        p[0] = 0.2 + p[0].abs() * 0.5;
        p[1] *= 0.4;
        p[2] *= 0.4;
        let err = grad_check(&noisy_obj, &p, 1e-6f64).unwrap();
        worst = worst.max(err);
        check!(C, err < 1e-4, "noisy-or grad check {err} at salt {salt}");
    }

    let rlr_obj = RlrObjective::new(&graph, &labels, 0.01, None, 0);
    let rlr_dim = Objective::<f64>::dimension(&rlr_obj);
    for salt in 0..10 {
        let err = grad_check(&rlr_obj, &point(rlr_dim, salt), 1e-5f64).unwrap();
        worst = worst.max(err);
        check!(C, err < 1e-4, "rlr grad check {err} at salt {salt}");
    }

    let mf_obj = MfObjective::new(&graph, 2, 0.01);
    let mf_dim = Objective::<f64>::dimension(&mf_obj);
    for salt in 0..10 {
        let err = grad_check(&mf_obj, &point(mf_dim, salt), 1e-5f64).unwrap();
        worst = worst.max(err);
        check!(C, err < 1e-4, "mf grad check {err} at salt {salt}");
    }

    let mf = train_logistic_mf::<f64>(
        &graph,
        2,
        &SgdConfig {
            learning_rate: 0.2,
            epochs: 60,
            batch_size: 4,
            l2_penalty: 0.01,
            seed: 2,
            stopping: Stopping::FixedEpochs,
        },
        MfInit::Random,
    )
    .unwrap();
    let stacked_obj = StackedObjective::new(&mf, &graph, &labels, 0.01).unwrap();
    for salt in 0..10 {
        let err = grad_check(&stacked_obj, &point(4, salt), 1e-5f64).unwrap();
        worst = worst.max(err);
        check!(C, err < 1e-4, "stacked grad check {err} at salt {salt}");
    }

    pass(
        C,
        &format!("all gradients verified; worst relative error {worst:.2e}"),
    );
}

#[test]
fn c10_dropout_with_full_k_is_plain_rlr_bit_for_bit() {
    const C: &str = "10 (dropout full-k ≡ plain rlr)";
    let (graph, labels) = oracle_fixture();
    let cfg = SgdConfig {
        learning_rate: 0.3,
        epochs: 250,
        batch_size: 2,
        l2_penalty: 0.001,
        seed: 9,
        stopping: Stopping::FixedEpochs,
    };
    let dropout = DropoutConfig {
        k_train: 1000,
        k_test: 1000,
        n_test_samples: 7,
        seed: 31,
    };
    let plain = train_rlr::<f64>(&graph, &labels, &cfg).unwrap();
    let dropped = train_rlr_dropout::<f64>(&graph, &labels, &cfg, &dropout).unwrap();
    check!(C, plain == dropped, "trained parameters differ");
    for user in ["f1", "f3", "m1", "m2", "ghost"] {
        let a = RlrPredictor {
            model: plain.clone(),
        }
        .predict(&graph, &user.into())
        .unwrap()
        .value();
        let b = predict_rlr_dropout(&dropped, &graph, &user.into(), &dropout).value();
        check!(
            C,
            a.to_bits() == b.to_bits(),
            "prediction differs for {user}: {a} vs {b}"
        );
    }
    pass(C, "training and prediction identical to the last bit");
}

#[test]
fn c10_nb_limited_with_full_k_is_exact_naive_bayes() {
    const C: &str = "10 (nb-limited full-k ≡ naive bayes)";
    let (graph, labels) = oracle_fixture();
    let model = train_naive_bayes::<f64>(&graph, &labels, PseudoCount::new(1.0).unwrap()).unwrap();
    for user in ["f1", "f3", "m1", "m2"] {
        let idx = graph.user_idx(&user.into()).unwrap();
        let full = model.posterior(graph.user_edges(idx)).value();
        for n_samples in [1, 5] {
            let limited =
                predict_nb_limited(&model, &graph, &user.into(), 1000, n_samples, 77).value();
            check!(
                C,
                full.to_bits() == limited.to_bits(),
                "posterior differs for {user}: {full} vs {limited}"
            );
        }
    }
    pass(C, "limited predictor with k >= degree is bit-identical");
}

#[test]
fn c10_p1_p2_zero_degree_fallback() {
    const C: &str = "10 (p1/p2 empty-user fallback)";
    let (graph, labels) = oracle_fixture();
    let stats = relagg_core::neighborhood::build_item_stats(&graph, &labels);
    for c in [0.5, 1.0, 100.0] {
        let c = PseudoCount::new(c).unwrap();
        let p1 = predict_p1::<f64>(&stats, &graph, &"ghost".into(), c).value();
        let p2 = predict_p2::<f64>(&stats, &graph, &"ghost".into(), c).value();
        check!(C, p1 == 0.5, "p1 zero-degree fallback {p1} != 0.5");
        check!(C, p2 == 0.5, "p2 zero-degree fallback {p2} != 0.5");
    }
    pass(C, "zero-degree users get exactly 0.5");
}

#[test]
fn c10_metric_identities() {
    const C: &str = "10 (metric identities)";
    let pairs: Vec<EvalPair<f64>> = [
        Gender::Female,
        Gender::Male,
        Gender::Female,
        Gender::Male,
        Gender::Male,
    ]
    .iter()
    .map(|&g| EvalPair::new(Prediction::new(0.5).unwrap(), g))
    .collect();
    check!(C, mse(&pairs).unwrap() == 0.25, "MSE(0.5) != 0.25 exactly");
    check!(
        C,
        log_loss(&pairs).unwrap() == 1.0,
        "LL(0.5) != 1.0 exactly"
    );
    pass(C, "MSE(0.5) = 0.25 and LL(0.5) = 1.0 exactly");
}

#[test]
fn c10_mf_feature_sign_symmetry() {
    const C: &str = "10 (mf sign symmetry)";
    let (graph, _) = oracle_fixture();
    let cfg = SgdConfig {
        learning_rate: 0.2,
        epochs: 150,
        batch_size: 4,
        l2_penalty: 0.01,
        seed: 12,
        stopping: Stopping::FixedEpochs,
    };
    let model = train_logistic_mf::<f64>(&graph, 3, &cfg, MfInit::Random).unwrap();
    for flip in 0..3 {
        let mut negated = model.clone();
        for u in 0..graph.n_users() {
            negated.p[u * 3 + flip] = -negated.p[u * 3 + flip];
        }
        for i in 0..graph.n_items() {
            negated.q[i * 3 + flip] = -negated.q[i * 3 + flip];
        }
        for u in graph.users() {
            for i in graph.items() {
                let a = predict_edge(&model, u, i);
                let b = predict_edge(&negated, u, i);
                check!(
                    C,
                    (a - b).abs() < 1e-12,
                    "edge probability changed after negating feature {flip}"
                );
            }
        }
    }
    pass(
        C,
        "negating any latent feature in P and Q leaves every edge probability unchanged",
    );
}

/// Every method runs on the synthetic fixture in default mode without
/// touching a single test label before evaluation.
#[test]
fn c10_test_label_access_audit_for_every_method() {
    const C: &str = "10 (test-label access audit)";
    let config = BenchConfig::from_path(&repo_root().join("configs/smoke_synthetic.json"))
        .expect("smoke config parses");
    let mut experiments = config.experiments();
    assert_eq!(experiments.len(), 10, "smoke config lists every method");
    for experiment in &mut experiments {
        // paths in the committed config are repo-root relative
        experiment.data.ratings = repo_root().join(&experiment.data.ratings);
        experiment.data.labels = repo_root().join(&experiment.data.labels);
        let report = run_experiment(experiment).unwrap_or_else(|e| {
            panic!(
                "ACCEPTANCE {C}: FAIL — {} errored: {e}",
                experiment.method.name()
            )
        });
        check!(
            C,
            report.test_label_reads_before_eval == 0,
            "{} read {} test labels before evaluation",
            report.method,
            report.test_label_reads_before_eval
        );
    }
    pass(
        C,
        "all 10 methods ran with zero test-label reads before evaluation",
    );
}

#[test]
fn c10_count_features_and_prediction_consistency() {
    const C: &str = "10 (count feature consistency)";
    let (graph, labels) = oracle_fixture();
    // trained predictions depend on the edge multiset only through counts
    let model = train_count_sigmoid::<f64>(&graph, &labels, &converged_count_cfg(0.3)).unwrap();
    let idx = graph.user_idx(&"f1".into()).unwrap();
    let mut npr = 0;
    let mut nnr = 0;
    for &(_, p) in graph.user_edges(idx) {
        if p.is_positive() {
            npr += 1;
        } else {
            nnr += 1;
        }
    }
    let direct =
        relagg_core::count_models::predict_count_sigmoid(&model, CountFeatures { npr, nnr });
    let via_graph = relagg_core::count_models::CountSigmoidPredictor { model }
        .predict(&graph, &"f1".into())
        .unwrap();
    check!(
        C,
        direct.value() == via_graph.value(),
        "count path disagrees with graph path"
    );
    pass(C, "graph-backed and feature-backed predictions agree");
}
