//! `relagg` — run one aggregation method or the whole comparison suite on a
//! temporally split rating dataset and report MSE / base-2 log loss.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use relagg_core::harness::{
    emit_report, emit_suite, format_report, format_suite, run_experiment, run_suite, BenchConfig,
    ExperimentError, MethodSpec, MfInitMode, ReportFormat,
};

#[derive(Parser)]
#[command(
    name = "relagg",
    about = "Benchmark aggregation methods for predicting user gender from movie ratings",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single method from a config file.
    Run {
        /// JSON config with the dataset and method list.
        #[arg(long)]
        config: PathBuf,
        /// Method name to pick from the config (needed when it lists several).
        #[arg(long)]
        method: Option<String>,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Write the report here instead of only printing it.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Output format: json or table.
        #[arg(long, default_value = "table")]
        format: String,
        /// Replication mode: stop training on test loss (leaks test labels;
        /// flagged in the report).
        #[arg(long)]
        paper_stopping: bool,
        /// Pseudo-count for p1/p2 (skips its CV grid).
        #[arg(long)]
        pseudo_count: Option<f64>,
        /// Neighbors kept per sample for nb-limited (skips its CV grid).
        #[arg(long)]
        k: Option<usize>,
        /// Prediction samples for nb-limited / rlr-dropout.
        #[arg(long)]
        n_samples: Option<usize>,
        /// Training subset size for rlr-dropout (skips its CV grid).
        #[arg(long)]
        k_train: Option<usize>,
        /// Prediction subset size for rlr-dropout.
        #[arg(long)]
        k_test: Option<usize>,
        /// L2 penalty for rlr / rlr-dropout.
        #[arg(long)]
        l2: Option<f64>,
        /// Latent dimension for mf-stacked.
        #[arg(long)]
        latent_dim: Option<usize>,
        /// Factorization init for mf-stacked: random or gender-seeded.
        #[arg(long)]
        init: Option<String>,
        /// Factorization L2 for mf-stacked (skips its holdout grid).
        #[arg(long)]
        mf_l2: Option<f64>,
        /// Stacked-head L2 for mf-stacked (skips its CV grid).
        #[arg(long)]
        lr_l2: Option<f64>,
    },
    /// Run every method in a config file and render the comparison table.
    Suite {
        #[arg(long)]
        config: PathBuf,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Write the suite output here as well.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Output format for --out: json or table.
        #[arg(long, default_value = "json")]
        format: String,
        /// Replication mode: stop training on test loss.
        #[arg(long)]
        paper_stopping: bool,
    },
}

struct Overrides {
    pseudo_count: Option<f64>,
    k: Option<usize>,
    n_samples: Option<usize>,
    k_train: Option<usize>,
    k_test: Option<usize>,
    l2: Option<f64>,
    latent_dim: Option<usize>,
    init: Option<String>,
    mf_l2: Option<f64>,
    lr_l2: Option<f64>,
}

fn reject(flag: &str, method: &str) -> ExperimentError {
    ExperimentError::Config(format!("--{flag} does not apply to method {method:?}"))
}

fn apply_overrides(method: &mut MethodSpec, ov: &Overrides) -> Result<(), ExperimentError> {
    let name = method.name();
    if let Some(c) = ov.pseudo_count {
        match method {
            MethodSpec::P1 { pseudo_count, .. } | MethodSpec::P2 { pseudo_count, .. } => {
                *pseudo_count = Some(c)
            }
            _ => return Err(reject("pseudo-count", name)),
        }
    }
    if let Some(v) = ov.k {
        match method {
            MethodSpec::NbLimited { k, .. } => *k = Some(v),
            _ => return Err(reject("k", name)),
        }
    }
    if let Some(v) = ov.n_samples {
        match method {
            MethodSpec::NbLimited { n_samples, .. } | MethodSpec::RlrDropout { n_samples, .. } => {
                *n_samples = v
            }
            _ => return Err(reject("n-samples", name)),
        }
    }
    if let Some(v) = ov.k_train {
        match method {
            MethodSpec::RlrDropout { k_train, .. } => *k_train = Some(v),
            _ => return Err(reject("k-train", name)),
        }
    }
    if let Some(v) = ov.k_test {
        match method {
            MethodSpec::RlrDropout { k_test, .. } => *k_test = Some(v),
            _ => return Err(reject("k-test", name)),
        }
    }
    if let Some(v) = ov.l2 {
        match method {
            MethodSpec::Rlr { sgd } | MethodSpec::RlrDropout { sgd, .. } => sgd.l2_penalty = v,
            _ => return Err(reject("l2", name)),
        }
    }
    if let Some(v) = ov.latent_dim {
        match method {
            MethodSpec::MfStacked { latent_dim, .. } => *latent_dim = v,
            _ => return Err(reject("latent-dim", name)),
        }
    }
    if let Some(mode) = &ov.init {
        match method {
            MethodSpec::MfStacked { init, .. } => {
                *init = match mode.as_str() {
                    "random" => MfInitMode::Random,
                    "gender-seeded" => MfInitMode::GenderSeeded,
                    other => {
                        return Err(ExperimentError::Config(format!(
                            "--init must be random or gender-seeded, got {other:?}"
                        )))
                    }
                }
            }
            _ => return Err(reject("init", name)),
        }
    }
    if let Some(v) = ov.mf_l2 {
        match method {
            MethodSpec::MfStacked {
                mf_sgd, mf_l2_grid, ..
            } => {
                mf_sgd.l2_penalty = v;
                *mf_l2_grid = None;
            }
            _ => return Err(reject("mf-l2", name)),
        }
    }
    if let Some(v) = ov.lr_l2 {
        match method {
            MethodSpec::MfStacked {
                lr_sgd, lr_l2_grid, ..
            } => {
                lr_sgd.l2_penalty = v;
                *lr_l2_grid = None;
            }
            _ => return Err(reject("lr-l2", name)),
        }
    }
    Ok(())
}

fn parse_format(s: &str) -> Result<ReportFormat, ExperimentError> {
    s.parse::<ReportFormat>().map_err(ExperimentError::Config)
}

fn real_main(cli: Cli) -> Result<(), ExperimentError> {
    match cli.command {
        Command::Run {
            config,
            method,
            seed,
            out,
            format,
            paper_stopping,
            pseudo_count,
            k,
            n_samples,
            k_train,
            k_test,
            l2,
            latent_dim,
            init,
            mf_l2,
            lr_l2,
        } => {
            let format = parse_format(&format)?;
            let bench = BenchConfig::from_path(&config)?;
            let mut experiment = bench.experiment(method.as_deref())?;
            if let Some(seed) = seed {
                experiment.seed = seed;
            }
            experiment.paper_stopping = paper_stopping;
            let overrides = Overrides {
                pseudo_count,
                k,
                n_samples,
                k_train,
                k_test,
                l2,
                latent_dim,
                init,
                mf_l2,
                lr_l2,
            };
            apply_overrides(&mut experiment.method, &overrides)?;
            let report = run_experiment(&experiment)?;
            print!("{}", format_report(&report, format));
            if let Some(out) = out {
                emit_report(&report, &out, format)?;
                eprintln!("wrote {}", out.display());
            }
            Ok(())
        }
        Command::Suite {
            config,
            seed,
            out,
            format,
            paper_stopping,
        } => {
            let format = parse_format(&format)?;
            let bench = BenchConfig::from_path(&config)?;
            let mut experiments = bench.experiments();
            if experiments.is_empty() {
                return Err(ExperimentError::Config(
                    "config lists no methods".to_owned(),
                ));
            }
            for experiment in &mut experiments {
                if let Some(seed) = seed {
                    experiment.seed = seed;
                }
                experiment.paper_stopping = paper_stopping;
            }
            let mut entries = Vec::with_capacity(experiments.len());
            for experiment in &experiments {
                eprintln!("running {} ...", experiment.method.name());
                let batch = run_suite(std::slice::from_ref(experiment));
                for entry in batch {
                    match &entry.result {
                        Ok(report) => eprintln!(
                            "  {}: mse={:.3} ll={:.3} ({:.1}s)",
                            entry.method, report.mse, report.log_loss, report.wall_clock_secs
                        ),
                        Err(e) => eprintln!("  {}: ERROR {e}", entry.method),
                    }
                    entries.push(entry);
                }
            }
            print!("{}", format_suite(&entries, ReportFormat::TextTable));
            if let Some(out) = out {
                emit_suite(&entries, &out, format)?;
                eprintln!("wrote {}", out.display());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match real_main(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code().clamp(0, 255) as u8)
        }
    }
}
