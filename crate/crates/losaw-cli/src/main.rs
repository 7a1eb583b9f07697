//! Experiment command line: dataset synthesis, forest and
//! gradient-descent training with Monte-Carlo replication, the eta
//! sweep, reference-table reproduction and a built-in oracle battery.
//!
//! All result files are deterministic for a fixed config and seed;
//! wall-clock timings are written separately.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use losaw::data::{export_dataset, import_dataset};
use losaw::error::Error;
use losaw::experiment::{
    self, eta_sweep, fit_run_forest, fit_run_gd, generate_run_dataset, reproduce_table,
    run_experiment, Algorithm, ExperimentConfig,
};
use losaw::forest::Forest;
use losaw::losawgd::write_trace_csv;
use losaw::metrics::{fi_gap, min_max_normalize, pr_auc, r_squared};

#[derive(Parser)]
#[command(
    name = "losaw",
    about = "Local sample weighting experiments: decorrelated feature importance for forests and mini-batch training",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate one run's training dataset as CSV with a JSON sidecar.
    Gen {
        /// Experiment config (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Monte-Carlo run index to materialize.
        #[arg(long, default_value_t = 0)]
        run: usize,
    },
    /// Run the forest experiment (algorithm `rf` or `losaw_rf`).
    FitRf {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also fit run 0 once more and store the forest as JSON.
        #[arg(long, default_value_t = false)]
        save_model: bool,
    },
    /// Run the gradient-descent experiment (algorithm `gd` or `losaw_gd`).
    FitGd {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also train run 0 once more and store checkpoint plus trace.
        #[arg(long, default_value_t = false)]
        save_model: bool,
    },
    /// Evaluate a stored forest on a dataset exported by `gen`.
    Eval {
        /// Forest JSON written by `fit-rf --save-model`.
        #[arg(long)]
        model: PathBuf,
        /// Dataset CSV written by `gen` (sidecar expected next to it).
        #[arg(long)]
        data: PathBuf,
        /// Output JSON path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Interpretation-prediction tradeoff: rerun the experiment over an
    /// eta grid with paired seeds.
    SweepEta {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated eta grid, e.g. 0.05,0.2,0.5,0.8.
        #[arg(long, value_delimiter = ',')]
        etas: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rerun a reference table at a reduced Monte-Carlo budget and
    /// report desk-scale estimates next to the published values.
    Reproduce {
        /// Table id (2-7).
        #[arg(long)]
        table: u8,
        /// Fraction of the 250-run budget, in (0, 1].
        #[arg(long, default_value_t = 0.08)]
        scale: f64,
        #[arg(long, default_value_t = 20260811)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the built-in oracle battery.
    Selfcheck {
        /// Optional JSON report path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(path: &Path) -> Result<ExperimentConfig, Error> {
    let json = std::fs::read_to_string(path)?;
    ExperimentConfig::from_json(&json)
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::InvalidConfig(_)
        | Error::SchemaMismatch(_)
        | Error::GridTooLarge(..)
        | Error::Io(_)
        | Error::Json(_)
        | Error::Csv(_) => 2,
        _ => 3,
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Gen { config, out, run } => {
            let cfg = load_config(&config)?;
            std::fs::create_dir_all(&out)?;
            let (data, sigma2) = generate_run_dataset(&cfg, run)?;
            let spec = serde_json::json!({
                "schema": experiment::RESULT_SCHEMA,
                "config": cfg,
                "run": run,
                "noise_variance": sigma2,
            });
            export_dataset(&data, &out.join("dataset.csv"), Some(cfg.seed), Some(spec))?;
            println!(
                "wrote {} ({} rows, {} features)",
                out.join("dataset.csv").display(),
                data.n(),
                data.p()
            );
        }
        Command::FitRf {
            config,
            out,
            save_model,
        } => {
            let cfg = load_config(&config)?;
            if !cfg.algorithm.is_forest() {
                return Err(Error::InvalidConfig(
                    "fit-rf needs algorithm \"rf\" or \"losaw_rf\"".into(),
                ));
            }
            run_fit(&cfg, &out, save_model)?;
        }
        Command::FitGd {
            config,
            out,
            save_model,
        } => {
            let cfg = load_config(&config)?;
            if cfg.algorithm.is_forest() {
                return Err(Error::InvalidConfig(
                    "fit-gd needs algorithm \"gd\" or \"losaw_gd\"".into(),
                ));
            }
            run_fit(&cfg, &out, save_model)?;
        }
        Command::Eval { model, data, out } => {
            let forest = Forest::from_json(&std::fs::read_to_string(&model)?)?;
            let (dataset, sidecar) = import_dataset(&data)?;
            let predictions = forest.predict(&dataset);
            let r2 = r_squared(dataset.responses(), &predictions)?;
            // importance metrics need the generating config from the sidecar
            let signal = sidecar
                .spec
                .as_ref()
                .and_then(|s| s.get("config"))
                .and_then(|c| serde_json::from_value::<ExperimentConfig>(c.clone()).ok())
                .and_then(|c| {
                    losaw::datagen::RegressionSpec::new(c.data.regression, c.data.p)
                        .ok()
                        .map(|s| s.signal().to_vec())
                });
            let (pr, gap) = match &signal {
                Some(signal) => {
                    let fi = forest
                        .mdi_importance()
                        .unwrap_or_else(|_| vec![1.0 / forest.n_features() as f64; forest.n_features()]);
                    (
                        Some(pr_auc(&fi, signal)),
                        Some(fi_gap(&min_max_normalize(&fi), signal)),
                    )
                }
                None => (None, None),
            };
            let report = serde_json::json!({
                "schema": experiment::RESULT_SCHEMA,
                "r2": r2,
                "pr_auc": pr,
                "fi_gap": gap,
            });
            std::fs::write(&out, serde_json::to_string_pretty(&report)?)?;
            println!("wrote {}", out.display());
        }
        Command::SweepEta { config, etas, out } => {
            let cfg = load_config(&config)?;
            std::fs::create_dir_all(&out)?;
            let rows = eta_sweep(&cfg, &etas)?;
            experiment::write_sweep_csv(&out.join("sweep.csv"), &rows)?;
            experiment::write_resolved_config(&out.join("resolved_config.json"), &cfg)?;
            println!("wrote {}", out.join("sweep.csv").display());
        }
        Command::Reproduce {
            table,
            scale,
            seed,
            out,
        } => {
            std::fs::create_dir_all(&out)?;
            let rows = reproduce_table(table, scale, seed)?;
            let path = out.join(format!("reproduce_table_{table}.csv"));
            experiment::write_reproduce_csv(&path, &rows)?;
            println!("wrote {} (desk-scale estimate at scale {scale})", path.display());
        }
        Command::Selfcheck { out } => {
            let outcomes = experiment::selfcheck();
            let mut all_passed = true;
            for o in &outcomes {
                println!("{}: {}", o.name, if o.pass { "PASS" } else { "FAIL" });
                all_passed &= o.pass;
            }
            if let Some(path) = out {
                std::fs::write(&path, serde_json::to_string_pretty(&outcomes)?)?;
            }
            if !all_passed {
                return Err(Error::InvalidConfig("selfcheck failed".into()));
            }
        }
    }
    Ok(())
}

fn run_fit(cfg: &ExperimentConfig, out: &Path, save_model: bool) -> Result<(), Error> {
    std::fs::create_dir_all(out)?;
    let result = run_experiment(cfg)?;
    experiment::write_results_csv(&out.join("results.csv"), &result.rows)?;
    experiment::write_timings_csv(&out.join("timing.csv"), &result.timings)?;
    experiment::write_resolved_config(&out.join("resolved_config.json"), cfg)?;
    if save_model {
        match cfg.algorithm {
            Algorithm::Rf | Algorithm::LosawRf => {
                let forest = fit_run_forest(cfg, 0)?;
                std::fs::write(out.join("forest.json"), forest.to_json()?)?;
            }
            Algorithm::Gd | Algorithm::LosawGd => {
                let (net, trace) = fit_run_gd(cfg, 0)?;
                std::fs::write(out.join("checkpoint.json"), net.to_json()?)?;
                if !trace.is_empty() {
                    write_trace_csv(&out.join("trace.csv"), &trace)?;
                }
            }
        }
    }
    println!(
        "wrote {} ({} runs; mean r2_test {:.4}, mean pr_auc {:.4})",
        out.join("results.csv").display(),
        result.rows.len(),
        result.mean(|r| r.r2_test),
        result.mean(|r| r.pr_auc),
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
