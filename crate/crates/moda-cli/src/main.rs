//! Command-line experiment runner.

use clap::{Args, Parser, Subcommand};
use moda_cli::bound::{report_json, run_bound, AlphaSource};
use moda_cli::config::TrainConfig;
use moda_cli::runner::{build_datasets, run_to_dir};
use moda_cli::sweep::{
    cross_validate, crossval_csv, overtrain_csv, overtrain_study, sweep, sweep_csv, SweepParam,
};
use moda_cli::CliError;
use moda_core::data::write_csv;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "moda", about = "Multi-source domain adaptation laboratory", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration file (flat key = value text).
    #[arg(long)]
    config: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "moda_out")]
    out: PathBuf,
    /// Seed batch size: runs seeds seed, seed+1, .. in parallel workers.
    #[arg(long, default_value_t = 1)]
    repeat: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Train the configured mode end to end; writes metrics CSV,
    /// checkpoint, and summary.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Sweep one of mu_d, mu_s, mu_c, tau over a value list, or run the
    /// source-domain cross-validation preset.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Parameter to sweep (mu_d, mu_s, mu_c, tau).
        #[arg(long, conflicts_with = "cross_validate")]
        param: Option<String>,
        /// Comma-separated values for --param.
        #[arg(long, conflicts_with = "cross_validate")]
        values: Option<String>,
        /// Random-search cross-validation with each source held out as the
        /// pseudo-target in turn.
        #[arg(long)]
        cross_validate: bool,
        /// Random-search iterations for --cross-validate.
        #[arg(long, default_value_t = 20)]
        iterations: usize,
    },
    /// Train moda_fm and moda for a long budget and report peak accuracy,
    /// final accuracy, drop from peak, and tail slopes.
    Overtrain {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 60)]
        epochs: usize,
    },
    /// Evaluate the target-risk bound terms and write a JSON report.
    Bound {
        /// Experiment configuration file.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "moda_out")]
        out: PathBuf,
        /// Mixture weights: uniform, from_checkpoint, or explicit:<list>.
        #[arg(long, default_value = "uniform")]
        alpha: String,
        /// Checkpoint to pull alpha and the risk hypothesis from.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Include the oracle lambda estimate (needs oracle target labels).
        #[arg(long)]
        lambda: bool,
    },
    /// Generate the configured synthetic dataset and write it as CSV files.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "moda_out")]
        out: PathBuf,
    },
}

fn load_config(path: &PathBuf, seed_override: Option<u64>) -> Result<TrainConfig, CliError> {
    let mut cfg = TrainConfig::from_file(path)?;
    if let Some(seed) = seed_override {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train { common } => {
            let cfg = load_config(&common.config, common.seed)?;
            let records = run_to_dir(&cfg, cfg.seed, common.repeat.max(1), &common.out)?;
            let last = records.last().unwrap();
            println!(
                "train: {} run(s) complete; final target accuracy of seed {}: {:.4}",
                records.len(),
                last.seed,
                last.final_row().acc_target
            );
            Ok(())
        }
        Command::Sweep { common, param, values, cross_validate: cv, iterations } => {
            let cfg = load_config(&common.config, common.seed)?;
            std::fs::create_dir_all(&common.out).map_err(|e| CliError::Runtime(e.to_string()))?;
            if cv {
                let report = cross_validate(&cfg, iterations, cfg.seed)?;
                let path = common.out.join("crossval.csv");
                std::fs::write(&path, crossval_csv(&report))
                    .map_err(|e| CliError::Runtime(e.to_string()))?;
                let mut best_cfg = cfg.clone();
                best_cfg.mu_d = report.best.mu_d;
                best_cfg.mu_s = report.best.mu_s;
                best_cfg.mu_c = report.best.mu_c;
                std::fs::write(common.out.join("crossval_best.conf"), best_cfg.serialize())
                    .map_err(|e| CliError::Runtime(e.to_string()))?;
                println!(
                    "cross-validation: best mean accuracy {:.4} at mu_d {:.4e}, mu_s {:.4e}, mu_c {:.4e}",
                    report.best.mean_accuracy, report.best.mu_d, report.best.mu_s, report.best.mu_c
                );
                return Ok(());
            }
            let param = SweepParam::parse(&param.ok_or_else(|| {
                CliError::Config("sweep needs --param <name> or --cross-validate".into())
            })?)?;
            let values: Vec<f64> = values
                .ok_or_else(|| CliError::Config("sweep needs --values v1,v2,..".into()))?
                .split(',')
                .map(|p| {
                    p.trim()
                        .parse()
                        .map_err(|_| CliError::Config(format!("bad sweep value {p:?}")))
                })
                .collect::<Result<_, CliError>>()?;
            let points = sweep(&cfg, param, &values, cfg.seed, common.repeat.max(1))?;
            let path = common.out.join(format!("sweep_{}.csv", param.as_str()));
            std::fs::write(&path, sweep_csv(param, &points))
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            for p in &points {
                println!(
                    "sweep {} = {}: accuracy {:.4} +- {:.4}",
                    param.as_str(),
                    p.value,
                    p.mean_accuracy,
                    p.std_accuracy
                );
            }
            Ok(())
        }
        Command::Overtrain { common, epochs } => {
            let cfg = load_config(&common.config, common.seed)?;
            std::fs::create_dir_all(&common.out).map_err(|e| CliError::Runtime(e.to_string()))?;
            let report = overtrain_study(&cfg, epochs, cfg.seed, common.repeat.max(1))?;
            std::fs::write(common.out.join("overtrain.csv"), overtrain_csv(&report))
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            for r in &report.per_run {
                println!(
                    "overtrain {} seed {}: peak {:.4}, final {:.4}, drop {:.4}, tail slope {:+.3e}",
                    r.mode.as_str(),
                    r.seed,
                    r.max_accuracy,
                    r.final_accuracy,
                    r.drop_from_peak,
                    r.tail_slope
                );
            }
            Ok(())
        }
        Command::Bound { config, seed, out, alpha, checkpoint, lambda } => {
            let cfg = load_config(&config, seed)?;
            let alpha_source = AlphaSource::parse(&alpha)?;
            let report = run_bound(&cfg, cfg.seed, &alpha_source, checkpoint.as_deref(), lambda)?;
            std::fs::create_dir_all(&out).map_err(|e| CliError::Runtime(e.to_string()))?;
            std::fs::write(out.join("bound.json"), report_json(&report))
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            println!(
                "bound: B {:.5}, V {:.5}, d_H {:.5}, weighted source risk {:.5}, total {:.5}",
                report.b_alpha,
                report.v,
                report.h_divergence_estimate,
                report.weighted_source_risk,
                report.bound_total
            );
            Ok(())
        }
        Command::Generate { config, seed, out } => {
            let cfg = load_config(&config, seed)?;
            let pack = build_datasets(&cfg, cfg.seed)?;
            std::fs::create_dir_all(&out).map_err(|e| CliError::Runtime(e.to_string()))?;
            for (j, ds) in pack.sources.iter().enumerate() {
                write_csv(ds, out.join(format!("source_{j}.csv")), true, false)?;
            }
            for (j, ds) in pack.source_tests.iter().enumerate() {
                write_csv(ds, out.join(format!("source_test_{j}.csv")), true, false)?;
            }
            // the training pool stays unlabeled; the eval split carries its
            // oracle labels so it can serve as target_test_path
            write_csv(&pack.target_train, out.join("target_train.csv"), false, false)?;
            write_csv(&pack.target_eval, out.join("target_test.csv"), true, false)?;
            println!(
                "generate: wrote {} sources plus target splits to {}",
                pack.sources.len(),
                out.display()
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap usage problems are configuration errors
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
