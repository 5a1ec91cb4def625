//! Runner and CLI surface tests: mode equivalences, summaries, sweeps, the
//! CSV round trip through `generate`, and process exit codes.

use moda_cli::config::{Mode, TrainConfig};
use moda_cli::runner::{metrics_csv, run_experiment, run_to_dir};
use moda_cli::sweep::{cross_validate, sweep, SweepParam};
use std::path::Path;
use std::process::Command;

fn small_cfg(mode: Mode, epochs: usize, samples: usize) -> TrainConfig {
    let text = format!(
        "run.mode = {}\nrun.epochs = {epochs}\ndata.preset = covariate_default\n\
         data.samples_per_domain = {samples}\n",
        mode.as_str()
    );
    TrainConfig::parse(&text).unwrap()
}

#[test]
fn source_only_matches_oracle_on_zero_shift() {
    // no shift means no adaptation gap: within 2 points
    let mut cfg = TrainConfig::parse(
        "run.mode = source_only\nrun.epochs = 40\ndata.preset = zero_shift\n\
         data.samples_per_domain = 600\n",
    )
    .unwrap();
    let source_only = run_experiment(&cfg, 5).unwrap().record;
    cfg.mode = Mode::FullySupervisedOracle;
    let oracle = run_experiment(&cfg, 5).unwrap().record;
    let gap = oracle.final_row().acc_target - source_only.final_row().acc_target;
    assert!(gap.abs() <= 0.02, "gap {gap}");
}

#[test]
fn moda_equals_moda_fm_at_zero_consistency_weight() {
    let mut cfg = small_cfg(Mode::Moda, 6, 200);
    cfg.mu_c = 0.0;
    let a = run_experiment(&cfg, 9).unwrap().record;
    cfg.mode = Mode::ModaFm;
    let b = run_experiment(&cfg, 9).unwrap().record;
    assert_eq!(metrics_csv(&a), metrics_csv(&b), "row-for-row equality");
}

#[test]
fn summary_statistics_match_independent_recomputation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_cfg(Mode::SourceOnly, 5, 200);
    let records = run_to_dir(&cfg, 3, 5, dir.path()).unwrap();
    assert_eq!(records.len(), 5);

    // recompute final-epoch target accuracy stats from the raw CSVs
    let mut finals = Vec::new();
    for seed in 3..8u64 {
        let text = std::fs::read_to_string(dir.path().join(format!("metrics_seed{seed}.csv")))
            .unwrap();
        let last = text.lines().last().unwrap();
        let header: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
        let col = header.iter().position(|h| *h == "acc_target").unwrap();
        let val: f64 = last.split(',').nth(col).unwrap().parse().unwrap();
        finals.push(val);
    }
    let mean = finals.iter().sum::<f64>() / finals.len() as f64;
    let std = (finals.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
        / (finals.len() - 1) as f64)
        .sqrt();

    let summary = std::fs::read_to_string(dir.path().join("summary.txt")).unwrap();
    let get = |key: &str| -> f64 {
        summary
            .lines()
            .find(|l| l.starts_with(key))
            .unwrap_or_else(|| panic!("missing {key}"))
            .split('=')
            .nth(1)
            .unwrap()
            .trim()
            .parse()
            .unwrap()
    };
    assert!((get("acc_target.mean") - mean).abs() < 1e-12);
    assert!((get("acc_target.std") - std).abs() < 1e-12);
    assert!(summary.contains("status = ok"));
}

#[test]
fn every_row_keeps_alpha_on_simplex_and_accuracies_in_range() {
    let cfg = small_cfg(Mode::ModaFm, 8, 200);
    let record = run_experiment(&cfg, 21).unwrap().record;
    assert_eq!(record.rows.len(), 9); // epoch-0 snapshot plus 8 epochs
    for row in &record.rows {
        let sum: f64 = row.alpha.iter().sum();
        assert!((sum - 1.0).abs() < 1e-10, "epoch {}: alpha sum {sum}", row.epoch);
        assert!((0.0..=1.0).contains(&row.acc_target));
        for a in &row.per_source_acc {
            assert!((0.0..=1.0).contains(a));
        }
    }
}

#[test]
fn sweep_with_one_value_reproduces_the_single_run() {
    let cfg = small_cfg(Mode::SourceOnly, 5, 200);
    let single = run_experiment(&cfg, cfg.seed).unwrap().record;
    let points = sweep(&cfg, SweepParam::MuD, &[cfg.mu_d], cfg.seed, 1).unwrap();
    assert_eq!(points.len(), 1);
    assert_eq!(points[0].records.len(), 1);
    assert_eq!(metrics_csv(&points[0].records[0]), metrics_csv(&single));
    assert_eq!(points[0].mean_accuracy, single.final_row().acc_target);
}

#[test]
fn sweep_rejects_empty_values_and_bad_params() {
    let cfg = small_cfg(Mode::ModaFm, 2, 100);
    assert!(sweep(&cfg, SweepParam::MuC, &[], 1, 1).is_err());
    assert!(SweepParam::parse("bogus").is_err());
}

#[test]
fn consistency_weight_sweep_shows_the_expected_ordering() {
    // mu_c = 0 (plain moda) against the default mu_c on the shifted task
    let cfg = small_cfg(Mode::ModaFm, 40, 600);
    let points = sweep(&cfg, SweepParam::MuC, &[0.0, 0.5], 31, 3).unwrap();
    assert!(
        points[0].mean_accuracy <= points[1].mean_accuracy,
        "mu_c=0 gave {} vs mu_c=0.5 gave {}",
        points[0].mean_accuracy,
        points[1].mean_accuracy
    );
}

#[test]
fn sparsity_sweep_controls_distance_from_uniform_mixture() {
    let mut cfg = TrainConfig::parse(
        "run.mode = moda_fm\nrun.epochs = 60\ndata.preset = collapse\n\
         data.samples_per_domain = 400\n",
    )
    .unwrap();
    cfg.seed = 7;
    let points = sweep(&cfg, SweepParam::MuS, &[1e-5, 10.0], cfg.seed, 1).unwrap();
    let dev = |alpha: &[f64]| -> f64 {
        alpha.iter().map(|a| (a - 1.0 / 3.0).abs()).fold(0.0, f64::max)
    };
    let dev_lo = dev(&points[0].records[0].final_alpha);
    let dev_hi = dev(&points[1].records[0].final_alpha);
    assert!(
        dev_hi < dev_lo,
        "large mu_s should pin alpha near uniform: dev {dev_hi} vs {dev_lo}"
    );
}

#[test]
fn cross_validation_selects_a_combination() {
    let mut cfg = small_cfg(Mode::ModaFm, 4, 160);
    cfg.seed = 13;
    let report = cross_validate(&cfg, 3, cfg.seed).unwrap();
    assert_eq!(report.points.len(), 3);
    for p in &report.points {
        assert!((1e-4..=1.0).contains(&p.mu_d));
        assert!((1e-5..=1.0).contains(&p.mu_s));
        assert!((1e-2..=1.0).contains(&p.mu_c));
        assert!((0.0..=1.0).contains(&p.mean_accuracy));
    }
    assert!(report.points.iter().all(|p| p.mean_accuracy <= report.best.mean_accuracy));
}

// ---------------------------------------------------------------------------
// Process-level tests
// ---------------------------------------------------------------------------

fn moda_bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_moda"))
}

fn write_cfg(dir: &Path, text: &str) -> std::path::PathBuf {
    let p = dir.join("exp.conf");
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn generate_then_train_from_csv_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(
        dir.path(),
        "run.mode = source_only\nrun.epochs = 3\ndata.preset = covariate_default\n\
         data.samples_per_domain = 120\n",
    );
    let data_dir = dir.path().join("data");
    let out = moda_bin()
        .args(["generate", "--config"])
        .arg(&cfg)
        .args(["--out"])
        .arg(&data_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["source_0.csv", "source_1.csv", "source_2.csv", "target_train.csv", "target_test.csv"]
    {
        assert!(data_dir.join(f).exists(), "missing {f}");
    }
    // the unlabeled target pool must not leak labels
    let target_train = std::fs::read_to_string(data_dir.join("target_train.csv")).unwrap();
    assert!(!target_train.lines().next().unwrap().contains("label"));

    let csv_cfg = write_cfg(
        &data_dir,
        &format!(
            "run.mode = source_only\nrun.epochs = 3\ndata.preset = csv\n\
             data.source_paths = {d}/source_0.csv,{d}/source_1.csv,{d}/source_2.csv\n\
             data.source_test_paths = {d}/source_test_0.csv,{d}/source_test_1.csv,{d}/source_test_2.csv\n\
             data.target_path = {d}/target_train.csv\n\
             data.target_test_path = {d}/target_test.csv\n",
            d = data_dir.display()
        ),
    );
    let run_dir = dir.path().join("run");
    let out = moda_bin()
        .args(["train", "--config"])
        .arg(&csv_cfg)
        .args(["--out"])
        .arg(&run_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(run_dir.join("metrics_seed17.csv").exists());
    assert!(run_dir.join("checkpoint_seed17.bin").exists());
}

#[test]
fn exit_codes_separate_config_and_runtime_failures() {
    let dir = tempfile::tempdir().unwrap();
    // unknown key: config error, exit 1
    let bad = write_cfg(dir.path(), "run.bogus = 1\n");
    let out = moda_bin()
        .args(["train", "--config"])
        .arg(&bad)
        .args(["--out"])
        .arg(dir.path().join("o1"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));

    // missing config file: config error, exit 1
    let out = moda_bin()
        .args(["train", "--config"])
        .arg(dir.path().join("absent.conf"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));

    // lambda without oracle labels: explicit refusal, exit 1
    let no_oracle = write_cfg(
        dir.path(),
        "run.mode = source_only\nrun.epochs = 2\nrun.probe_epochs = 5\n\
         data.preset = covariate_default\ndata.samples_per_domain = 80\n",
    );
    // synthetic targets do carry oracle labels, so route through csv data
    let gen_dir = dir.path().join("gen");
    assert!(moda_bin()
        .args(["generate", "--config"])
        .arg(&no_oracle)
        .args(["--out"])
        .arg(&gen_dir)
        .status()
        .unwrap()
        .success());
    let csv_cfg = write_cfg(
        &gen_dir,
        &format!(
            "run.mode = source_only\nrun.epochs = 2\nrun.probe_epochs = 5\ndata.preset = csv\n\
             data.source_paths = {d}/source_0.csv,{d}/source_1.csv,{d}/source_2.csv\n\
             data.target_path = {d}/target_train.csv\n\
             data.target_test_path = {d}/target_test.csv\n",
            d = gen_dir.display()
        ),
    );
    let out = moda_bin()
        .args(["bound", "--config"])
        .arg(&csv_cfg)
        .args(["--out"])
        .arg(dir.path().join("o2"))
        .args(["--lambda"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("oracle"));

    let out = moda_bin().args(["train"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1), "missing required flag is a config error");
}

#[test]
fn bound_report_b_scales_as_sqrt_m_between_uniform_and_one_hot() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(
        dir.path(),
        "run.mode = source_only\nrun.epochs = 2\nrun.probe_epochs = 20\n\
         data.preset = covariate_default\ndata.samples_per_domain = 150\n",
    );
    let run = |alpha: &str, out: &str| -> serde_json::Value {
        let out_dir = dir.path().join(out);
        let st = moda_bin()
            .args(["bound", "--config"])
            .arg(&cfg)
            .args(["--out"])
            .arg(&out_dir)
            .args(["--alpha", alpha])
            .output()
            .unwrap();
        assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("bound.json")).unwrap())
            .unwrap()
    };
    let uniform = run("uniform", "b_uniform");
    let one_hot = run("explicit:1,0,0", "b_onehot");
    let ratio = uniform["b_alpha"].as_f64().unwrap() / one_hot["b_alpha"].as_f64().unwrap();
    assert!((ratio - 1.0 / 3.0f64.sqrt()).abs() < 1e-12, "ratio {ratio}");
}
