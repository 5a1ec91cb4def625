//! Hyperparameter sweeps, the source-domain cross-validation preset, and
//! the over-training study.

use crate::config::{DataConfig, Mode, Result, TrainConfig};
use crate::runner::{run_experiment, RunRecord};
use crate::CliError;
use moda_core::data::DomainDataset;
use moda_core::rng::stream_rng;
use rand::Rng;
use rayon::prelude::*;
use std::fmt::Write as _;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    MuD,
    MuS,
    MuC,
    Tau,
}

impl SweepParam {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mu_d" => Ok(SweepParam::MuD),
            "mu_s" => Ok(SweepParam::MuS),
            "mu_c" => Ok(SweepParam::MuC),
            "tau" => Ok(SweepParam::Tau),
            other => Err(CliError::Config(format!(
                "sweep parameter must be one of mu_d, mu_s, mu_c, tau; got {other:?}"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            SweepParam::MuD => "mu_d",
            SweepParam::MuS => "mu_s",
            SweepParam::MuC => "mu_c",
            SweepParam::Tau => "tau",
        }
    }

    fn apply(&self, cfg: &mut TrainConfig, value: f64) {
        match self {
            SweepParam::MuD => cfg.mu_d = value,
            SweepParam::MuS => cfg.mu_s = value,
            SweepParam::MuC => cfg.mu_c = value,
            SweepParam::Tau => cfg.tau = value,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub value: f64,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub records: Vec<RunRecord>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// One run per value per seed; accuracy is the final-epoch target accuracy.
pub fn sweep(
    cfg: &TrainConfig,
    param: SweepParam,
    values: &[f64],
    seed: u64,
    repeat: usize,
) -> Result<Vec<SweepPoint>> {
    if values.is_empty() {
        return Err(CliError::Config("sweep needs a non-empty value list".into()));
    }
    let jobs: Vec<(f64, u64)> = values
        .iter()
        .flat_map(|&v| (0..repeat as u64).map(move |k| (v, seed + k)))
        .collect();
    let runs: Vec<Result<(f64, RunRecord)>> = jobs
        .par_iter()
        .map(|&(value, s)| {
            let mut c = cfg.clone();
            param.apply(&mut c, value);
            c.validate()?;
            Ok((value, run_experiment(&c, s)?.record))
        })
        .collect();

    let mut points = Vec::new();
    for &value in values {
        let mut records = Vec::new();
        for r in &runs {
            match r {
                Ok((v, rec)) if *v == value => records.push(rec.clone()),
                Ok(_) => {}
                Err(e) => return Err(CliError::Runtime(e.to_string())),
            }
        }
        let accs: Vec<f64> = records.iter().map(|r| r.final_row().acc_target).collect();
        let (mean_accuracy, std_accuracy) = mean_std(&accs);
        points.push(SweepPoint { value, mean_accuracy, std_accuracy, records });
    }
    Ok(points)
}

pub fn sweep_csv(param: SweepParam, points: &[SweepPoint]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# moda-sweep v1");
    let _ = writeln!(s, "param,value,mean_acc,std_acc");
    for p in points {
        let _ = writeln!(s, "{},{},{},{}", param.as_str(), p.value, p.mean_accuracy, p.std_accuracy);
    }
    s
}

// ---------------------------------------------------------------------------
// Over-training study
// ---------------------------------------------------------------------------

/// Exact least-squares slope of `ys` against their indices.
pub fn least_squares_slope(ys: &[f64]) -> f64 {
    let n = ys.len() as f64;
    if ys.len() < 2 {
        return 0.0;
    }
    let x_mean = (n - 1.0) / 2.0;
    let y_mean = ys.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, y) in ys.iter().enumerate() {
        let dx = i as f64 - x_mean;
        num += dx * (y - y_mean);
        den += dx * dx;
    }
    num / den
}

#[derive(Debug, Clone)]
pub struct OvertrainModeReport {
    pub mode: Mode,
    pub seed: u64,
    pub max_accuracy: f64,
    pub final_accuracy: f64,
    pub drop_from_peak: f64,
    /// Least-squares slope of accuracy over the last two-thirds of epochs.
    pub tail_slope: f64,
}

#[derive(Debug, Clone)]
pub struct OvertrainReport {
    pub per_run: Vec<OvertrainModeReport>,
}

impl OvertrainReport {
    pub fn median_drop(&self, mode: Mode) -> f64 {
        let mut drops: Vec<f64> = self
            .per_run
            .iter()
            .filter(|r| r.mode == mode)
            .map(|r| r.drop_from_peak)
            .collect();
        drops.sort_by(|a, b| a.partial_cmp(b).unwrap());
        drops[drops.len() / 2]
    }
}

pub fn analyze_accuracy_curve(mode: Mode, seed: u64, accs: &[f64]) -> OvertrainModeReport {
    let max_accuracy = accs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let final_accuracy = *accs.last().unwrap();
    let tail_start = accs.len() / 3;
    OvertrainModeReport {
        mode,
        seed,
        max_accuracy,
        final_accuracy,
        drop_from_peak: max_accuracy - final_accuracy,
        tail_slope: least_squares_slope(&accs[tail_start..]),
    }
}

/// Train the full model and the no-consistency ablation for the whole
/// budget and compare their stability after the peak.
pub fn overtrain_study(cfg: &TrainConfig, epochs: usize, seed: u64, repeat: usize) -> Result<OvertrainReport> {
    if epochs < 30 {
        return Err(CliError::Config("overtrain study needs at least 30 epochs".into()));
    }
    let jobs: Vec<(Mode, u64)> = [Mode::ModaFm, Mode::Moda]
        .into_iter()
        .flat_map(|m| (0..repeat as u64).map(move |k| (m, seed + k)))
        .collect();
    let per_run: Vec<Result<OvertrainModeReport>> = jobs
        .par_iter()
        .map(|&(mode, s)| {
            let mut c = cfg.clone();
            c.mode = mode;
            c.epochs = epochs;
            let record = run_experiment(&c, s)?.record;
            // skip the untrained epoch-0 row
            let accs: Vec<f64> = record.rows[1..].iter().map(|r| r.acc_target).collect();
            Ok(analyze_accuracy_curve(mode, s, &accs))
        })
        .collect();
    let per_run = per_run.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(OvertrainReport { per_run })
}

pub fn overtrain_csv(report: &OvertrainReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# moda-overtrain v1");
    let _ = writeln!(s, "mode,seed,max_acc,final_acc,drop_from_peak,tail_slope");
    for r in &report.per_run {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.mode.as_str(),
            r.seed,
            r.max_accuracy,
            r.final_accuracy,
            r.drop_from_peak,
            r.tail_slope
        );
    }
    s
}

// ---------------------------------------------------------------------------
// Cross-validation over source domains
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct CrossValPoint {
    pub iteration: usize,
    pub mu_d: f64,
    pub mu_s: f64,
    pub mu_c: f64,
    pub mean_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct CrossValReport {
    pub points: Vec<CrossValPoint>,
    pub best: CrossValPoint,
}

/// Random-search cross-validation: each source is held out as the pseudo-
/// target in turn (its labels hidden for training, used for evaluation),
/// and the hyperparameter draw with the best mean accuracy wins.
pub fn cross_validate(
    cfg: &TrainConfig,
    iterations: usize,
    seed: u64,
) -> Result<CrossValReport> {
    if iterations == 0 {
        return Err(CliError::Config("cross-validation needs at least one iteration".into()));
    }
    let DataConfig::Synthetic(_) = &cfg.data else {
        return Err(CliError::Config(
            "cross-validation preset currently supports synthetic data configs".into(),
        ));
    };
    let base_pack = crate::runner::build_datasets(cfg, seed)?;
    let m = base_pack.sources.len();
    if m < 2 {
        return Err(CliError::Config("cross-validation needs at least two sources".into()));
    }

    // log-uniform search ranges
    let mut draw_rng = stream_rng(seed, 21, 0);
    let mut draws = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let log_uniform = |r: &mut rand_chacha::ChaCha8Rng, lo: f64, hi: f64| -> f64 {
            let u: f64 = r.gen();
            (lo.ln() + u * (hi.ln() - lo.ln())).exp()
        };
        draws.push((
            log_uniform(&mut draw_rng, 1e-4, 1.0),
            log_uniform(&mut draw_rng, 1e-5, 1.0),
            log_uniform(&mut draw_rng, 1e-2, 1.0),
        ));
    }

    let folds: Vec<(usize, usize)> = (0..iterations)
        .flat_map(|it| (0..m).map(move |hold| (it, hold)))
        .collect();
    let accs: Vec<Result<(usize, f64)>> = folds
        .par_iter()
        .map(|&(it, hold)| {
            let (mu_d, mu_s, mu_c) = draws[it];
            let mut c = cfg.clone();
            c.mu_d = mu_d;
            c.mu_s = mu_s;
            c.mu_c = mu_c;
            let acc = run_fold(&c, &base_pack, hold, seed)?;
            Ok((it, acc))
        })
        .collect();

    let mut sums = vec![0.0; iterations];
    for r in accs {
        let (it, acc) = r?;
        sums[it] += acc / m as f64;
    }
    let points: Vec<CrossValPoint> = (0..iterations)
        .map(|it| CrossValPoint {
            iteration: it,
            mu_d: draws[it].0,
            mu_s: draws[it].1,
            mu_c: draws[it].2,
            mean_accuracy: sums[it],
        })
        .collect();
    let best = points
        .iter()
        .cloned()
        .max_by(|a, b| a.mean_accuracy.partial_cmp(&b.mean_accuracy).unwrap())
        .unwrap();
    Ok(CrossValReport { points, best })
}

/// Train with source `hold` as pseudo-target and report accuracy on its
/// held-out test split.
fn run_fold(
    cfg: &TrainConfig,
    pack: &crate::runner::DataPack,
    hold: usize,
    seed: u64,
) -> Result<f64> {
    let mut sources = Vec::new();
    let mut source_tests = Vec::new();
    for (j, (s, t)) in pack.sources.iter().zip(&pack.source_tests).enumerate() {
        if j != hold {
            sources.push(s.clone());
            source_tests.push(t.clone());
        }
    }
    let held = &pack.sources[hold];
    let pseudo_target = DomainDataset::unlabeled_with_oracle(
        format!("pseudo_target_{hold}"),
        held.features().clone(),
        held.labels().unwrap().to_vec(),
        held.num_classes(),
        moda_core::data::Split::Train,
    )
    .map_err(|e| CliError::Runtime(e.to_string()))?;
    let eval = &pack.source_tests[hold];
    let pseudo_eval = DomainDataset::unlabeled_with_oracle(
        format!("pseudo_target_{hold}"),
        eval.features().clone(),
        eval.labels().unwrap().to_vec(),
        eval.num_classes(),
        moda_core::data::Split::Test,
    )
    .map_err(|e| CliError::Runtime(e.to_string()))?;

    let fold_pack = crate::runner::DataPack {
        sources,
        source_tests,
        target_train: pseudo_target,
        target_eval: pseudo_eval,
    };
    let record = crate::runner::run_with_datasets(cfg, fold_pack, seed)?.record;
    Ok(record.final_row().acc_target)
}

pub fn crossval_csv(report: &CrossValReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# moda-crossval v1");
    let _ = writeln!(s, "iteration,mu_d,mu_s,mu_c,mean_acc");
    for p in &report.points {
        let _ = writeln!(s, "{},{},{},{},{}", p.iteration, p.mu_d, p.mu_s, p.mu_c, p.mean_accuracy);
    }
    let _ = writeln!(
        s,
        "# best: iteration {} (mu_d {}, mu_s {}, mu_c {}, mean_acc {})",
        report.best.iteration, report.best.mu_d, report.best.mu_s, report.best.mu_c,
        report.best.mean_accuracy
    );
    s
}

pub fn write_sweep_artifacts(
    out: &Path,
    name: &str,
    content: &str,
) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| CliError::Runtime(e.to_string()))?;
    std::fs::write(out.join(name), content).map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok(())
}
