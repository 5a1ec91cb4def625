//! End-to-end experiment execution: dataset assembly per mode, the epoch
//! loop, per-epoch metrics, and the on-disk artifacts (metrics CSV,
//! checkpoint, summary).

use crate::config::{DataConfig, Mode, Result, TrainConfig};
use crate::CliError;
use moda_core::augment::augment_batch;
use moda_core::data::{generate_domains, load_csv, sample_batches, DomainDataset};
use moda_core::moda::{
    accuracy, evaluate_losses, train_step, EpochMetrics, ModaModel, ObjectiveConfig,
};
use moda_core::nn::{save_checkpoint, Optimizer, ParamStore};
use moda_core::rng::{stream_rng, sub_seed};
use std::fmt::Write as _;
use std::path::Path;

// stable stream tags for every randomness consumer
const TAG_DATA: u64 = 1;
const TAG_MODEL: u64 = 2;
const TAG_SAMPLER: u64 = 3;
const TAG_AUGMENT: u64 = 4;
const TAG_STEP: u64 = 5;
const TAG_INIT_EVAL: u64 = 6;

/// Train/eval datasets after mode-specific rewiring.
pub struct DataPack {
    pub sources: Vec<DomainDataset>,
    pub source_tests: Vec<DomainDataset>,
    pub target_train: DomainDataset,
    pub target_eval: DomainDataset,
}

/// Load or generate the domains for a run.
pub fn build_datasets(cfg: &TrainConfig, seed: u64) -> Result<DataPack> {
    let pack = match &cfg.data {
        DataConfig::Synthetic(spec) => {
            let gen = generate_domains(spec, sub_seed(seed, TAG_DATA, 0))
                .map_err(|e| CliError::Config(e.to_string()))?;
            let target_eval =
                if cfg.transductive { gen.target_train.clone() } else { gen.target_test };
            DataPack {
                sources: gen.sources,
                source_tests: gen.source_tests,
                target_train: gen.target_train,
                target_eval,
            }
        }
        DataConfig::Csv { source_paths, source_test_paths, target_path, target_test_path } => {
            let mut sources = Vec::new();
            for p in source_paths {
                sources.push(load_csv(p, true).map_err(|e| CliError::Config(e.to_string()))?);
            }
            let mut source_tests = Vec::new();
            for p in source_test_paths {
                source_tests.push(load_csv(p, true).map_err(|e| CliError::Config(e.to_string()))?);
            }
            if source_tests.is_empty() {
                source_tests = sources.clone();
            }
            if source_tests.len() != sources.len() {
                return Err(CliError::Config(format!(
                    "{} source test files for {} sources",
                    source_tests.len(),
                    sources.len()
                )));
            }
            let target_train =
                load_csv(target_path, false).map_err(|e| CliError::Config(e.to_string()))?;
            let target_eval = match target_test_path {
                Some(p) => {
                    // eval labels live in the oracle field, mirroring generation
                    let labeled =
                        load_csv(p, true).map_err(|e| CliError::Config(e.to_string()))?;
                    seal_labels(&labeled)?
                }
                None if cfg.transductive => seal_target_pool(&target_train)?,
                None => {
                    return Err(CliError::Config(
                        "non-transductive csv runs need data.target_test_path for evaluation"
                            .into(),
                    ))
                }
            };
            // class count travels with the labeled sources
            let classes = sources[0].num_classes();
            let target_train = moda_core::data::DomainDataset::unlabeled(
                target_train.domain_id(),
                target_train.features().clone(),
                classes,
                moda_core::data::Split::Train,
            )
            .map_err(|e| CliError::Config(e.to_string()))?;
            DataPack { sources, source_tests, target_train, target_eval }
        }
    };
    for (j, s) in pack.sources.iter().enumerate() {
        if s.dim() != pack.target_train.dim() {
            return Err(CliError::Config(format!(
                "source {j} has dim {} but target has {}",
                s.dim(),
                pack.target_train.dim()
            )));
        }
    }
    Ok(pack)
}

fn seal_labels(labeled: &DomainDataset) -> Result<DomainDataset> {
    let labels = labeled
        .labels()
        .ok_or_else(|| CliError::Config("target test file has no label column".into()))?;
    moda_core::data::DomainDataset::unlabeled_with_oracle(
        labeled.domain_id(),
        labeled.features().clone(),
        labels.to_vec(),
        labeled.num_classes(),
        moda_core::data::Split::Test,
    )
    .map_err(|e| CliError::Config(e.to_string()))
}

fn seal_target_pool(pool: &DomainDataset) -> Result<DomainDataset> {
    Err(CliError::Config(format!(
        "transductive csv evaluation needs oracle labels for target pool {:?}; provide \
         data.target_test_path with the same rows plus labels",
        pool.domain_id()
    )))
}

/// Rewire datasets for the mode: the fully supervised oracle trains on the
/// labeled target pool as its single source.
fn mode_datasets(mode: Mode, pack: DataPack) -> Result<DataPack> {
    match mode {
        Mode::FullySupervisedOracle => {
            let labeled = pack
                .target_train
                .promote_oracle_labels()
                .map_err(|e| CliError::Config(e.to_string()))?;
            let eval_as_source_test = pack
                .target_eval
                .promote_oracle_labels()
                .map_err(|e| CliError::Config(e.to_string()))?;
            Ok(DataPack {
                sources: vec![labeled],
                source_tests: vec![eval_as_source_test],
                target_train: pack.target_train,
                target_eval: pack.target_eval,
            })
        }
        _ => Ok(pack),
    }
}

/// Everything a finished run reports.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub seed: u64,
    pub mode: Mode,
    pub rows: Vec<EpochMetrics>,
    pub final_alpha: Vec<f64>,
    pub failure: Option<String>,
}

impl RunRecord {
    pub fn final_row(&self) -> &EpochMetrics {
        self.rows.last().expect("runs always have the epoch-0 row")
    }

    pub fn num_sources(&self) -> usize {
        self.final_alpha.len()
    }
}

pub struct RunOutput {
    pub record: RunRecord,
    pub store: ParamStore,
    pub model: ModaModel,
}

fn effective_objective(cfg: &TrainConfig) -> ObjectiveConfig {
    let flags = cfg.mode.flags();
    ObjectiveConfig {
        mu_d: if flags.use_disc { cfg.mu_d } else { 0.0 },
        mu_s: cfg.mu_s,
        mu_c: if flags.use_cons { cfg.mu_c } else { 0.0 },
        tau: cfg.tau,
        grl_lambda: cfg.grl_lambda,
        train_beta: flags.learn_alpha,
    }
}

/// Execute one training run. Deterministic per `(cfg, seed)`.
pub fn run_experiment(cfg: &TrainConfig, seed: u64) -> Result<RunOutput> {
    let pack = mode_datasets(cfg.mode, build_datasets(cfg, seed)?)?;
    run_with_datasets(cfg, pack, seed)
}

/// The training loop on already-assembled datasets (cross-validation folds
/// reuse this with rewired domains).
pub fn run_with_datasets(cfg: &TrainConfig, pack: DataPack, seed: u64) -> Result<RunOutput> {
    let num_sources = pack.sources.len();
    let classes = pack.sources[0].num_classes();
    let input_dim = pack.target_train.dim();
    let objective = effective_objective(cfg);

    let mut store = ParamStore::new();
    let model = ModaModel::new(
        &mut store,
        &cfg.arch,
        input_dim,
        classes,
        num_sources,
        !cfg.mode.flags().learn_alpha,
        &mut stream_rng(seed, TAG_MODEL, 0),
    )
    .map_err(|e| CliError::Config(e.to_string()))?;
    let mut optimizer = Optimizer::new(cfg.optimizer, cfg.learning_rate);

    let m = cfg.batch_size;
    let min_rows =
        pack.sources.iter().map(|s| s.n()).chain([pack.target_train.n()]).min().unwrap();
    if min_rows < m {
        return Err(CliError::Config(format!(
            "batch size {m} exceeds smallest domain size {min_rows}"
        )));
    }
    let iterations_per_epoch = min_rows / m;
    let sampler_seed = sub_seed(seed, TAG_SAMPLER, 0);

    let evaluate = |store: &ParamStore| -> Result<(f64, Vec<f64>)> {
        let acc_t = accuracy(&model, store, &pack.target_eval)
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        let per_source = pack
            .source_tests
            .iter()
            .map(|ds| accuracy(&model, store, ds).map_err(|e| CliError::Runtime(e.to_string())))
            .collect::<Result<Vec<f64>>>()?;
        Ok((acc_t, per_source))
    };

    let mut rows: Vec<EpochMetrics> = Vec::with_capacity(cfg.epochs + 1);

    // epoch-0 row: pre-training snapshot evaluated on the first bundle
    // with a dedicated stream so training draws are unaffected
    {
        let mut bundle = sample_batches(&pack.sources, &pack.target_train, m, sampler_seed, 0)
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        bundle.augmented = Some(
            augment_batch(
                &bundle.target_features,
                &cfg.augment,
                &mut stream_rng(seed, TAG_INIT_EVAL, 0),
            )
            .map_err(|e| CliError::Runtime(e.to_string()))?,
        );
        let b = evaluate_losses(
            &store,
            &model,
            &bundle,
            &objective,
            &mut stream_rng(seed, TAG_INIT_EVAL, 1),
        )
        .map_err(|e| CliError::Runtime(e.to_string()))?;
        let (acc_target, per_source_acc) = evaluate(&store)?;
        rows.push(EpochMetrics {
            epoch: 0,
            class_loss: b.class_loss,
            disc_loss: b.disc_loss,
            cons_loss: b.cons_loss,
            sparsity: b.sparsity_term,
            total: b.total,
            alpha: model.mixture.alpha(&store),
            masked_fraction: b.masked_fraction,
            acc_target,
            per_source_acc,
        });
    }

    let mut failure = None;
    'training: for epoch in 1..=cfg.epochs {
        let mut sums = [0.0f64; 6]; // class, disc, cons, sparsity, total, masked
        for it in 0..iterations_per_epoch {
            let global = ((epoch - 1) * iterations_per_epoch + it) as u64;
            let mut bundle =
                sample_batches(&pack.sources, &pack.target_train, m, sampler_seed, global)
                    .map_err(|e| CliError::Runtime(e.to_string()))?;
            bundle.augmented = Some(
                augment_batch(
                    &bundle.target_features,
                    &cfg.augment,
                    &mut stream_rng(seed, TAG_AUGMENT, global),
                )
                .map_err(|e| CliError::Runtime(e.to_string()))?,
            );
            let breakdown = match train_step(
                &model,
                &mut store,
                &mut optimizer,
                &bundle,
                &objective,
                &mut stream_rng(seed, TAG_STEP, global),
            ) {
                Ok(b) => b,
                Err(e) => {
                    failure = Some(format!("epoch {epoch}: {e}"));
                    break 'training;
                }
            };
            sums[0] += breakdown.class_loss;
            sums[1] += breakdown.disc_loss;
            sums[2] += breakdown.cons_loss;
            sums[3] += breakdown.sparsity_term;
            sums[4] += breakdown.total;
            sums[5] += breakdown.masked_fraction;
        }
        let k = iterations_per_epoch as f64;
        let (acc_target, per_source_acc) = evaluate(&store)?;
        rows.push(EpochMetrics {
            epoch,
            class_loss: sums[0] / k,
            disc_loss: sums[1] / k,
            cons_loss: sums[2] / k,
            sparsity: sums[3] / k,
            total: sums[4] / k,
            alpha: model.mixture.alpha(&store),
            masked_fraction: sums[5] / k,
            acc_target,
            per_source_acc,
        });
    }

    let final_alpha = model.mixture.alpha(&store);
    Ok(RunOutput {
        record: RunRecord { seed, mode: cfg.mode, rows, final_alpha, failure },
        store,
        model,
    })
}

// ---------------------------------------------------------------------------
// Artifacts
// ---------------------------------------------------------------------------

pub const METRICS_SCHEMA_VERSION: &str = "moda-metrics v1";

/// Render the metrics CSV: a version comment line, the fixed header, one
/// row per epoch.
pub fn metrics_csv(record: &RunRecord) -> String {
    let m = record.num_sources();
    let mut s = String::new();
    let _ = writeln!(s, "# {METRICS_SCHEMA_VERSION}");
    let mut header =
        vec!["epoch".into(), "loss_class".into(), "loss_disc".into(), "loss_cons".into(), "sparsity".into(), "total".into()];
    header.extend((0..m).map(|j| format!("alpha_{j}")));
    header.push("masked_frac".into());
    header.push("acc_target".into());
    header.extend((0..m).map(|j| format!("acc_src_{j}")));
    let _ = writeln!(s, "{}", header.join(","));
    for row in &record.rows {
        let mut fields = vec![
            row.epoch.to_string(),
            row.class_loss.to_string(),
            row.disc_loss.to_string(),
            row.cons_loss.to_string(),
            row.sparsity.to_string(),
            row.total.to_string(),
        ];
        fields.extend(row.alpha.iter().map(|v| v.to_string()));
        fields.push(row.masked_fraction.to_string());
        fields.push(row.acc_target.to_string());
        fields.extend(row.per_source_acc.iter().map(|v| v.to_string()));
        let _ = writeln!(s, "{}", fields.join(","));
    }
    s
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

/// Cross-seed summary text: mean and sample standard deviation of every
/// final-epoch metric, plus run status.
pub fn summary_text(records: &[RunRecord]) -> String {
    let mut s = String::new();
    let failed: Vec<&RunRecord> = records.iter().filter(|r| r.failure.is_some()).collect();
    let _ = writeln!(s, "status = {}", if failed.is_empty() { "ok" } else { "failed" });
    let _ = writeln!(s, "runs = {}", records.len());
    let _ = writeln!(
        s,
        "seeds = {}",
        records.iter().map(|r| r.seed.to_string()).collect::<Vec<_>>().join(",")
    );
    for r in &failed {
        let _ = writeln!(s, "failure.seed_{} = {}", r.seed, r.failure.as_ref().unwrap());
    }
    let ok: Vec<&RunRecord> = records.iter().filter(|r| r.failure.is_none()).collect();
    if ok.is_empty() {
        return s;
    }
    let metric = |name: &str, f: &dyn Fn(&EpochMetrics) -> f64, s: &mut String| {
        let vals: Vec<f64> = ok.iter().map(|r| f(r.final_row())).collect();
        let (mean, std) = mean_std(&vals);
        let _ = writeln!(s, "{name}.mean = {mean}");
        let _ = writeln!(s, "{name}.std = {std}");
    };
    metric("acc_target", &|r| r.acc_target, &mut s);
    metric("loss_class", &|r| r.class_loss, &mut s);
    metric("loss_disc", &|r| r.disc_loss, &mut s);
    metric("loss_cons", &|r| r.cons_loss, &mut s);
    metric("sparsity", &|r| r.sparsity, &mut s);
    metric("total", &|r| r.total, &mut s);
    metric("masked_frac", &|r| r.masked_fraction, &mut s);
    let peak: Vec<f64> = ok
        .iter()
        .map(|r| r.rows.iter().map(|row| row.acc_target).fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let (mean, std) = mean_std(&peak);
    let _ = writeln!(s, "acc_target_peak.mean = {mean}");
    let _ = writeln!(s, "acc_target_peak.std = {std}");
    for j in 0..ok[0].num_sources() {
        metric(&format!("alpha_{j}"), &|r| r.alpha[j], &mut s);
        metric(&format!("acc_src_{j}"), &|r| r.per_source_acc[j], &mut s);
    }
    s
}

/// Run `repeat` seeds (seed, seed+1, ..) in parallel workers, write one
/// metrics CSV and checkpoint per seed plus a shared summary.
pub fn run_to_dir(cfg: &TrainConfig, seed: u64, repeat: usize, out: &Path) -> Result<Vec<RunRecord>> {
    std::fs::create_dir_all(out).map_err(|e| CliError::Runtime(e.to_string()))?;
    let seeds: Vec<u64> = (0..repeat as u64).map(|k| seed + k).collect();
    let outputs: Vec<Result<RunOutput>> = if seeds.len() > 1 {
        use rayon::prelude::*;
        seeds.par_iter().map(|&s| run_experiment(cfg, s)).collect()
    } else {
        seeds.iter().map(|&s| run_experiment(cfg, s)).collect()
    };

    let mut records = Vec::new();
    for out_result in outputs {
        let output = out_result?;
        let csv_path = out.join(format!("metrics_seed{}.csv", output.record.seed));
        std::fs::write(&csv_path, metrics_csv(&output.record))
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        let ckpt_path = out.join(format!("checkpoint_seed{}.bin", output.record.seed));
        save_checkpoint(&output.store, &ckpt_path)
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        records.push(output.record);
    }
    std::fs::write(out.join("summary.txt"), summary_text(&records))
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    std::fs::write(out.join("config.conf"), cfg.serialize())
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    if records.iter().any(|r| r.failure.is_some()) {
        let msgs: Vec<String> = records
            .iter()
            .filter_map(|r| r.failure.as_ref().map(|f| format!("seed {}: {f}", r.seed)))
            .collect();
        return Err(CliError::Runtime(format!("run marked failed: {}", msgs.join("; "))));
    }
    Ok(records)
}
