//! The `bound` subcommand: evaluate every term of the target-risk bound
//! for a chosen alpha and write the report as JSON.

use crate::config::{Result, TrainConfig};
use crate::runner::build_datasets;
use crate::CliError;
use moda_core::divergence::{bound_report, BoundReport, RiskHypothesis};
use moda_core::moda::{ModaModel, ModelArch};
use moda_core::nn::{load_checkpoint, ParamStore};
use moda_core::rng::stream_rng;
use std::path::Path;

/// Where the mixture weights for the report come from.
#[derive(Debug, Clone, PartialEq)]
pub enum AlphaSource {
    Uniform,
    Explicit(Vec<f64>),
    FromCheckpoint,
}

impl AlphaSource {
    /// `uniform`, `from_checkpoint`, or `explicit:0.2,0.3,0.5`.
    pub fn parse(s: &str) -> Result<Self> {
        if s == "uniform" {
            return Ok(AlphaSource::Uniform);
        }
        if s == "from_checkpoint" {
            return Ok(AlphaSource::FromCheckpoint);
        }
        if let Some(rest) = s.strip_prefix("explicit:") {
            let alpha: Vec<f64> = rest
                .split(',')
                .map(|p| {
                    p.trim()
                        .parse()
                        .map_err(|_| CliError::Config(format!("bad alpha component {p:?}")))
                })
                .collect::<Result<_>>()?;
            return Ok(AlphaSource::Explicit(alpha));
        }
        Err(CliError::Config(format!(
            "alpha source must be uniform, from_checkpoint, or explicit:<list>; got {s:?}"
        )))
    }
}

/// Rebuild the model architecture and load a checkpoint into it.
fn model_from_checkpoint(
    arch: &ModelArch,
    input_dim: usize,
    classes: usize,
    num_sources: usize,
    path: &Path,
) -> Result<(ModaModel, ParamStore)> {
    let mut store = ParamStore::new();
    let model = ModaModel::new(
        &mut store,
        arch,
        input_dim,
        classes,
        num_sources,
        false,
        &mut stream_rng(0, 0, 0),
    )
    .map_err(|e| CliError::Config(e.to_string()))?;
    load_checkpoint(&mut store, path).map_err(|e| CliError::Config(e.to_string()))?;
    Ok((model, store))
}

/// Assemble the report. The lambda term is oracle-only: requesting it
/// without target oracle labels is refused outright.
pub fn run_bound(
    cfg: &TrainConfig,
    seed: u64,
    alpha_source: &AlphaSource,
    checkpoint: Option<&Path>,
    include_lambda: bool,
) -> Result<BoundReport> {
    let pack = build_datasets(cfg, seed)?;
    let num_sources = pack.sources.len();
    let classes = pack.sources[0].num_classes();
    let input_dim = pack.target_train.dim();

    if include_lambda && pack.target_train.oracle_labels().is_none() {
        return Err(CliError::Config(
            "lambda_hat is oracle-only: the target has no oracle labels, so the request is \
             refused (drop --lambda or use a generated dataset)"
                .into(),
        ));
    }

    let loaded = match (alpha_source, checkpoint) {
        (AlphaSource::FromCheckpoint, None) => {
            return Err(CliError::Config(
                "--alpha from_checkpoint requires --checkpoint <path>".into(),
            ))
        }
        (_, Some(path)) => {
            Some(model_from_checkpoint(&cfg.arch, input_dim, classes, num_sources, path)?)
        }
        (_, None) => None,
    };

    let alpha: Vec<f64> = match alpha_source {
        AlphaSource::Uniform => vec![1.0 / num_sources as f64; num_sources],
        AlphaSource::Explicit(a) => {
            if a.len() != num_sources {
                return Err(CliError::Config(format!(
                    "explicit alpha has {} components for {} sources",
                    a.len(),
                    num_sources
                )));
            }
            a.clone()
        }
        AlphaSource::FromCheckpoint => {
            let (model, store) = loaded.as_ref().unwrap();
            model.mixture.alpha(store)
        }
    };

    let hypothesis = match &loaded {
        Some((model, store)) => RiskHypothesis::Model(model, store),
        None => RiskHypothesis::SourceProbe,
    };

    bound_report(
        &pack.sources,
        &pack.target_train,
        &alpha,
        cfg.vc_dim,
        cfg.delta,
        &cfg.probe,
        seed,
        include_lambda,
        hypothesis,
    )
    .map_err(|e| CliError::Runtime(e.to_string()))
}

/// Deterministic JSON rendering of the report.
pub fn report_json(report: &BoundReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}
