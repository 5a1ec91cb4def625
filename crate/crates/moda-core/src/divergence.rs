//! Diagnostics from the generalization theory: the finite-sample terms
//! B_alpha(delta) and V(delta), an empirical H-divergence estimated with a
//! domain-classifier probe, the oracle-only lambda estimate, and
//! Jensen-Shannon label-distribution distances.

use crate::autodiff::Graph;
use crate::data::DomainDataset;
use crate::error::{Error, Result};
use crate::moda::softmax_slice;
use crate::nn::{Mlp, Optimizer, ParamStore};
use crate::rng;
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

fn check_simplex(alpha: &[f64]) -> Result<()> {
    if alpha.is_empty() {
        return Err(Error::InvalidArgument("alpha is empty".into()));
    }
    if alpha.iter().any(|&a| a < 0.0) {
        return Err(Error::InvalidArgument("alpha has negative components".into()));
    }
    let sum: f64 = alpha.iter().sum();
    if (sum - 1.0).abs() > 1e-8 {
        return Err(Error::InvalidArgument(format!("alpha sums to {sum}, expected 1")));
    }
    Ok(())
}

fn check_confidence(n: usize, delta: f64) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidArgument("sample count n must be positive".into()));
    }
    if !(0.0 < delta && delta < 1.0) {
        return Err(Error::InvalidArgument(format!("delta {delta} must lie in (0,1)")));
    }
    Ok(())
}

/// Finite-sample mixture term
/// `B = 2 sqrt( M (2d ln(2(n+1)) + ln(8/delta)) / n * sum_j alpha_j^2 )`.
/// Natural logarithms throughout.
pub fn compute_b(alpha: &[f64], d: usize, n: usize, delta: f64) -> Result<f64> {
    check_simplex(alpha)?;
    check_confidence(n, delta)?;
    let m = alpha.len() as f64;
    let nf = n as f64;
    let sq: f64 = alpha.iter().map(|a| a * a).sum();
    let inner = m * (2.0 * d as f64 * (2.0 * (nf + 1.0)).ln() + (8.0 / delta).ln()) / nf * sq;
    Ok(2.0 * inner.sqrt())
}

/// Finite-sample divergence-estimation term
/// `V = 2 sqrt( (2d ln(2n) + ln(4/delta)) / n )`.
pub fn compute_v(d: usize, n: usize, delta: f64) -> Result<f64> {
    check_confidence(n, delta)?;
    let nf = n as f64;
    let inner = (2.0 * d as f64 * (2.0 * nf).ln() + (4.0 / delta).ln()) / nf;
    Ok(2.0 * inner.sqrt())
}

// ---------------------------------------------------------------------------
// Jensen-Shannon distance
// ---------------------------------------------------------------------------

/// `sqrt(JSD(p, q))` with natural logarithms and `0 ln 0 := 0`. A metric on
/// the simplex, bounded by `sqrt(ln 2)`.
pub fn js_distance(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::ShapeMismatch {
            op: "js_distance",
            details: format!("{} vs {} bins", p.len(), q.len()),
        });
    }
    check_simplex(p)?;
    check_simplex(q)?;
    let mut jsd = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        let mi = 0.5 * (pi + qi);
        if pi > 0.0 {
            jsd += 0.5 * pi * (pi / mi).ln();
        }
        if qi > 0.0 {
            jsd += 0.5 * qi * (qi / mi).ln();
        }
    }
    Ok(jsd.max(0.0).sqrt())
}

/// Normalized class-frequency vector of a labeled dataset.
pub fn label_distribution(ds: &DomainDataset) -> Result<Vec<f64>> {
    let labels = ds.labels().ok_or_else(|| {
        Error::InvalidArgument(format!("domain {} is unlabeled", ds.domain_id()))
    })?;
    let mut counts = vec![0usize; ds.num_classes()];
    for &l in labels {
        counts[l] += 1;
    }
    let n = labels.len() as f64;
    Ok(counts.into_iter().map(|c| c as f64 / n).collect())
}

// ---------------------------------------------------------------------------
// Probe classifiers
// ---------------------------------------------------------------------------

/// Architecture and training budget for the probe classifiers used by the
/// empirical divergence and lambda estimators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        // budget is a knob; 500 epochs is the documented default
        ProbeConfig { hidden: vec![16], epochs: 500, learning_rate: 1.0, batch_size: 32 }
    }
}

/// Train a softmax classifier on (features, labels) with AdaDelta and
/// return it with its store.
fn train_probe(
    features: &Tensor,
    labels: &[usize],
    classes: usize,
    weights: Option<&[f64]>,
    probe: &ProbeConfig,
    seed: u64,
) -> Result<(Mlp, ParamStore)> {
    let mut store = ParamStore::new();
    let mut init_rng = rng::stream_rng(seed, 101, 0);
    let mut dims = vec![features.cols()];
    dims.extend(&probe.hidden);
    dims.push(classes);
    let net = Mlp::new_with_output(&mut store, "probe", &dims, false, &mut init_rng)?;
    let mut optimizer = Optimizer::adadelta(probe.learning_rate);

    let n = features.rows();
    let bs = probe.batch_size.min(n).max(1);
    let batches_per_epoch = (n / bs).max(1);
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..probe.epochs {
        let mut shuffle_rng = rng::stream_rng(seed, 202, epoch as u64);
        order.shuffle(&mut shuffle_rng);
        for b in 0..batches_per_epoch {
            let idx = &order[b * bs..(b + 1) * bs];
            let x = features.gather_rows(idx)?;
            let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let w: Option<Vec<f64>> = weights.map(|ws| idx.iter().map(|&i| ws[i]).collect());

            let mut g = Graph::new();
            let x_node = g.constant(x);
            let mut fwd_rng = rng::stream_rng(seed, 303, (epoch * batches_per_epoch + b) as u64);
            let logits = net.forward(&mut g, &store, x_node, None, &mut fwd_rng)?;
            let lsm = g.log_softmax(logits)?;
            let mut mask_data = vec![0.0; bs * classes];
            for (r, &l) in y.iter().enumerate() {
                let scale = w.as_ref().map(|ws| ws[r]).unwrap_or(1.0);
                mask_data[r * classes + l] = scale;
            }
            let mask = g.constant(Tensor::matrix(bs, classes, mask_data)?);
            let picked = g.mul(lsm, mask)?;
            let s = g.sum(picked);
            let loss = g.scale(s, -1.0 / bs as f64);
            if !g.value(loss).item().is_finite() {
                return Err(Error::NonFinite("probe training loss".into()));
            }
            g.backward(loss)?;
            optimizer.step(&mut store, &g.param_grads())?;
        }
    }
    Ok((net, store))
}

fn probe_error(net: &Mlp, store: &ParamStore, features: &Tensor, labels: &[usize]) -> Result<f64> {
    let logits = net.forward_values(store, features)?;
    let mut wrong = 0usize;
    for (r, &l) in labels.iter().enumerate() {
        let row = logits.row(r);
        let mut best = 0;
        for (i, v) in row.iter().enumerate() {
            if *v > row[best] {
                best = i;
            }
        }
        if best != l {
            wrong += 1;
        }
    }
    Ok(wrong as f64 / labels.len() as f64)
}

/// Empirical H-divergence between two sample populations.
///
/// The larger population is subsampled to the smaller, each side is split
/// 70/30 into probe-train and probe-test, a fresh discriminator probe is
/// trained, and the estimate is `2 (1 - 2 err_test)` with balanced test
/// error, clamped to [0, 2].
pub fn estimate_h_divergence(
    samples_a: &Tensor,
    samples_b: &Tensor,
    probe: &ProbeConfig,
    seed: u64,
) -> Result<f64> {
    if samples_a.rows() == 0 || samples_b.rows() == 0 {
        return Err(Error::InvalidArgument("both sample sets must be non-empty".into()));
    }
    if samples_a.cols() != samples_b.cols() {
        return Err(Error::ShapeMismatch {
            op: "estimate_h_divergence",
            details: format!("{:?} vs {:?}", samples_a.shape(), samples_b.shape()),
        });
    }
    let n = samples_a.rows().min(samples_b.rows());
    let sub_a = subsample(samples_a, n, seed, 1)?;
    let sub_b = subsample(samples_b, n, seed, 2)?;

    let n_train = ((n as f64) * 0.7).floor() as usize;
    let n_train = n_train.clamp(1, n - 1);

    let mut train_feats = Vec::new();
    let mut train_labels: Vec<usize> = Vec::new();
    let mut test_feats_a = Vec::new();
    let mut test_feats_b = Vec::new();
    for i in 0..n {
        if i < n_train {
            train_feats.extend_from_slice(sub_a.row(i));
            train_labels.push(0);
            train_feats.extend_from_slice(sub_b.row(i));
            train_labels.push(1);
        } else {
            test_feats_a.extend_from_slice(sub_a.row(i));
            test_feats_b.extend_from_slice(sub_b.row(i));
        }
    }
    let dim = samples_a.cols();
    let train = Tensor::matrix(2 * n_train, dim, train_feats)?;
    let n_test = n - n_train;
    let test_a = Tensor::matrix(n_test, dim, test_feats_a)?;
    let test_b = Tensor::matrix(n_test, dim, test_feats_b)?;

    let (net, store) = train_probe(&train, &train_labels, 2, None, probe, seed)?;
    let err_a = probe_error(&net, &store, &test_a, &vec![0; n_test])?;
    let err_b = probe_error(&net, &store, &test_b, &vec![1; n_test])?;
    let err = 0.5 * (err_a + err_b);
    Ok((2.0 * (1.0 - 2.0 * err)).clamp(0.0, 2.0))
}

fn subsample(t: &Tensor, n: usize, seed: u64, tag: u64) -> Result<Tensor> {
    if t.rows() == n {
        return Ok(t.clone());
    }
    let mut idx: Vec<usize> = (0..t.rows()).collect();
    let mut r = rng::stream_rng(seed, 404, tag);
    idx.shuffle(&mut r);
    idx.truncate(n);
    t.gather_rows(&idx)
}

/// Oracle estimate of the minimum combined risk: trains a probe minimizing
/// `sum_j alpha_j CE(S_j) + CE(T)` with the target's oracle labels and
/// returns its alpha-weighted source 0-1 risk plus target 0-1 risk.
pub fn estimate_lambda(
    sources: &[DomainDataset],
    target: &DomainDataset,
    alpha: &[f64],
    probe: &ProbeConfig,
    seed: u64,
) -> Result<f64> {
    check_simplex(alpha)?;
    if alpha.len() != sources.len() {
        return Err(Error::InvalidArgument(format!(
            "{} alpha components for {} sources",
            alpha.len(),
            sources.len()
        )));
    }
    let target_labels = target.oracle_labels().or_else(|| target.labels()).ok_or_else(|| {
        Error::InvalidArgument(
            "lambda estimation is oracle-only: target oracle labels are required".into(),
        )
    })?;

    // stack all domains; per-sample weight = alpha_j (normalized per domain
    // batch share) for sources, 1 for the target
    let classes = target.num_classes();
    let dim = target.dim();
    let mut feats = Vec::new();
    let mut labels = Vec::new();
    let mut weights = Vec::new();
    for (j, ds) in sources.iter().enumerate() {
        let ls = ds
            .labels()
            .ok_or_else(|| Error::InvalidArgument(format!("source {j} unlabeled")))?;
        for (i, &l) in ls.iter().enumerate() {
            feats.extend_from_slice(ds.features().row(i));
            labels.push(l);
            weights.push(alpha[j] * target_labels.len() as f64 / ds.n() as f64);
        }
    }
    for (i, &l) in target_labels.iter().enumerate() {
        feats.extend_from_slice(target.features().row(i));
        labels.push(l);
        weights.push(1.0);
    }
    let stacked = Tensor::matrix(labels.len(), dim, feats)?;
    let (net, store) = train_probe(&stacked, &labels, classes, Some(&weights), probe, seed)?;

    let mut weighted_source_risk = 0.0;
    for (j, ds) in sources.iter().enumerate() {
        let err = probe_error(&net, &store, ds.features(), ds.labels().unwrap())?;
        weighted_source_risk += alpha[j] * err;
    }
    let target_risk = probe_error(&net, &store, target.features(), target_labels)?;
    Ok(weighted_source_risk + target_risk)
}

// ---------------------------------------------------------------------------
// Bound report
// ---------------------------------------------------------------------------

/// Provenance recorded alongside every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundProvenance {
    pub seed: u64,
    pub probe: ProbeConfig,
    /// The VC dimension is a user-supplied surrogate, not a computed value.
    pub vc_dim_is_surrogate: bool,
}

/// Evaluated bound terms for a given alpha and sample budget. `bound_total`
/// is `weighted_source_risk + h_divergence_estimate / 2 + lambda_hat +
/// b_alpha + v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub alpha: Vec<f64>,
    pub num_sources: usize,
    pub vc_dim_surrogate: usize,
    pub n: usize,
    pub delta: f64,
    pub b_alpha: f64,
    pub v: f64,
    pub h_divergence_estimate: f64,
    pub lambda_hat: Option<f64>,
    pub weighted_source_risk: f64,
    pub bound_total: f64,
    pub provenance: BoundProvenance,
}

impl BoundReport {
    /// Reassemble the right-hand side from the stored terms.
    pub fn reassembled_total(&self) -> f64 {
        self.weighted_source_risk
            + 0.5 * self.h_divergence_estimate
            + self.lambda_hat.unwrap_or(0.0)
            + self.b_alpha
            + self.v
    }
}

/// Which hypothesis instantiates the weighted source risk.
pub enum RiskHypothesis<'a> {
    /// Train a fresh probe on the alpha-weighted source mixture.
    SourceProbe,
    /// Use an existing classifier (extractor + classifier from a checkpoint).
    Model(&'a crate::moda::ModaModel, &'a ParamStore),
}

/// Assemble a full report: B and V from the closed forms, the H-divergence
/// from a probe against the alpha-weighted source mixture, the optional
/// oracle lambda, and the weighted empirical source risk of the chosen
/// hypothesis.
#[allow(clippy::too_many_arguments)]
pub fn bound_report(
    sources: &[DomainDataset],
    target: &DomainDataset,
    alpha: &[f64],
    vc_dim_surrogate: usize,
    delta: f64,
    probe: &ProbeConfig,
    seed: u64,
    include_lambda: bool,
    hypothesis: RiskHypothesis<'_>,
) -> Result<BoundReport> {
    check_simplex(alpha)?;
    if sources.len() != alpha.len() {
        return Err(Error::InvalidArgument(format!(
            "{} alpha components for {} sources",
            alpha.len(),
            sources.len()
        )));
    }
    let n = target.n();
    let b_alpha = compute_b(alpha, vc_dim_surrogate, n, delta)?;
    let v = compute_v(vc_dim_surrogate, n, delta)?;

    let mixture = sample_alpha_mixture(sources, alpha, n, seed)?;
    let h_divergence_estimate =
        estimate_h_divergence(&mixture, target.features(), probe, rng::sub_seed(seed, 7, 0))?;

    let lambda_hat = if include_lambda {
        Some(estimate_lambda(sources, target, alpha, probe, rng::sub_seed(seed, 7, 1))?)
    } else {
        None
    };

    let weighted_source_risk = match hypothesis {
        RiskHypothesis::Model(model, store) => {
            let mut risk = 0.0;
            for (j, ds) in sources.iter().enumerate() {
                let labels = ds.labels().ok_or_else(|| {
                    Error::InvalidArgument(format!("source {j} unlabeled"))
                })?;
                let (pred, _) = model.predict(store, ds.features())?;
                let wrong =
                    pred.iter().zip(labels).filter(|(p, l)| p != l).count() as f64;
                risk += alpha[j] * wrong / labels.len() as f64;
            }
            risk
        }
        RiskHypothesis::SourceProbe => {
            let classes = sources[0].num_classes();
            let dim = sources[0].dim();
            let mut feats = Vec::new();
            let mut labels = Vec::new();
            let mut weights = Vec::new();
            let total: usize = sources.iter().map(|s| s.n()).sum();
            for (j, ds) in sources.iter().enumerate() {
                let ls = ds.labels().ok_or_else(|| {
                    Error::InvalidArgument(format!("source {j} unlabeled"))
                })?;
                for (i, &l) in ls.iter().enumerate() {
                    feats.extend_from_slice(ds.features().row(i));
                    labels.push(l);
                    weights.push(alpha[j] * total as f64 / ds.n() as f64);
                }
            }
            let stacked = Tensor::matrix(labels.len(), dim, feats)?;
            let (net, store) = train_probe(
                &stacked,
                &labels,
                classes,
                Some(&weights),
                probe,
                rng::sub_seed(seed, 7, 2),
            )?;
            let mut risk = 0.0;
            for (j, ds) in sources.iter().enumerate() {
                let err = probe_error(&net, &store, ds.features(), ds.labels().unwrap())?;
                risk += alpha[j] * err;
            }
            risk
        }
    };

    let mut report = BoundReport {
        alpha: alpha.to_vec(),
        num_sources: sources.len(),
        vc_dim_surrogate,
        n,
        delta,
        b_alpha,
        v,
        h_divergence_estimate,
        lambda_hat,
        weighted_source_risk,
        bound_total: 0.0,
        provenance: BoundProvenance {
            seed,
            probe: probe.clone(),
            vc_dim_is_surrogate: true,
        },
    };
    report.bound_total = report.reassembled_total();
    Ok(report)
}

/// Draw `n` samples from the alpha-weighted mixture of source feature
/// distributions: pick a domain by alpha, then a uniform row.
pub fn sample_alpha_mixture(
    sources: &[DomainDataset],
    alpha: &[f64],
    n: usize,
    seed: u64,
) -> Result<Tensor> {
    check_simplex(alpha)?;
    let dim = sources[0].dim();
    let mut r = rng::stream_rng(seed, 505, 0);
    let mut data = Vec::with_capacity(n * dim);
    for _ in 0..n {
        let u: f64 = rand::Rng::gen(&mut r);
        let mut acc = 0.0;
        let mut j = sources.len() - 1;
        for (k, &a) in alpha.iter().enumerate() {
            acc += a;
            if u < acc {
                j = k;
                break;
            }
        }
        let row = rand::Rng::gen_range(&mut r, 0..sources[j].n());
        data.extend_from_slice(sources[j].features().row(row));
    }
    Tensor::matrix(n, dim, data)
}

/// Softmax of a stored beta vector, for building alpha from checkpoints.
pub fn alpha_from_beta(beta: &[f64]) -> Vec<f64> {
    softmax_slice(beta)
}
