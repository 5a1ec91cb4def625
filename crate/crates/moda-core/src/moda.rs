//! The adversarial mixture objective and training step.
//!
//! One scalar loss is built per step:
//!
//! ```text
//! total = L_class(alpha, g, h) + mu_c L_cons(g, h)
//!       + mu_d L_disc(grl(alpha), grl(g), d) + mu_s |alpha|^2
//! ```
//!
//! Gradient reversal sits at the input of the domain discriminator and on
//! the alpha path feeding the discriminator loss, so a single plain descent
//! step over all parameters realizes the minimax: the discriminator
//! descends its own cross-entropy while the extractor and the mixture
//! ascend it. The reported [`LossBreakdown::total`] uses the conventional
//! sign (`- mu_d * disc`).

use crate::augment::AugmentedBatch;
use crate::autodiff::{Graph, NodeId};
use crate::data::{BatchBundle, DomainDataset};
use crate::error::{Error, Result};
use crate::nn::{Mlp, Optimizer, ParamId, ParamStore};
use crate::tensor::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

// ---------------------------------------------------------------------------
// Mixture weights
// ---------------------------------------------------------------------------

/// Unconstrained beta with alpha = softmax(beta). Alpha is always derived
/// on demand, never cached.
#[derive(Debug, Clone)]
pub struct MixtureWeights {
    beta: ParamId,
    num_domains: usize,
}

impl MixtureWeights {
    /// Beta initialized uniformly at random in [0,1]^M.
    pub fn new(store: &mut ParamStore, num_domains: usize, rng: &mut ChaCha8Rng) -> Self {
        let beta = Tensor::from_vec((0..num_domains).map(|_| rng.gen::<f64>()).collect());
        MixtureWeights { beta: store.register("mixture.beta", beta), num_domains }
    }

    /// Fixed uniform mixture: beta = 0, excluded from training by callers.
    pub fn uniform(store: &mut ParamStore, num_domains: usize) -> Self {
        let beta = Tensor::zeros(vec![num_domains]);
        MixtureWeights { beta: store.register("mixture.beta", beta), num_domains }
    }

    pub fn beta_id(&self) -> ParamId {
        self.beta
    }

    pub fn num_domains(&self) -> usize {
        self.num_domains
    }

    /// Current alpha values.
    pub fn alpha(&self, store: &ParamStore) -> Vec<f64> {
        softmax_slice(store.value(self.beta).data())
    }

    /// Alpha as a differentiable graph node rooted at the beta leaf.
    pub fn alpha_node(&self, g: &mut Graph, store: &ParamStore) -> Result<NodeId> {
        let beta = g.param(store, self.beta);
        g.softmax(beta)
    }
}

pub(crate) fn softmax_slice(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

/// Layer widths for the three networks.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelArch {
    pub extractor_hidden: Vec<usize>,
    pub classifier_hidden: Vec<usize>,
    pub discriminator_hidden: Vec<usize>,
}

impl Default for ModelArch {
    fn default() -> Self {
        ModelArch {
            extractor_hidden: vec![64, 64],
            classifier_hidden: vec![32],
            discriminator_hidden: vec![32],
        }
    }
}

/// Feature extractor, task classifier, domain discriminator, and the
/// learnable source mixture.
#[derive(Debug, Clone)]
pub struct ModaModel {
    pub extractor: Mlp,
    pub classifier: Mlp,
    pub discriminator: Mlp,
    pub mixture: MixtureWeights,
    pub num_classes: usize,
    pub input_dim: usize,
}

impl ModaModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        arch: &ModelArch,
        input_dim: usize,
        num_classes: usize,
        num_sources: usize,
        uniform_mixture: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if arch.extractor_hidden.is_empty() {
            return Err(Error::InvalidArgument("extractor needs at least one layer".into()));
        }
        let feature_dim = *arch.extractor_hidden.last().unwrap();

        let mut dims = vec![input_dim];
        dims.extend(&arch.extractor_hidden);
        // every extractor layer is a relu feature map
        let extractor = Mlp::new_with_output(store, "extractor", &dims, true, rng)?;

        let mut cdims = vec![feature_dim];
        cdims.extend(&arch.classifier_hidden);
        cdims.push(num_classes);
        let classifier = Mlp::new_with_output(store, "classifier", &cdims, false, rng)?;

        let mut ddims = vec![feature_dim];
        ddims.extend(&arch.discriminator_hidden);
        ddims.push(2);
        let discriminator = Mlp::new_with_output(store, "discriminator", &ddims, false, rng)?;

        let mixture = if uniform_mixture {
            MixtureWeights::uniform(store, num_sources)
        } else {
            MixtureWeights::new(store, num_sources, rng)
        };

        Ok(ModaModel { extractor, classifier, discriminator, mixture, num_classes, input_dim })
    }

    pub fn feature_dim(&self) -> usize {
        self.extractor.output_dim()
    }

    /// Deterministic class logits (no dropout, no graph).
    pub fn classify_values(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        let feats = self.extractor.forward_values(store, x)?;
        self.classifier.forward_values(store, &feats)
    }

    /// Argmax class predictions with their confidences.
    pub fn predict(&self, store: &ParamStore, x: &Tensor) -> Result<(Vec<usize>, Vec<f64>)> {
        let logits = self.classify_values(store, x)?;
        let mut labels = Vec::with_capacity(logits.rows());
        let mut confidences = Vec::with_capacity(logits.rows());
        for r in 0..logits.rows() {
            let probs = softmax_slice(logits.row(r));
            let (best, conf) = argmax(&probs);
            labels.push(best);
            confidences.push(conf);
        }
        Ok((labels, confidences))
    }

    /// Parameters of extractor, classifier, discriminator, and beta.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.extractor.param_ids();
        ids.extend(self.classifier.param_ids());
        ids.extend(self.discriminator.param_ids());
        ids.push(self.mixture.beta_id());
        ids
    }
}

fn argmax(xs: &[f64]) -> (usize, f64) {
    let mut best = 0;
    for (i, v) in xs.iter().enumerate() {
        if *v > xs[best] {
            best = i;
        }
    }
    (best, xs[best])
}

/// Fraction of rows predicted correctly; labels come from the dataset's
/// own labels or, for sealed targets, the oracle accessor.
pub fn accuracy(model: &ModaModel, store: &ParamStore, ds: &DomainDataset) -> Result<f64> {
    let labels = ds
        .labels()
        .or_else(|| ds.oracle_labels())
        .ok_or_else(|| Error::InvalidArgument(format!("domain {} unlabeled", ds.domain_id())))?;
    let (pred, _) = model.predict(store, ds.features())?;
    let hits = pred.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

// ---------------------------------------------------------------------------
// Loss terms
// ---------------------------------------------------------------------------

/// Weights and knobs for one optimization step.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveConfig {
    pub mu_d: f64,
    pub mu_s: f64,
    pub mu_c: f64,
    pub tau: f64,
    pub grl_lambda: f64,
    /// When false, beta receives no update (fixed-mixture baselines).
    pub train_beta: bool,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        ObjectiveConfig {
            mu_d: 0.2,
            mu_s: 0.1,
            mu_c: 0.5,
            tau: 0.9,
            grl_lambda: 1.0,
            train_beta: true,
        }
    }
}

/// All loss values for one step, evaluated before the parameter update.
/// `total` follows the written objective's sign convention
/// (`class + mu_c cons - mu_d disc + mu_s |alpha|^2`).
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub class_loss: f64,
    pub disc_loss: f64,
    pub cons_loss: f64,
    pub sparsity_term: f64,
    pub total: f64,
    pub per_domain_class_losses: Vec<f64>,
    pub masked_fraction: f64,
}

/// One-hot row mask used to pick per-label entries out of log-probability
/// matrices.
fn label_mask(rows: usize, cols: usize, labels: &[usize]) -> Result<Tensor> {
    let mut data = vec![0.0; rows * cols];
    for (r, &l) in labels.iter().enumerate() {
        if l >= cols {
            return Err(Error::LabelOutOfRange { label: l, classes: cols });
        }
        data[r * cols + l] = 1.0;
    }
    Tensor::matrix(rows, cols, data)
}

/// Sum of log-probabilities at the given label per row: builds
/// `sum(log_probs * onehot(labels))`.
fn picked_sum(g: &mut Graph, log_probs: NodeId, labels: &[usize]) -> Result<NodeId> {
    let v = g.value(log_probs);
    let mask = g.constant(label_mask(v.rows(), v.cols(), labels)?);
    let picked = g.mul(log_probs, mask)?;
    Ok(g.sum(picked))
}

struct ClassTerm {
    node: NodeId,
    per_domain: Vec<f64>,
}

/// `-(1/m) sum_j alpha_j sum_{(x,y) in S_j} log p(y|x)` over precomputed
/// per-source features.
#[allow(clippy::too_many_arguments)]
fn class_term(
    g: &mut Graph,
    store: &ParamStore,
    model: &ModaModel,
    source_features: &[NodeId],
    source_labels: &[Vec<usize>],
    alpha: NodeId,
    m: usize,
    rng: &mut ChaCha8Rng,
) -> Result<ClassTerm> {
    let mut sums = Vec::with_capacity(source_features.len());
    let mut per_domain = Vec::with_capacity(source_features.len());
    for (feats, labels) in source_features.iter().zip(source_labels) {
        let logits = model.classifier.forward(g, store, *feats, None, rng)?;
        let lsm = g.log_softmax(logits)?;
        let s = picked_sum(g, lsm, labels)?;
        per_domain.push(-g.value(s).item() / m as f64);
        sums.push(s);
    }
    let svec = g.concat(&sums)?;
    let weighted = g.mul(alpha, svec)?;
    let total = g.sum(weighted);
    Ok(ClassTerm { node: g.scale(total, -1.0 / m as f64), per_domain })
}

/// Discriminator cross-entropy with gradient reversal already inserted on
/// the feature inputs and on the alpha path:
/// `-(1/m) sum_j grl(alpha)_j sum_x log p(d=0|grl(z)) - (1/m) sum_x log p(d=1|grl(z))`.
#[allow(clippy::too_many_arguments)]
fn disc_term(
    g: &mut Graph,
    store: &ParamStore,
    model: &ModaModel,
    source_features: &[NodeId],
    target_features: NodeId,
    alpha: NodeId,
    grl_lambda: f64,
    m: usize,
    rng: &mut ChaCha8Rng,
) -> Result<NodeId> {
    let mut source_sums = Vec::with_capacity(source_features.len());
    for feats in source_features {
        let rev = g.gradient_reversal(*feats, grl_lambda);
        let logits = model.discriminator.forward(g, store, rev, None, rng)?;
        let lsm = g.log_softmax(logits)?;
        let rows = g.value(lsm).rows();
        // p(d=0 | source sample)
        let s = picked_sum(g, lsm, &vec![0; rows])?;
        source_sums.push(s);
    }
    let rev_t = g.gradient_reversal(target_features, grl_lambda);
    let t_logits = model.discriminator.forward(g, store, rev_t, None, rng)?;
    let t_lsm = g.log_softmax(t_logits)?;
    let t_rows = g.value(t_lsm).rows();
    // p(d=1 | target sample)
    let t_sum = picked_sum(g, t_lsm, &vec![1; t_rows])?;

    let svec = g.concat(&source_sums)?;
    let alpha_rev = g.gradient_reversal(alpha, grl_lambda);
    let weighted = g.mul(alpha_rev, svec)?;
    let weighted_sum = g.sum(weighted);
    let combined = g.add(weighted_sum, t_sum)?;
    Ok(g.scale(combined, -1.0 / m as f64))
}

struct ConsTerm {
    node: NodeId,
    masked_fraction: f64,
}

/// Confidence-thresholded consistency loss. Pseudo-labels come from a
/// deterministic pass (no augmentation, no dropout) and are detached; rows
/// whose confidence is at most tau contribute nothing; the sum is divided
/// by the full batch size m.
fn cons_term(
    g: &mut Graph,
    store: &ParamStore,
    model: &ModaModel,
    target_batch: &Tensor,
    augmented: &AugmentedBatch,
    tau: f64,
    rng: &mut ChaCha8Rng,
) -> Result<ConsTerm> {
    if tau < 0.0 {
        return Err(Error::InvalidArgument("tau must be non-negative".into()));
    }
    let m = target_batch.rows();
    let (pseudo, confidence) = model.predict(store, target_batch)?;
    let passing: Vec<usize> = (0..m).filter(|&i| confidence[i] > tau).collect();
    let masked_fraction = passing.len() as f64 / m as f64;
    if passing.is_empty() {
        return Ok(ConsTerm { node: g.constant(Tensor::scalar(0.0)), masked_fraction });
    }

    let ext_rates = augmented.dropout_rate.map(|p| vec![p; model.extractor.layers.len()]);
    let cls_rates = augmented.dropout_rate.map(|p| vec![p; model.classifier.layers.len()]);
    let x = g.constant(augmented.features.clone());
    let feats = model.extractor.forward(g, store, x, ext_rates.as_deref(), rng)?;
    let logits = model.classifier.forward(g, store, feats, cls_rates.as_deref(), rng)?;
    let lsm = g.log_softmax(logits)?;
    let selected = g.select_rows(lsm, &passing)?;
    let labels: Vec<usize> = passing.iter().map(|&i| pseudo[i]).collect();
    let s = picked_sum(g, selected, &labels)?;
    Ok(ConsTerm { node: g.scale(s, -1.0 / m as f64), masked_fraction })
}

/// `mu_s * sum_j alpha_j^2` as a graph node.
fn sparsity_node(g: &mut Graph, alpha: NodeId, mu_s: f64) -> Result<NodeId> {
    let sq = g.mul(alpha, alpha)?;
    let s = g.sum(sq);
    Ok(g.scale(s, mu_s))
}

// ---------------------------------------------------------------------------
// Standalone loss operations
// ---------------------------------------------------------------------------

/// Mixture-weighted classification loss over the source batches.
pub fn class_loss(
    g: &mut Graph,
    store: &ParamStore,
    model: &ModaModel,
    batches: &BatchBundle,
    rng: &mut ChaCha8Rng,
) -> Result<NodeId> {
    let alpha = model.mixture.alpha_node(g, store)?;
    let feats = source_feature_nodes(g, store, model, batches, rng)?;
    Ok(class_term(g, store, model, &feats, &batches.source_labels, alpha, batches.m, rng)?.node)
}

/// Discriminator loss with both gradient reversal sites in place.
pub fn disc_loss(
    g: &mut Graph,
    store: &ParamStore,
    model: &ModaModel,
    batches: &BatchBundle,
    grl_lambda: f64,
    rng: &mut ChaCha8Rng,
) -> Result<NodeId> {
    let alpha = model.mixture.alpha_node(g, store)?;
    let feats = source_feature_nodes(g, store, model, batches, rng)?;
    let t = g.constant(batches.target_features.clone());
    let t_feats = model.extractor.forward(g, store, t, None, rng)?;
    disc_term(g, store, model, &feats, t_feats, alpha, grl_lambda, batches.m, rng)
}

/// Consistency loss for a target batch and its augmented counterpart.
/// Returns the loss node and the fraction of rows that passed tau.
pub fn consistency_loss(
    g: &mut Graph,
    store: &ParamStore,
    model: &ModaModel,
    target_batch: &Tensor,
    augmented: &AugmentedBatch,
    tau: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(NodeId, f64)> {
    let term = cons_term(g, store, model, target_batch, augmented, tau, rng)?;
    Ok((term.node, term.masked_fraction))
}

/// Sparsity penalty `mu_s * |alpha|_2^2`.
pub fn sparsity_term(
    g: &mut Graph,
    store: &ParamStore,
    mixture: &MixtureWeights,
    mu_s: f64,
) -> Result<NodeId> {
    if mu_s < 0.0 {
        return Err(Error::InvalidArgument("mu_s must be non-negative".into()));
    }
    let alpha = mixture.alpha_node(g, store)?;
    sparsity_node(g, alpha, mu_s)
}

fn source_feature_nodes(
    g: &mut Graph,
    store: &ParamStore,
    model: &ModaModel,
    batches: &BatchBundle,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<NodeId>> {
    batches
        .source_features
        .iter()
        .map(|x| {
            let leaf = g.constant(x.clone());
            model.extractor.forward(g, store, leaf, None, rng)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Assembled objective and training step
// ---------------------------------------------------------------------------

pub(crate) struct Objective {
    pub total_impl: NodeId,
    pub breakdown: LossBreakdown,
}

/// Build the full objective with shared feature and alpha nodes. The graph
/// root `total_impl` carries `+mu_d * disc` because the reversal layers
/// flip the adversarial signs during backpropagation.
pub(crate) fn build_objective(
    g: &mut Graph,
    store: &ParamStore,
    model: &ModaModel,
    batches: &BatchBundle,
    cfg: &ObjectiveConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Objective> {
    if batches.num_sources() != model.mixture.num_domains() {
        return Err(Error::InvalidArgument(format!(
            "{} source batches for {} mixture components",
            batches.num_sources(),
            model.mixture.num_domains()
        )));
    }
    let identity = AugmentedBatch { features: batches.target_features.clone(), dropout_rate: None };
    let augmented = batches.augmented.as_ref().unwrap_or(&identity);

    let alpha = model.mixture.alpha_node(g, store)?;
    let source_feats = source_feature_nodes(g, store, model, batches, rng)?;
    let t = g.constant(batches.target_features.clone());
    let target_feats = model.extractor.forward(g, store, t, None, rng)?;

    let class = class_term(
        g,
        store,
        model,
        &source_feats,
        &batches.source_labels,
        alpha,
        batches.m,
        rng,
    )?;
    let disc = disc_term(
        g,
        store,
        model,
        &source_feats,
        target_feats,
        alpha,
        cfg.grl_lambda,
        batches.m,
        rng,
    )?;
    let cons = cons_term(g, store, model, &batches.target_features, augmented, cfg.tau, rng)?;
    let sparsity = sparsity_node(g, alpha, cfg.mu_s)?;

    let cons_scaled = g.scale(cons.node, cfg.mu_c);
    let disc_scaled = g.scale(disc, cfg.mu_d);
    let a = g.add(class.node, cons_scaled)?;
    let b = g.add(a, disc_scaled)?;
    let total_impl = g.add(b, sparsity)?;

    let class_v = g.value(class.node).item();
    let disc_v = g.value(disc).item();
    let cons_v = g.value(cons.node).item();
    let sparsity_v = g.value(sparsity).item();
    let breakdown = LossBreakdown {
        class_loss: class_v,
        disc_loss: disc_v,
        cons_loss: cons_v,
        sparsity_term: sparsity_v,
        total: class_v + cfg.mu_c * cons_v - cfg.mu_d * disc_v + sparsity_v,
        per_domain_class_losses: class.per_domain,
        masked_fraction: cons.masked_fraction,
    };
    Ok(Objective { total_impl, breakdown })
}

/// Evaluate all loss terms without updating anything.
pub fn evaluate_losses(
    store: &ParamStore,
    model: &ModaModel,
    batches: &BatchBundle,
    cfg: &ObjectiveConfig,
    rng: &mut ChaCha8Rng,
) -> Result<LossBreakdown> {
    let mut g = Graph::new();
    Ok(build_objective(&mut g, store, model, batches, cfg, rng)?.breakdown)
}

/// Build the objective, backpropagate, and return the per-parameter
/// gradients that a step would apply, without applying them.
pub fn objective_gradients(
    store: &ParamStore,
    model: &ModaModel,
    batches: &BatchBundle,
    cfg: &ObjectiveConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(LossBreakdown, std::collections::HashMap<ParamId, Tensor>)> {
    let mut g = Graph::new();
    let objective = build_objective(&mut g, store, model, batches, cfg, rng)?;
    g.backward(objective.total_impl)?;
    let mut grads = g.param_grads();
    if !cfg.train_beta {
        grads.remove(&model.mixture.beta_id());
    }
    Ok((objective.breakdown, grads))
}

/// One optimization step: build the objective, backpropagate, and apply the
/// optimizer to every trainable parameter. Any non-finite loss or gradient
/// aborts the step with the model untouched, naming the offending term.
pub fn train_step(
    model: &ModaModel,
    store: &mut ParamStore,
    optimizer: &mut Optimizer,
    batches: &BatchBundle,
    cfg: &ObjectiveConfig,
    rng: &mut ChaCha8Rng,
) -> Result<LossBreakdown> {
    let mut g = Graph::new();
    let objective = build_objective(&mut g, store, model, batches, cfg, rng)?;

    let b = &objective.breakdown;
    for (name, v) in [
        ("class_loss", b.class_loss),
        ("disc_loss", b.disc_loss),
        ("cons_loss", b.cons_loss),
        ("sparsity_term", b.sparsity_term),
    ] {
        if !v.is_finite() {
            return Err(Error::NonFinite(name.into()));
        }
    }

    g.backward(objective.total_impl)?;
    let mut grads = g.param_grads();
    if !cfg.train_beta {
        grads.remove(&model.mixture.beta_id());
    }
    optimizer.step(store, &grads)?;
    Ok(objective.breakdown)
}

// ---------------------------------------------------------------------------
// Training log
// ---------------------------------------------------------------------------

/// One row of the training log. Losses are averaged over the epoch's steps;
/// alpha and the accuracies are measured after the epoch's last step. The
/// epoch-0 row is the pre-training snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub class_loss: f64,
    pub disc_loss: f64,
    pub cons_loss: f64,
    pub sparsity: f64,
    pub total: f64,
    pub alpha: Vec<f64>,
    pub masked_fraction: f64,
    pub acc_target: f64,
    pub per_source_acc: Vec<f64>,
}

/// Epoch-indexed alpha matrix extracted from a training log.
pub fn alpha_trajectory(log: &[EpochMetrics]) -> Result<Vec<Vec<f64>>> {
    if log.is_empty() {
        return Err(Error::InvalidArgument("training log is empty".into()));
    }
    Ok(log.iter().map(|row| row.alpha.clone()).collect())
}
