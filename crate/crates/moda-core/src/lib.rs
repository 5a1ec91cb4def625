//! Desk-scale multi-source unsupervised domain adaptation.
//!
//! The model aligns features adversarially against a learnable mixture of
//! source domains (alpha = softmax(beta), trained jointly with everything
//! else through gradient reversal) and regularizes the target with
//! confidence-thresholded consistency between each sample and a
//! label-preserving transformation of it. The [`divergence`] module
//! computes every diagnostic the accompanying theory asks for: the
//! finite-sample bound terms, an empirical H-divergence, the oracle
//! combined risk, and Jensen-Shannon label distances.
//!
//! Modules follow the data flow: [`tensor`] and [`autodiff`] provide
//! reverse-mode differentiation, [`nn`] the networks and optimizers,
//! [`data`] and [`augment`] the domains and transformations, [`moda`] the
//! objective and training step, [`divergence`] the diagnostics.

pub mod augment;
pub mod autodiff;
pub mod data;
pub mod divergence;
pub mod error;
pub mod gradcheck;
pub mod moda;
pub mod nn;
pub mod rng;
pub mod tensor;

pub use augment::{augment_batch, AugmentKind, AugmentSpec, AugmentedBatch};
pub use autodiff::{Graph, NodeId};
pub use data::{
    generate_domains, load_csv, load_csv_domains, sample_batches, write_csv, BatchBundle,
    DomainDataset, DomainShift, GeneratedDomains, ShiftSpec, Split,
};
pub use divergence::{
    bound_report, compute_b, compute_v, estimate_h_divergence, estimate_lambda, js_distance,
    label_distribution, BoundReport, ProbeConfig, RiskHypothesis,
};
pub use error::{Error, Result};
pub use moda::{
    accuracy, alpha_trajectory, class_loss, consistency_loss, disc_loss, evaluate_losses,
    objective_gradients, sparsity_term, train_step, EpochMetrics, LossBreakdown, MixtureWeights,
    ModaModel, ModelArch, ObjectiveConfig,
};
pub use nn::{
    load_checkpoint, read_checkpoint, save_checkpoint, Activation, DenseLayer, Mlp, Optimizer,
    OptimizerKind, ParamId, ParamStore,
};
pub use tensor::Tensor;
