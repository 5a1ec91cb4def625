//! Label-preserving transformations for the consistency loss.
//!
//! Two non-visual realizations: additive Gaussian noise on the input, and a
//! per-iteration dropout rate applied at every network site during the
//! augmented forward pass only. Image pipelines would slot in behind the
//! same [`augment_batch`] hook.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AugmentKind {
    GaussianNoise,
    DropoutRate,
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentSpec {
    pub kind: AugmentKind,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub rate_min: f64,
    pub rate_max: f64,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        AugmentSpec {
            kind: AugmentKind::GaussianNoise,
            sigma_min: 0.1,
            sigma_max: 0.5,
            rate_min: 0.2,
            rate_max: 0.8,
        }
    }
}

impl AugmentSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.rate_min && self.rate_min <= self.rate_max && self.rate_max < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "dropout rate range [{}, {}] must satisfy 0 <= min <= max < 1",
                self.rate_min, self.rate_max
            )));
        }
        if !(0.0 <= self.sigma_min && self.sigma_min <= self.sigma_max) {
            return Err(Error::InvalidArgument(format!(
                "noise sigma range [{}, {}] must satisfy 0 <= min <= max",
                self.sigma_min, self.sigma_max
            )));
        }
        Ok(())
    }
}

/// An augmented target batch: transformed features and, for the dropout
/// realization, the single rate to apply at every configured network site.
#[derive(Debug, Clone)]
pub struct AugmentedBatch {
    pub features: Tensor,
    pub dropout_rate: Option<f64>,
}

/// Apply the transformation to a batch.
///
/// Gaussian noise draws one sigma uniformly per batch and a fresh noise
/// realization per element. The dropout realization leaves the features
/// untouched and draws one rate per iteration.
pub fn augment_batch(
    x: &Tensor,
    spec: &AugmentSpec,
    rng: &mut ChaCha8Rng,
) -> Result<AugmentedBatch> {
    spec.validate()?;
    match spec.kind {
        AugmentKind::None => Ok(AugmentedBatch { features: x.clone(), dropout_rate: None }),
        AugmentKind::GaussianNoise => {
            let sigma = if spec.sigma_max > spec.sigma_min {
                rng.gen_range(spec.sigma_min..spec.sigma_max)
            } else {
                spec.sigma_min
            };
            let data: Vec<f64> = x
                .data()
                .iter()
                .map(|v| {
                    let eps: f64 = StandardNormal.sample(rng);
                    v + sigma * eps
                })
                .collect();
            Ok(AugmentedBatch {
                features: Tensor::new(x.shape().to_vec(), data)?,
                dropout_rate: None,
            })
        }
        AugmentKind::DropoutRate => {
            let rate = if spec.rate_max > spec.rate_min {
                rng.gen_range(spec.rate_min..spec.rate_max)
            } else {
                spec.rate_min
            };
            Ok(AugmentedBatch { features: x.clone(), dropout_rate: Some(rate) })
        }
    }
}
