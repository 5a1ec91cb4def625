//! Shared fixtures for the criterion benchmarks.

use moda_core::augment::{augment_batch, AugmentSpec};
use moda_core::data::{generate_domains, sample_batches, BatchBundle, ShiftSpec};
use moda_core::moda::{ModaModel, ModelArch, ObjectiveConfig};
use moda_core::nn::ParamStore;
use moda_core::rng::stream_rng;

pub struct Fixture {
    pub store: ParamStore,
    pub model: ModaModel,
    pub bundle: BatchBundle,
    pub cfg: ObjectiveConfig,
}

/// Default-architecture model plus one ready-made batch bundle from the
/// default covariate-shifted task.
pub fn training_fixture(batch_size: usize) -> Fixture {
    let spec = ShiftSpec::covariate_default(512);
    let gen = generate_domains(&spec, 1).unwrap();
    let mut store = ParamStore::new();
    let model = ModaModel::new(
        &mut store,
        &ModelArch::default(),
        2,
        spec.classes,
        spec.sources.len(),
        false,
        &mut stream_rng(2, 0, 0),
    )
    .unwrap();
    let mut bundle =
        sample_batches(&gen.sources, &gen.target_train, batch_size, 3, 0).unwrap();
    bundle.augmented = Some(
        augment_batch(&bundle.target_features, &AugmentSpec::default(), &mut stream_rng(4, 0, 0))
            .unwrap(),
    );
    Fixture { store, model, bundle, cfg: ObjectiveConfig::default() }
}
