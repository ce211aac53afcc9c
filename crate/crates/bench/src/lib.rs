//! Benchmark fixtures: the bundled 50-entity graph and a model sized like the toy runs.

use momok_core::data::synthetic::{latent_mmkg, LatentSpec};
use momok_core::data::FeatureOptions;
use momok_core::{Config, Dataset, ModelSpec, Momok};

pub fn toy_dataset() -> Dataset {
    latent_mmkg(&LatentSpec::default())
        .build(&FeatureOptions::default())
        .expect("bundled toy graph")
}

/// `d = 32`, `K = 3`, one epoch per training iteration.
pub fn toy_config() -> Config {
    Config {
        dim: 32,
        experts: 3,
        epochs: 1,
        ..Config::default()
    }
}

pub fn toy_model(data: &Dataset) -> Momok {
    let cfg = toy_config();
    Momok::new(ModelSpec::from_config(&cfg, data).expect("spec"), cfg.seed).expect("model")
}
