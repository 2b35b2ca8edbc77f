//! Shared setup for the benchmark targets: a small corpus and a freshly
//! initialized model at matching dimensions.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use activeview::env::{generate_synthetic, Dataset, SynthConfig};
use activeview::{ModelConfig, ModelParams};

pub fn bench_synth() -> SynthConfig {
    SynthConfig {
        classes: 8,
        groups: 4,
        views: 6,
        feature_dim: 16,
        train_per_class: 16,
        test_per_class: 8,
        ..SynthConfig::default()
    }
}

pub fn corpus() -> (Dataset, Dataset) {
    generate_synthetic(&bench_synth()).unwrap()
}

pub fn model(data: &Dataset) -> ModelParams {
    let cfg = ModelConfig {
        feature_dim: data.feature_dim,
        hidden_dim: 64,
        classes: data.classes,
        views: data.views,
        mlp_width: 64,
    };
    ModelParams::init(cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap()
}
