#![allow(dead_code)]

use std::sync::Arc;

use euphem_core::backend::TinyLmConfig;
use euphem_core::classifier::Variant;
use euphem_core::corpus::{self, Example, Lexicon};
use euphem_core::experiments::TrainConfig;
use euphem_core::imagery::{ImageryConfig, ImageryEngine, ImageryStore, StubEncoder, StubTextToImage};
use euphem_core::synthetic;

pub fn toy_lexicon() -> Lexicon {
    Lexicon::new(Lexicon::bundled().entries()[..4].to_vec()).unwrap()
}

/// Separable labeled examples: the label is carried by the template wording.
pub fn toy_examples(lexicon: &Lexicon, n: usize, seed: u64) -> Vec<Example> {
    synthetic::generate(lexicon, n, 0, seed)
        .train
        .into_iter()
        .map(|r| corpus::preprocess(&corpus::from_raw(r).unwrap()).unwrap())
        .collect()
}

pub fn toy_config(variant: Variant) -> TrainConfig {
    TrainConfig {
        learning_rate: 1e-2,
        max_epochs: 50,
        batch_size: 16,
        seed: 7,
        ..TrainConfig::reference_base(variant)
    }
}

pub fn tiny_lm(hidden: usize) -> TinyLmConfig {
    TinyLmConfig {
        id: "tiny-test".into(),
        vocab_size: 64,
        hidden_size: hidden,
        max_positions: 64,
    }
}

pub fn stub_store(lexicon: &Lexicon, dir: &std::path::Path, dim: usize) -> ImageryStore {
    let engine = ImageryEngine::new(
        Arc::new(StubTextToImage::default()),
        Arc::new(StubEncoder { dim }),
        dir,
        ImageryConfig { k: 3, ..Default::default() },
    );
    engine.build_store(lexicon).unwrap()
}
