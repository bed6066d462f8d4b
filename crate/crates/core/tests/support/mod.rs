#![allow(dead_code)]

pub mod gradients;

use aitd::autodiff::{Tape, Tensor, TensorError, Var};
use aitd::corpus::{Label, LabeledCorpus, LabeledRecord};
use aitd::layers::LayerError;
use aitd::model::{build_detector, DetectorModel, ModelConfig, ModelError};
use aitd::vectorizer::build_vocabulary;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform in `[lo, hi)`, optionally pushed at least `gap` away from zero.
pub fn random(shape: &[usize], rng: &mut ChaCha8Rng, lo: f64, hi: f64, gap: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| loop {
        let v = rng.gen_range(lo..hi);
        if v.abs() >= gap {
            break v;
        }
    })
}

pub fn layer(e: LayerError) -> TensorError {
    match e {
        LayerError::Tensor(t) => t,
        other => TensorError::InvalidArgument(other.to_string()),
    }
}

pub fn model(e: ModelError) -> TensorError {
    TensorError::InvalidArgument(e.to_string())
}

/// Sum of `x * weights`, so every output element carries a distinct,
/// order-one sensitivity.
pub fn weighted_sum(tape: &mut Tape<f64>, x: Var, weights: &Tensor<f64>) -> Result<Var, TensorError> {
    let w = tape.constant(weights.clone());
    let prod = tape.mul(x, w)?;
    let m = tape.mean(prod, None)?;
    tape.scale(m, weights.len() as f64)
}

/// Vocabulary 20, sequence length 8.
pub fn micro_config() -> ModelConfig {
    ModelConfig {
        max_tokens: 20,
        embed_dim: 4,
        sequence_length: 8,
        lstm_hidden: 3,
        attn_heads: 2,
        attn_key_dim: 2,
        ffn_dim: 4,
        conv_filters: 4,
        conv_kernel: 3,
        conv_stride: 2,
        dense_units: 4,
        ..ModelConfig::default()
    }
}

/// Configuration used for the end-to-end training runs.
pub fn small_config() -> ModelConfig {
    ModelConfig {
        max_tokens: 128,
        embed_dim: 8,
        sequence_length: 16,
        lstm_hidden: 8,
        attn_heads: 2,
        attn_key_dim: 4,
        ffn_dim: 8,
        conv_filters: 8,
        conv_kernel: 3,
        conv_stride: 1,
        dense_units: 8,
        dropout_rate: 0.1,
        block_dropout: 0.0,
        ..ModelConfig::default()
    }
}

pub fn detector_for(config: ModelConfig, corpus: &LabeledCorpus) -> DetectorModel {
    let texts: Vec<String> = corpus
        .iter()
        .map(|r| aitd::textprep::clean(&r.text, &Default::default()))
        .collect();
    let vocab = build_vocabulary(&texts, &config.vectorizer()).unwrap();
    build_detector(config, vocab).unwrap()
}

pub fn corpus(rows: &[(&str, Label)]) -> LabeledCorpus {
    rows.iter()
        .enumerate()
        .map(|(i, (t, l))| LabeledRecord::new(i as u64, *t, *l))
        .collect()
}
