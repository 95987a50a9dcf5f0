//! Warm-starting an encoder-decoder from an encoder-only checkpoint.
//!
//! The encoder stack is copied verbatim. The decoder stack is a second copy of
//! the same weights (embeddings, self-attention, feed-forward and norms) that
//! runs under a causal mask. Cross-attention does not exist in the checkpoint
//! and is the only part drawn at random.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::checkpoint::{CheckpointError, ModelKind, NtarFile};
use crate::tensor::Tensor;
use crate::tokenizer::TokenId;
use crate::transformer::{
    audit_shapes, encode_with, encoder_decoder_shapes, is_cross_attention, random_tensors, stack_shapes,
    EncoderDecoderModel, ModelConfig, ModelError, SequenceStates, Stack, TensorMap,
};

/// Standard deviation of the cross-attention initializer.
pub const CROSS_ATTENTION_INIT_STD: f32 = 0.02;

/// An encoder-only checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    config: ModelConfig,
    tensors: TensorMap<f32>,
}

impl Checkpoint {
    pub fn new(config: ModelConfig, tensors: TensorMap<f32>) -> Result<Self, CheckpointError> {
        config.validate()?;
        if let Some(name) = tensors.keys().find(|n| is_cross_attention(n)) {
            return Err(CheckpointError::CrossAttentionInCheckpoint(name.clone()));
        }
        audit_shapes(&stack_shapes(&config, Stack::Encoder), &tensors)?;
        Ok(Self { config, tensors })
    }

    /// A stand-in "pretrained" encoder with normal(0, std²) weights.
    pub fn random(config: ModelConfig, seed: u64, std: f64) -> Result<Self, CheckpointError> {
        config.validate()?;
        let tensors = random_tensors(&stack_shapes(&config, Stack::Encoder), seed, std);
        Self::new(config, tensors)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn tensors(&self) -> &TensorMap<f32> {
        &self.tensors
    }

    pub fn encoder_forward(&self, input: &[TokenId]) -> Result<SequenceStates<f32>, ModelError> {
        encode_with(&self.config, &self.tensors, input)
    }

    pub fn to_ntar(&self) -> NtarFile {
        NtarFile { kind: ModelKind::EncoderOnly, config: self.config, tensors: self.tensors.clone() }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        self.to_ntar().save(path)
    }

    pub fn from_ntar(file: NtarFile) -> Result<Self, CheckpointError> {
        if file.kind != ModelKind::EncoderOnly {
            return Err(CheckpointError::KindMismatch { expected: ModelKind::EncoderOnly, found: file.kind });
        }
        Self::new(file.config, file.tensors)
    }
}

/// Loads an encoder-only checkpoint and audits its shapes.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, CheckpointError> {
    Checkpoint::from_ntar(NtarFile::load(path)?)
}

pub fn save_model(model: &EncoderDecoderModel<f32>, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    model_to_ntar(model).save(path)
}

pub fn model_to_ntar(model: &EncoderDecoderModel<f32>) -> NtarFile {
    NtarFile { kind: ModelKind::EncoderDecoder, config: *model.config(), tensors: model.tensors().clone() }
}

pub fn model_from_ntar(file: NtarFile) -> Result<EncoderDecoderModel<f32>, CheckpointError> {
    if file.kind != ModelKind::EncoderDecoder {
        return Err(CheckpointError::KindMismatch { expected: ModelKind::EncoderDecoder, found: file.kind });
    }
    Ok(EncoderDecoderModel::new(file.config, file.tensors)?)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<EncoderDecoderModel<f32>, CheckpointError> {
    model_from_ntar(NtarFile::load(path)?)
}

/// Checkpoint tensor a decoder tensor is copied from.
pub fn decoder_source_name(name: &str) -> Option<String> {
    name.strip_prefix("decoder.").filter(|_| !is_cross_attention(name)).map(|rest| format!("encoder.{rest}"))
}

/// Builds the encoder-decoder: every tensor copied from the checkpoint except
/// cross-attention, which is drawn from normal(0, 0.02²) with a generator
/// seeded by `seed`.
pub fn warm_start_b2b(ckpt: &Checkpoint, seed: u64) -> Result<EncoderDecoderModel<f32>, CheckpointError> {
    let config = *ckpt.config();
    audit_shapes(&stack_shapes(&config, Stack::Encoder), ckpt.tensors())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0f32, CROSS_ATTENTION_INIT_STD).expect("valid std");

    // encoder_decoder_shapes lists cross-attention in layer order, so the
    // random stream is consumed in a fixed order.
    let mut tensors = TensorMap::new();
    for (name, dims) in encoder_decoder_shapes(&config) {
        let t = if is_cross_attention(&name) {
            let n = dims.iter().product();
            Tensor::from_vec(dims, (0..n).map(|_| normal.sample(&mut rng)).collect())
        } else {
            let source = if name.starts_with("encoder.") {
                name.clone()
            } else {
                decoder_source_name(&name).expect("non-cross decoder tensor")
            };
            ckpt.tensors().get(&source).cloned().ok_or_else(|| ModelError::MissingTensor(source.clone()))?
        };
        tensors.insert(name, t);
    }
    Ok(EncoderDecoderModel::new(config, tensors)?)
}

/// Where a warm-started tensor came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Provenance {
    Copied { source: String },
    RandomlyInitialized,
}

/// Classifies every tensor of a model against a checkpoint: a tensor is
/// `Copied` when it is bit-identical to its checkpoint counterpart and
/// `RandomlyInitialized` when it is a cross-attention tensor. Any other
/// tensor is reported as an error entry.
pub fn weight_provenance(
    ckpt: &Checkpoint,
    model: &EncoderDecoderModel<f32>,
) -> Vec<(String, Result<Provenance, String>)> {
    model
        .tensors()
        .iter()
        .map(|(name, t)| {
            if is_cross_attention(name) {
                return (name.clone(), Ok(Provenance::RandomlyInitialized));
            }
            let source =
                if name.starts_with("encoder.") { Some(name.clone()) } else { decoder_source_name(name) };
            let verdict = match source.as_ref().and_then(|s| ckpt.tensors().get(s).map(|c| (s, c))) {
                Some((s, c)) if bit_identical(c, t) => Ok(Provenance::Copied { source: s.clone() }),
                Some((s, _)) => Err(format!("differs from checkpoint tensor {s}")),
                None => Err("has no checkpoint counterpart".to_string()),
            };
            (name.clone(), verdict)
        })
        .collect()
}

pub fn bit_identical(a: &Tensor<f32>, b: &Tensor<f32>) -> bool {
    a.dims() == b.dims() && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits())
}
