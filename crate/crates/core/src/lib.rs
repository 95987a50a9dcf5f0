//! Abstractive summarization with a warm-started transformer encoder-decoder.
//!
//! ```text
//! raw text ─ text (half-space codec, task prefix) ─ tokenizer ─┐
//!                                                             ▼
//! encoder-only checkpoint ─ warmstart ─ transformer ─ decoding (greedy / beam)
//!                                           ▲                 │
//!                                  training (Adam)            ▼
//!                                                    rouge (R-1 / R-2 / R-L)
//! ```

pub mod autodiff;
pub mod checkpoint;
pub mod dataset;
pub mod decoding;
pub mod pipeline;
pub mod rouge;
pub mod tensor;
pub mod text;
pub mod tokenizer;
pub mod training;
pub mod transformer;
pub mod warmstart;

pub use checkpoint::{CheckpointError, ModelKind, NtarFile};
pub use decoding::{beam_search, greedy_decode, BeamHypothesis, GenerationConfig, NextTokenScorer};
pub use rouge::{corpus_rouge, RougeScore};
pub use tensor::{Real, Tensor};
pub use text::NormalizedText;
pub use tokenizer::{TokenId, TokenSequence, Vocabulary};
pub use training::{fine_tune, TrainConfig};
pub use transformer::{EncoderDecoderModel, ModelConfig, ModelError, SequenceStates};
pub use warmstart::{load_checkpoint, warm_start_b2b, Checkpoint};
