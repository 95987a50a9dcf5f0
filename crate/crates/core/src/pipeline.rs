//! End-to-end glue: raw document text to token pairs for training, and raw
//! text to a decoded summary.

use thiserror::Error;

use crate::decoding::{generate, ConditionedModel, GenerationConfig};
use crate::text::{
    apply_task_prefix, decode_special_tokens, encode_special_tokens, TextError, DEFAULT_MARKER,
    TEXT_TO_TEXT_MARKER,
};
use crate::tokenizer::{TokenSequence, VocabError, Vocabulary, EOS_ID};
use crate::training::TrainConfig;
use crate::transformer::{EncoderDecoderModel, ModelError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Text(#[from] TextError),
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("vocabulary has {vocab} entries but the model expects {model}")]
    VocabMismatch { vocab: usize, model: usize },
    #[error("invalid generation config: {0}")]
    Generation(String),
    #[error("input text produced no tokens")]
    EmptyInput,
}

/// The two per-model hyperparameter bundles.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Warm-started encoder-decoder.
    Bert2Bert,
    /// Text-to-text framing with a task prefix.
    TextToText,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Bert2Bert => "b2b",
            Preset::TextToText => "t2t",
        }
    }

    pub fn marker(self) -> &'static str {
        match self {
            Preset::Bert2Bert => DEFAULT_MARKER,
            Preset::TextToText => TEXT_TO_TEXT_MARKER,
        }
    }

    pub fn uses_task_prefix(self) -> bool {
        self == Preset::TextToText
    }

    pub fn train_config(self) -> TrainConfig {
        match self {
            Preset::Bert2Bert => TrainConfig::bert2bert(),
            Preset::TextToText => TrainConfig::text_to_text(),
        }
    }

    pub fn generation_config(self) -> GenerationConfig {
        match self {
            Preset::Bert2Bert => GenerationConfig::bert2bert(),
            Preset::TextToText => GenerationConfig::text_to_text(),
        }
    }
}

/// Text preparation bound to a vocabulary.
#[derive(Debug, Clone)]
pub struct TextPipeline<'v> {
    vocab: &'v Vocabulary,
    task_prefix: bool,
}

impl<'v> TextPipeline<'v> {
    pub fn new(vocab: &'v Vocabulary, task_prefix: bool) -> Self {
        Self { vocab, task_prefix }
    }

    pub fn vocab(&self) -> &Vocabulary {
        self.vocab
    }

    /// Source text after the optional task prefix and half-space encoding.
    pub fn normalize_source(&self, text: &str) -> Result<String, TextError> {
        let text = if self.task_prefix { apply_task_prefix(text) } else { text.to_string() };
        Ok(encode_special_tokens(&text, self.vocab.marker_surface())?.into_content())
    }

    pub fn normalize_target(&self, text: &str) -> Result<String, TextError> {
        Ok(encode_special_tokens(text, self.vocab.marker_surface())?.into_content())
    }

    /// Encoder input truncated to `max_positions`.
    pub fn encode_source(&self, text: &str, max_positions: usize) -> Result<TokenSequence, PipelineError> {
        let mut ids = self.vocab.encode_str(&self.normalize_source(text)?);
        ids.0.truncate(max_positions);
        if ids.is_empty() {
            return Err(PipelineError::EmptyInput);
        }
        Ok(ids)
    }

    /// Target ids ending in eos, truncated so the whole sequence fits in
    /// `max_positions`.
    pub fn encode_target(&self, text: &str, max_positions: usize) -> Result<TokenSequence, PipelineError> {
        let mut ids = self.vocab.encode_str(&self.normalize_target(text)?);
        ids.0.truncate(max_positions.saturating_sub(1));
        ids.0.push(EOS_ID);
        Ok(ids)
    }

    pub fn encode_pair(
        &self,
        article: &str,
        summary: &str,
        max_positions: usize,
    ) -> Result<(TokenSequence, TokenSequence), PipelineError> {
        Ok((self.encode_source(article, max_positions)?, self.encode_target(summary, max_positions)?))
    }

    /// Generates a summary and returns it with half-spaces restored.
    pub fn summarize(
        &self,
        model: &EncoderDecoderModel<f32>,
        text: &str,
        cfg: &GenerationConfig,
    ) -> Result<String, PipelineError> {
        check_vocab(self.vocab, model)?;
        cfg.validate().map_err(PipelineError::Generation)?;
        let max_positions = model.config().max_positions;
        let input = self.encode_source(text, max_positions)?;
        let scorer = ConditionedModel::new(model, input.ids())?;
        let cfg = GenerationConfig {
            max_length: cfg.max_length.min(max_positions),
            min_length: cfg.min_length.min(max_positions),
            ..cfg.clone()
        };
        let hyp = generate(&scorer, &cfg)?;
        let normalized = self.vocab.decode_normalized(hyp.ids.ids())?;
        Ok(decode_special_tokens(&normalized))
    }
}

pub fn check_vocab(vocab: &Vocabulary, model: &EncoderDecoderModel<f32>) -> Result<(), PipelineError> {
    if vocab.len() != model.config().vocab_size {
        return Err(PipelineError::VocabMismatch { vocab: vocab.len(), model: model.config().vocab_size });
    }
    Ok(())
}
