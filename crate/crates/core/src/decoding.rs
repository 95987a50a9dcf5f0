//! Autoregressive generation: greedy search and beam search with a
//! no-repeat n-gram ban, length penalty and early stopping.
//!
//! Decoding only needs next-token log-probabilities for a prefix, so it is
//! written against [`NextTokenScorer`]. [`ConditionedModel`] adapts an
//! encoder-decoder with a fixed encoder input; tests plug in lookup tables.

use std::cmp::Ordering;

use crate::tokenizer::{TokenId, TokenSequence, DECODER_START_ID, EOS_ID};
use crate::transformer::{EncoderDecoderModel, ModelError, SequenceStates};

/// Log-probability assigned to banned tokens. Finite so that cumulative sums
/// never become NaN.
pub const BANNED_LOG_PROB: f32 = -1e9;

pub trait NextTokenScorer {
    fn vocab_size(&self) -> usize;

    /// Log-distribution of the token following `prefix`. The prefix starts
    /// with the decoder-start id.
    fn next_log_probs(&self, prefix: &[TokenId]) -> Result<Vec<f32>, ModelError>;
}

/// An encoder-decoder bound to one encoded input.
pub struct ConditionedModel<'m> {
    model: &'m EncoderDecoderModel<f32>,
    memory: SequenceStates<f32>,
}

impl<'m> ConditionedModel<'m> {
    pub fn new(model: &'m EncoderDecoderModel<f32>, input: &[TokenId]) -> Result<Self, ModelError> {
        let memory = model.encoder_forward(input)?;
        Ok(Self { model, memory })
    }

    pub fn memory(&self) -> &SequenceStates<f32> {
        &self.memory
    }
}

impl NextTokenScorer for ConditionedModel<'_> {
    fn vocab_size(&self) -> usize {
        self.model.config().vocab_size
    }

    fn next_log_probs(&self, prefix: &[TokenId]) -> Result<Vec<f32>, ModelError> {
        self.model.decoder_forward(prefix, &self.memory)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationConfig {
    pub num_beams: usize,
    pub no_repeat_ngram_size: usize,
    pub length_penalty: f64,
    pub early_stopping: bool,
    pub max_length: usize,
    pub min_length: usize,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            num_beams: 1,
            no_repeat_ngram_size: 0,
            length_penalty: 0.0,
            early_stopping: false,
            max_length: 64,
            min_length: 0,
        }
    }
}

impl GenerationConfig {
    /// Beam settings used for the warm-started encoder-decoder.
    pub fn bert2bert() -> Self {
        Self {
            num_beams: 3,
            no_repeat_ngram_size: 2,
            length_penalty: 2.0,
            early_stopping: true,
            ..Self::default()
        }
    }

    /// Beam settings used in text-to-text mode.
    pub fn text_to_text() -> Self {
        Self {
            num_beams: 4,
            no_repeat_ngram_size: 3,
            length_penalty: 1.0,
            early_stopping: true,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.num_beams == 0 {
            return Err("num_beams must be at least 1".into());
        }
        if self.max_length == 0 {
            return Err("max_length must be at least 1".into());
        }
        if self.min_length > self.max_length {
            return Err(format!("min_length {} exceeds max_length {}", self.min_length, self.max_length));
        }
        if !self.length_penalty.is_finite() {
            return Err("length_penalty must be finite".into());
        }
        Ok(())
    }
}

/// A generated sequence `w_1..w_t` (decoder-start excluded) with its
/// cumulative log-probability.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamHypothesis {
    pub ids: TokenSequence,
    pub log_prob: f64,
    pub finished: bool,
}

impl BeamHypothesis {
    fn empty() -> Self {
        Self { ids: TokenSequence::default(), log_prob: 0.0, finished: false }
    }
}

/// Sets every token that would complete an already-seen `n`-gram of
/// `history` to [`BANNED_LOG_PROB`].
pub fn ban_repeated_ngrams(log_probs: &mut [f32], history: &[TokenId], n: usize) {
    if n == 0 || history.len() + 1 < n {
        return;
    }
    let context = &history[history.len() + 1 - n..];
    for window in history.windows(n) {
        if window[..n - 1] == *context {
            if let Some(slot) = log_probs.get_mut(window[n - 1] as usize) {
                *slot = BANNED_LOG_PROB;
            }
        }
    }
}

pub fn apply_no_repeat_ngram(log_probs: &[f32], history: &[TokenId], n: usize) -> Vec<f32> {
    let mut out = log_probs.to_vec();
    ban_repeated_ngrams(&mut out, history, n);
    out
}

/// `log_prob / len^alpha`; the raw log-prob for an empty hypothesis.
pub fn length_penalized_score(hyp: &BeamHypothesis, alpha: f64) -> f64 {
    if hyp.ids.is_empty() {
        return hyp.log_prob;
    }
    hyp.log_prob / (hyp.ids.len() as f64).powf(alpha)
}

fn is_banned(v: f32) -> bool {
    v <= BANNED_LOG_PROB
}

fn with_start(ids: &[TokenId]) -> Vec<TokenId> {
    let mut prefix = Vec::with_capacity(ids.len() + 1);
    prefix.push(DECODER_START_ID);
    prefix.extend_from_slice(ids);
    prefix
}

/// Step distribution after the n-gram ban and the min-length eos mask.
fn filtered_step(
    scorer: &impl NextTokenScorer,
    ids: &[TokenId],
    cfg: &GenerationConfig,
) -> Result<Vec<f32>, ModelError> {
    let mut lp = scorer.next_log_probs(&with_start(ids))?;
    ban_repeated_ngrams(&mut lp, ids, cfg.no_repeat_ngram_size);
    if ids.len() < cfg.min_length {
        if let Some(eos) = lp.get_mut(EOS_ID as usize) {
            *eos = BANNED_LOG_PROB;
        }
    }
    Ok(lp)
}

/// `Σ_t log P(w_t | w_<t)` of `output` under `scorer`.
pub fn scorer_sequence_log_prob(
    scorer: &impl NextTokenScorer,
    output: &[TokenId],
) -> Result<f64, ModelError> {
    if output.is_empty() {
        return Err(ModelError::EmptySequence("output"));
    }
    let mut total = 0.0f64;
    for t in 0..output.len() {
        let lp = scorer.next_log_probs(&with_start(&output[..t]))?;
        total += f64::from(lp[output[t] as usize]);
    }
    Ok(total)
}

/// Log-probability of `output` given `input`, from a single teacher-forced
/// decoder pass.
pub fn sequence_log_prob(
    model: &EncoderDecoderModel<f32>,
    input: &[TokenId],
    output: &[TokenId],
) -> Result<f64, ModelError> {
    if output.is_empty() {
        return Err(ModelError::EmptySequence("output"));
    }
    let memory = model.encoder_forward(input)?;
    let prefix = with_start(&output[..output.len() - 1]);
    let all = model.decoder_log_probs(&prefix, &memory)?;
    Ok(output.iter().enumerate().map(|(t, &w)| f64::from(all.get(t, w as usize))).sum())
}

pub fn greedy_decode(
    scorer: &impl NextTokenScorer,
    cfg: &GenerationConfig,
) -> Result<BeamHypothesis, ModelError> {
    let mut hyp = BeamHypothesis::empty();
    while hyp.ids.len() < cfg.max_length {
        let lp = filtered_step(scorer, hyp.ids.ids(), cfg)?;
        let mut best: Option<(TokenId, f32)> = None;
        for (tok, &v) in lp.iter().enumerate() {
            if is_banned(v) {
                continue;
            }
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((tok as TokenId, v));
            }
        }
        let Some((tok, v)) = best else { break };
        hyp.ids.0.push(tok);
        hyp.log_prob += f64::from(v);
        if tok == EOS_ID {
            hyp.finished = true;
            break;
        }
    }
    Ok(hyp)
}

/// The continuations kept at one beam-search step, in rank order.
#[derive(Debug, Clone, PartialEq)]
pub struct StepTrace {
    pub kept: Vec<BeamHypothesis>,
}

pub fn beam_search(
    scorer: &impl NextTokenScorer,
    cfg: &GenerationConfig,
) -> Result<BeamHypothesis, ModelError> {
    beam_search_traced(scorer, cfg).map(|(best, _)| best)
}

struct Candidate {
    score: f64,
    token: TokenId,
    beam: usize,
}

/// Beam search that also reports the continuations kept at every step.
pub fn beam_search_traced(
    scorer: &impl NextTokenScorer,
    cfg: &GenerationConfig,
) -> Result<(BeamHypothesis, Vec<StepTrace>), ModelError> {
    let mut live = vec![BeamHypothesis::empty()];
    let mut finished: Vec<BeamHypothesis> = Vec::new();
    let mut trace = Vec::new();

    for _ in 0..cfg.max_length {
        let mut candidates = Vec::new();
        for (beam, hyp) in live.iter().enumerate() {
            let lp = filtered_step(scorer, hyp.ids.ids(), cfg)?;
            for (tok, &v) in lp.iter().enumerate() {
                if !is_banned(v) {
                    candidates.push(Candidate {
                        score: hyp.log_prob + f64::from(v),
                        token: tok as TokenId,
                        beam,
                    });
                }
            }
        }
        if candidates.is_empty() {
            break;
        }
        candidates.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .unwrap_or(Ordering::Equal)
                .then(a.token.cmp(&b.token))
                .then(a.beam.cmp(&b.beam))
        });
        candidates.truncate(cfg.num_beams);

        let kept: Vec<BeamHypothesis> = candidates
            .iter()
            .map(|c| {
                let mut ids = live[c.beam].ids.clone();
                ids.0.push(c.token);
                BeamHypothesis { ids, log_prob: c.score, finished: c.token == EOS_ID }
            })
            .collect();
        let (done, rest): (Vec<_>, Vec<_>) = kept.iter().cloned().partition(|h| h.finished);
        finished.extend(done);
        trace.push(StepTrace { kept });
        live = rest;

        if live.is_empty() || (cfg.early_stopping && finished.len() >= cfg.num_beams) {
            break;
        }
    }

    let pool = if finished.is_empty() { &live } else { &finished };
    let best = pool
        .iter()
        .fold(None::<&BeamHypothesis>, |best, h| match best {
            Some(b)
                if length_penalized_score(b, cfg.length_penalty)
                    >= length_penalized_score(h, cfg.length_penalty) =>
            {
                Some(b)
            }
            _ => Some(h),
        })
        .cloned()
        .unwrap_or_else(BeamHypothesis::empty);
    Ok((best, trace))
}

/// Greedy search for a single beam, beam search otherwise.
pub fn generate(scorer: &impl NextTokenScorer, cfg: &GenerationConfig) -> Result<BeamHypothesis, ModelError> {
    if cfg.num_beams == 1 {
        greedy_decode(scorer, cfg)
    } else {
        beam_search(scorer, cfg)
    }
}
