//! Teacher-forced fine-tuning with token-level cross-entropy and Adam under a
//! linear warmup schedule.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::Graph;
use crate::tensor::{Real, Tensor};
use crate::tokenizer::{TokenId, TokenSequence, DECODER_START_ID, PAD_ID};
use crate::transformer::{
    decoder_log_probs_graph, stack_forward, Binder, EncoderDecoderModel, ModelError, Stack, TensorMap,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("training dataset is empty")]
    EmptyDataset,
    #[error("target sequence is empty")]
    EmptyTarget,
    #[error("target sequence contains only padding")]
    AllPadTarget,
    #[error("gradient or moment for {0:?} does not match the parameter shape")]
    ShapeMismatch(String),
    #[error("loss became non-finite at optimizer step {0}")]
    NonFiniteLoss(u64),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub warmup_steps: u64,
    pub batch_size: usize,
    pub epochs: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub seed: u64,
}

impl TrainConfig {
    fn with_lr(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            warmup_steps: 1000,
            batch_size: 4,
            epochs: 5,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            seed: 0,
        }
    }

    /// Fine-tuning settings for the warm-started encoder-decoder.
    pub fn bert2bert() -> Self {
        Self::with_lr(5e-5)
    }

    /// Fine-tuning settings for text-to-text mode.
    pub fn text_to_text() -> Self {
        Self::with_lr(1e-4)
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.into()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("adam betas must lie in [0, 1)");
        }
        if self.adam_epsilon.is_nan() || self.adam_epsilon <= 0.0 {
            return bad("adam_epsilon must be positive");
        }
        Ok(())
    }
}

/// `lr · min(1, step / warmup_steps)`; constant after warmup.
pub fn warmup_lr(lr: f64, step: u64, warmup_steps: u64) -> f64 {
    if warmup_steps == 0 {
        return lr;
    }
    lr * (step as f64 / warmup_steps as f64).min(1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T = f32> {
    pub step: u64,
    pub first_moment: TensorMap<T>,
    pub second_moment: TensorMap<T>,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(model: &EncoderDecoderModel<T>) -> Self {
        let zeros: TensorMap<T> =
            model.tensors().iter().map(|(k, t)| (k.clone(), Tensor::zeros(t.dims()))).collect();
        Self { step: 0, first_moment: zeros.clone(), second_moment: zeros }
    }
}

fn check_pair(
    model_cfg: &crate::transformer::ModelConfig,
    input: &[TokenId],
    target: &[TokenId],
) -> Result<(), TrainError> {
    if target.is_empty() {
        return Err(TrainError::EmptyTarget);
    }
    if target.iter().all(|&t| t == PAD_ID) {
        return Err(TrainError::AllPadTarget);
    }
    if input.is_empty() {
        return Err(ModelError::EmptySequence("encoder input").into());
    }
    for seq in [input, target] {
        if seq.len() > model_cfg.max_positions {
            return Err(ModelError::SequenceTooLong { len: seq.len(), max: model_cfg.max_positions }.into());
        }
        if let Some(&id) = seq.iter().find(|&&i| i as usize >= model_cfg.vocab_size) {
            return Err(ModelError::TokenOutOfRange { id, vocab_size: model_cfg.vocab_size }.into());
        }
    }
    Ok(())
}

/// Records the teacher-forced loss of one pair. Returns the graph, the loss
/// node and the binder holding parameter leaves.
fn record_loss<'m, T: Real>(
    model: &'m EncoderDecoderModel<T>,
    input: &[TokenId],
    target: &[TokenId],
) -> Result<(Graph<T>, crate::autodiff::Var, Binder<'m, T>), TrainError> {
    check_pair(model.config(), input, target)?;
    let mut g = Graph::new();
    let mut b = Binder::new(model.tensors());
    let memory = stack_forward(&mut g, &mut b, model.config(), Stack::Encoder, input, None);
    let mut dec_in = Vec::with_capacity(target.len());
    dec_in.push(DECODER_START_ID);
    dec_in.extend_from_slice(&target[..target.len() - 1]);
    let lp = decoder_log_probs_graph(&mut g, &mut b, model.config(), &dec_in, memory);
    let picks: Vec<(usize, usize)> =
        target.iter().enumerate().filter(|(_, &t)| t != PAD_ID).map(|(i, &t)| (i, t as usize)).collect();
    let loss = g.nll_mean(lp, &picks);
    Ok((g, loss, b))
}

/// Mean over non-pad target positions of `-log P(target_t | target_<t, input)`.
pub fn cross_entropy_loss<T: Real>(
    model: &EncoderDecoderModel<T>,
    input: &[TokenId],
    target: &[TokenId],
) -> Result<T, TrainError> {
    let (g, loss, _) = record_loss(model, input, target)?;
    Ok(g.value(loss).data()[0])
}

/// Loss and its gradient with respect to every model tensor. Tensors with no
/// path to the loss get exact zeros.
pub fn backward<T: Real>(
    model: &EncoderDecoderModel<T>,
    input: &[TokenId],
    target: &[TokenId],
) -> Result<(T, TensorMap<T>), TrainError> {
    backward_scaled(model, input, target, T::one())
}

/// Gradient of `scale · loss`.
pub fn backward_scaled<T: Real>(
    model: &EncoderDecoderModel<T>,
    input: &[TokenId],
    target: &[TokenId],
    scale: T,
) -> Result<(T, TensorMap<T>), TrainError> {
    let (mut g, loss, binder) = record_loss(model, input, target)?;
    let loss_value = g.value(loss).data()[0];
    let out = g.scale(loss, scale);
    let mut grads = g.backward(out);
    let mut map: TensorMap<T> =
        model.tensors().iter().map(|(k, t)| (k.clone(), Tensor::zeros(t.dims()))).collect();
    for (name, var) in binder.bound() {
        if let Some(grad) = grads.take(var) {
            let dims = model.tensors()[name].dims().to_vec();
            map.insert(name.to_string(), grad.reshaped(&dims));
        }
    }
    Ok((loss_value, map))
}

/// One Adam update with bias correction and the warmup learning rate.
pub fn adam_step<T: Real>(
    model: &mut EncoderDecoderModel<T>,
    grads: &TensorMap<T>,
    state: &mut OptimizerState<T>,
    cfg: &TrainConfig,
) -> Result<(), TrainError> {
    for (name, p) in model.tensors() {
        let shape_ok = |m: &TensorMap<T>| m.get(name).is_some_and(|t| t.dims() == p.dims());
        if !shape_ok(grads) || !shape_ok(&state.first_moment) || !shape_ok(&state.second_moment) {
            return Err(TrainError::ShapeMismatch(name.clone()));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let lr = warmup_lr(cfg.learning_rate, state.step, cfg.warmup_steps);
    let c = |v: f64| T::from_f64_lossy(v);
    let (b1, b2, eps) = (c(cfg.adam_beta1), c(cfg.adam_beta2), c(cfg.adam_epsilon));
    let bias1 = c(1.0 - cfg.adam_beta1.powi(t));
    let bias2 = c(1.0 - cfg.adam_beta2.powi(t));
    let lr = c(lr);

    for (name, param) in model.tensors_mut().iter_mut() {
        let g = grads[name].data();
        let m = state.first_moment.get_mut(name).unwrap().data_mut();
        let v = state.second_moment.get_mut(name).unwrap().data_mut();
        for (((p, &gi), mi), vi) in param.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = b1 * *mi + (T::one() - b1) * gi;
            *vi = b2 * *vi + (T::one() - b2) * gi * gi;
            let m_hat = *mi / bias1;
            let v_hat = *vi / bias2;
            *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub epoch: usize,
    pub step: u64,
    pub loss: f64,
}

impl LossRecord {
    /// `epoch=<e> step=<s> loss=<l>`
    pub fn to_line(&self) -> String {
        format!("epoch={} step={} loss={:.9}", self.epoch, self.step, self.loss)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FineTuneReport {
    /// Mean per-example loss of each epoch.
    pub epoch_losses: Vec<f64>,
    /// One record per optimizer step.
    pub records: Vec<LossRecord>,
}

/// Runs `epochs × ⌈N / batch_size⌉` Adam steps over a shuffled copy of
/// `dataset`, reshuffling each epoch from a generator seeded by `cfg.seed`.
pub fn fine_tune<T: Real>(
    model: &mut EncoderDecoderModel<T>,
    dataset: &[(TokenSequence, TokenSequence)],
    cfg: &TrainConfig,
) -> Result<FineTuneReport, TrainError> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    for (input, target) in dataset {
        check_pair(model.config(), input.ids(), target.ids())?;
    }
    let mut state = OptimizerState::new(model);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut report = FineTuneReport::default();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_total = 0.0f64;
        for batch in order.chunks(cfg.batch_size) {
            let inv = T::from_f64_lossy(1.0 / batch.len() as f64);
            let mut summed: Option<TensorMap<T>> = None;
            let mut batch_loss = 0.0f64;
            for &i in batch {
                let (input, target) = &dataset[i];
                let (loss, grads) = backward_scaled(model, input.ids(), target.ids(), inv)?;
                let loss = loss.to_f64().unwrap();
                batch_loss += loss;
                summed = Some(match summed {
                    None => grads,
                    Some(mut acc) => {
                        for (k, g) in grads {
                            acc.get_mut(&k).unwrap().add_assign(&g);
                        }
                        acc
                    }
                });
            }
            if !batch_loss.is_finite() {
                return Err(TrainError::NonFiniteLoss(state.step + 1));
            }
            adam_step(model, summed.as_ref().unwrap(), &mut state, cfg)?;
            epoch_total += batch_loss;
            report.records.push(LossRecord {
                epoch,
                step: state.step,
                loss: batch_loss / batch.len() as f64,
            });
        }
        report.epoch_losses.push(epoch_total / dataset.len() as f64);
    }
    Ok(report)
}
