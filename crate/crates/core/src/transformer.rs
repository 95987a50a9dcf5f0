//! Toy-scale transformer encoder-decoder.
//!
//! Both stacks use pre-layer-norm residual blocks with a tanh-GELU
//! feed-forward and learned absolute position embeddings. The encoder attends
//! bidirectionally; the decoder self-attention is causal and each decoder
//! layer reads the encoder states through cross-attention placed between
//! self-attention and the feed-forward block. Output logits reuse the decoder
//! token-embedding matrix.
//!
//! Parameter names (`d` = hidden size, `f` = feed-forward size):
//!
//! ```text
//! {stack}.embeddings.token                          [vocab, d]
//! {stack}.embeddings.position                       [max_positions, d]
//! {stack}.layers.{i}.self_attn.{query,key,value,output}.weight   [d, d]
//! {stack}.layers.{i}.self_attn.{query,key,value,output}.bias     [d]
//! {stack}.layers.{i}.attn_norm.{scale,shift}        [d]
//! {stack}.layers.{i}.ffn.input.weight               [d, f]
//! {stack}.layers.{i}.ffn.input.bias                 [f]
//! {stack}.layers.{i}.ffn.output.weight              [f, d]
//! {stack}.layers.{i}.ffn.output.bias                [d]
//! {stack}.layers.{i}.ffn_norm.{scale,shift}         [d]
//! {stack}.final_norm.{scale,shift}                  [d]
//! decoder.layers.{i}.cross_attn.{query,key,value,output}.{weight,bias}
//! ```

use std::collections::{BTreeMap, HashMap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::autodiff::{Graph, Var};
use crate::tensor::{Real, Tensor};
use crate::tokenizer::{TokenId, NUM_SPECIAL};

pub type TensorMap<T = f32> = BTreeMap<String, Tensor<T>>;

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("sequence of length {len} exceeds max_positions {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("{0} sequence must be non-empty")]
    EmptySequence(&'static str),
    #[error("token id {id} is out of range for vocab_size {vocab_size}")]
    TokenOutOfRange { id: TokenId, vocab_size: usize },
    #[error("tensor {0:?} is missing")]
    MissingTensor(String),
    #[error("tensor {0:?} is not part of this model layout")]
    UnexpectedTensor(String),
    #[error("tensor {name:?} has shape {found:?}, expected {expected:?}")]
    ShapeMismatch { name: String, expected: Vec<usize>, found: Vec<usize> },
    #[error("tensor {0:?} contains non-finite values")]
    NonFinite(String),
    #[error("memory width {found} does not match hidden_size {expected}")]
    MemoryWidth { expected: usize, found: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub hidden_size: usize,
    pub num_heads: usize,
    pub ffn_size: usize,
    pub vocab_size: usize,
    pub max_positions: usize,
}

impl ModelConfig {
    /// The BASE encoder shape (12 layers, 768 hidden, 12 heads).
    pub fn base(vocab_size: usize, max_positions: usize) -> Self {
        Self { num_layers: 12, hidden_size: 768, num_heads: 12, ffn_size: 3072, vocab_size, max_positions }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            ("num_layers", self.num_layers),
            ("hidden_size", self.hidden_size),
            ("num_heads", self.num_heads),
            ("ffn_size", self.ffn_size),
            ("max_positions", self.max_positions),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(ModelError::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if !self.hidden_size.is_multiple_of(self.num_heads) {
            return Err(ModelError::InvalidConfig(format!(
                "hidden_size {} is not divisible by num_heads {}",
                self.hidden_size, self.num_heads
            )));
        }
        if self.vocab_size < NUM_SPECIAL {
            return Err(ModelError::InvalidConfig(format!(
                "vocab_size {} is below the {NUM_SPECIAL} special tokens",
                self.vocab_size
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_size / self.num_heads
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stack {
    Encoder,
    Decoder,
}

impl Stack {
    pub fn prefix(self) -> &'static str {
        match self {
            Stack::Encoder => "encoder",
            Stack::Decoder => "decoder",
        }
    }
}

pub const ATTN_PROJECTIONS: [&str; 4] = ["query", "key", "value", "output"];

pub fn cross_attn_prefix(layer: usize) -> String {
    format!("decoder.layers.{layer}.cross_attn.")
}

pub fn is_cross_attention(name: &str) -> bool {
    name.starts_with("decoder.layers.") && name.contains(".cross_attn.")
}

/// Name and shape of every tensor in one stack.
pub fn stack_shapes(config: &ModelConfig, stack: Stack) -> Vec<(String, Vec<usize>)> {
    let (d, f) = (config.hidden_size, config.ffn_size);
    let p = stack.prefix();
    let mut out = vec![
        (format!("{p}.embeddings.token"), vec![config.vocab_size, d]),
        (format!("{p}.embeddings.position"), vec![config.max_positions, d]),
    ];
    for i in 0..config.num_layers {
        let l = format!("{p}.layers.{i}");
        let attn = |kind: &str, out: &mut Vec<(String, Vec<usize>)>| {
            for proj in ATTN_PROJECTIONS {
                out.push((format!("{l}.{kind}.{proj}.weight"), vec![d, d]));
                out.push((format!("{l}.{kind}.{proj}.bias"), vec![d]));
            }
        };
        attn("self_attn", &mut out);
        out.push((format!("{l}.attn_norm.scale"), vec![d]));
        out.push((format!("{l}.attn_norm.shift"), vec![d]));
        if stack == Stack::Decoder {
            attn("cross_attn", &mut out);
        }
        out.push((format!("{l}.ffn.input.weight"), vec![d, f]));
        out.push((format!("{l}.ffn.input.bias"), vec![f]));
        out.push((format!("{l}.ffn.output.weight"), vec![f, d]));
        out.push((format!("{l}.ffn.output.bias"), vec![d]));
        out.push((format!("{l}.ffn_norm.scale"), vec![d]));
        out.push((format!("{l}.ffn_norm.shift"), vec![d]));
    }
    out.push((format!("{p}.final_norm.scale"), vec![d]));
    out.push((format!("{p}.final_norm.shift"), vec![d]));
    out
}

pub fn encoder_decoder_shapes(config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let mut shapes = stack_shapes(config, Stack::Encoder);
    shapes.extend(stack_shapes(config, Stack::Decoder));
    shapes
}

/// Checks that `tensors` holds exactly the expected names with the expected
/// shapes and only finite values.
pub fn audit_shapes<T: Real>(
    expected: &[(String, Vec<usize>)],
    tensors: &TensorMap<T>,
) -> Result<(), ModelError> {
    for (name, dims) in expected {
        let t = tensors.get(name).ok_or_else(|| ModelError::MissingTensor(name.clone()))?;
        if t.dims() != dims.as_slice() {
            return Err(ModelError::ShapeMismatch {
                name: name.clone(),
                expected: dims.clone(),
                found: t.dims().to_vec(),
            });
        }
        if !t.is_finite() {
            return Err(ModelError::NonFinite(name.clone()));
        }
    }
    if tensors.len() != expected.len() {
        let known: std::collections::HashSet<&str> = expected.iter().map(|(n, _)| n.as_str()).collect();
        if let Some(extra) = tensors.keys().find(|k| !known.contains(k.as_str())) {
            return Err(ModelError::UnexpectedTensor(extra.clone()));
        }
    }
    Ok(())
}

/// Draws every tensor in `shapes`: norm scales are one, norm shifts zero, and
/// everything else normal(0, std²).
pub fn random_tensors<T: Real>(shapes: &[(String, Vec<usize>)], seed: u64, std: f64) -> TensorMap<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0f64, std).expect("valid std");
    shapes
        .iter()
        .map(|(name, dims)| {
            let n: usize = dims.iter().product();
            let data = if name.ends_with("norm.scale") {
                vec![T::one(); n]
            } else if name.ends_with("norm.shift") {
                vec![T::zero(); n]
            } else {
                (0..n).map(|_| T::from_f64_lossy(normal.sample(&mut rng))).collect()
            };
            (name.clone(), Tensor::from_vec(dims.clone(), data))
        })
        .collect()
}

/// Contextualized encoder output, one row per input token.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceStates<T = f32> {
    pub rows: Tensor<T>,
}

impl<T: Real> SequenceStates<T> {
    pub fn len(&self) -> usize {
        self.rows.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Lazily binds model tensors as graph leaves and remembers their vars.
pub struct Binder<'m, T> {
    tensors: &'m TensorMap<T>,
    vars: HashMap<&'m str, Var>,
}

impl<'m, T: Real> Binder<'m, T> {
    pub fn new(tensors: &'m TensorMap<T>) -> Self {
        Self { tensors, vars: HashMap::new() }
    }

    pub fn param(&mut self, g: &mut Graph<T>, name: &str) -> Var {
        if let Some(&v) = self.vars.get(name) {
            return v;
        }
        let (key, t) =
            self.tensors.get_key_value(name).unwrap_or_else(|| panic!("audited model is missing {name}"));
        let v = g.leaf(t.clone());
        self.vars.insert(key.as_str(), v);
        v
    }

    /// Bound tensors in name order.
    pub fn bound(&self) -> impl Iterator<Item = (&'m str, Var)> + '_ {
        let mut names: Vec<_> = self.vars.iter().map(|(&n, &v)| (n, v)).collect();
        names.sort_by_key(|(n, _)| *n);
        names.into_iter()
    }
}

fn check_ids(ids: &[TokenId], config: &ModelConfig, what: &'static str) -> Result<(), ModelError> {
    if ids.is_empty() {
        return Err(ModelError::EmptySequence(what));
    }
    if ids.len() > config.max_positions {
        return Err(ModelError::SequenceTooLong { len: ids.len(), max: config.max_positions });
    }
    if let Some(&id) = ids.iter().find(|&&id| id as usize >= config.vocab_size) {
        return Err(ModelError::TokenOutOfRange { id, vocab_size: config.vocab_size });
    }
    Ok(())
}

fn attention<T: Real>(
    g: &mut Graph<T>,
    b: &mut Binder<'_, T>,
    config: &ModelConfig,
    prefix: &str,
    queries_from: Var,
    keys_from: Var,
    causal: bool,
) -> Var {
    let proj = |g: &mut Graph<T>, b: &mut Binder<'_, T>, which: &str, x: Var| {
        let w = b.param(g, &format!("{prefix}.{which}.weight"));
        let bias = b.param(g, &format!("{prefix}.{which}.bias"));
        let y = g.matmul(x, w);
        g.add_row(y, bias)
    };
    let q = proj(g, b, "query", queries_from);
    let k = proj(g, b, "key", keys_from);
    let v = proj(g, b, "value", keys_from);
    let hd = config.head_dim();
    let scale = T::from_f64_lossy(1.0 / (hd as f64).sqrt());
    let mut heads = Vec::with_capacity(config.num_heads);
    for h in 0..config.num_heads {
        let qh = g.slice_cols(q, h * hd, hd);
        let kh = g.slice_cols(k, h * hd, hd);
        let vh = g.slice_cols(v, h * hd, hd);
        let scores = g.matmul_t(qh, kh);
        let scores = g.scale(scores, scale);
        let probs = g.attention_softmax(scores, causal);
        heads.push(g.matmul(probs, vh));
    }
    let ctx = if heads.len() == 1 { heads[0] } else { g.concat_cols(&heads) };
    proj(g, b, "output", ctx)
}

fn layer_norm<T: Real>(g: &mut Graph<T>, b: &mut Binder<'_, T>, prefix: &str, x: Var) -> Var {
    let scale = b.param(g, &format!("{prefix}.scale"));
    let shift = b.param(g, &format!("{prefix}.shift"));
    g.layer_norm(x, scale, shift, T::from_f64_lossy(LAYER_NORM_EPS))
}

/// Runs one stack over `ids` and returns its final-norm hidden states.
/// `memory` is required for the decoder.
pub fn stack_forward<T: Real>(
    g: &mut Graph<T>,
    b: &mut Binder<'_, T>,
    config: &ModelConfig,
    stack: Stack,
    ids: &[TokenId],
    memory: Option<Var>,
) -> Var {
    let p = stack.prefix();
    let tok_table = b.param(g, &format!("{p}.embeddings.token"));
    let pos_table = b.param(g, &format!("{p}.embeddings.position"));
    let idx: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
    let positions: Vec<usize> = (0..ids.len()).collect();
    let tok = g.gather(tok_table, &idx);
    let pos = g.gather(pos_table, &positions);
    let mut h = g.add(tok, pos);
    let causal = stack == Stack::Decoder;

    for i in 0..config.num_layers {
        let l = format!("{p}.layers.{i}");
        let normed = layer_norm(g, b, &format!("{l}.attn_norm"), h);
        let attn = attention(g, b, config, &format!("{l}.self_attn"), normed, normed, causal);
        h = g.add(h, attn);

        if let (Stack::Decoder, Some(mem)) = (stack, memory) {
            let cross = attention(g, b, config, &format!("{l}.cross_attn"), h, mem, false);
            h = g.add(h, cross);
        }

        let normed = layer_norm(g, b, &format!("{l}.ffn_norm"), h);
        let w_in = b.param(g, &format!("{l}.ffn.input.weight"));
        let b_in = b.param(g, &format!("{l}.ffn.input.bias"));
        let w_out = b.param(g, &format!("{l}.ffn.output.weight"));
        let b_out = b.param(g, &format!("{l}.ffn.output.bias"));
        let inner = g.matmul(normed, w_in);
        let inner = g.add_row(inner, b_in);
        let inner = g.gelu(inner);
        let ffn = g.matmul(inner, w_out);
        let ffn = g.add_row(ffn, b_out);
        h = g.add(h, ffn);
    }
    layer_norm(g, b, &format!("{p}.final_norm"), h)
}

/// Per-position next-token log-probabilities of the decoder (`len × vocab`).
pub fn decoder_log_probs_graph<T: Real>(
    g: &mut Graph<T>,
    b: &mut Binder<'_, T>,
    config: &ModelConfig,
    ids: &[TokenId],
    memory: Var,
) -> Var {
    let h = stack_forward(g, b, config, Stack::Decoder, ids, Some(memory));
    let table = b.param(g, "decoder.embeddings.token");
    let logits = g.matmul_t(h, table);
    g.log_softmax_rows(logits)
}

/// Encoder forward on any tensor map holding the encoder stack.
pub fn encode_with<T: Real>(
    config: &ModelConfig,
    tensors: &TensorMap<T>,
    input: &[TokenId],
) -> Result<SequenceStates<T>, ModelError> {
    check_ids(input, config, "encoder input")?;
    let mut g = Graph::new();
    let mut b = Binder::new(tensors);
    let out = stack_forward(&mut g, &mut b, config, Stack::Encoder, input, None);
    Ok(SequenceStates { rows: g.value(out).clone() })
}

/// All learnable weights of the encoder-decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderDecoderModel<T = f32> {
    config: ModelConfig,
    tensors: TensorMap<T>,
}

impl<T: Real> EncoderDecoderModel<T> {
    pub fn new(config: ModelConfig, tensors: TensorMap<T>) -> Result<Self, ModelError> {
        config.validate()?;
        audit_shapes(&encoder_decoder_shapes(&config), &tensors)?;
        Ok(Self { config, tensors })
    }

    /// A model with every weight drawn from normal(0, std²).
    pub fn random(config: ModelConfig, seed: u64, std: f64) -> Result<Self, ModelError> {
        config.validate()?;
        let tensors = random_tensors(&encoder_decoder_shapes(&config), seed, std);
        Ok(Self { config, tensors })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn tensors(&self) -> &TensorMap<T> {
        &self.tensors
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    /// Mutable access for optimizers; callers must keep shapes intact.
    pub fn tensors_mut(&mut self) -> &mut TensorMap<T> {
        &mut self.tensors
    }

    pub fn into_tensors(self) -> TensorMap<T> {
        self.tensors
    }

    pub fn shape_audit(&self) -> Result<(), ModelError> {
        audit_shapes(&encoder_decoder_shapes(&self.config), &self.tensors)
    }

    pub fn cast<U: Real>(&self) -> EncoderDecoderModel<U> {
        EncoderDecoderModel {
            config: self.config,
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    pub fn encoder_forward(&self, input: &[TokenId]) -> Result<SequenceStates<T>, ModelError> {
        encode_with(&self.config, &self.tensors, input)
    }

    fn check_decoder_inputs(&self, prefix: &[TokenId], memory: &SequenceStates<T>) -> Result<(), ModelError> {
        check_ids(prefix, &self.config, "decoder prefix")?;
        if memory.is_empty() {
            return Err(ModelError::EmptySequence("encoder memory"));
        }
        if memory.rows.cols() != self.config.hidden_size {
            return Err(ModelError::MemoryWidth {
                expected: self.config.hidden_size,
                found: memory.rows.cols(),
            });
        }
        Ok(())
    }

    /// Next-token log-probabilities at every prefix position (`len × vocab`).
    pub fn decoder_log_probs(
        &self,
        prefix: &[TokenId],
        memory: &SequenceStates<T>,
    ) -> Result<Tensor<T>, ModelError> {
        self.check_decoder_inputs(prefix, memory)?;
        let mut g = Graph::new();
        let mut b = Binder::new(&self.tensors);
        let mem = g.leaf(memory.rows.clone());
        let out = decoder_log_probs_graph(&mut g, &mut b, &self.config, prefix, mem);
        Ok(g.value(out).clone())
    }

    /// Log-distribution over the token following `prefix`.
    pub fn decoder_forward(
        &self,
        prefix: &[TokenId],
        memory: &SequenceStates<T>,
    ) -> Result<Vec<T>, ModelError> {
        let all = self.decoder_log_probs(prefix, memory)?;
        Ok(all.row(all.rows() - 1).to_vec())
    }

    /// Encoder and decoder attention maps for one input/prefix pair.
    pub fn attention_maps(
        &self,
        input: &[TokenId],
        prefix: &[TokenId],
    ) -> Result<Vec<Tensor<T>>, ModelError> {
        check_ids(input, &self.config, "encoder input")?;
        check_ids(prefix, &self.config, "decoder prefix")?;
        let mut g = Graph::new();
        let mut b = Binder::new(&self.tensors);
        let mem = stack_forward(&mut g, &mut b, &self.config, Stack::Encoder, input, None);
        decoder_log_probs_graph(&mut g, &mut b, &self.config, prefix, mem);
        Ok(g.attention_maps().cloned().collect())
    }
}
