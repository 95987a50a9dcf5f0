//! Test-only oracles. Nothing here calls into the code paths it checks: the
//! dense-algebra reference model, the exhaustive decoders and the brute-force
//! ROUGE counters are written from scratch with plain vectors.

#![allow(dead_code)]

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seqsum::decoding::NextTokenScorer;
use seqsum::tensor::Tensor;
use seqsum::tokenizer::{TokenId, DECODER_START_ID, EOS_ID};
use seqsum::transformer::{EncoderDecoderModel, ModelConfig, ModelError, TensorMap};

// ---------------------------------------------------------------------------
// Toy models

pub fn toy_config(vocab_size: usize, num_layers: usize) -> ModelConfig {
    ModelConfig { num_layers, hidden_size: 8, num_heads: 2, ffn_size: 16, vocab_size, max_positions: 16 }
}

/// Random encoder-decoder with weights large enough to give peaked
/// next-token distributions.
pub fn toy_model(seed: u64, vocab_size: usize, num_layers: usize) -> EncoderDecoderModel<f32> {
    EncoderDecoderModel::random(toy_config(vocab_size, num_layers), seed, 0.5).unwrap()
}

pub fn random_ids(rng: &mut impl Rng, len: usize, vocab: usize) -> Vec<TokenId> {
    (0..len).map(|_| rng.random_range(0..vocab as TokenId)).collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Next-token table keyed by the generated prefix (decoder-start removed).
pub struct TableLm {
    pub vocab: usize,
    pub table: HashMap<Vec<TokenId>, Vec<f32>>,
    pub fallback: Vec<f32>,
}

impl TableLm {
    pub fn new(vocab: usize) -> Self {
        Self { vocab, table: HashMap::new(), fallback: vec![(1.0 / vocab as f32).ln(); vocab] }
    }

    /// Sets `P(token | prefix)` from `(token, probability)` pairs; unlisted
    /// tokens share the remaining mass equally.
    pub fn set(&mut self, prefix: &[TokenId], probs: &[(TokenId, f32)]) {
        let listed: f32 = probs.iter().map(|p| p.1).sum();
        let rest = self.vocab - probs.len();
        let each = if rest > 0 { (1.0 - listed) / rest as f32 } else { 0.0 };
        let mut row = vec![each.max(1e-30).ln(); self.vocab];
        for &(t, p) in probs {
            row[t as usize] = p.ln();
        }
        self.table.insert(prefix.to_vec(), row);
    }
}

impl NextTokenScorer for TableLm {
    fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn next_log_probs(&self, prefix: &[TokenId]) -> Result<Vec<f32>, ModelError> {
        assert_eq!(prefix[0], DECODER_START_ID);
        Ok(self.table.get(&prefix[1..]).cloned().unwrap_or_else(|| self.fallback.clone()))
    }
}

// ---------------------------------------------------------------------------
// Exhaustive decoding oracle

/// Best eos-terminated sequence of length ≤ `max_len` by cumulative
/// log-probability, found by enumerating every sequence.
pub fn exhaustive_best(scorer: &impl NextTokenScorer, max_len: usize) -> (Vec<TokenId>, f64) {
    let v = scorer.vocab_size() as TokenId;
    let mut best: Option<(Vec<TokenId>, f64)> = None;
    let mut stack: Vec<(Vec<TokenId>, f64)> = vec![(vec![], 0.0)];
    while let Some((seq, lp)) = stack.pop() {
        if seq.len() == max_len {
            continue;
        }
        let mut prefix = vec![DECODER_START_ID];
        prefix.extend(&seq);
        let step = scorer.next_log_probs(&prefix).unwrap();
        for tok in 0..v {
            let mut next = seq.clone();
            next.push(tok);
            let total = lp + f64::from(step[tok as usize]);
            if tok == EOS_ID {
                if best.as_ref().is_none_or(|(_, b)| total > *b) {
                    best = Some((next, total));
                }
            } else {
                stack.push((next, total));
            }
        }
    }
    best.unwrap()
}

// ---------------------------------------------------------------------------
// Dense-algebra reference transformer (f64, nested Vec)

type Mat = Vec<Vec<f64>>;

fn mat(t: &TensorMap<f64>, name: &str) -> Mat {
    let t = &t[name];
    let (r, c) = (t.dims()[0], t.dims()[1]);
    (0..r).map(|i| t.data()[i * c..(i + 1) * c].to_vec()).collect()
}

fn vecf(t: &TensorMap<f64>, name: &str) -> Vec<f64> {
    t[name].data().to_vec()
}

fn linear(x: &Mat, w: &Mat, b: &[f64]) -> Mat {
    x.iter()
        .map(|row| {
            (0..b.len()).map(|j| b[j] + (0..row.len()).map(|k| row[k] * w[k][j]).sum::<f64>()).collect()
        })
        .collect()
}

fn add(a: &Mat, b: &Mat) -> Mat {
    a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect()).collect()
}

fn norm(x: &Mat, scale: &[f64], shift: &[f64]) -> Mat {
    x.iter()
        .map(|row| {
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            row.iter()
                .enumerate()
                .map(|(j, v)| (v - mean) / (var + 1e-5).sqrt() * scale[j] + shift[j])
                .collect()
        })
        .collect()
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
}

fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

fn attend(t: &TensorMap<f64>, p: &str, heads: usize, q_in: &Mat, kv_in: &Mat, causal: bool) -> Mat {
    let q = linear(q_in, &mat(t, &format!("{p}.query.weight")), &vecf(t, &format!("{p}.query.bias")));
    let k = linear(kv_in, &mat(t, &format!("{p}.key.weight")), &vecf(t, &format!("{p}.key.bias")));
    let v = linear(kv_in, &mat(t, &format!("{p}.value.weight")), &vecf(t, &format!("{p}.value.bias")));
    let d = q[0].len();
    let hd = d / heads;
    let mut ctx = vec![vec![0.0; d]; q.len()];
    for h in 0..heads {
        let cols = h * hd..(h + 1) * hd;
        for i in 0..q.len() {
            let visible = if causal { i + 1 } else { k.len() };
            let scores: Vec<f64> = (0..visible)
                .map(|j| cols.clone().map(|c| q[i][c] * k[j][c]).sum::<f64>() / (hd as f64).sqrt())
                .collect();
            let w = softmax(&scores);
            for c in cols.clone() {
                ctx[i][c] = (0..visible).map(|j| w[j] * v[j][c]).sum();
            }
        }
    }
    linear(&ctx, &mat(t, &format!("{p}.output.weight")), &vecf(t, &format!("{p}.output.bias")))
}

/// Hidden states after the final norm of one stack.
pub fn oracle_stack(
    t: &TensorMap<f64>,
    cfg: &ModelConfig,
    stack: &str,
    ids: &[TokenId],
    memory: Option<&Mat>,
) -> Mat {
    let tok = mat(t, &format!("{stack}.embeddings.token"));
    let pos = mat(t, &format!("{stack}.embeddings.position"));
    let mut h: Mat = ids
        .iter()
        .enumerate()
        .map(|(i, &id)| tok[id as usize].iter().zip(&pos[i]).map(|(a, b)| a + b).collect())
        .collect();
    for l in 0..cfg.num_layers {
        let p = format!("{stack}.layers.{l}");
        let n =
            norm(&h, &vecf(t, &format!("{p}.attn_norm.scale")), &vecf(t, &format!("{p}.attn_norm.shift")));
        let a = attend(t, &format!("{p}.self_attn"), cfg.num_heads, &n, &n, memory.is_some());
        h = add(&h, &a);
        if let Some(mem) = memory {
            let c = attend(t, &format!("{p}.cross_attn"), cfg.num_heads, &h, mem, false);
            h = add(&h, &c);
        }
        let n = norm(&h, &vecf(t, &format!("{p}.ffn_norm.scale")), &vecf(t, &format!("{p}.ffn_norm.shift")));
        let mut inner =
            linear(&n, &mat(t, &format!("{p}.ffn.input.weight")), &vecf(t, &format!("{p}.ffn.input.bias")));
        for row in inner.iter_mut() {
            for v in row.iter_mut() {
                *v = gelu(*v);
            }
        }
        let f = linear(
            &inner,
            &mat(t, &format!("{p}.ffn.output.weight")),
            &vecf(t, &format!("{p}.ffn.output.bias")),
        );
        h = add(&h, &f);
    }
    norm(&h, &vecf(t, &format!("{stack}.final_norm.scale")), &vecf(t, &format!("{stack}.final_norm.shift")))
}

/// Per-position decoder log-probabilities.
pub fn oracle_decoder_log_probs(
    t: &TensorMap<f64>,
    cfg: &ModelConfig,
    input: &[TokenId],
    prefix: &[TokenId],
) -> Mat {
    let mem = oracle_stack(t, cfg, "encoder", input, None);
    let h = oracle_stack(t, cfg, "decoder", prefix, Some(&mem));
    let emb = mat(t, "decoder.embeddings.token");
    h.iter()
        .map(|row| {
            let logits: Vec<f64> = emb.iter().map(|e| e.iter().zip(row).map(|(a, b)| a * b).sum()).collect();
            softmax(&logits).iter().map(|p| p.ln()).collect()
        })
        .collect()
}

/// Teacher-forced mean cross-entropy over non-pad targets.
pub fn oracle_loss(t: &TensorMap<f64>, cfg: &ModelConfig, input: &[TokenId], target: &[TokenId]) -> f64 {
    let mut prefix = vec![DECODER_START_ID];
    prefix.extend(&target[..target.len() - 1]);
    let lp = oracle_decoder_log_probs(t, cfg, input, &prefix);
    let picks: Vec<f64> =
        target.iter().enumerate().filter(|(_, &w)| w != 0).map(|(i, &w)| -lp[i][w as usize]).collect();
    picks.iter().sum::<f64>() / picks.len() as f64
}

/// Deterministic "hand-set" weights: a fixed trigonometric pattern per tensor.
pub fn hand_set_tensors(shapes: &[(String, Vec<usize>)]) -> TensorMap<f64> {
    shapes
        .iter()
        .enumerate()
        .map(|(k, (name, dims))| {
            let n: usize = dims.iter().product();
            let data: Vec<f64> = if name.ends_with("norm.scale") {
                (0..n).map(|i| 1.0 + 0.1 * ((i + k) as f64).cos()).collect()
            } else {
                (0..n).map(|i| 0.4 * ((i * 7 + k * 13) as f64 * 0.37).sin()).collect()
            };
            (name.clone(), Tensor::from_vec(dims.clone(), data))
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Brute-force ROUGE

/// Clipped n-gram overlap by a quadratic scan with a used-flag per reference
/// n-gram.
pub fn naive_overlap(cand: &[String], refs: &[String], n: usize) -> (usize, usize, usize) {
    let grams = |t: &[String]| -> Vec<Vec<String>> {
        if t.len() < n {
            return vec![];
        }
        (0..=t.len() - n).map(|i| t[i..i + n].to_vec()).collect()
    };
    let (c, r) = (grams(cand), grams(refs));
    let mut used = vec![false; r.len()];
    let mut overlap = 0;
    for g in &c {
        if let Some(j) = (0..r.len()).find(|&j| !used[j] && r[j] == *g) {
            used[j] = true;
            overlap += 1;
        }
    }
    (overlap, c.len(), r.len())
}

/// LCS length by enumerating every subsequence of the shorter list.
pub fn lcs_by_enumeration<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let is_subsequence = |sub: &[&T]| {
        let mut it = long.iter();
        sub.iter().all(|x| it.any(|y| y == *x))
    };
    let mut best = 0;
    for mask in 0u32..(1 << short.len()) {
        let sub: Vec<&T> = (0..short.len()).filter(|i| mask >> i & 1 == 1).map(|i| &short[i]).collect();
        if sub.len() > best && is_subsequence(&sub) {
            best = sub.len();
        }
    }
    best
}

pub fn f1(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

/// `(precision, recall, f1)` from counts, zero when either side is empty.
pub fn prf(overlap: usize, c: usize, r: usize) -> (f64, f64, f64) {
    if c == 0 || r == 0 {
        return (0.0, 0.0, 0.0);
    }
    let (p, rc) = (overlap as f64 / c as f64, overlap as f64 / r as f64);
    (p, rc, f1(p, rc))
}

pub fn random_words(rng: &mut impl Rng, max_len: usize, vocab: usize) -> Vec<String> {
    let len = rng.random_range(0..=max_len);
    (0..len).map(|_| format!("w{}", rng.random_range(0..vocab))).collect()
}

// ---------------------------------------------------------------------------
// Overfit scenario shared by the training tests and the acceptance suite

pub const TOY_PAIRS: [(&str, &str); 8] = [
    ("بازار سهام امروز رشد کرد", "بازار سهام رشد"),
    ("تیم ملی فوتبال برنده شد", "تیم ملی برنده"),
    ("قیمت نفت در بازار کاهش یافت", "قیمت نفت کاهش"),
    ("کتاب\u{200C}های تازه منتشر شد", "کتاب\u{200C}های تازه منتشر"),
    ("باران شدید در تهران بارید", "باران شدید تهران"),
    ("دولت بودجه جدید را تصویب کرد", "دولت بودجه تصویب"),
    ("نمایشگاه کتاب فردا آغاز می\u{200C}شود", "نمایشگاه کتاب آغاز"),
    ("دانشگاه\u{200C}ها ترم جدید را شروع کردند", "دانشگاه\u{200C}ها ترم شروع"),
];

pub struct OverfitOutcome {
    pub first_epoch_loss: f64,
    pub last_epoch_loss: f64,
    pub rouge1_f1: f64,
    pub log: Vec<String>,
    pub seconds: f64,
}

pub fn overfit_run(seed: u64) -> OverfitOutcome {
    use seqsum::pipeline::{Preset, TextPipeline};
    use seqsum::text::encode_special_tokens;
    use seqsum::training::fine_tune;
    use seqsum::{corpus_rouge, warm_start_b2b, Checkpoint, Vocabulary};

    let started = std::time::Instant::now();
    let preset = Preset::Bert2Bert;
    // the vocabulary is built over normalized text so it sees the marker
    let normalize = |t: &str| encode_special_tokens(t, preset.marker()).unwrap().into_content();
    let normalized: Vec<(String, String)> =
        TOY_PAIRS.iter().map(|(a, s)| (normalize(a), normalize(s))).collect();
    let vocab = Vocabulary::build_with_marker(
        normalized.iter().flat_map(|(a, s)| [a.as_str(), s.as_str()]),
        64,
        preset.marker(),
    )
    .unwrap();
    let pipe = TextPipeline::new(&vocab, preset.uses_task_prefix());

    let cfg = ModelConfig {
        num_layers: 2,
        hidden_size: 32,
        num_heads: 2,
        ffn_size: 64,
        vocab_size: vocab.len(),
        max_positions: 16,
    };
    let ckpt = Checkpoint::random(cfg, seed, 0.02).unwrap();
    let mut model = warm_start_b2b(&ckpt, seed + 1).unwrap();

    let data: Vec<_> =
        TOY_PAIRS.iter().map(|(a, s)| pipe.encode_pair(a, s, cfg.max_positions).unwrap()).collect();
    let mut train = preset.train_config();
    train.epochs = OVERFIT_EPOCHS;
    train.warmup_steps = OVERFIT_WARMUP;
    train.learning_rate = OVERFIT_LR;
    train.seed = seed;
    let report = fine_tune(&mut model, &data, &train).unwrap();

    let gen = seqsum::GenerationConfig { max_length: 8, ..preset.generation_config() };
    let pairs: Vec<(String, String)> =
        TOY_PAIRS.iter().map(|(a, s)| (pipe.summarize(&model, a, &gen).unwrap(), s.to_string())).collect();
    let rouge = corpus_rouge(&pairs).unwrap();
    OverfitOutcome {
        first_epoch_loss: report.epoch_losses[0],
        last_epoch_loss: *report.epoch_losses.last().unwrap(),
        rouge1_f1: rouge.rouge1.f1,
        log: report.records.iter().map(|r| r.to_line()).collect(),
        seconds: started.elapsed().as_secs_f64(),
    }
}

pub const OVERFIT_EPOCHS: usize = 60;
pub const OVERFIT_WARMUP: u64 = 10;
pub const OVERFIT_LR: f64 = 3e-3;

// ---------------------------------------------------------------------------
// Finite differences

pub struct GradSample {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradSample {
    pub fn relative_error(&self) -> f64 {
        let scale = self.analytic.abs().max(self.numeric.abs());
        if scale < 1e-8 {
            return 0.0;
        }
        (self.analytic - self.numeric).abs() / scale
    }
}

/// Central differences with step `h` on `samples` randomly chosen scalars of
/// a 2-layer f64 model, against the analytic gradient.
pub fn gradient_check(seed: u64, samples: usize, h: f64) -> Vec<GradSample> {
    use seqsum::training::{backward, cross_entropy_loss};

    let base = EncoderDecoderModel::<f32>::random(toy_config(10, 2), seed, 0.3).unwrap();
    let model: EncoderDecoderModel<f64> = base.cast();
    let input = [5, 6, 7, 3];
    let target = [8, 9, 6, EOS_ID];
    let (_, grads) = backward(&model, &input, &target).unwrap();

    let names: Vec<String> = model.tensors().keys().cloned().collect();
    let mut r = rng(seed ^ 0xabcdef);
    (0..samples)
        .map(|_| {
            let name = names[r.random_range(0..names.len())].clone();
            let index = r.random_range(0..model.tensors()[&name].len());
            let probe = |delta: f64| {
                let mut m = model.clone();
                m.tensors_mut().get_mut(&name).unwrap().data_mut()[index] += delta;
                cross_entropy_loss(&m, &input, &target).unwrap()
            };
            let numeric = (probe(h) - probe(-h)) / (2.0 * h);
            GradSample { analytic: grads[&name].data()[index], numeric, name, index }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Checkpoint fixtures

pub fn tiny_checkpoint(seed: u64) -> seqsum::Checkpoint {
    seqsum::Checkpoint::random(toy_config(12, 2), seed, 0.5).unwrap()
}

/// Bytes of a valid file cut in the middle of the last tensor's payload.
/// Returns the bytes and the name of the truncated tensor.
pub fn truncated_fixture(file: &seqsum::NtarFile) -> (Vec<u8>, String) {
    let bytes = file.to_bytes();
    let (last, t) = file.tensors.iter().last().unwrap();
    let cut = bytes.len() - t.len() * 2;
    (bytes[..cut].to_vec(), last.clone())
}

/// Mean and standard deviation of a slice, in f64.
pub fn moments(xs: &[f32]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
    let var = xs.iter().map(|&v| (f64::from(v) - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

// ---------------------------------------------------------------------------
// Dataset fixture

pub fn fixture_path(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// Counts for `five_rows.tsv`, tallied by hand from the file.
pub struct HandTally {
    pub total: usize,
    pub categories: &'static [(&'static str, usize)],
    pub sources: &'static [(&'static str, usize)],
    pub histogram: &'static [(usize, usize)],
}

pub const FIVE_ROW_TALLY: HandTally = HandTally {
    total: 5,
    categories: &[("Culture", 1), ("Economy", 3), ("Sport", 1)],
    sources: &[("IRNA", 2), ("Mehr", 1), ("Tasnim", 2)],
    // summary lengths 3, 4, 6, 12, 5
    histogram: &[(0, 2), (5, 2), (10, 1)],
};

pub fn tally_matches(stats: &seqsum::dataset::CorpusStats, tally: &HandTally) -> bool {
    let owned = |xs: &[(&str, usize)]| -> Vec<(String, usize)> {
        xs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    };
    stats.total_docs == tally.total
        && stats.category_freq.clone().into_iter().collect::<Vec<_>>() == owned(tally.categories)
        && stats.source_freq.clone().into_iter().collect::<Vec<_>>() == owned(tally.sources)
        && stats.summary_length_histogram.clone().into_iter().collect::<Vec<_>>() == tally.histogram
}
