use std::fs;
use std::io::{self, Read};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde_json::json;

use seqsum::dataset::{compute_stats, load_corpus};
use seqsum::pipeline::{check_vocab, Preset, TextPipeline};
use seqsum::rouge::{corpus_rouge, render_table, render_tsv};
use seqsum::text::{encode_special_tokens, TASK_PREFIX};
use seqsum::training::fine_tune;
use seqsum::transformer::ModelConfig;
use seqsum::warmstart::{load_checkpoint, load_model, model_to_ntar, warm_start_b2b, Checkpoint};
use seqsum::{GenerationConfig, TrainConfig, Vocabulary};

use crate::output::{manifest_path_for, path_value, write_atomic, RunManifest};
use crate::UsageError;

fn task_prefix_value(preset: Preset) -> serde_json::Value {
    if preset.uses_task_prefix() {
        json!(TASK_PREFIX)
    } else {
        serde_json::Value::Null
    }
}

fn read_vocab(path: &Path) -> Result<Vocabulary> {
    Vocabulary::load(path).with_context(|| format!("cannot load vocabulary {}", path.display()))
}

pub struct BuildVocab {
    pub corpus: PathBuf,
    pub out: PathBuf,
    pub preset: Preset,
    pub max_size: usize,
}

pub fn build_vocab(args: BuildVocab) -> Result<()> {
    let docs = load_corpus(&args.corpus).with_context(|| format!("cannot load {}", args.corpus.display()))?;
    let marker = args.preset.marker();
    let mut texts = Vec::with_capacity(docs.len() * 2);
    for d in &docs {
        let article = if args.preset.uses_task_prefix() {
            seqsum::text::apply_task_prefix(&d.article)
        } else {
            d.article.clone()
        };
        for t in [article.as_str(), d.summary.as_str()] {
            let enc = encode_special_tokens(t, marker).with_context(|| format!("document {:?}", d.id))?;
            texts.push(enc.into_content());
        }
    }
    let vocab = Vocabulary::build_with_marker(texts.iter().map(String::as_str), args.max_size, marker)?;
    write_atomic(&args.out, vocab.to_file_contents().as_bytes())?;

    let mut m = RunManifest::new("build-vocab");
    m.inputs = json!({ "corpus": path_value(&args.corpus) });
    m.outputs = json!({ "vocab": path_value(&args.out) });
    m.config = json!({
        "preset": args.preset.name(),
        "marker": marker,
        "max_size": args.max_size,
        "size": vocab.len(),
        "task_prefix": task_prefix_value(args.preset),
    });
    m.write(&manifest_path_for(&args.out))?;
    eprintln!("wrote {} entries to {}", vocab.len(), args.out.display());
    Ok(())
}

pub struct InitEncoder {
    pub vocab: PathBuf,
    pub out: PathBuf,
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub ffn: usize,
    pub max_positions: usize,
    pub std: f64,
    pub seed: u64,
}

pub fn init_encoder(args: InitEncoder) -> Result<()> {
    let vocab = read_vocab(&args.vocab)?;
    let config = ModelConfig {
        num_layers: args.layers,
        hidden_size: args.hidden,
        num_heads: args.heads,
        ffn_size: args.ffn,
        vocab_size: vocab.len(),
        max_positions: args.max_positions,
    };
    config.validate().map_err(|e| UsageError(e.to_string()))?;
    if !(args.std > 0.0 && args.std.is_finite()) {
        return Err(UsageError("--std must be positive".into()).into());
    }
    let ckpt = Checkpoint::random(config, args.seed, args.std)?;
    write_atomic(&args.out, &ckpt.to_ntar().to_bytes())?;

    let mut m = RunManifest::new("init-encoder");
    m.seed = Some(args.seed);
    m.inputs = json!({ "vocab": path_value(&args.vocab) });
    m.outputs = json!({ "checkpoint": path_value(&args.out) });
    m.config = json!({ "model": config_json(&config), "init_std": args.std });
    m.write(&manifest_path_for(&args.out))
}

fn config_json(c: &ModelConfig) -> serde_json::Value {
    json!({
        "num_layers": c.num_layers,
        "hidden_size": c.hidden_size,
        "num_heads": c.num_heads,
        "ffn_size": c.ffn_size,
        "vocab_size": c.vocab_size,
        "max_positions": c.max_positions,
    })
}

pub struct WarmStart {
    pub checkpoint: PathBuf,
    pub out: PathBuf,
    pub seed: u64,
}

pub fn warm_start(args: WarmStart) -> Result<()> {
    let ckpt = load_checkpoint(&args.checkpoint)
        .with_context(|| format!("cannot load checkpoint {}", args.checkpoint.display()))?;
    let model = warm_start_b2b(&ckpt, args.seed)?;
    write_atomic(&args.out, &model_to_ntar(&model).to_bytes())?;

    let mut m = RunManifest::new("warm-start");
    m.seed = Some(args.seed);
    m.inputs = json!({ "checkpoint": path_value(&args.checkpoint) });
    m.outputs = json!({ "model": path_value(&args.out) });
    m.config = json!({
        "model": config_json(model.config()),
        "cross_attention_init": { "distribution": "normal", "mean": 0.0, "std": seqsum::warmstart::CROSS_ATTENTION_INIT_STD },
    });
    m.write(&manifest_path_for(&args.out))
}

pub struct Finetune {
    pub model: PathBuf,
    pub vocab: PathBuf,
    pub corpus: PathBuf,
    pub out: PathBuf,
    pub log: Option<PathBuf>,
    pub preset: Preset,
    pub learning_rate: Option<f64>,
    pub warmup_steps: Option<u64>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub seed: u64,
}

pub fn resolve_train_config(args: &Finetune) -> TrainConfig {
    let mut cfg = args.preset.train_config();
    if let Some(v) = args.learning_rate {
        cfg.learning_rate = v;
    }
    if let Some(v) = args.warmup_steps {
        cfg.warmup_steps = v;
    }
    if let Some(v) = args.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = args.epochs {
        cfg.epochs = v;
    }
    cfg.seed = args.seed;
    cfg
}

pub fn finetune(args: Finetune) -> Result<()> {
    let cfg = resolve_train_config(&args);
    cfg.validate().map_err(|e| UsageError(e.to_string()))?;
    let mut model =
        load_model(&args.model).with_context(|| format!("cannot load model {}", args.model.display()))?;
    let vocab = read_vocab(&args.vocab)?;
    check_vocab(&vocab, &model)?;
    let docs = load_corpus(&args.corpus).with_context(|| format!("cannot load {}", args.corpus.display()))?;
    if docs.is_empty() {
        bail!("corpus {} has no documents", args.corpus.display());
    }
    let pipe = TextPipeline::new(&vocab, args.preset.uses_task_prefix());
    let max_positions = model.config().max_positions;
    let data = docs
        .iter()
        .map(|d| {
            pipe.encode_pair(&d.article, &d.summary, max_positions)
                .with_context(|| format!("document {:?}", d.id))
        })
        .collect::<Result<Vec<_>>>()?;

    let report = fine_tune(&mut model, &data, &cfg)?;
    let log_path = args.log.clone().unwrap_or_else(|| {
        let mut p = args.out.as_os_str().to_owned();
        p.push(".loss.log");
        PathBuf::from(p)
    });
    let mut log = String::new();
    for r in &report.records {
        log.push_str(&r.to_line());
        log.push('\n');
    }
    write_atomic(&args.out, &model_to_ntar(&model).to_bytes())?;
    write_atomic(&log_path, log.as_bytes())?;

    let mut m = RunManifest::new("finetune");
    m.seed = Some(cfg.seed);
    m.inputs = json!({
        "model": path_value(&args.model),
        "vocab": path_value(&args.vocab),
        "corpus": path_value(&args.corpus),
    });
    m.outputs = json!({ "model": path_value(&args.out), "loss_log": path_value(&log_path) });
    m.config = json!({
        "preset": args.preset.name(),
        "optimizer": "adam",
        "learning_rate": cfg.learning_rate,
        "warmup_steps": cfg.warmup_steps,
        "batch_size": cfg.batch_size,
        "epochs": cfg.epochs,
        "adam_beta1": cfg.adam_beta1,
        "adam_beta2": cfg.adam_beta2,
        "adam_epsilon": cfg.adam_epsilon,
        "task_prefix": task_prefix_value(args.preset),
        "max_positions": max_positions,
        "documents": docs.len(),
    });
    m.write(&manifest_path_for(&args.out))?;
    if let (Some(first), Some(last)) = (report.epoch_losses.first(), report.epoch_losses.last()) {
        eprintln!("mean loss {first:.4} (epoch 1) -> {last:.4} (epoch {})", cfg.epochs);
    }
    Ok(())
}

pub struct Summarize {
    pub model: PathBuf,
    pub vocab: PathBuf,
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub preset: Preset,
    pub num_beams: Option<usize>,
    pub no_repeat_ngram_size: Option<usize>,
    pub length_penalty: Option<f64>,
    pub early_stopping: Option<bool>,
    pub max_length: Option<usize>,
    pub min_length: Option<usize>,
}

pub fn resolve_generation_config(args: &Summarize) -> GenerationConfig {
    let mut cfg = args.preset.generation_config();
    if let Some(v) = args.num_beams {
        cfg.num_beams = v;
    }
    if let Some(v) = args.no_repeat_ngram_size {
        cfg.no_repeat_ngram_size = v;
    }
    if let Some(v) = args.length_penalty {
        cfg.length_penalty = v;
    }
    if let Some(v) = args.early_stopping {
        cfg.early_stopping = v;
    }
    if let Some(v) = args.max_length {
        cfg.max_length = v;
    }
    if let Some(v) = args.min_length {
        cfg.min_length = v;
    }
    cfg
}

pub fn summarize(args: Summarize) -> Result<()> {
    let cfg = resolve_generation_config(&args);
    cfg.validate().map_err(UsageError)?;
    let model =
        load_model(&args.model).with_context(|| format!("cannot load model {}", args.model.display()))?;
    let vocab = read_vocab(&args.vocab)?;
    check_vocab(&vocab, &model)?;
    let text = match &args.input {
        Some(p) => fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?,
        None => {
            let mut s = String::new();
            io::stdin().read_to_string(&mut s)?;
            s
        }
    };
    let pipe = TextPipeline::new(&vocab, args.preset.uses_task_prefix());
    let mut out = String::new();
    for (i, line) in text.lines().enumerate() {
        if !line.trim().is_empty() {
            let summary =
                pipe.summarize(&model, line, &cfg).with_context(|| format!("input line {}", i + 1))?;
            out.push_str(&summary);
        }
        out.push('\n');
    }
    match &args.output {
        Some(p) => write_atomic(p, out.as_bytes())?,
        None => print!("{out}"),
    }

    let manifest_path = args.manifest.clone().or_else(|| args.output.as_deref().map(manifest_path_for));
    if let Some(path) = manifest_path {
        let mut m = RunManifest::new("summarize");
        m.inputs = json!({
            "model": path_value(&args.model),
            "vocab": path_value(&args.vocab),
            "documents": args.input.as_deref().map_or(json!("<stdin>"), path_value),
        });
        m.outputs = json!({ "summaries": args.output.as_deref().map_or(json!("<stdout>"), path_value) });
        m.config = json!({
            "preset": args.preset.name(),
            "num_beams": cfg.num_beams,
            "no_repeat_ngram_size": cfg.no_repeat_ngram_size,
            "length_penalty": cfg.length_penalty,
            "early_stopping": cfg.early_stopping,
            "max_length": cfg.max_length,
            "min_length": cfg.min_length,
            "task_prefix": task_prefix_value(args.preset),
        });
        m.write(&path)?;
    }
    Ok(())
}

pub struct Evaluate {
    pub candidates: PathBuf,
    pub references: PathBuf,
    pub name: String,
    pub tsv: Option<PathBuf>,
}

pub fn evaluate(args: Evaluate) -> Result<()> {
    let read = |p: &Path| fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()));
    let cands = read(&args.candidates)?;
    let refs = read(&args.references)?;
    let cands: Vec<&str> = cands.lines().collect();
    let refs: Vec<&str> = refs.lines().collect();
    if cands.len() != refs.len() {
        bail!(
            "{} has {} lines but {} has {}",
            args.candidates.display(),
            cands.len(),
            args.references.display(),
            refs.len()
        );
    }
    let pairs: Vec<(&str, &str)> = cands.into_iter().zip(refs).collect();
    let scores = corpus_rouge(&pairs)?;
    let rows = [(args.name.as_str(), scores)];
    print!("{}", render_table(&rows));
    if let Some(path) = &args.tsv {
        write_atomic(path, render_tsv(&rows).as_bytes())?;
        let mut m = RunManifest::new("evaluate");
        m.inputs =
            json!({ "candidates": path_value(&args.candidates), "references": path_value(&args.references) });
        m.outputs = json!({ "report": path_value(path) });
        m.config = json!({ "model_name": args.name, "documents": pairs.len() });
        m.write(&manifest_path_for(path))?;
    }
    Ok(())
}

pub struct Stats {
    pub corpus: PathBuf,
    pub report: Option<PathBuf>,
    pub plot: Option<PathBuf>,
}

pub fn stats(args: Stats) -> Result<()> {
    let docs = load_corpus(&args.corpus).with_context(|| format!("cannot load {}", args.corpus.display()))?;
    let stats = compute_stats(&docs);
    let report = stats.to_report();
    print!("{report}");
    if let Some(p) = &args.plot {
        write_atomic(p, stats.to_plot_data().as_bytes())?;
    }
    if let Some(p) = &args.report {
        write_atomic(p, report.as_bytes())?;
        let mut m = RunManifest::new("stats");
        m.inputs = json!({ "corpus": path_value(&args.corpus) });
        m.outputs = json!({
            "report": path_value(p),
            "plot_data": args.plot.as_deref().map(path_value),
        });
        m.config = json!({ "summary_length_bucket_width": seqsum::dataset::LENGTH_BUCKET_WIDTH });
        m.write(&manifest_path_for(p))?;
    }
    Ok(())
}
