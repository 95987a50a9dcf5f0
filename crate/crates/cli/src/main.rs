//! `seqsum`: vocabulary building, warm-starting, fine-tuning, summarization,
//! ROUGE evaluation and corpus statistics.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or validation error,
//! 3 numerical failure.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use seqsum::checkpoint::CheckpointError;
use seqsum::pipeline::{PipelineError, Preset};
use seqsum::training::TrainError;
use seqsum::transformer::ModelError;

/// A flag combination that parsed but cannot be honoured.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PresetArg {
    /// Warm-started encoder-decoder
    B2b,
    /// Text-to-text with the task prefix
    T2t,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::B2b => Preset::Bert2Bert,
            PresetArg::T2t => Preset::TextToText,
        }
    }
}

#[derive(Parser)]
#[command(name = "seqsum", version, about = "Warm-started encoder-decoder summarization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a whitespace vocabulary from a corpus TSV
    BuildVocab {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "b2b")]
        preset: PresetArg,
        #[arg(long, default_value_t = 30000)]
        max_size: usize,
    },
    /// Write a randomly initialized encoder-only checkpoint
    InitEncoder {
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2)]
        layers: usize,
        #[arg(long, default_value_t = 64)]
        hidden: usize,
        #[arg(long, default_value_t = 4)]
        heads: usize,
        #[arg(long, default_value_t = 256)]
        ffn: usize,
        #[arg(long, default_value_t = 128)]
        max_positions: usize,
        #[arg(long, default_value_t = 0.02)]
        std: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Build an encoder-decoder from an encoder-only checkpoint
    WarmStart {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Fine-tune an encoder-decoder on a corpus TSV
    Finetune {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Loss log path [default: <out>.loss.log]
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "b2b")]
        preset: PresetArg,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        warmup: Option<u64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Summarize one document per input line
    Summarize {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        /// Documents, one per line [default: standard input]
        #[arg(long)]
        input: Option<PathBuf>,
        /// Summaries, one per line [default: standard output]
        #[arg(long)]
        output: Option<PathBuf>,
        /// Manifest path [default: <output>.manifest.json]
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "b2b")]
        preset: PresetArg,
        #[arg(long)]
        num_beams: Option<usize>,
        #[arg(long)]
        no_repeat_ngram_size: Option<usize>,
        #[arg(long, allow_negative_numbers = true)]
        length_penalty: Option<f64>,
        #[arg(long)]
        early_stopping: Option<bool>,
        #[arg(long)]
        max_length: Option<usize>,
        #[arg(long)]
        min_length: Option<usize>,
    },
    /// Score candidate summaries against references with ROUGE
    Evaluate {
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long)]
        references: PathBuf,
        #[arg(long, default_value = "model")]
        name: String,
        /// Also write the scores as TSV
        #[arg(long)]
        tsv: Option<PathBuf>,
    },
    /// Corpus statistics report
    Stats {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
        /// Summary-length histogram as (bucket, count) rows
        #[arg(long)]
        plot: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    use commands as c;
    match cli.command {
        Command::BuildVocab { corpus, out, preset, max_size } => {
            c::build_vocab(c::BuildVocab { corpus, out, preset: preset.into(), max_size })
        }
        Command::InitEncoder { vocab, out, layers, hidden, heads, ffn, max_positions, std, seed } => {
            c::init_encoder(c::InitEncoder {
                vocab,
                out,
                layers,
                hidden,
                heads,
                ffn,
                max_positions,
                std,
                seed,
            })
        }
        Command::WarmStart { checkpoint, out, seed } => c::warm_start(c::WarmStart { checkpoint, out, seed }),
        Command::Finetune {
            model,
            vocab,
            corpus,
            out,
            log,
            preset,
            lr,
            warmup,
            batch_size,
            epochs,
            seed,
        } => c::finetune(c::Finetune {
            model,
            vocab,
            corpus,
            out,
            log,
            preset: preset.into(),
            learning_rate: lr,
            warmup_steps: warmup,
            batch_size,
            epochs,
            seed,
        }),
        Command::Summarize {
            model,
            vocab,
            input,
            output,
            manifest,
            preset,
            num_beams,
            no_repeat_ngram_size,
            length_penalty,
            early_stopping,
            max_length,
            min_length,
        } => c::summarize(c::Summarize {
            model,
            vocab,
            input,
            output,
            manifest,
            preset: preset.into(),
            num_beams,
            no_repeat_ngram_size,
            length_penalty,
            early_stopping,
            max_length,
            min_length,
        }),
        Command::Evaluate { candidates, references, name, tsv } => {
            c::evaluate(c::Evaluate { candidates, references, name, tsv })
        }
        Command::Stats { corpus, report, plot } => c::stats(c::Stats { corpus, report, plot }),
    }
}

fn is_numeric(cause: &(dyn std::error::Error + 'static)) -> bool {
    let non_finite = |m: &ModelError| matches!(m, ModelError::NonFinite(_));
    if let Some(e) = cause.downcast_ref::<TrainError>() {
        return matches!(e, TrainError::NonFiniteLoss(_))
            || matches!(e, TrainError::Model(m) if non_finite(m));
    }
    if let Some(CheckpointError::Model(m)) = cause.downcast_ref::<CheckpointError>() {
        return non_finite(m);
    }
    if let Some(PipelineError::Model(m)) = cause.downcast_ref::<PipelineError>() {
        return non_finite(m);
    }
    cause.downcast_ref::<ModelError>().is_some_and(non_finite)
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.chain().any(|c| c.is::<UsageError>()) {
        1
    } else if err.chain().any(is_numeric) {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
