//! `maskedspeech` command line: corpus preparation, training, synthesis,
//! editing and evaluation over run directories.

mod commands;
mod rundir;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use maskedspeech_core::Error;

pub use rundir::RunLock;

/// Exit status for success, bad input, and failures during the run.
pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

/// File written into every run directory with the resolved configuration.
pub const SNAPSHOT_FILE: &str = "config.snapshot";

#[derive(Debug, Parser)]
#[command(name = "maskedspeech", version, about = "Context-aware masked-reconstruction TTS")]
pub struct Cli {
    /// Log verbosity (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "warn")]
    pub log: String,

    #[command(subcommand)]
    pub command: Command,
}

/// Config inputs shared by every subcommand that resolves a [`RunConfig`](maskedspeech_core::config::RunConfig).
#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    /// Flat `section.key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Override one key, e.g. `--set train.peak_lr=5e-4`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = parse_kv)]
    pub set: Vec<(String, String)>,
}

fn parse_kv(s: &str) -> Result<(String, String), String> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .ok_or_else(|| format!("expected KEY=VALUE, got '{s}'"))
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Extract features and sentence-pair embeddings from a manifest.
    Prepare {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Pronunciation lexicon; defaults to `lexicon.txt` next to the manifest.
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train the acoustic model on a prepared data directory.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        max_steps: Option<u64>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Synthesize sentences of a paragraph.
    Synth {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// full-context, prev-speech-only or text-only.
        #[arg(long)]
        mode: Option<String>,
        /// Paragraph text, one sentence per line.
        #[arg(long, conflicts_with = "context_audio")]
        text: Option<PathBuf>,
        /// Prepared data directory supplying reference speech of neighbouring sentences.
        #[arg(long, requires = "paragraph")]
        context_audio: Option<PathBuf>,
        /// Paragraph id inside `--context-audio`.
        #[arg(long, requires = "context_audio")]
        paragraph: Option<String>,
        /// Synthesize only this sentence index.
        #[arg(long)]
        index: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Replace a phoneme span of a prepared utterance with new text.
    Edit {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        utterance: String,
        /// Phoneme range `A:B` (end exclusive), counting the leading silence.
        #[arg(long)]
        span: String,
        #[arg(long, default_value = "")]
        replacement: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Compare predicted mels against references with DTW-aligned metrics.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        /// Reference directory, or a prepared data directory.
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Write the deterministic synthetic corpus used by tests.
    #[command(hide = true)]
    MakeToyCorpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        paragraphs: usize,
        #[arg(long, default_value_t = 4)]
        sentences: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
        }
    };
    init_logging(&cli.log);
    match commands::dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_validation() {
        EXIT_VALIDATION
    } else {
        EXIT_RUNTIME
    }
}

fn init_logging(level: &str) {
    let filter = tracing_subscriber::EnvFilter::try_new(level)
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn"));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .try_init();
}
