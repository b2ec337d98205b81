use std::num::NonZeroUsize;
use std::path::PathBuf;
use std::process::ExitCode;

use afn::pipeline::{self, AnalysisConfig, AnalysisOptions, OutputFormat};
use afn::{AfnError, Result};
use afn_core::metrics::TokenFilter;
use afn_core::Padding;
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Token activation strength and shift analysis for BERT encoders.
#[derive(Debug, Parser)]
#[command(name = "afn", version)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// Checkpoint in safetensors format.
    #[arg(long, global = true)]
    model: Option<PathBuf>,
    /// WordPiece vocabulary, one token per line.
    #[arg(long, global = true)]
    vocab: Option<PathBuf>,
    /// HF-style config.json; defaults to one next to the model, else bert-base.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Hidden-state layer; 0 is the embedding output.
    #[arg(long, global = true, default_value_t = pipeline::DEFAULT_LAYER as u8,
          value_parser = clap::value_parser!(u8).range(0..=12))]
    layer: u8,
    #[arg(long, global = true, value_enum, default_value_t = FilterArg::Words)]
    filter: FilterArg,
    #[arg(long = "top-k", global = true, default_value_t = NonZeroUsize::new(pipeline::DEFAULT_TOP_K).unwrap())]
    top_k: NonZeroUsize,
    #[arg(long, global = true, value_enum, default_value_t = FormatArg::Json)]
    format: FormatArg,
    /// Output directory.
    #[arg(long, global = true, default_value = "afn-out")]
    out: PathBuf,
    /// Pad inputs to the model's maximum length.
    #[arg(long, global = true)]
    pad: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Per-token strengths, top-k ranking and buckets for one sentence.
    Strength { sentence: String },
    /// Per-token shift between two equal-length sentences.
    Shift { sentence_a: String, sentence_b: String },
    /// Drift of a sentence under different prompt prefixes.
    PromptShift {
        sentence: String,
        /// Prompt prepended to the sentence; give at least two.
        #[arg(long = "prompt", required = true)]
        prompts: Vec<String>,
    },
    /// Strength reports for every line of a text file.
    Corpus { path: PathBuf },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FilterArg {
    All,
    NoSpecial,
    Words,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
}

fn config(g: GlobalArgs) -> Result<AnalysisConfig> {
    let missing = |flag: &str| AfnError::Usage(format!("--{flag} is required"));
    Ok(AnalysisConfig {
        model: g.model.ok_or_else(|| missing("model"))?,
        vocab: g.vocab.ok_or_else(|| missing("vocab"))?,
        model_config: g.config,
        options: AnalysisOptions {
            layer: usize::from(g.layer),
            filter: match g.filter {
                FilterArg::All => TokenFilter::All,
                FilterArg::NoSpecial => TokenFilter::NoSpecial,
                FilterArg::Words => TokenFilter::WordsOnly,
            },
            top_k: g.top_k,
            padding: if g.pad { Padding::ToMaxLen } else { Padding::Off },
        },
        format: match g.format {
            FormatArg::Json => OutputFormat::Json,
            FormatArg::Csv => OutputFormat::Csv,
        },
        out_dir: g.out,
    })
}

fn run(cli: Cli) -> Result<()> {
    let config = config(cli.global)?;
    match cli.command {
        Command::Strength { sentence } => pipeline::cmd_strength(&config, &sentence).map(drop),
        Command::Shift { sentence_a, sentence_b } => pipeline::cmd_shift(&config, &sentence_a, &sentence_b).map(drop),
        Command::PromptShift { sentence, prompts } => {
            pipeline::cmd_prompt_shift(&config, &sentence, &prompts).map(drop)
        }
        Command::Corpus { path } => {
            let report = pipeline::cmd_corpus(&config, &path)?;
            if report.summary.failed_count > 0 {
                log::warn!("{} sentence(s) failed", report.summary.failed_count);
            }
            Ok(())
        }
    }?;
    log::info!("reports written to {}", config.out_dir.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
