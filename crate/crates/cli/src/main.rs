use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sancws::train::GradCheckOptions;
use sancws::RunConfig;
use sancws_cli::*;

#[derive(Parser)]
#[command(name = "sancws", version, about = "Self-attention CRF Chinese word segmenter")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Config override, repeatable; wins over the file and `SANCWS_*` variables.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> CliResult<RunConfig> {
        Ok(RunConfig::load(self.config.as_deref(), std::env::vars(), &self.overrides)?)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write its archive.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Space-segmented training corpus.
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        dev: PathBuf,
        /// Archive to write.
        #[arg(long)]
        out: PathBuf,
        /// JSON-lines training history.
        #[arg(long)]
        history: Option<PathBuf>,
        /// `word<TAB>POS` lexicon for the adaptation modes.
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[arg(long)]
        word_vectors: Option<PathBuf>,
        #[arg(long)]
        char_vectors: Option<PathBuf>,
        #[arg(long)]
        contextual: Option<PathBuf>,
    },
    /// Segment raw text lines (stdin by default).
    Segment {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[arg(long)]
        contextual: Option<PathBuf>,
    },
    /// Score a model against a segmented corpus.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        /// Width in characters of the sentence-length buckets.
        #[arg(long)]
        buckets: Option<usize>,
        /// File of target words, one per line.
        #[arg(long)]
        entities: Option<PathBuf>,
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[arg(long)]
        contextual: Option<PathBuf>,
    },
    /// Show the lexicon spans covering each character of TEXT.
    Match {
        #[arg(long)]
        lexicon: PathBuf,
        #[arg(long, default_value_t = 4)]
        max_len: usize,
        text: String,
    },
    /// Compare analytic and finite-difference gradients of a small model.
    Gradcheck {
        #[command(flatten)]
        config: ConfigArgs,
        /// Segmented sentences to differentiate on.
        #[arg(long)]
        sample: Option<PathBuf>,
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        #[arg(long, default_value_t = 10_000)]
        max_entries: usize,
    },
}

fn read_input(path: Option<&Path>) -> CliResult<String> {
    let mut text = String::new();
    match path {
        Some(p) => {
            text = std::fs::read_to_string(p).map_err(|e| CliError::User(format!("{}: {e}", p.display())))?
        }
        None => {
            std::io::stdin()
                .read_to_string(&mut text)
                .map_err(|e| CliError::User(format!("stdin: {e}")))?;
        }
    }
    Ok(text)
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train {
            config,
            train,
            dev,
            out,
            history,
            lexicon,
            word_vectors,
            char_vectors,
            contextual,
        } => {
            let cfg = config.load()?;
            let inputs = TrainInputs {
                history,
                lexicon,
                word_vectors,
                char_vectors,
                contextual,
            };
            let outcome = cmd_train(&cfg, &train, &dev, &out, &inputs)?;
            println!(
                "best epoch {} of {}, dev F1 {:.4}",
                outcome.best_epoch,
                outcome.history.len(),
                outcome.best_dev_f1
            );
        }
        Command::Segment {
            model,
            input,
            lexicon,
            contextual,
        } => {
            let seg = load_model(&model, lexicon.as_deref(), contextual.as_deref())?;
            print!("{}", cmd_segment(&seg, &read_input(input.as_deref())?)?);
        }
        Command::Eval {
            model,
            gold,
            buckets,
            entities,
            lexicon,
            contextual,
        } => {
            let seg = load_model(&model, lexicon.as_deref(), contextual.as_deref())?;
            let targets = entities.as_deref().map(read_entities).transpose()?;
            print!("{}", cmd_eval(&seg, &gold, buckets, targets.as_deref())?);
        }
        Command::Match { lexicon, max_len, text } => {
            print!("{}", cmd_match(&lexicon, &text, max_len)?);
        }
        Command::Gradcheck {
            config,
            sample,
            lexicon,
            tolerance,
            max_entries,
        } => {
            let cfg = config.load()?;
            let opts = GradCheckOptions {
                max_entries,
                seed: cfg.seed,
                ..GradCheckOptions::default()
            };
            let report = cmd_gradcheck(&cfg, sample.as_deref(), lexicon.as_deref(), &opts)?;
            print!("{}", render_gradcheck(&report, tolerance));
            if !report.passes(tolerance) {
                return Err(CliError::Internal(format!(
                    "gradient check failed: max relative error {:.3e}",
                    report.max_rel_error
                )));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
