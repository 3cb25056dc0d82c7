//! Command implementations behind the `sancws` binary.
//!
//! Every command returns its textual output (or writes files) so that tests
//! can drive it without spawning a process.

use std::fmt::{self, Write as _};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use sancws::corpus::{build_vocab_with, is_word_separator, read_segmented_corpus, LabeledSentence};
use sancws::eval::{score_report, ScoreReport};
use sancws::lexicon::{load_lexicon, match_spans, span_tag, Lexicon, TagMode};
use sancws::repr::ContextualStore;
use sancws::train::{check_gradients, train_loop, GradCheckOptions, GradCheckReport, SegmenterObjective, TrainOutcome};
use sancws::{Adaptation, Archive64, RunConfig, Segmenter64};

/// Failure of a command, split by who has to act on it.
#[derive(Debug)]
pub enum CliError {
    /// Bad input, flags, configuration or files.
    User(String),
    /// A defect or numeric breakdown inside the library.
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::User(_) => 1,
            CliError::Internal(_) => 2,
        }
    }

    fn user(msg: impl Into<String>) -> Self {
        CliError::User(msg.into())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::User(m) => write!(f, "error: {m}"),
            CliError::Internal(m) => write!(f, "internal error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<sancws::Error> for CliError {
    fn from(e: sancws::Error) -> Self {
        use sancws::Error as E;
        match e {
            E::Shape(_) | E::NonFinite(_) => CliError::Internal(e.to_string()),
            _ => CliError::User(e.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::user(format!("{}: {e}", path.display()))
}

/// Optional inputs of `train`.
#[derive(Debug, Clone, Default)]
pub struct TrainInputs {
    pub history: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub word_vectors: Option<PathBuf>,
    pub char_vectors: Option<PathBuf>,
    pub contextual: Option<PathBuf>,
}

fn read_corpus(path: &Path, what: &str) -> CliResult<Vec<LabeledSentence>> {
    let data = read_segmented_corpus(path)?;
    if data.is_empty() {
        return Err(CliError::user(format!("{what} corpus {} has no sentences", path.display())));
    }
    Ok(data)
}

fn read_lexicon(path: &Path) -> CliResult<Lexicon> {
    let (lex, report) = load_lexicon(path)?;
    log::info!("{}: {} lexicon entries", path.display(), report.entries);
    Ok(lex)
}

fn attach_contextual(seg: &mut Segmenter64, path: Option<&Path>) -> CliResult<()> {
    match (path, seg.config.contextual_dim) {
        (Some(p), Some(_)) => {
            let store = ContextualStore::open(p)?;
            log::info!("{}: contextual vectors for {} sentences", p.display(), store.len());
            seg.set_contextual(Some(Arc::new(store)))?;
            Ok(())
        }
        (Some(_), None) => Err(CliError::user(
            "contextual vectors given but `contextual_dim` is none",
        )),
        (None, Some(_)) => Err(CliError::user(
            "`contextual_dim` is set but no contextual vectors were given",
        )),
        (None, None) => Ok(()),
    }
}

/// Trains a model and writes the archive of the best epoch to `out`.
///
/// The history, if requested, gets one JSON line per epoch as training runs.
pub fn cmd_train(
    config: &RunConfig,
    train_path: &Path,
    dev_path: &Path,
    out: &Path,
    inputs: &TrainInputs,
) -> CliResult<TrainOutcome> {
    config.validate()?;
    let train = read_corpus(train_path, "training")?;
    let dev = read_corpus(dev_path, "dev")?;
    let lexicon = inputs.lexicon.as_deref().map(read_lexicon).transpose()?;
    if config.adaptation == Adaptation::Off && lexicon.is_some() {
        log::warn!("adaptation is off; the lexicon is ignored");
    }
    let lexicon = if config.adaptation == Adaptation::Off { None } else { lexicon };
    if config.adaptation != Adaptation::Off && lexicon.is_none() {
        return Err(CliError::user(format!(
            "adaptation {} needs --lexicon",
            config.adaptation
        )));
    }
    let vocab = build_vocab_with(&train, config.min_freq_unigram, config.min_freq_bigram)?;
    let mut seg = Segmenter64::new(config.model_config(), vocab, lexicon, config.seed)?;
    if let Some(p) = &inputs.char_vectors {
        let c = seg.load_char_vectors(p)?;
        log::info!("{}: {}/{} characters covered", p.display(), c.covered, c.total);
    }
    if let Some(p) = &inputs.word_vectors {
        if seg.word_features().is_none() {
            return Err(CliError::user("--word-vectors needs an adaptation mode"));
        }
        let c = seg.load_word_vectors(p)?;
        log::info!("{}: {}/{} lexicon words covered", p.display(), c.covered, c.total);
    }
    attach_contextual(&mut seg, inputs.contextual.as_deref())?;

    let mut history = match &inputs.history {
        Some(p) => Some((BufWriter::new(File::create(p).map_err(|e| io_error(p, e))?), p.clone())),
        None => None,
    };
    let mut on_epoch = |r: &sancws::train::EpochRecord| -> sancws::Result<()> {
        if let Some((w, p)) = history.as_mut() {
            writeln!(w, "{}", r.to_json_line())
                .and_then(|_| w.flush())
                .map_err(|e| sancws::Error::Io {
                    path: p.clone(),
                    source: e,
                })?;
        }
        Ok(())
    };
    let outcome = train_loop(&mut seg, &train, &dev, &config.train_config(), &mut on_epoch)?;
    log::info!(
        "best epoch {} with dev F1 {:.4}",
        outcome.best_epoch,
        outcome.best_dev_f1
    );
    Archive64::new(config.clone(), seg).save(out)?;
    Ok(outcome)
}

/// Loads an archive, re-attaching the lexicon and contextual vectors it was trained with.
pub fn load_model(
    archive: &Path,
    lexicon: Option<&Path>,
    contextual: Option<&Path>,
) -> CliResult<Segmenter64> {
    let archive = Archive64::load(archive)?;
    let mut seg = archive.segmenter;
    match (&archive.lexicon_fingerprint, lexicon) {
        (Some(expected), Some(p)) => {
            let lex = read_lexicon(p)?;
            if &lex.fingerprint() != expected {
                return Err(CliError::user(format!(
                    "{} is not the lexicon this model was trained with",
                    p.display()
                )));
            }
            seg.set_lexicon(Some(lex));
        }
        (Some(_), None) => {
            return Err(CliError::user("this model uses a lexicon; pass it with --lexicon"))
        }
        (None, Some(_)) => log::warn!("the model was trained without a lexicon; --lexicon ignored"),
        (None, None) => {}
    }
    attach_contextual(&mut seg, contextual)?;
    Ok(seg)
}

fn line_chars(line: &str) -> Vec<char> {
    line.chars().filter(|&c| !is_word_separator(c)).collect()
}

/// Segments each line into space-joined words, in input order.
pub fn segment_lines<S: AsRef<str> + Sync>(seg: &Segmenter64, lines: &[S]) -> CliResult<Vec<String>> {
    lines
        .par_iter()
        .map(|line| {
            let chars = line_chars(line.as_ref());
            Ok(seg.segment_chars(&chars)?.join(" "))
        })
        .collect()
}

pub fn cmd_segment(seg: &Segmenter64, input: &str) -> CliResult<String> {
    let lines: Vec<&str> = input.lines().collect();
    let mut out = segment_lines(seg, &lines)?.join("\n");
    if !lines.is_empty() {
        out.push('\n');
    }
    Ok(out)
}

/// Scores `segment` against the gold corpus.
pub fn run_eval<F>(
    gold: &[LabeledSentence],
    segment: F,
    bucket_width: Option<usize>,
    entities: Option<&[String]>,
) -> CliResult<ScoreReport>
where
    F: Fn(&[char]) -> sancws::Result<Vec<String>> + Sync,
{
    let gold_words: Vec<Vec<String>> = gold.iter().map(LabeledSentence::words).collect();
    let pred: Vec<Vec<String>> = gold
        .par_iter()
        .map(|s| segment(&s.chars))
        .collect::<sancws::Result<_>>()?;
    if entities.is_some_and(<[String]>::is_empty) {
        return Err(CliError::user("the entity list is empty"));
    }
    Ok(score_report(&gold_words, &pred, bucket_width, entities)?)
}

/// One entity per line; blank lines and `#` comments are skipped.
pub fn read_entities(path: &Path) -> CliResult<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect())
}

pub fn cmd_eval(
    seg: &Segmenter64,
    gold_path: &Path,
    bucket_width: Option<usize>,
    entities: Option<&[String]>,
) -> CliResult<String> {
    let gold = read_corpus(gold_path, "gold")?;
    let report = run_eval(&gold, |chars| seg.segment_chars(chars), bucket_width, entities)?;
    Ok(report.render())
}

/// Per-character listing of the lexicon spans covering each position.
pub fn match_listing(lexicon: &Lexicon, text: &str, max_len: usize) -> CliResult<String> {
    let chars = line_chars(text);
    let spans = match_spans(&chars, lexicon, max_len)?;
    let mut out = String::new();
    for (i, (c, covering)) in chars.iter().zip(&spans).enumerate() {
        let _ = write!(out, "{i}\t{c}\t");
        if covering.is_empty() {
            out.push_str("no matches");
        }
        for (k, span) in covering.iter().enumerate() {
            let plain = span_tag(span, i, TagMode::Plain)?;
            let decorated = span_tag(span, i, TagMode::Positional)?;
            if k > 0 {
                out.push_str("  ");
            }
            let _ = write!(out, "{}[{},{}] {plain} {decorated}", span.word, span.begin, span.end);
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn cmd_match(lexicon_path: &Path, text: &str, max_len: usize) -> CliResult<String> {
    match_listing(&read_lexicon(lexicon_path)?, text, max_len)
}

const GRADCHECK_SAMPLE: &str = "韩立 在 青云山 修炼";

/// Finite-difference check of the model described by `config` on a small sample.
///
/// Without a sample file a built-in sentence is used; without a lexicon the
/// adaptation modes use the sample's multi-character words as nouns.
pub fn cmd_gradcheck(
    config: &RunConfig,
    sample: Option<&Path>,
    lexicon: Option<&Path>,
    opts: &GradCheckOptions,
) -> CliResult<GradCheckReport> {
    config.validate()?;
    let data = match sample {
        Some(p) => read_corpus(p, "sample")?,
        None => vec![sancws::corpus::parse_segmented_line(GRADCHECK_SAMPLE).expect("non-empty sample")],
    };
    let lexicon = match (config.adaptation, lexicon) {
        (Adaptation::Off, _) => None,
        (_, Some(p)) => Some(read_lexicon(p)?),
        (_, None) => {
            let words: Vec<(String, &str)> = data
                .iter()
                .flat_map(LabeledSentence::words)
                .filter(|w| w.chars().count() > 1)
                .map(|w| (w, "NN"))
                .collect();
            Some(Lexicon::from_entries(words)?.0)
        }
    };
    let vocab = build_vocab_with(&data, 1, 1)?;
    let mut seg = Segmenter64::new(config.model_config(), vocab, lexicon, config.seed)?;
    if seg.config.contextual_dim.is_some() {
        return Err(CliError::user("gradcheck does not support contextual vectors"));
    }
    let mut obj = SegmenterObjective {
        segmenter: &mut seg,
        sample: &data,
        l2: config.l2,
    };
    Ok(check_gradients(&mut obj, opts)?)
}

pub fn render_gradcheck(report: &GradCheckReport, tolerance: f64) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "name\tchecked\tmax_rel_error");
    for p in &report.params {
        let _ = writeln!(out, "{}\t{}\t{:.3e}", p.name, p.checked, p.max_rel_error);
    }
    let _ = writeln!(out, "checked\t{}", report.checked);
    let _ = writeln!(out, "max_rel_error\t{:.3e}", report.max_rel_error);
    if let Some(w) = &report.worst {
        let _ = writeln!(
            out,
            "worst\t{}[{}] analytic {:.6e} numeric {:.6e}",
            w.name, w.index, w.analytic, w.numeric
        );
    }
    let verdict = if report.passes(tolerance) { "pass" } else { "FAIL" };
    let _ = writeln!(out, "result\t{verdict} (tolerance {tolerance:e})");
    out
}
