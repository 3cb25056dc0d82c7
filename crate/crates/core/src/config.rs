//! Run configuration: flat `key = value` text with `#` comments.
//!
//! Values are layered defaults < file < environment (`SANCWS_<KEY>`) < explicit overrides.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::corpus::read_lines;
use crate::encoder::{EncoderConfig, LstmConfig, SanConfig};
use crate::error::{Error, Result};
use crate::model::{Adaptation, ModelConfig};
use crate::train::{OptimizerConfig, TrainConfig};

pub const ENV_PREFIX: &str = "SANCWS_";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderKind {
    San,
    BiLstm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub encoder: EncoderKind,
    pub char_emb_dim: usize,
    pub bigram_emb_dim: usize,
    pub word_emb_dim: usize,
    pub contextual_dim: Option<usize>,
    pub san_layers: usize,
    pub san_heads: usize,
    pub san_d_model: usize,
    pub san_d_inner: usize,
    pub san_head_dim: usize,
    pub window: Option<usize>,
    pub relu_dropout: f64,
    pub attention_dropout: f64,
    pub residual_dropout: f64,
    pub lstm_layers: usize,
    pub lstm_hidden: usize,
    pub lstm_input_dropout: f64,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub warmup_steps: u64,
    pub lr_factor: f64,
    pub sgd_lr: f64,
    /// Kept for reference; contextual vectors are frozen inputs here.
    pub bert_lr: f64,
    pub l2: f64,
    pub clip_norm: Option<f64>,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub target_dev_f1: Option<f64>,
    pub adaptation: Adaptation,
    pub replace_threshold: f64,
    pub max_word_len: usize,
    pub min_freq_unigram: u64,
    pub min_freq_bigram: u64,
    pub bmes_constraints: bool,
    pub history_wall_time: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            encoder: EncoderKind::San,
            char_emb_dim: 50,
            bigram_emb_dim: 50,
            word_emb_dim: 200,
            contextual_dim: None,
            san_layers: 2,
            san_heads: 8,
            san_d_model: 512,
            san_d_inner: 2048,
            san_head_dim: 64,
            window: Some(5),
            relu_dropout: 0.1,
            attention_dropout: 0.1,
            residual_dropout: 0.1,
            lstm_layers: 1,
            lstm_hidden: 200,
            lstm_input_dropout: 0.1,
            batch_size: 32,
            optimizer: OptimizerKind::Adam,
            adam_beta1: 0.9,
            adam_beta2: 0.98,
            adam_eps: 1e-9,
            warmup_steps: 1000,
            lr_factor: 1.0,
            sgd_lr: 0.001,
            bert_lr: 5e-6,
            l2: 1e-8,
            clip_norm: Some(5.0),
            max_epochs: 100,
            patience: 10,
            seed: 1,
            target_dev_f1: None,
            adaptation: Adaptation::Off,
            replace_threshold: 10.0,
            max_word_len: 4,
            min_freq_unigram: 1,
            min_freq_bigram: 1,
            bmes_constraints: false,
            history_wall_time: false,
        }
    }
}

pub const KEYS: &[&str] = &[
    "encoder",
    "char_emb_dim",
    "bigram_emb_dim",
    "word_emb_dim",
    "contextual_dim",
    "san_layers",
    "san_heads",
    "san_d_model",
    "san_d_inner",
    "san_head_dim",
    "window",
    "relu_dropout",
    "attention_dropout",
    "residual_dropout",
    "lstm_layers",
    "lstm_hidden",
    "lstm_input_dropout",
    "batch_size",
    "optimizer",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
    "warmup_steps",
    "lr_factor",
    "sgd_lr",
    "bert_lr",
    "l2",
    "clip_norm",
    "max_epochs",
    "patience",
    "seed",
    "target_dev_f1",
    "adaptation",
    "replace_threshold",
    "max_word_len",
    "min_freq_unigram",
    "min_freq_bigram",
    "bmes_constraints",
    "history_wall_time",
];

fn bad(key: &str, message: impl Into<String>) -> Error {
    Error::Config {
        key: key.to_string(),
        message: message.into(),
    }
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| bad(key, format!("cannot parse `{v}`")))
}

fn opt<T: FromStr>(key: &str, v: &str, none: &str) -> Result<Option<T>> {
    if v == none {
        Ok(None)
    } else {
        num(key, v).map(Some)
    }
}

fn flag(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(bad(key, format!("expected true or false, got `{v}`"))),
    }
}

fn show<T: ToString>(v: Option<T>, none: &str) -> String {
    v.map_or(none.to_string(), |v| v.to_string())
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "encoder" => {
                self.encoder = match v {
                    "san" => EncoderKind::San,
                    "bilstm" => EncoderKind::BiLstm,
                    _ => return Err(bad(key, format!("expected san or bilstm, got `{v}`"))),
                }
            }
            "char_emb_dim" => self.char_emb_dim = num(key, v)?,
            "bigram_emb_dim" => self.bigram_emb_dim = num(key, v)?,
            "word_emb_dim" => self.word_emb_dim = num(key, v)?,
            "contextual_dim" => self.contextual_dim = opt(key, v, "none")?,
            "san_layers" => self.san_layers = num(key, v)?,
            "san_heads" => self.san_heads = num(key, v)?,
            "san_d_model" => self.san_d_model = num(key, v)?,
            "san_d_inner" => self.san_d_inner = num(key, v)?,
            "san_head_dim" => self.san_head_dim = num(key, v)?,
            "window" => self.window = opt(key, v, "global")?,
            "relu_dropout" => self.relu_dropout = num(key, v)?,
            "attention_dropout" => self.attention_dropout = num(key, v)?,
            "residual_dropout" => self.residual_dropout = num(key, v)?,
            "lstm_layers" => self.lstm_layers = num(key, v)?,
            "lstm_hidden" => self.lstm_hidden = num(key, v)?,
            "lstm_input_dropout" => self.lstm_input_dropout = num(key, v)?,
            "batch_size" => self.batch_size = num(key, v)?,
            "optimizer" => {
                self.optimizer = match v {
                    "adam" => OptimizerKind::Adam,
                    "sgd" => OptimizerKind::Sgd,
                    _ => return Err(bad(key, format!("expected adam or sgd, got `{v}`"))),
                }
            }
            "adam_beta1" => self.adam_beta1 = num(key, v)?,
            "adam_beta2" => self.adam_beta2 = num(key, v)?,
            "adam_eps" => self.adam_eps = num(key, v)?,
            "warmup_steps" => self.warmup_steps = num(key, v)?,
            "lr_factor" => self.lr_factor = num(key, v)?,
            "sgd_lr" => self.sgd_lr = num(key, v)?,
            "bert_lr" => self.bert_lr = num(key, v)?,
            "l2" => self.l2 = num(key, v)?,
            "clip_norm" => self.clip_norm = opt(key, v, "none")?,
            "max_epochs" => self.max_epochs = num(key, v)?,
            "patience" => self.patience = num(key, v)?,
            "seed" => self.seed = num(key, v)?,
            "target_dev_f1" => self.target_dev_f1 = opt(key, v, "none")?,
            "adaptation" => self.adaptation = v.parse().map_err(|_| bad(key, format!("expected off, t or t_b, got `{v}`")))?,
            "replace_threshold" => self.replace_threshold = num(key, v)?,
            "max_word_len" => self.max_word_len = num(key, v)?,
            "min_freq_unigram" => self.min_freq_unigram = num(key, v)?,
            "min_freq_bigram" => self.min_freq_bigram = num(key, v)?,
            "bmes_constraints" => self.bmes_constraints = flag(key, v)?,
            "history_wall_time" => self.history_wall_time = flag(key, v)?,
            _ => return Err(bad(key, "unknown key")),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "encoder" => match self.encoder {
                EncoderKind::San => "san".into(),
                EncoderKind::BiLstm => "bilstm".into(),
            },
            "char_emb_dim" => self.char_emb_dim.to_string(),
            "bigram_emb_dim" => self.bigram_emb_dim.to_string(),
            "word_emb_dim" => self.word_emb_dim.to_string(),
            "contextual_dim" => show(self.contextual_dim, "none"),
            "san_layers" => self.san_layers.to_string(),
            "san_heads" => self.san_heads.to_string(),
            "san_d_model" => self.san_d_model.to_string(),
            "san_d_inner" => self.san_d_inner.to_string(),
            "san_head_dim" => self.san_head_dim.to_string(),
            "window" => show(self.window, "global"),
            "relu_dropout" => self.relu_dropout.to_string(),
            "attention_dropout" => self.attention_dropout.to_string(),
            "residual_dropout" => self.residual_dropout.to_string(),
            "lstm_layers" => self.lstm_layers.to_string(),
            "lstm_hidden" => self.lstm_hidden.to_string(),
            "lstm_input_dropout" => self.lstm_input_dropout.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "optimizer" => match self.optimizer {
                OptimizerKind::Adam => "adam".into(),
                OptimizerKind::Sgd => "sgd".into(),
            },
            "adam_beta1" => self.adam_beta1.to_string(),
            "adam_beta2" => self.adam_beta2.to_string(),
            "adam_eps" => self.adam_eps.to_string(),
            "warmup_steps" => self.warmup_steps.to_string(),
            "lr_factor" => self.lr_factor.to_string(),
            "sgd_lr" => self.sgd_lr.to_string(),
            "bert_lr" => self.bert_lr.to_string(),
            "l2" => self.l2.to_string(),
            "clip_norm" => show(self.clip_norm, "none"),
            "max_epochs" => self.max_epochs.to_string(),
            "patience" => self.patience.to_string(),
            "seed" => self.seed.to_string(),
            "target_dev_f1" => show(self.target_dev_f1, "none"),
            "adaptation" => self.adaptation.to_string(),
            "replace_threshold" => self.replace_threshold.to_string(),
            "max_word_len" => self.max_word_len.to_string(),
            "min_freq_unigram" => self.min_freq_unigram.to_string(),
            "min_freq_bigram" => self.min_freq_bigram.to_string(),
            "bmes_constraints" => self.bmes_constraints.to_string(),
            "history_wall_time" => self.history_wall_time.to_string(),
            _ => return None,
        })
    }

    /// Applies `key = value` lines on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: no + 1,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let lines = read_lines(path.as_ref())?;
        self.apply_text(&lines.join("\n"))
    }

    /// Applies `SANCWS_<KEY>` variables; names with the prefix but no matching key are rejected.
    pub fn apply_env<I, K, V>(&mut self, vars: I) -> Result<()>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        let mut pairs: Vec<(String, String)> = vars
            .into_iter()
            .filter_map(|(k, v)| {
                k.as_ref()
                    .strip_prefix(ENV_PREFIX)
                    .map(|key| (key.to_ascii_lowercase(), v.as_ref().to_string()))
            })
            .collect();
        pairs.sort();
        for (key, value) in pairs {
            self.set(&key, &value)?;
        }
        Ok(())
    }

    /// Applies `key=value` override strings.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (key, value) = o
                .split_once('=')
                .ok_or_else(|| bad(o, "override must look like key=value"))?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    /// Layers a config file, environment variables and overrides over the defaults.
    pub fn load<I, K, V, S>(file: Option<&Path>, env: I, overrides: &[S]) -> Result<Self>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
        S: AsRef<str>,
    {
        let mut cfg = RunConfig::default();
        if let Some(f) = file {
            cfg.apply_file(f)?;
        }
        cfg.apply_env(env)?;
        cfg.apply_overrides(overrides)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Every key in canonical order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            writeln!(out, "{key} = {}", self.get(key).expect("known key")).expect("string write");
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("bigram_emb_dim", self.bigram_emb_dim),
            ("word_emb_dim", self.word_emb_dim),
            ("san_layers", self.san_layers),
            ("san_heads", self.san_heads),
            ("san_d_model", self.san_d_model),
            ("san_d_inner", self.san_d_inner),
            ("san_head_dim", self.san_head_dim),
            ("lstm_layers", self.lstm_layers),
            ("lstm_hidden", self.lstm_hidden),
            ("batch_size", self.batch_size),
            ("max_epochs", self.max_epochs),
            ("patience", self.patience),
            ("max_word_len", self.max_word_len),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(bad(key, "must be positive"));
            }
        }
        if self.contextual_dim.is_none() && self.char_emb_dim == 0 {
            return Err(bad("char_emb_dim", "must be positive"));
        }
        if self.contextual_dim == Some(0) {
            return Err(bad("contextual_dim", "must be positive"));
        }
        for (key, p) in [
            ("relu_dropout", self.relu_dropout),
            ("attention_dropout", self.attention_dropout),
            ("residual_dropout", self.residual_dropout),
            ("lstm_input_dropout", self.lstm_input_dropout),
        ] {
            if !(0.0..1.0).contains(&p) {
                return Err(bad(key, format!("must be in [0, 1), got {p}")));
            }
        }
        if self.san_heads * self.san_head_dim != self.san_d_model {
            return Err(bad(
                "san_d_model",
                format!(
                    "must equal san_heads x san_head_dim ({} x {})",
                    self.san_heads, self.san_head_dim
                ),
            ));
        }
        if self.encoder == EncoderKind::San && self.model_char_dim() % 2 != 0 {
            return Err(bad(
                "bigram_emb_dim",
                format!("character vector width {} must be even", self.model_char_dim()),
            ));
        }
        for (key, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(bad(key, "must be in [0, 1)"));
            }
        }
        for (key, v) in [
            ("adam_eps", self.adam_eps),
            ("lr_factor", self.lr_factor),
            ("replace_threshold", self.replace_threshold),
        ] {
            if !(v > 0.0) {
                return Err(bad(key, "must be positive"));
            }
        }
        if self.warmup_steps == 0 {
            return Err(bad("warmup_steps", "must be positive"));
        }
        for (key, v) in [("sgd_lr", self.sgd_lr), ("bert_lr", self.bert_lr), ("l2", self.l2)] {
            if !(v >= 0.0) {
                return Err(bad(key, "must be >= 0"));
            }
        }
        if matches!(self.clip_norm, Some(c) if !(c > 0.0)) {
            return Err(bad("clip_norm", "must be positive or none"));
        }
        if self.min_freq_unigram == 0 || self.min_freq_bigram == 0 {
            return Err(bad("min_freq_unigram", "minimum frequencies must be >= 1"));
        }
        if matches!(self.target_dev_f1, Some(t) if !(0.0..=1.0).contains(&t)) {
            return Err(bad("target_dev_f1", "must be in [0, 1]"));
        }
        Ok(())
    }

    fn model_char_dim(&self) -> usize {
        self.contextual_dim.unwrap_or(self.char_emb_dim) + self.bigram_emb_dim
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        match self.encoder {
            EncoderKind::San => EncoderConfig::San(SanConfig {
                layers: self.san_layers,
                heads: self.san_heads,
                d_model: self.san_d_model,
                d_inner: self.san_d_inner,
                head_dim: self.san_head_dim,
                window: self.window,
                relu_dropout: self.relu_dropout,
                attention_dropout: self.attention_dropout,
                residual_dropout: self.residual_dropout,
            }),
            EncoderKind::BiLstm => EncoderConfig::BiLstm(LstmConfig {
                layers: self.lstm_layers,
                hidden: self.lstm_hidden,
                input_dropout: self.lstm_input_dropout,
            }),
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            encoder: self.encoder_config(),
            char_emb_dim: self.char_emb_dim,
            bigram_emb_dim: self.bigram_emb_dim,
            word_emb_dim: self.word_emb_dim,
            contextual_dim: self.contextual_dim,
            adaptation: self.adaptation,
            max_word_len: self.max_word_len,
            replace_threshold: self.replace_threshold,
            bmes_constraints: self.bmes_constraints,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let optimizer = match self.optimizer {
            OptimizerKind::Adam => OptimizerConfig::Adam {
                beta1: self.adam_beta1,
                beta2: self.adam_beta2,
                eps: self.adam_eps,
                warmup: self.warmup_steps,
                factor: self.lr_factor,
                d_model: self.encoder_config().output_dim(),
            },
            OptimizerKind::Sgd => OptimizerConfig::Sgd { lr: self.sgd_lr },
        };
        TrainConfig {
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            seed: self.seed,
            optimizer,
            l2: self.l2,
            clip_norm: self.clip_norm,
            target_dev_f1: self.target_dev_f1,
            history_wall_time: self.history_wall_time,
        }
    }
}
