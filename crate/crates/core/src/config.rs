//! Flat `key = value` run configuration.
//!
//! One key per line, `#` starts a comment, blank lines are ignored. Every
//! command-line flag has a key of the same name (dashes become underscores),
//! and the effective configuration is written back out in this format.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::SynthConfig;
use crate::train::TrainConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}:{line}: expected `key = value`")]
    Syntax { path: String, line: usize },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("bad value `{value}` for `{key}`: {reason}")]
    Value { key: String, value: String, reason: String },
    #[error("cannot read config {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// Training, synthesis and path settings of one CLI invocation.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub synth: SynthConfig,
    pub corpus: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub folds: usize,
    /// Clauses in the random gradcheck document.
    pub clauses: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            synth: SynthConfig::default(),
            corpus: None,
            dev: None,
            embeddings: None,
            checkpoint: None,
            out: None,
            folds: 10,
            clauses: 5,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: ToString,
{
    value.parse().map_err(|e: T::Err| ConfigError::Value {
        key: key.to_string(),
        value: value.to_string(),
        reason: e.to_string(),
    })
}

fn parse_switch(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "on" | "true" | "yes" | "1" => Ok(true),
        "off" | "false" | "no" | "0" => Ok(false),
        _ => Err(ConfigError::Value {
            key: key.to_string(),
            value: value.to_string(),
            reason: "expected on or off".into(),
        }),
    }
}

fn switch(b: bool) -> &'static str {
    if b {
        "on"
    } else {
        "off"
    }
}

impl RunConfig {
    /// Applies one setting. Dashes in `key` are read as underscores.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let key = key.replace('-', "_");
        let k = key.as_str();
        let v = value.trim();
        let t = &mut self.train;
        let s = &mut self.synth;
        let path = || Some(PathBuf::from(v));
        match k {
            "hidden" => t.hidden = parse(k, v)?,
            "embed_dim" | "dim" => t.embed_dim = parse(k, v)?,
            "dim_pos" => t.dim_pos = parse(k, v)?,
            "max_offset" => t.max_offset = parse(k, v)?,
            "encoding" => t.encoding = parse(k, v)?,
            "share_gate_params" => t.share_gate_params = parse_switch(k, v)?,
            "lambda1" => t.lambda1 = parse(k, v)?,
            "lambda2" => t.lambda2 = parse(k, v)?,
            "ita" => t.ita = parse(k, v)?,
            "aux" => t.aux = parse_switch(k, v)?,
            "literal_loss" => t.literal_loss = parse_switch(k, v)?,
            "detach_side" => t.detach_side = parse(k, v)?,
            "lr" | "learning_rate" => t.learning_rate = parse(k, v)?,
            "batch" | "batch_size" => t.batch_size = parse(k, v)?,
            "epochs" => t.epochs = parse(k, v)?,
            "dropout" => t.dropout = parse(k, v)?,
            "seed" => t.seed = parse(k, v)?,
            "weight_decay" => t.weight_decay = parse(k, v)?,
            "threshold" => t.threshold = parse(k, v)?,
            "averaging" => t.averaging = parse(k, v)?,
            "num_docs" => s.num_docs = parse(k, v)?,
            "clauses_per_doc" => s.clauses_per_doc = parse(k, v)?,
            "tokens_per_clause" => s.tokens_per_clause = parse(k, v)?,
            "vocab_size" => s.vocab_size = parse(k, v)?,
            "pair_distance" => s.pair_distance = parse(k, v)?,
            "pairs_per_doc" => s.pairs_per_doc = parse(k, v)?,
            "corpus" => self.corpus = path(),
            "dev" => self.dev = path(),
            "embeddings" => self.embeddings = path(),
            "checkpoint" => self.checkpoint = path(),
            "out" => self.out = path(),
            "folds" => self.folds = parse(k, v)?,
            "clauses" => self.clauses = parse(k, v)?,
            _ => return Err(ConfigError::UnknownKey(key)),
        }
        Ok(())
    }

    /// Applies every setting in `text`; `origin` names it in errors.
    pub fn apply_str(&mut self, text: &str, origin: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                path: origin.to_string(),
                line: i + 1,
            })?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        self.apply_str(&text, &path.display().to_string())
    }

    /// Every setting as `key = value` lines, readable by [`RunConfig::apply_str`].
    pub fn to_config_string(&self) -> String {
        let t = &self.train;
        let s = &self.synth;
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        put("hidden", t.hidden.to_string());
        put("embed_dim", t.embed_dim.to_string());
        put("dim_pos", t.dim_pos.to_string());
        put("max_offset", t.max_offset.to_string());
        put("encoding", t.encoding.to_string());
        put("share_gate_params", switch(t.share_gate_params).into());
        put("lambda1", t.lambda1.to_string());
        put("lambda2", t.lambda2.to_string());
        put("ita", t.ita.to_string());
        put("aux", switch(t.aux).into());
        put("literal_loss", switch(t.literal_loss).into());
        put("detach_side", t.detach_side.to_string());
        put("learning_rate", t.learning_rate.to_string());
        put("batch_size", t.batch_size.to_string());
        put("epochs", t.epochs.to_string());
        put("dropout", t.dropout.to_string());
        put("seed", t.seed.to_string());
        put("weight_decay", t.weight_decay.to_string());
        put("threshold", t.threshold.to_string());
        put("averaging", t.averaging.to_string());
        put("num_docs", s.num_docs.to_string());
        put("clauses_per_doc", s.clauses_per_doc.to_string());
        put("tokens_per_clause", s.tokens_per_clause.to_string());
        put("vocab_size", s.vocab_size.to_string());
        put("pair_distance", s.pair_distance.to_string());
        put("pairs_per_doc", s.pairs_per_doc.to_string());
        for (k, p) in [
            ("corpus", &self.corpus),
            ("dev", &self.dev),
            ("embeddings", &self.embeddings),
            ("checkpoint", &self.checkpoint),
            ("out", &self.out),
        ] {
            if let Some(p) = p {
                put(k, p.display().to_string());
            }
        }
        put("folds", self.folds.to_string());
        put("clauses", self.clauses.to_string());
        out
    }
}
