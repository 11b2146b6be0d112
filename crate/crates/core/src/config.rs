//! Engine configuration and the plain-text `key = value` config format.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: bad value for `{key}`: {value}")]
    BadValue {
        line: usize,
        key: String,
        value: String,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Which exploration term `ucb_score` uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UcbVariant {
    /// w + C * sqrt(2 ln(N_parent / n_child))
    #[serde(rename = "paper_literal")]
    LogRatio,
    /// w + C * sqrt(2 ln(N_parent) / n_child)
    StandardUct,
}

impl FromStr for UcbVariant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "paper_literal" => Ok(Self::LogRatio),
            "standard_uct" => Ok(Self::StandardUct),
            other => Err(format!("unknown ucb variant `{other}`")),
        }
    }
}

impl fmt::Display for UcbVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::LogRatio => "paper_literal",
            Self::StandardUct => "standard_uct",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub c_explore: f64,
    pub ucb_variant: UcbVariant,
    /// Rollouts per simulated node.
    pub k_rollouts: usize,
    /// Insight-conditioned branches per expansion (B).
    pub beam_b: usize,
    pub max_depth: usize,
    pub early_stop_round: usize,
    pub temperature: f64,
    pub t_r: f64,
    pub t_kc: f64,
    /// Skip the concept-consistency check (queries without labels).
    pub kc_filter: bool,
    pub pos_value_threshold: f64,
    pub top_k_retrieve: usize,
    pub embed_dim: usize,
    /// Annotation rounds of select/expand/simulate/backprop.
    pub rounds: usize,
    /// Candidate count for sampled baselines and P_Q^c sets.
    pub n_samples: usize,
    /// Threshold PRM scores at 0.5 instead of using soft scores.
    pub prm_hard_labels: bool,
    pub seed: u64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            c_explore: 1.0,
            ucb_variant: UcbVariant::LogRatio,
            k_rollouts: 8,
            beam_b: 3,
            max_depth: 8,
            early_stop_round: 4,
            temperature: 0.7,
            t_r: 0.5,
            t_kc: 0.5,
            kc_filter: true,
            pos_value_threshold: 0.8,
            top_k_retrieve: 10,
            embed_dim: 256,
            rounds: 8,
            n_samples: 8,
            prm_hard_labels: false,
            seed: 0,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.k_rollouts == 0 {
            return bad("k_rollouts must be positive");
        }
        if self.max_depth == 0 || self.early_stop_round == 0 {
            return bad("max_depth and early_stop_round must be positive");
        }
        if self.early_stop_round > self.max_depth {
            return bad("early_stop_round must not exceed max_depth");
        }
        if !(self.temperature > 0.0) {
            return bad("temperature must be positive");
        }
        if !(-1.0..=1.0).contains(&self.t_r) || !(-1.0..=1.0).contains(&self.t_kc) {
            return bad("t_r and t_kc must lie in [-1, 1]");
        }
        if !(self.pos_value_threshold > 0.0 && self.pos_value_threshold <= 1.0) {
            return bad("pos_value_threshold must lie in (0, 1]");
        }
        if self.top_k_retrieve == 0 || self.embed_dim < 2 || self.rounds == 0 || self.n_samples == 0 {
            return bad("top_k_retrieve, rounds and n_samples must be positive; embed_dim >= 2");
        }
        if !self.c_explore.is_finite() {
            return bad("c_explore must be finite");
        }
        Ok(())
    }

    /// Set one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn num<T: FromStr>(v: &str) -> Result<T, String> {
            v.parse().map_err(|_| format!("cannot parse `{v}`"))
        }
        match key {
            "c_explore" => self.c_explore = num(value)?,
            "ucb_variant" => self.ucb_variant = value.parse()?,
            "k_rollouts" => self.k_rollouts = num(value)?,
            "beam_b" => self.beam_b = num(value)?,
            "max_depth" => self.max_depth = num(value)?,
            "early_stop_round" => self.early_stop_round = num(value)?,
            "temperature" => self.temperature = num(value)?,
            "t_r" => self.t_r = num(value)?,
            "t_kc" => self.t_kc = num(value)?,
            "kc_filter" => self.kc_filter = num(value)?,
            "pos_value_threshold" => self.pos_value_threshold = num(value)?,
            "top_k_retrieve" => self.top_k_retrieve = num(value)?,
            "embed_dim" => self.embed_dim = num(value)?,
            "rounds" => self.rounds = num(value)?,
            "n_samples" => self.n_samples = num(value)?,
            "prm_hard_labels" => self.prm_hard_labels = num(value)?,
            "seed" => self.seed = num(value)?,
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }
}

/// Parsed config file: engine fields plus any `endpoint.*` keys, which are
/// returned untouched for the remote backend.
#[derive(Debug, Clone, Default)]
pub struct ConfigFile {
    pub engine: EngineConfig,
    pub endpoint: Vec<(String, String)>,
}

/// Parse `key = value` lines. `#` starts a comment; blank lines are ignored.
pub fn parse_config(text: &str) -> Result<ConfigFile, ConfigError> {
    let mut out = ConfigFile::default();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or(ConfigError::Syntax { line: line_no })?;
        let (key, value) = (key.trim(), value.trim());
        if let Some(rest) = key.strip_prefix("endpoint.") {
            out.endpoint.push((rest.to_string(), value.to_string()));
            continue;
        }
        out.engine.set(key, value).map_err(|e| {
            if e == "unknown key" {
                ConfigError::UnknownKey {
                    line: line_no,
                    key: key.to_string(),
                }
            } else {
                ConfigError::BadValue {
                    line: line_no,
                    key: key.to_string(),
                    value: value.to_string(),
                }
            }
        })?;
    }
    out.engine.validate()?;
    Ok(out)
}
