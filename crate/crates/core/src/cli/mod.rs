//! The `pathway` command line: one subcommand per pipeline stage, each
//! reading and writing plain files.
//!
//! Settings resolve as flags > `--config` JSON file > built-in defaults, and
//! the effective [`RunConfig`] is written as `config.json` into every output
//! directory. Failures print a single JSON line on stderr and exit with
//! 2 (usage), 3 (data format), 4 (numerical failure) or 1 (I/O).

mod args;
pub mod stages;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusError, PolicyMix};
use crate::encode::EncodeError;
use crate::nn::NnError;
use crate::probes::ProbeError;
use crate::seqenc::{InputMode, SeqEncError};
use crate::stats::StatsError;
use crate::strategy::geometry::Level;
use crate::strategy::StrategyError;

pub use args::run;

pub const CONFIG_FILE: &str = "config.json";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numerical(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
            CliError::Io(_) => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Data(_) => "data_format",
            CliError::Numerical(_) => "numerical",
            CliError::Io(_) => "io",
        }
    }

    /// `{"error":kind,"code":n,"message":...}` on one line.
    pub fn to_line(&self) -> String {
        serde_json::json!({
            "error": self.kind(),
            "code": self.code(),
            "message": self.to_string(),
        })
        .to_string()
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::Io(e) => e.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<EncodeError> for CliError {
    fn from(e: EncodeError) -> Self {
        match e {
            EncodeError::Io(e) => e.into(),
            EncodeError::DimensionTooSmall(_) => CliError::Usage(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<NnError> for CliError {
    fn from(e: NnError) -> Self {
        match e {
            NnError::Io(e) => e.into(),
            NnError::NonFinite(_) => CliError::Numerical(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<SeqEncError> for CliError {
    fn from(e: SeqEncError) -> Self {
        match e {
            SeqEncError::Io(e) => e.into(),
            SeqEncError::Nn(e) => e.into(),
            SeqEncError::Encode(e) => e.into(),
            SeqEncError::InvalidConfig(_) => CliError::Usage(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<ProbeError> for CliError {
    fn from(e: ProbeError) -> Self {
        match e {
            ProbeError::Nn(e) => e.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<StrategyError> for CliError {
    fn from(e: StrategyError) -> Self {
        match e {
            StrategyError::DimensionMismatch { .. } => CliError::Data(e.to_string()),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

impl From<StatsError> for CliError {
    fn from(e: StatsError) -> Self {
        match e {
            StatsError::LengthMismatch { .. } => CliError::Data(e.to_string()),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        if e.is_io_error() {
            CliError::Io(e.to_string())
        } else {
            CliError::Data(e.to_string())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    Structural,
    Table,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenSettings {
    pub problems: usize,
    pub students: usize,
    pub attempts: usize,
    pub mix: PolicyMix,
}

impl Default for GenSettings {
    fn default() -> Self {
        Self {
            problems: 10,
            students: 80,
            attempts: 3,
            mix: PolicyMix::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncodeSettings {
    pub encoder: EncoderKind,
    pub dim: usize,
    pub table_path: Option<PathBuf>,
}

impl Default for EncodeSettings {
    fn default() -> Self {
        Self {
            encoder: EncoderKind::Structural,
            dim: 128,
            table_path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub mode: InputMode,
    pub layers: usize,
    pub k: usize,
    pub heads: Option<usize>,
    pub tau: f64,
    pub dropout: f64,
    pub max_len: usize,
    pub batch: usize,
    pub lr: f64,
    pub epochs: usize,
    pub patience: usize,
    pub train_frac: f64,
    pub val_frac: f64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let enc = crate::seqenc::EncoderConfig::new(1, 1, 128);
        let hyper = crate::seqenc::TrainHyper::default();
        Self {
            mode: enc.input_mode,
            layers: enc.layers,
            k: enc.k,
            heads: None,
            tau: enc.tau,
            dropout: enc.dropout,
            max_len: enc.max_len,
            batch: hyper.batch,
            lr: hyper.lr,
            epochs: hyper.max_epochs,
            patience: hyper.patience,
            train_frac: hyper.train_frac,
            val_frac: hyper.val_frac,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeSettings {
    pub hidden: usize,
    pub lstm_hidden: usize,
    pub token_dim: usize,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub patience: usize,
}

impl Default for ProbeSettings {
    fn default() -> Self {
        let h = crate::probes::ProbeHyper::default();
        Self {
            hidden: h.hidden,
            lstm_hidden: h.lstm_hidden,
            token_dim: h.token_dim,
            lr: h.lr,
            batch: h.batch,
            epochs: h.max_epochs,
            patience: h.patience,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeasureSettings {
    pub shrinkage: f64,
}

impl Default for MeasureSettings {
    fn default() -> Self {
        Self {
            shrinkage: crate::strategy::DEFAULT_SHRINKAGE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegressSettings {
    pub outcomes: Vec<String>,
    pub predictors: Vec<String>,
}

impl Default for RegressSettings {
    fn default() -> Self {
        Self {
            outcomes: vec!["post_score".into(), "flex_score".into()],
            predictors: vec!["conformity".into(), "diversity".into(), "uniqueness".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectSettings {
    pub level: Level,
}

impl Default for ProjectSettings {
    fn default() -> Self {
        Self { level: Level::Transition }
    }
}

/// Every setting any stage reads. Stage outputs are pure functions of
/// their input files and this value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub gen: GenSettings,
    pub encode: EncodeSettings,
    pub train: TrainSettings,
    pub probe: ProbeSettings,
    pub measure: MeasureSettings,
    pub regress: RegressSettings,
    pub project: ProjectSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            gen: GenSettings::default(),
            encode: EncodeSettings::default(),
            train: TrainSettings::default(),
            probe: ProbeSettings::default(),
            measure: MeasureSettings::default(),
            regress: RegressSettings::default(),
            project: ProjectSettings::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }

    pub fn probe_hyper(&self) -> crate::probes::ProbeHyper {
        let p = &self.probe;
        crate::probes::ProbeHyper {
            hidden: p.hidden,
            lstm_hidden: p.lstm_hidden,
            token_dim: p.token_dim,
            lr: p.lr,
            batch: p.batch,
            max_epochs: p.epochs,
            patience: p.patience,
            seed: self.seed,
        }
    }

    pub fn train_hyper(&self) -> crate::seqenc::TrainHyper {
        let t = &self.train;
        crate::seqenc::TrainHyper {
            lr: t.lr,
            batch: t.batch,
            max_epochs: t.epochs,
            patience: t.patience,
            seed: self.seed,
            train_frac: t.train_frac,
            val_frac: t.val_frac,
        }
    }

    /// Encoder architecture for state vectors of width `input_dim`.
    pub fn encoder_config(&self, input_dim: usize) -> crate::seqenc::EncoderConfig {
        let t = &self.train;
        let mut c = crate::seqenc::EncoderConfig::new(input_dim, t.layers, t.k).with_mode(t.mode);
        if let Some(h) = t.heads {
            c.heads = h;
        }
        c.tau = t.tau;
        c.dropout = t.dropout;
        c.max_len = t.max_len;
        c
    }

    /// Writes the pretty-printed config into `dir`.
    pub fn echo(&self, dir: &Path) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(self).expect("config serializes");
        text.push('\n');
        std::fs::write(dir.join(CONFIG_FILE), text)?;
        Ok(())
    }
}
