//! Run configuration: defaults, JSON config files and flag overrides.
//!
//! Values resolve as defaults < config file < flags. The fully resolved
//! [`RunConfig`] serializes to the same keys a config file accepts, so the
//! copy echoed into the output directory can be fed back to reproduce a run.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::federation::{FederationConfig, Strategy};
use crate::metrics::DEFAULT_BYTES_PER_WEIGHT;
use crate::partition::{ALPHA_IID, ALPHA_NON_IID};
use crate::tm::TmParams;

pub const DATA_DIR_ENV: &str = "TPFL_DATA_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetName {
    Mnist,
    FashionMnist,
    Femnist,
}

impl DatasetName {
    pub fn class_count(self) -> usize {
        match self {
            DatasetName::Mnist | DatasetName::FashionMnist => 10,
            DatasetName::Femnist => 62,
        }
    }

    pub fn default_clauses(self) -> usize {
        match self {
            DatasetName::Mnist => 300,
            DatasetName::FashionMnist | DatasetName::Femnist => 500,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DatasetName::Mnist => "mnist",
            DatasetName::FashionMnist => "fashion_mnist",
            DatasetName::Femnist => "femnist",
        }
    }
}

impl FromStr for DatasetName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mnist" => Ok(DatasetName::Mnist),
            "fashion_mnist" => Ok(DatasetName::FashionMnist),
            "femnist" => Ok(DatasetName::Femnist),
            other => Err(Error::param(
                "dataset",
                format!("`{other}` is not one of mnist, fashion_mnist, femnist"),
            )),
        }
    }
}

/// A single experiment index or all five.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "serde_json::Value", into = "serde_json::Value")]
pub enum ExperimentSelection {
    One(u8),
    All,
}

impl ExperimentSelection {
    pub fn indices(self) -> Vec<u8> {
        match self {
            ExperimentSelection::One(i) => vec![i],
            ExperimentSelection::All => (1..=5).collect(),
        }
    }
}

impl FromStr for ExperimentSelection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "all" {
            return Ok(ExperimentSelection::All);
        }
        s.parse::<u8>()
            .map(ExperimentSelection::One)
            .map_err(|_| Error::param("experiment", format!("`{s}` is neither 1-5 nor `all`")))
    }
}

impl fmt::Display for ExperimentSelection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExperimentSelection::One(i) => write!(f, "{i}"),
            ExperimentSelection::All => f.write_str("all"),
        }
    }
}

impl TryFrom<serde_json::Value> for ExperimentSelection {
    type Error = String;

    fn try_from(v: serde_json::Value) -> std::result::Result<Self, String> {
        match v {
            serde_json::Value::Number(n) => n
                .as_u64()
                .and_then(|i| u8::try_from(i).ok())
                .map(ExperimentSelection::One)
                .ok_or_else(|| format!("experiment {n} is out of range")),
            serde_json::Value::String(s) => s.parse().map_err(|e: Error| e.to_string()),
            other => Err(format!(
                "experiment must be a number or \"all\", got {other}"
            )),
        }
    }
}

impl From<ExperimentSelection> for serde_json::Value {
    fn from(e: ExperimentSelection) -> Self {
        match e {
            ExperimentSelection::One(i) => i.into(),
            ExperimentSelection::All => "all".into(),
        }
    }
}

/// Fully resolved run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetName,
    pub data_dir: Option<PathBuf>,
    pub experiment: ExperimentSelection,
    pub clients: usize,
    pub rounds: usize,
    pub epochs: usize,
    pub clauses: usize,
    pub threshold_t: u32,
    pub sensitivity: f64,
    pub states: u8,
    pub binarize_threshold: u8,
    pub alpha_iid: f64,
    pub alpha_noniid: f64,
    pub fraction: f64,
    pub strategy: Strategy,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub workers: Option<usize>,
    pub weighted_confidence: bool,
    pub bytes_per_weight: usize,
    pub conf_fallback_to_train: bool,
}

/// Every key optional; used for both config files and flag overrides.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartialConfig {
    pub dataset: Option<DatasetName>,
    pub data_dir: Option<PathBuf>,
    pub experiment: Option<ExperimentSelection>,
    pub clients: Option<usize>,
    pub rounds: Option<usize>,
    pub epochs: Option<usize>,
    pub clauses: Option<usize>,
    pub threshold_t: Option<u32>,
    pub sensitivity: Option<f64>,
    pub states: Option<u8>,
    pub binarize_threshold: Option<u8>,
    pub alpha_iid: Option<f64>,
    pub alpha_noniid: Option<f64>,
    pub fraction: Option<f64>,
    pub strategy: Option<Strategy>,
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub workers: Option<usize>,
    pub weighted_confidence: Option<bool>,
    pub bytes_per_weight: Option<usize>,
    pub conf_fallback_to_train: Option<bool>,
}

impl PartialConfig {
    pub fn from_json(json: &str) -> Result<Self> {
        serde_json::from_str(json).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let json = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&json).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// `self` with every key set in `over` replaced.
    pub fn overridden_by(self, over: PartialConfig) -> PartialConfig {
        macro_rules! pick {
            ($($f:ident),*) => { PartialConfig { $($f: over.$f.or(self.$f)),* } };
        }
        pick!(
            dataset,
            data_dir,
            experiment,
            clients,
            rounds,
            epochs,
            clauses,
            threshold_t,
            sensitivity,
            states,
            binarize_threshold,
            alpha_iid,
            alpha_noniid,
            fraction,
            strategy,
            seed,
            out_dir,
            workers,
            weighted_confidence,
            bytes_per_weight,
            conf_fallback_to_train
        )
    }

    /// Fills unset keys with defaults and validates ranges.
    pub fn resolve(self) -> Result<RunConfig> {
        let dataset = self.dataset.unwrap_or(DatasetName::Mnist);
        let config = RunConfig {
            dataset,
            data_dir: self.data_dir,
            experiment: self.experiment.unwrap_or(ExperimentSelection::All),
            clients: self.clients.unwrap_or(100),
            rounds: self.rounds.unwrap_or(10),
            epochs: self.epochs.unwrap_or(10),
            clauses: self.clauses.unwrap_or(dataset.default_clauses()),
            threshold_t: self.threshold_t.unwrap_or(1000),
            sensitivity: self.sensitivity.unwrap_or(10.0),
            states: self.states.unwrap_or(TmParams::DEFAULT_STATES),
            binarize_threshold: self
                .binarize_threshold
                .unwrap_or(crate::dataset::DEFAULT_THRESHOLD),
            alpha_iid: self.alpha_iid.unwrap_or(ALPHA_IID),
            alpha_noniid: self.alpha_noniid.unwrap_or(ALPHA_NON_IID),
            fraction: self.fraction.unwrap_or(1.0),
            strategy: self.strategy.unwrap_or_default(),
            seed: self.seed.unwrap_or(0),
            out_dir: self.out_dir.unwrap_or_else(|| PathBuf::from("out")),
            workers: self.workers,
            weighted_confidence: self.weighted_confidence.unwrap_or(false),
            bytes_per_weight: self.bytes_per_weight.unwrap_or(DEFAULT_BYTES_PER_WEIGHT),
            conf_fallback_to_train: self.conf_fallback_to_train.unwrap_or(false),
        };
        config.validate()?;
        Ok(config)
    }
}

/// Resolves defaults < `file` < `flags`.
pub fn parse_config(file: Option<&Path>, flags: PartialConfig) -> Result<RunConfig> {
    let base = match file {
        Some(path) => PartialConfig::from_file(path)?,
        None => PartialConfig::default(),
    };
    base.overridden_by(flags).resolve()
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        fn check(ok: bool, name: &'static str, reason: impl FnOnce() -> String) -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(Error::param(name, reason()))
            }
        }
        if let ExperimentSelection::One(i) = self.experiment {
            check((1..=5).contains(&i), "experiment", || {
                format!("{i} is not in 1..=5")
            })?;
        }
        check(self.clients >= 1, "clients", || "must be at least 1".into())?;
        check(self.rounds >= 1, "rounds", || "must be at least 1".into())?;
        check(self.epochs >= 1, "epochs", || "must be at least 1".into())?;
        check(
            self.clauses >= 2 && self.clauses.is_multiple_of(2),
            "clauses",
            || format!("{} is not a positive even number", self.clauses),
        )?;
        check(self.threshold_t >= 1, "threshold_t", || {
            "must be at least 1".into()
        })?;
        check(
            self.sensitivity > 1.0 && self.sensitivity.is_finite(),
            "sensitivity",
            || format!("{} must exceed 1", self.sensitivity),
        )?;
        check((1..=127).contains(&self.states), "states", || {
            format!("{} is not in 1..=127", self.states)
        })?;
        for (name, alpha) in [
            ("alpha_iid", self.alpha_iid),
            ("alpha_noniid", self.alpha_noniid),
        ] {
            check(alpha > 0.0 && alpha.is_finite(), name, || {
                format!("{alpha} must be positive")
            })?;
        }
        check(
            self.fraction > 0.0 && self.fraction <= 1.0,
            "fraction",
            || format!("{} is not in (0, 1]", self.fraction),
        )?;
        check(self.bytes_per_weight >= 1, "bytes_per_weight", || {
            "must be at least 1".into()
        })?;
        check(self.workers != Some(0), "workers", || {
            "must be at least 1".into()
        })?;
        Ok(())
    }

    pub fn tm_params(&self, features: usize) -> TmParams {
        TmParams {
            classes: self.dataset.class_count(),
            clauses: self.clauses,
            features,
            threshold: self.threshold_t,
            sensitivity: self.sensitivity,
            states: self.states,
        }
    }

    pub fn federation_config(&self, features: usize, seed: u64) -> FederationConfig {
        FederationConfig {
            clients: self.clients,
            rounds: self.rounds,
            local_epochs: self.epochs,
            strategy: self.strategy,
            tm: self.tm_params(features),
            seed,
            bytes_per_weight: self.bytes_per_weight,
            weighted_confidence: self.weighted_confidence,
            conf_fallback_to_train: self.conf_fallback_to_train,
            binarize_threshold: self.binarize_threshold,
            execution: Execution::Parallel,
        }
    }

    /// The explicit data directory, else `$TPFL_DATA_DIR/<dataset>` when that
    /// exists, else `$TPFL_DATA_DIR` itself.
    pub fn resolve_data_dir(&self) -> Result<PathBuf> {
        if let Some(dir) = &self.data_dir {
            return Ok(dir.clone());
        }
        let root = std::env::var_os(DATA_DIR_ENV).ok_or_else(|| {
            Error::Config(format!(
                "no data directory: pass --data-dir or set {DATA_DIR_ENV}"
            ))
        })?;
        let root = PathBuf::from(root);
        let nested = root.join(self.dataset.as_str());
        Ok(if nested.is_dir() { nested } else { root })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
