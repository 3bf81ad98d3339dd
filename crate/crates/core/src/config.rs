//! Run configuration, read from TOML. Every field has a default, so an empty
//! file is a valid configuration.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::divergence::DivergenceConfig;
use crate::downgrade::{CueLexicon, DowngradeThresholds};
use crate::error::{Error, Result};
use crate::gateway::{BackendConfig, FaultSchedule};
use crate::kb::DEFAULT_MIN_SCOPE;
use crate::model::RiskDirection;
use crate::retrieval::{DEFAULT_K_MAX, DEFAULT_RADIUS_KM};

/// Context given to the prediction prompt, and whether the host post-check
/// runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AblationConfig {
    /// Target text mode only.
    I,
    /// Target plus spatial neighbors.
    II,
    /// Neighbors plus free-shots under the injection policy.
    III,
    /// As III, followed by the downgrade post-check.
    IV,
}

impl AblationConfig {
    pub const ALL: [AblationConfig; 4] = [
        AblationConfig::I,
        AblationConfig::II,
        AblationConfig::III,
        AblationConfig::IV,
    ];

    pub fn uses_neighbors(self) -> bool {
        self >= AblationConfig::II
    }

    pub fn uses_free_shots(self) -> bool {
        self >= AblationConfig::III
    }

    pub fn applies_downgrade(self) -> bool {
        self == AblationConfig::IV
    }

    pub fn name(self) -> &'static str {
        match self {
            AblationConfig::I => "I",
            AblationConfig::II => "II",
            AblationConfig::III => "III",
            AblationConfig::IV => "IV",
        }
    }
}

impl fmt::Display for AblationConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AblationConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AblationConfig::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown ablation config `{s}` (expected I, II, III or IV)"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FreeShotSettings {
    /// Entries a HUC12 needs before it gets its own library.
    pub min_scope: usize,
    /// Prototype contributors compared against the rationale.
    pub pas_top_k: usize,
}

impl Default for FreeShotSettings {
    fn default() -> Self {
        FreeShotSettings {
            min_scope: DEFAULT_MIN_SCOPE,
            pas_top_k: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalSettings {
    pub radius_km: f64,
    pub k_max: usize,
}

impl Default for RetrievalSettings {
    fn default() -> Self {
        RetrievalSettings {
            radius_km: DEFAULT_RADIUS_KM,
            k_max: DEFAULT_K_MAX,
        }
    }
}

/// Rows per prompt for each stage, and the re-ask budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BatchSettings {
    pub text_mode: usize,
    pub kb: usize,
    pub predict: usize,
    pub max_reasks: usize,
}

impl Default for BatchSettings {
    fn default() -> Self {
        BatchSettings {
            text_mode: 10,
            kb: 5,
            predict: 5,
            max_reasks: 1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DowngradeSettings {
    pub thresholds: DowngradeThresholds,
    pub lexicon: CueLexicon,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSettings {
    /// Share of test samples, by smallest margin, treated as near a boundary.
    pub boundary_quantile: f64,
}

impl Default for EvaluationSettings {
    fn default() -> Self {
        EvaluationSettings {
            boundary_quantile: 0.1,
        }
    }
}

/// Where mock responses come from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockSettings {
    /// JSON Lines of {prompt_sha256, response}; a transcript works too.
    pub script: Option<PathBuf>,
    /// Answer unscripted prompts with the rule-based responder.
    pub synthetic_fallback: bool,
    pub faults: FaultSchedule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub train_path: PathBuf,
    pub test_path: PathBuf,
    pub output_dir: PathBuf,
    /// Passed to backends that sample; the pipeline itself draws nothing.
    pub seed: u64,
    /// Data-parallel execution of the numeric stages.
    pub parallel: bool,
    pub ablation: AblationConfig,
    pub divergence: DivergenceConfig,
    pub freeshots: FreeShotSettings,
    pub retrieval: RetrievalSettings,
    pub batch: BatchSettings,
    pub backend: BackendConfig,
    pub mock: MockSettings,
    pub downgrade: DowngradeSettings,
    pub evaluation: EvaluationSettings,
    /// Risk-direction overrides by predictor key.
    pub risk_directions: BTreeMap<String, RiskDirection>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train_path: PathBuf::from("data/train.csv"),
            test_path: PathBuf::from("data/test.csv"),
            output_dir: PathBuf::from("run"),
            seed: 0,
            parallel: true,
            ablation: AblationConfig::IV,
            divergence: DivergenceConfig::default(),
            freeshots: FreeShotSettings::default(),
            retrieval: RetrievalSettings::default(),
            batch: BatchSettings::default(),
            backend: BackendConfig::default(),
            mock: MockSettings::default(),
            downgrade: DowngradeSettings::default(),
            evaluation: EvaluationSettings::default(),
            risk_directions: BTreeMap::new(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a TOML file. Relative data and script paths are taken relative
    /// to the file's directory; the output directory stays relative to the
    /// working directory.
    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        if let Some(base) = path.parent() {
            let fix = |p: &mut PathBuf| {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            };
            fix(&mut cfg.train_path);
            fix(&mut cfg.test_path);
            if let Some(s) = cfg.mock.script.as_mut() {
                fix(s);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.divergence.validate()?;
        self.backend.validate()?;
        if self.freeshots.min_scope == 0 || self.freeshots.pas_top_k == 0 {
            return Err(Error::Config(
                "min_scope and pas_top_k must be positive".into(),
            ));
        }
        if !(self.retrieval.radius_km > 0.0) {
            return Err(Error::Config(format!(
                "radius_km must be positive, got {}",
                self.retrieval.radius_km
            )));
        }
        if self.retrieval.k_max == 0 || self.retrieval.k_max > DEFAULT_K_MAX {
            return Err(Error::Config(format!(
                "k_max must lie in 1..=3, got {}",
                self.retrieval.k_max
            )));
        }
        if self.batch.text_mode == 0 || self.batch.kb == 0 || self.batch.predict == 0 {
            return Err(Error::Config("batch sizes must be positive".into()));
        }
        let q = self.evaluation.boundary_quantile;
        if !(q > 0.0 && q <= 1.0) {
            return Err(Error::Config(format!(
                "boundary_quantile must lie in (0, 1], got {q}"
            )));
        }
        if !self.backend.is_mock() && (self.mock.script.is_some() || self.mock.synthetic_fallback) {
            return Err(Error::Config(
                "mock settings given for a non-mock endpoint".into(),
            ));
        }
        Ok(())
    }

    pub fn execution(&self) -> crate::Execution {
        if self.parallel {
            crate::Execution::Parallel
        } else {
            crate::Execution::Sequential
        }
    }
}
