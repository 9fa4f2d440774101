//! Run-level configuration: data sources, split ratios, optimizer and
//! evaluation settings. Parsed from TOML with unknown keys rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ehr::synth::SynthConfig;
use crate::error::{Error, Result};
use crate::model::config::{AblationFlags, ModelConfig};
use crate::model::predictor::LossWeights;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    pub visits: PathBuf,
    pub ddi: PathBuf,
    pub smiles: PathBuf,
    /// Optional two-column medication-code mapping applied at ingestion.
    #[serde(default)]
    pub mapping: Option<PathBuf>,
    #[serde(default = "default_top_k")]
    pub top_k_severities: u32,
}

fn default_top_k() -> u32 {
    40
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        // The 4:1:1 convention.
        SplitRatios { train: 4.0 / 6.0, val: 1.0 / 6.0, test: 1.0 / 6.0 }
    }
}

impl SplitRatios {
    pub fn tuple(&self) -> (f64, f64, f64) {
        (self.train, self.val, self.test)
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainParams {
    pub lr: f64,
    pub epochs: usize,
    /// Stop after this many epochs without validation improvement.
    pub patience: usize,
    /// Persist optimizer moments in the latest-state checkpoint.
    pub keep_optimizer: bool,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams { lr: 1e-4, epochs: 50, patience: 10, keep_optimizer: true }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalParams {
    /// Bootstrap rounds for the dispersion estimate.
    pub rounds: usize,
    /// Report conventional precision/recall instead of the printed forms.
    pub conventional_pr: bool,
    /// When > 1, retrain with this many seeds and report dispersion across
    /// seeds instead of bootstrap rounds.
    pub seed_rounds: usize,
}

impl Default for EvalParams {
    fn default() -> Self {
        EvalParams { rounds: 10, conventional_pr: false, seed_rounds: 1 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub data: Option<DataPaths>,
    pub synthetic: Option<SynthConfig>,
    pub split: SplitRatios,
    pub model: ModelConfig,
    pub loss: LossWeights,
    pub train: TrainParams,
    pub eval: EvalParams,
}

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub threshold: Option<f64>,
    pub gamma: Option<f64>,
    pub dim: Option<usize>,
    pub ablation: Option<String>,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<RunConfig> {
        toml::from_str(text).map_err(|e| Error::Config(format!("config parse failed: {e}")))
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn apply_overrides(&mut self, ov: &Overrides) -> Result<()> {
        if let Some(seed) = ov.seed {
            self.seed = seed;
        }
        if let Some(t) = ov.threshold {
            self.model.threshold = t;
        }
        if let Some(g) = ov.gamma {
            self.loss.gamma = g;
        }
        if let Some(d) = ov.dim {
            self.model.dim = d;
        }
        if let Some(name) = &ov.ablation {
            self.model.ablation = AblationFlags::from_name(name)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.data.is_none() && self.synthetic.is_none() {
            return Err(Error::Config(
                "config must provide a [data] or a [synthetic] section".into(),
            ));
        }
        if self.data.is_some() && self.synthetic.is_some() {
            return Err(Error::Config(
                "config provides both [data] and [synthetic]; pick one".into(),
            ));
        }
        if let Some(s) = &self.synthetic {
            s.validate()?;
        }
        if self.loss.alpha < 0.0 || self.loss.beta < 0.0 || self.loss.gamma < 0.0 {
            return Err(Error::Config("loss weights must be nonnegative".into()));
        }
        if self.eval.seed_rounds == 0 {
            return Err(Error::Config("seed_rounds must be at least 1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_synthetic_config_parses() {
        let cfg = RunConfig::from_toml_str(
            r#"
            seed = 11
            [synthetic]
            n_patients = 40
            n_diag = 30
            n_proc = 12
            n_med = 24
            [model]
            dim = 16
            [loss]
            gamma = 0.5
            "#,
        )
        .unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.seed, 11);
        assert_eq!(cfg.model.dim, 16);
        assert_eq!(cfg.loss.gamma, 0.5);
        assert_eq!(cfg.loss.alpha, 0.95, "unset loss fields keep defaults");
        assert_eq!(cfg.train.epochs, 50);
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = RunConfig::from_toml_str("definitely_not_a_key = 3").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        let err2 = RunConfig::from_toml_str(
            "[model]\ndim = 8\nbanana = true\n[synthetic]\nn_patients=1\nn_diag=1\nn_proc=1\nn_med=1",
        )
        .unwrap_err();
        assert!(matches!(err2, Error::Config(_)));
    }

    #[test]
    fn overrides_apply() {
        let mut cfg = RunConfig::from_toml_str(
            "[synthetic]\nn_patients=10\nn_diag=30\nn_proc=5\nn_med=24",
        )
        .unwrap();
        let ov = Overrides {
            seed: Some(99),
            threshold: Some(0.7),
            gamma: Some(2.0),
            dim: Some(32),
            ablation: Some("lstm".into()),
        };
        cfg.apply_overrides(&ov).unwrap();
        assert_eq!(cfg.seed, 99);
        assert_eq!(cfg.model.threshold, 0.7);
        assert_eq!(cfg.loss.gamma, 2.0);
        assert_eq!(cfg.model.dim, 32);
        assert!(cfg.model.ablation.lstm);
    }

    #[test]
    fn needs_exactly_one_source() {
        let none = RunConfig::from_toml_str("seed = 1").unwrap();
        assert!(none.validate().is_err());
    }
}
