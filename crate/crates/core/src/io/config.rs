use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::read_to_string;
use crate::error::{Error, Result};
use crate::eval::{AgeWindowConfig, BiasGridConfig, EbSettings, NuSweepConfig, SampleSizeConfig, Setup};
use crate::model::Hyperparameters;
use crate::synth::{fixture_spec, GeneratorSpec, SKELETON};

/// A covariate column. Categorical columns declare their numeric encoding;
/// nothing is inferred.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovariateColumn {
    pub name: String,
    #[serde(default)]
    pub levels: Option<BTreeMap<String, f64>>,
}

impl CovariateColumn {
    pub fn numeric(name: &str) -> Self {
        Self {
            name: name.into(),
            levels: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub covariates: Vec<CovariateColumn>,
    pub metric_name: String,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            covariates: vec![CovariateColumn::numeric("age")],
            metric_name: "md".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Generator of the synthetic cohorts; the built-in fixture if absent.
    pub spec: Option<GeneratorSpec>,
    pub score_regions: Vec<String>,
    pub eb: EbSettings,
    pub bias_grid: BiasGridConfig,
    pub sample_size: SampleSizeConfig,
    pub age_window: AgeWindowConfig,
    pub nu_sweep: NuSweepConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            spec: None,
            score_regions: vec![SKELETON.into()],
            eb: EbSettings::default(),
            bias_grid: BiasGridConfig::default(),
            sample_size: SampleSizeConfig::default(),
            age_window: AgeWindowConfig::default(),
            nu_sweep: NuSweepConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub hyperparameters: Hyperparameters<f64>,
    pub seed: u64,
    pub experiment: ExperimentConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::InvalidInput(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.covariates.is_empty() {
            return Err(Error::InvalidInput("config: at least one covariate is required".into()));
        }
        let mut names: Vec<&str> = self.data.covariates.iter().map(|c| c.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidInput("config: duplicate covariate names".into()));
        }
        self.hyperparameters.validate()?;
        self.setup().validate()
    }

    pub fn covariate_names(&self) -> Vec<String> {
        self.data.covariates.iter().map(|c| c.name.clone()).collect()
    }

    /// Experiment inputs; the run seed also seeds the default fixture.
    pub fn setup(&self) -> Setup {
        Setup {
            spec: self
                .experiment
                .spec
                .clone()
                .unwrap_or_else(|| fixture_spec(341, self.seed)),
            hp: self.hyperparameters.clone(),
            seed: self.seed,
            score_regions: self.experiment.score_regions.clone(),
            eb: self.experiment.eb.clone(),
        }
    }
}
