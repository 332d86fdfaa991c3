//! Desk-scale reproductions of the bias-recovery experiments on synthetic
//! cohorts, scoring harmonized values against the generator's ground truth.

mod experiments;
mod report;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::baseline::{fit_eb_combat_with, EbOptions};
use crate::basis::BasisSpec;
use crate::clinical::{apply, bhattacharyya, fit_bundle, fit_reference, rectify, ResidualSource};
use crate::error::{Error, Result};
use crate::model::{CovariateVector, Hyperparameters, SiteDataset, SubjectRecord};
use crate::synth::{fixture_spec, GeneratorSpec, GroundTruth, SKELETON};

pub use experiments::{
    run_age_window_curve, run_bias_grid, run_nu_sweep, run_sample_size_curve, AgeWindowConfig, BiasGridConfig,
    NuSweepConfig, SampleSizeConfig,
};
pub use report::{format_value, recompute_aggregates, Aggregate, Condition, ExperimentReport, Failure, Method, MetricRecord};

/// Covariates handed to the empirical-Bayes baseline.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EbCovariates {
    /// The raw covariates, entering linearly.
    Linear,
    /// The same standardized polynomial features the clinical model uses.
    #[default]
    Basis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EbSettings {
    #[serde(default)]
    pub covariates: EbCovariates,
    #[serde(default = "default_eb_tol")]
    pub tol: f64,
    #[serde(default = "default_eb_iters")]
    pub max_iters: usize,
    /// Site indicators in the pooled regression (off: covariates only).
    #[serde(default)]
    pub site_indicators: bool,
}

fn default_eb_tol() -> f64 {
    1e-6
}

fn default_eb_iters() -> usize {
    100
}

impl Default for EbSettings {
    fn default() -> Self {
        Self {
            covariates: EbCovariates::default(),
            tol: default_eb_tol(),
            max_iters: default_eb_iters(),
            site_indicators: false,
        }
    }
}

/// Shared inputs of every experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Setup {
    pub spec: GeneratorSpec,
    pub hp: Hyperparameters<f64>,
    pub seed: u64,
    /// Regions entering the headline RMSE and distance metrics.
    pub score_regions: Vec<String>,
    #[serde(default)]
    pub eb: EbSettings,
}

impl Default for Setup {
    fn default() -> Self {
        Self {
            spec: fixture_spec(341, 0),
            hp: Hyperparameters::default(),
            seed: 0,
            score_regions: vec![SKELETON.to_string()],
            eb: EbSettings::default(),
        }
    }
}

impl Setup {
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        self.hp.validate()?;
        if self.score_regions.is_empty() {
            return Err(Error::InvalidInput("no score regions".into()));
        }
        for r in &self.score_regions {
            if !self.spec.regions.iter().any(|c| &c.region_id == r) {
                return Err(Error::UnknownRegion(r.clone()));
            }
        }
        Ok(())
    }
}

/// Root mean squared difference between harmonized values and the
/// unbiased generating values, over every subject and region present.
pub fn rmse_to_truth(harmonized: &SiteDataset<f64>, truth: &GroundTruth) -> Result<f64> {
    let regions = harmonized.regions();
    let names: Vec<&str> = regions.iter().map(String::as_str).collect();
    rmse_regions(harmonized, truth, &names)
}

pub fn rmse_regions(harmonized: &SiteDataset<f64>, truth: &GroundTruth, regions: &[&str]) -> Result<f64> {
    let mut ss = 0.0;
    let mut n = 0usize;
    for r in harmonized.records() {
        for &region in regions {
            let y = r
                .metrics
                .get(region)
                .ok_or_else(|| Error::AlignmentError(format!("subject `{}` lacks region `{region}`", r.subject_id)))?;
            let d = y - truth.get(&r.subject_id, region)?.unbiased;
            ss += d * d;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::AlignmentError("nothing to score".into()));
    }
    Ok((ss / n as f64).sqrt())
}

/// Fits `method` on `reference` and `train`, then harmonizes `target`
/// (records of the moving site) onto the reference site.
pub fn harmonize(
    method: Method,
    reference: &SiteDataset<f64>,
    train: &SiteDataset<f64>,
    target: &SiteDataset<f64>,
    hp: &Hyperparameters<f64>,
    eb: &EbSettings,
) -> Result<SiteDataset<f64>> {
    match method {
        Method::None => Ok(target.clone()),
        Method::Clinical => {
            let bundle = fit_bundle(reference, train, hp)?;
            let records = apply(&bundle, target.records())?;
            SiteDataset::new(target.site_id(), target.metric_name(), records)
        }
        Method::Eb => {
            let reference_id = "__reference__";
            let moving_id = "__moving__";
            let features = match eb.covariates {
                EbCovariates::Linear => None,
                EbCovariates::Basis => Some(BasisSpec::fit(reference, hp.degree, hp.basis_mode)?),
            };
            let prepare = |d: &SiteDataset<f64>, id: &str| -> Result<SiteDataset<f64>> {
                let d = d.clone().with_site_id(id);
                match &features {
                    None => Ok(d),
                    Some(b) => with_features(&d, b),
                }
            };
            let model = fit_eb_combat_with(
                &[prepare(reference, reference_id)?, prepare(train, moving_id)?],
                &EbOptions {
                    tol: eb.tol,
                    max_iters: eb.max_iters,
                    site_indicators: eb.site_indicators,
                    ..EbOptions::default()
                },
            )?;
            let mapped = model.apply_to_reference(&[prepare(target, moving_id)?], reference_id)?;
            let records = target
                .records()
                .iter()
                .zip(mapped[0].records())
                .map(|(orig, h)| SubjectRecord {
                    metrics: h.metrics.clone(),
                    ..orig.clone()
                })
                .collect();
            SiteDataset::new(target.site_id(), target.metric_name(), records)
        }
    }
}

/// Replaces covariates with the non-constant basis features.
fn with_features(d: &SiteDataset<f64>, basis: &BasisSpec<f64>) -> Result<SiteDataset<f64>> {
    let dim = basis.feature_dim();
    let names: Arc<[String]> = (1..dim).map(|k| format!("phi_{k}")).collect::<Vec<_>>().into();
    let records = d
        .records()
        .iter()
        .map(|r| {
            let phi = basis.expand(r.covariates.values())?;
            Ok(SubjectRecord {
                covariates: CovariateVector::new(names.clone(), phi[1..].to_vec())?,
                ..r.clone()
            })
        })
        .collect::<Result<Vec<_>>>()?;
    SiteDataset::new(d.site_id(), d.metric_name(), records)
}

/// Bhattacharyya distance between the reference residuals and `moving`'s,
/// both rectified by the reference model of `region`.
pub fn distance_to_reference(
    reference: &SiteDataset<f64>,
    moving: &SiteDataset<f64>,
    region: &str,
    hp: &Hyperparameters<f64>,
) -> Result<f64> {
    let basis = BasisSpec::fit(reference, hp.degree, hp.basis_mode)?;
    let fit = fit_reference(reference, region, &basis)?;
    let zr = rectify(reference.records(), region, &fit.beta, &basis, ResidualSource::Reference)?;
    let zm = rectify(moving.records(), region, &fit.beta, &basis, ResidualSource::MovingHarmonized)?;
    bhattacharyya(zr.summary(), zm.summary())
}

/// Metrics of one harmonized dataset: pooled RMSE and mean distances over
/// the score regions, plus per-region RMSE.
pub(crate) fn score(
    setup: &Setup,
    reference: &SiteDataset<f64>,
    before: &SiteDataset<f64>,
    after: &SiteDataset<f64>,
    truth: &GroundTruth,
) -> Result<BTreeMap<String, f64>> {
    let regions: Vec<&str> = setup.score_regions.iter().map(String::as_str).collect();
    let mut out = BTreeMap::new();
    out.insert("rmse".to_string(), rmse_regions(after, truth, &regions)?);
    let mut db_before = 0.0;
    let mut db_after = 0.0;
    for r in &regions {
        db_before += distance_to_reference(reference, before, r, &setup.hp)?;
        db_after += distance_to_reference(reference, after, r, &setup.hp)?;
    }
    out.insert("d_b_before".into(), db_before / regions.len() as f64);
    out.insert("d_b_after".into(), db_after / regions.len() as f64);
    for region in after.regions() {
        out.insert(format!("rmse[{region}]"), rmse_regions(after, truth, &[&region])?);
    }
    Ok(out)
}
