//! Domain types shared by every estimator.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::basis::{BasisMode, BasisSpec};
use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};

/// Ordered, named covariates of one subject (age, sex code, ...).
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateVector<T> {
    names: Arc<[String]>,
    values: Vec<T>,
}

impl<T: Scalar> CovariateVector<T> {
    pub fn new(names: Arc<[String]>, values: Vec<T>) -> Result<Self> {
        if names.is_empty() || names.len() != values.len() {
            return Err(Error::InvalidInput(format!(
                "{} covariate names for {} values",
                names.len(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "covariate `{}` is not finite",
                names[i]
            )));
        }
        Ok(Self { names, values })
    }

    pub fn names(&self) -> &Arc<[String]> {
        &self.names
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// One subject: covariates plus one metric value per region.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectRecord<T> {
    pub subject_id: String,
    pub covariates: CovariateVector<T>,
    pub metrics: BTreeMap<String, T>,
}

impl<T: Scalar> SubjectRecord<T> {
    pub fn new(
        subject_id: impl Into<String>,
        covariates: CovariateVector<T>,
        metrics: BTreeMap<String, T>,
    ) -> Result<Self> {
        let subject_id = subject_id.into();
        if let Some((r, _)) = metrics.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "subject `{subject_id}`: value for region `{r}` is not finite"
            )));
        }
        Ok(Self {
            subject_id,
            covariates,
            metrics,
        })
    }

    pub fn value(&self, region: &str) -> Result<T> {
        self.metrics
            .get(region)
            .copied()
            .ok_or_else(|| Error::UnknownRegion(region.to_string()))
    }
}

/// Records from one site for one metric. Always rectangular.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteDataset<T> {
    site_id: String,
    metric_name: String,
    records: Vec<SubjectRecord<T>>,
}

impl<T: Scalar> SiteDataset<T> {
    pub fn new(
        site_id: impl Into<String>,
        metric_name: impl Into<String>,
        records: Vec<SubjectRecord<T>>,
    ) -> Result<Self> {
        let site_id = site_id.into();
        let first = records
            .first()
            .ok_or_else(|| Error::InsufficientData(format!("site `{site_id}` has no records")))?;
        let names = first.covariates.names().clone();
        let regions: Vec<&String> = first.metrics.keys().collect();
        for r in &records[1..] {
            if r.covariates.names()[..] != names[..] {
                return Err(Error::CovariateMismatch {
                    expected: names.join(","),
                    found: r.covariates.names().join(","),
                });
            }
            if !r.metrics.keys().eq(regions.iter().copied()) {
                return Err(Error::InvalidInput(format!(
                    "site `{site_id}`: subject `{}` does not carry the same regions as `{}`",
                    r.subject_id, first.subject_id
                )));
            }
        }
        Ok(Self {
            site_id,
            metric_name: metric_name.into(),
            records,
        })
    }

    pub fn site_id(&self) -> &str {
        &self.site_id
    }

    pub fn metric_name(&self) -> &str {
        &self.metric_name
    }

    pub fn records(&self) -> &[SubjectRecord<T>] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn covariate_names(&self) -> &Arc<[String]> {
        self.records[0].covariates.names()
    }

    pub fn regions(&self) -> Vec<String> {
        self.records[0].metrics.keys().cloned().collect()
    }

    pub fn region_set(&self) -> BTreeSet<&str> {
        self.records[0].metrics.keys().map(String::as_str).collect()
    }

    /// Column of values for one region, in record order.
    pub fn values(&self, region: &str) -> Result<Vec<T>> {
        self.records.iter().map(|r| r.value(region)).collect()
    }

    pub fn covariate_rows(&self) -> Vec<&[T]> {
        self.records.iter().map(|r| r.covariates.values()).collect()
    }

    /// Keeps only the records whose index passes `keep`.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let records = indices.iter().map(|&i| self.records[i].clone()).collect();
        Self::new(self.site_id.clone(), self.metric_name.clone(), records)
    }

    /// Copy restricted to the given regions.
    pub fn with_regions(&self, keep: &[&str]) -> Result<Self> {
        let records = self
            .records
            .iter()
            .map(|r| {
                let metrics = keep
                    .iter()
                    .map(|&k| r.value(k).map(|v| (k.to_string(), v)))
                    .collect::<Result<_>>()?;
                Ok(SubjectRecord {
                    subject_id: r.subject_id.clone(),
                    covariates: r.covariates.clone(),
                    metrics,
                })
            })
            .collect::<Result<_>>()?;
        Self::new(self.site_id.clone(), self.metric_name.clone(), records)
    }

    pub fn with_site_id(mut self, site_id: impl Into<String>) -> Self {
        self.site_id = site_id.into();
        self
    }
}

/// How the moving-site residual is rescaled onto the reference spread.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualScaling {
    /// Multiply by `sqrt(var_ref / var_mov)`.
    #[default]
    StdRatio,
    /// Multiply by `var_ref / var_mov`, as the transform is sometimes printed.
    VarianceRatio,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "policy", content = "values")]
pub enum LambdaPolicy<T> {
    /// One entry per feature, or a single entry broadcast to all features.
    Fixed(Vec<T>),
    AutoTune,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AutoTuneSettings<T> {
    /// Multiplicative step, `k > 1`.
    pub k: T,
    pub lambda_min: T,
    pub max_iters: usize,
    pub grid_points: usize,
}

impl<T: Scalar> Default for AutoTuneSettings<T> {
    fn default() -> Self {
        Self {
            k: lit(2.0),
            lambda_min: lit(1e-3),
            max_iters: 60,
            grid_points: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default, bound(deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct Hyperparameters<T> {
    pub degree: usize,
    #[serde(default)]
    pub basis_mode: BasisMode,
    pub nu: T,
    pub tau: T,
    /// Separate tolerance for the outer (full-range) condition; defaults to `tau`.
    #[serde(default)]
    pub tau_outer: Option<T>,
    pub lambda: LambdaPolicy<T>,
    #[serde(default)]
    pub autotune: AutoTuneSettings<T>,
    #[serde(default)]
    pub scaling: ResidualScaling,
}

impl<T: Scalar> Default for Hyperparameters<T> {
    fn default() -> Self {
        Self {
            degree: 2,
            basis_mode: BasisMode::MonomialsUpToP,
            nu: lit(5.0),
            tau: lit(2.0),
            tau_outer: None,
            lambda: LambdaPolicy::AutoTune,
            autotune: AutoTuneSettings::default(),
            scaling: ResidualScaling::StdRatio,
        }
    }
}

impl<T: Scalar> Hyperparameters<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau >= T::one()) {
            return Err(Error::InvalidInput("tau must be >= 1".into()));
        }
        if let Some(t) = self.tau_outer {
            if !(t >= T::one()) {
                return Err(Error::InvalidInput("tau_outer must be >= 1".into()));
            }
        }
        if !(self.nu >= T::zero()) || !self.nu.is_finite() {
            return Err(Error::InvalidInput("nu must be finite and >= 0".into()));
        }
        if let LambdaPolicy::Fixed(l) = &self.lambda {
            if l.is_empty() || l.iter().any(|v| !(*v >= T::zero())) {
                return Err(Error::InvalidInput(
                    "fixed lambda must be a nonempty list of entries >= 0".into(),
                ));
            }
        }
        let a = &self.autotune;
        if !(a.k > T::one()) {
            return Err(Error::InvalidInput("autotune.k must exceed 1".into()));
        }
        if !(a.lambda_min > T::zero()) {
            return Err(Error::InvalidInput("autotune.lambda_min must be positive".into()));
        }
        if a.grid_points < 2 {
            return Err(Error::InvalidInput("autotune.grid_points must be >= 2".into()));
        }
        Ok(())
    }

    pub fn tau_inner(&self) -> T {
        self.tau
    }

    pub fn tau_outer(&self) -> T {
        self.tau_outer.unwrap_or(self.tau)
    }
}

/// Fitted parameters for one region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionModel<T> {
    pub region_id: String,
    pub beta_ref: Vec<T>,
    pub var_ref: T,
    pub beta_mov: Vec<T>,
    pub var_mov: T,
    /// Unshrunk residual variance of the moving fit.
    pub var_mov_empirical: T,
    pub n_moving: usize,
    pub basis: BasisSpec<T>,
}

impl<T: Scalar> RegionModel<T> {
    pub fn check(&self) -> Result<()> {
        let p = self.basis.feature_dim();
        if self.beta_ref.len() != p || self.beta_mov.len() != p {
            return Err(Error::InvalidInput(format!(
                "region `{}`: coefficient length does not match feature dimension {p}",
                self.region_id
            )));
        }
        if !(self.var_ref >= T::zero()) || !(self.var_mov >= T::zero()) {
            return Err(Error::InvalidInput(format!(
                "region `{}`: negative variance",
                self.region_id
            )));
        }
        Ok(())
    }
}

/// Everything needed to harmonize a moving site onto a reference site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct HarmonizationBundle<T> {
    pub reference_site_id: String,
    pub moving_site_id: String,
    pub metric_name: String,
    pub hyperparameters: Hyperparameters<T>,
    pub models: BTreeMap<String, RegionModel<T>>,
    /// Bhattacharyya distance between reference and harmonized moving data.
    pub qc: BTreeMap<String, T>,
    /// Same distance before harmonization.
    pub qc_before: BTreeMap<String, T>,
    pub tuned_lambda: BTreeMap<String, Vec<T>>,
}

impl<T: Scalar> HarmonizationBundle<T> {
    pub fn check(&self) -> Result<()> {
        if !self.models.keys().eq(self.qc.keys()) {
            return Err(Error::InvalidInput(
                "bundle models and qc have different region sets".into(),
            ));
        }
        self.models.values().try_for_each(RegionModel::check)
    }

    pub fn covariate_names(&self) -> Vec<String> {
        self.models
            .values()
            .next()
            .map(|m| m.basis.covariate_names())
            .unwrap_or_default()
    }
}
