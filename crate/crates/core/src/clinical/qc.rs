use crate::basis::BasisSpec;
use crate::error::{Error, Result};
use crate::model::{SiteDataset, SubjectRecord};
use crate::scalar::{dot, mean, population_variance, lit, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResidualSource {
    Reference,
    MovingHarmonized,
}

/// Values minus the reference curve at each subject's covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct RectifiedResiduals<T> {
    pub values: Vec<T>,
    pub source: ResidualSource,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianSummary<T> {
    pub mean: T,
    pub var: T,
}

impl<T: Scalar> RectifiedResiduals<T> {
    pub fn summary(&self) -> GaussianSummary<T> {
        GaussianSummary {
            mean: mean(&self.values),
            var: population_variance(&self.values),
        }
    }
}

pub fn rectify<T: Scalar>(
    records: &[SubjectRecord<T>],
    region: &str,
    beta_ref: &[T],
    basis: &BasisSpec<T>,
    source: ResidualSource,
) -> Result<RectifiedResiduals<T>> {
    let values = records
        .iter()
        .map(|r| {
            let phi = basis.expand(r.covariates.values())?;
            Ok(r.value(region)? - dot(beta_ref, &phi))
        })
        .collect::<Result<Vec<T>>>()?;
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite rectified residual".into()));
    }
    Ok(RectifiedResiduals { values, source })
}

/// Bhattacharyya distance between two univariate Gaussians.
pub fn bhattacharyya<T: Scalar>(a: GaussianSummary<T>, b: GaussianSummary<T>) -> Result<T> {
    if !(a.var > T::zero()) || !(b.var > T::zero()) {
        return Err(Error::DegenerateVariance(
            "Bhattacharyya distance needs positive variances".into(),
        ));
    }
    let sum = a.var + b.var;
    let d = a.mean - b.mean;
    let quarter: T = lit(0.25);
    let half: T = lit(0.5);
    let two: T = lit(2.0);
    let db = quarter * d * d / sum + half * (sum / (two * (a.var * b.var).sqrt())).ln();
    // the log term is >= 0 analytically; clip rounding
    Ok(db.max(T::zero()))
}

/// Distance between reference and (harmonized) moving populations after
/// both are rectified by the reference coefficients.
pub fn qc_bhattacharyya<T: Scalar>(
    reference: &SiteDataset<T>,
    harmonized_moving: &[SubjectRecord<T>],
    region: &str,
    beta_ref: &[T],
    basis: &BasisSpec<T>,
) -> Result<T> {
    if harmonized_moving.is_empty() {
        return Err(Error::InsufficientData("no moving records for QC".into()));
    }
    let zr = rectify(reference.records(), region, beta_ref, basis, ResidualSource::Reference)?;
    let zm = rectify(harmonized_moving, region, beta_ref, basis, ResidualSource::MovingHarmonized)?;
    bhattacharyya(zr.summary(), zm.summary())
}
