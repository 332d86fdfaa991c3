use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::basis::{linspace, BasisSpec};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{HarmonizationBundle, Hyperparameters, LambdaPolicy, RegionModel, SiteDataset};
use crate::scalar::{Scalar};

use super::apply::apply_region;
use super::fit::{fit_moving_design, fit_reference_design, resolve_lambda, MovingFit, ReferenceFit};
use super::qc::{bhattacharyya, GaussianSummary};

/// Design matrices shared by every region of a reference/moving pair.
#[derive(Debug, Clone)]
pub(crate) struct PairDesign<T> {
    pub basis: BasisSpec<T>,
    pub ref_phi: Matrix<T>,
    pub mov_phi: Matrix<T>,
    /// Full-range evaluation points: a grid along the first covariate
    /// (others at their reference means) followed by the moving points.
    pub outer_phi: Matrix<T>,
}

impl<T: Scalar> PairDesign<T> {
    pub fn new(
        reference: &SiteDataset<T>,
        moving: &SiteDataset<T>,
        basis: BasisSpec<T>,
        grid_points: usize,
    ) -> Result<Self> {
        basis.check_names(reference.covariate_names())?;
        basis.check_names(moving.covariate_names())?;
        let ref_phi = basis.design(reference.covariate_rows())?;
        let mov_phi = basis.design(moving.covariate_rows())?;
        let first: Vec<T> = reference.covariate_rows().iter().map(|r| r[0]).collect();
        let lo = first.iter().copied().fold(T::infinity(), T::min);
        let hi = first.iter().copied().fold(T::neg_infinity(), T::max);
        let mut rows: Vec<Vec<T>> = linspace(lo, hi, grid_points.max(2))
            .into_iter()
            .map(|a| {
                let mut x: Vec<T> = basis.standardization.iter().map(|s| s.center).collect();
                x[0] = a;
                basis.expand(&x)
            })
            .collect::<Result<_>>()?;
        rows.extend((0..mov_phi.rows()).map(|i| mov_phi.row(i).to_vec()));
        Ok(Self {
            outer_phi: Matrix::from_rows(&rows),
            basis,
            ref_phi,
            mov_phi,
        })
    }

    pub fn region<'a>(
        &'a self,
        reference: &SiteDataset<T>,
        moving: &SiteDataset<T>,
        region: &str,
    ) -> Result<RegionProblem<'a, T>> {
        let ref_y = reference.values(region)?;
        let mov_y = moving.values(region)?;
        let fit = fit_reference_design(&self.ref_phi, &ref_y)?;
        Ok(RegionProblem {
            region: region.to_string(),
            design: self,
            mov_y,
            reference: fit,
        })
    }
}

/// One region of a reference/moving pair with the reference already fitted.
#[derive(Debug, Clone)]
pub struct RegionProblem<'a, T> {
    pub region: String,
    pub(crate) design: &'a PairDesign<T>,
    pub mov_y: Vec<T>,
    pub reference: ReferenceFit<T>,
}

impl<T: Scalar> RegionProblem<'_, T> {
    pub fn fit_moving(&self, lambda: &[T], nu: T) -> Result<MovingFit<T>> {
        fit_moving_design(
            &self.design.mov_phi,
            &self.mov_y,
            &self.reference.beta,
            self.reference.var,
            lambda,
            nu,
        )
    }

    /// `[d_min, d_max, d_1, d_2]` between the reference curve and `beta_mov`.
    pub fn curve_distances(&self, beta_mov: &[T]) -> [T; 4] {
        let diff: Vec<T> = self
            .reference
            .beta
            .iter()
            .zip(beta_mov)
            .map(|(&r, &m)| r - m)
            .collect();
        let inner = self.design.mov_phi.mul_vec(&diff);
        let outer = self.design.outer_phi.mul_vec(&diff);
        let (d_min, d_max) = min_max_abs(&inner);
        let (d_1, d_2) = min_max_abs(&outer);
        [d_min, d_max, d_1, d_2]
    }

    fn model(&self, fit: MovingFit<T>) -> RegionModel<T> {
        RegionModel {
            region_id: self.region.clone(),
            beta_ref: self.reference.beta.clone(),
            var_ref: self.reference.var,
            beta_mov: fit.beta,
            var_mov: fit.var,
            var_mov_empirical: fit.var_empirical,
            n_moving: self.mov_y.len(),
            basis: self.design.basis.clone(),
        }
    }
}

fn min_max_abs<T: Scalar>(xs: &[T]) -> (T, T) {
    xs.iter().fold((T::infinity(), T::zero()), |(lo, hi), &v| {
        (lo.min(v.abs()), hi.max(v.abs()))
    })
}

struct RegionOutcome<T> {
    model: RegionModel<T>,
    lambda: Vec<T>,
    qc: T,
    qc_before: T,
}

fn summary_against<T: Scalar>(values: &[T], phi: &Matrix<T>, beta_ref: &[T]) -> GaussianSummary<T> {
    let curve = phi.mul_vec(beta_ref);
    let z: Vec<T> = values.iter().zip(&curve).map(|(&y, &c)| y - c).collect();
    GaussianSummary {
        mean: crate::scalar::mean(&z),
        var: crate::scalar::population_variance(&z),
    }
}

fn fit_region<T: Scalar>(
    design: &PairDesign<T>,
    reference: &SiteDataset<T>,
    moving: &SiteDataset<T>,
    region: &str,
    hp: &Hyperparameters<T>,
) -> Result<RegionOutcome<T>> {
    let problem = design.region(reference, moving, region)?;
    let lambda = match &hp.lambda {
        LambdaPolicy::Fixed(l) => resolve_lambda(l, design.basis.feature_dim())?,
        LambdaPolicy::AutoTune => problem.tune(hp)?.0,
    };
    let fit = problem.fit_moving(&lambda, hp.nu)?;
    let model = problem.model(fit);
    let harmonized = apply_region(&model, moving.records(), hp.scaling)?;
    let ref_y = reference.values(region)?;
    let zr = summary_against(&ref_y, &design.ref_phi, &model.beta_ref);
    let qc = bhattacharyya(zr, summary_against(&harmonized, &design.mov_phi, &model.beta_ref))?;
    let qc_before = bhattacharyya(zr, summary_against(&problem.mov_y, &design.mov_phi, &model.beta_ref))?;
    Ok(RegionOutcome {
        model,
        lambda,
        qc,
        qc_before,
    })
}

/// Fits every region of the moving site against the reference site.
///
/// Regions are processed independently and in parallel; the result does not
/// depend on the thread count.
pub fn fit_bundle<T: Scalar>(
    reference: &SiteDataset<T>,
    moving: &SiteDataset<T>,
    hp: &Hyperparameters<T>,
) -> Result<HarmonizationBundle<T>> {
    hp.validate()?;
    if reference.metric_name() != moving.metric_name() {
        return Err(Error::InvalidInput(format!(
            "metric `{}` vs `{}`",
            reference.metric_name(),
            moving.metric_name()
        )));
    }
    if reference.covariate_names()[..] != moving.covariate_names()[..] {
        return Err(Error::CovariateMismatch {
            expected: reference.covariate_names().join(","),
            found: moving.covariate_names().join(","),
        });
    }
    if reference.region_set() != moving.region_set() {
        let r = reference.region_set();
        let m = moving.region_set();
        let diff: Vec<&str> = r.symmetric_difference(&m).copied().collect();
        return Err(Error::RegionMismatch(diff.join(",")));
    }
    let basis = BasisSpec::fit(reference, hp.degree, hp.basis_mode)?;
    let design = PairDesign::new(reference, moving, basis, hp.autotune.grid_points)?;
    let regions = reference.regions();
    let outcomes: Vec<(String, Result<RegionOutcome<T>>)> = regions
        .par_iter()
        .map(|r| (r.clone(), fit_region(&design, reference, moving, r, hp)))
        .collect();

    let mut failures = Vec::new();
    let mut bundle = HarmonizationBundle {
        reference_site_id: reference.site_id().to_string(),
        moving_site_id: moving.site_id().to_string(),
        metric_name: reference.metric_name().to_string(),
        hyperparameters: hp.clone(),
        models: BTreeMap::new(),
        qc: BTreeMap::new(),
        qc_before: BTreeMap::new(),
        tuned_lambda: BTreeMap::new(),
    };
    for (region, outcome) in outcomes {
        match outcome {
            Ok(o) => {
                bundle.qc.insert(region.clone(), o.qc);
                bundle.qc_before.insert(region.clone(), o.qc_before);
                bundle.tuned_lambda.insert(region.clone(), o.lambda);
                bundle.models.insert(region, o.model);
            }
            Err(e) => failures.push((region, e)),
        }
    }
    if !failures.is_empty() {
        return Err(Error::Regions(failures));
    }
    Ok(bundle)
}
