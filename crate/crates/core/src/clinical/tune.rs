use serde::{Deserialize, Serialize};

use crate::basis::BasisSpec;
use crate::error::{Error, Result};
use crate::model::{Hyperparameters, SiteDataset};
use crate::scalar::{lit, Scalar};

use super::bundle::{PairDesign, RegionProblem};

/// Curve distances and scan history of one tuning run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneDiagnostics<T> {
    /// Min/max |reference − moving curve| over the moving covariates.
    pub d_min: T,
    pub d_max: T,
    /// Min/max over the full covariate range (which includes the moving points).
    pub d_1: T,
    pub d_2: T,
    /// `(multiplier, criterion value)` for every scanned step.
    pub lambda_trace: Vec<(T, i32)>,
    pub converged: bool,
}

fn sign<T: Scalar>(x: T) -> i32 {
    if x >= T::zero() {
        1
    } else {
        -1
    }
}

/// `sign(d_min/τ − d_1) + sign(d_2 − τ'·d_max) + 2`; zero means accepted.
pub fn tune_criterion<T: Scalar>(d_min: T, d_max: T, d_1: T, d_2: T, tau_inner: T, tau_outer: T) -> i32 {
    sign(d_min / tau_inner - d_1) + sign(d_2 - d_max * tau_outer) + 2
}

/// Initial per-feature weights `|β_ref[0] / β_ref[k]|`. Entries with a zero
/// coefficient take the largest finite ratio.
pub(crate) fn initial_lambda<T: Scalar>(beta_ref: &[T]) -> Vec<T> {
    let ratios: Vec<T> = beta_ref.iter().map(|&b| (beta_ref[0] / b).abs()).collect();
    let max_finite = ratios
        .iter()
        .copied()
        .filter(|r| r.is_finite())
        .fold(T::zero(), T::max);
    let fill = if max_finite > T::zero() { max_finite } else { T::one() };
    ratios
        .into_iter()
        .map(|r| if r.is_finite() && r > T::zero() { r } else { fill })
        .collect()
}

impl<T: Scalar> RegionProblem<'_, T> {
    /// Multiplicative scan for the smallest accepted lambda.
    pub fn tune(&self, hp: &Hyperparameters<T>) -> Result<(Vec<T>, TuneDiagnostics<T>)> {
        hp.validate()?;
        let settings = &hp.autotune;
        let lambda0 = initial_lambda(&self.reference.beta);
        let tol = self.coincidence_tolerance();
        let mut trace = Vec::with_capacity(settings.max_iters);
        let mut best: Option<(i32, Vec<T>, [T; 4])> = None;
        let mut mult = settings.lambda_min;
        for _ in 0..settings.max_iters.max(1) {
            let lambda: Vec<T> = lambda0.iter().map(|&l| l * mult).collect();
            let (crit, dists) = match self.fit_moving(&lambda, hp.nu) {
                Ok(fit) => {
                    let d = self.curve_distances(&fit.beta);
                    let c = if d[3] <= tol {
                        0
                    } else {
                        tune_criterion(d[0], d[1], d[2], d[3], hp.tau_inner(), hp.tau_outer())
                    };
                    (c, d)
                }
                Err(Error::SingularDesign(_)) => (4, [T::nan(); 4]),
                Err(e) => return Err(e),
            };
            trace.push((mult, crit));
            if best.as_ref().map_or(true, |(c, _, _)| crit < *c) {
                best = Some((crit, lambda, dists));
            }
            if crit == 0 {
                break;
            }
            mult = mult * settings.k;
        }
        let (crit, lambda, d) = best.expect("at least one scan step");
        if crit != 0 {
            log::warn!(
                "region `{}`: lambda auto-tuning did not satisfy the criterion in {} steps",
                self.region,
                settings.max_iters
            );
        }
        if d[0].is_nan() {
            return Err(Error::SingularDesign(format!(
                "region `{}`: every scanned lambda gave a singular system",
                self.region
            )));
        }
        Ok((
            lambda,
            TuneDiagnostics {
                d_min: d[0],
                d_max: d[1],
                d_1: d[2],
                d_2: d[3],
                lambda_trace: trace,
                converged: crit == 0,
            },
        ))
    }

    fn coincidence_tolerance(&self) -> T {
        let scale = self
            .design
            .outer_phi
            .mul_vec(&self.reference.beta)
            .into_iter()
            .map(|v| v.abs())
            .fold(T::zero(), T::max);
        scale * T::epsilon() * lit(1e3)
    }
}

/// Tunes the regularization vector for one region.
pub fn auto_tune<T: Scalar>(
    reference: &SiteDataset<T>,
    moving: &SiteDataset<T>,
    region: &str,
    hp: &Hyperparameters<T>,
) -> Result<(Vec<T>, TuneDiagnostics<T>)> {
    hp.validate()?;
    let basis = BasisSpec::fit(reference, hp.degree, hp.basis_mode)?;
    let design = PairDesign::new(reference, moving, basis, hp.autotune.grid_points)?;
    let problem = design.region(reference, moving, region)?;
    problem.tune(hp)
}
