//! Empirical-Bayes ComBAT: site effects shrunk toward priors whose
//! moments are estimated across regions.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{pooled_fit, ComBatFlavor, PooledModel};
use crate::error::{Error, Result};
use crate::model::SiteDataset;
use crate::scalar::{from_usize, lit, mean, sample_variance, Scalar};

/// Prior moments of one site.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EbHyperparams<T> {
    pub mu_bar: T,
    pub tau2_bar: T,
    pub lambda_bar: T,
    pub theta_bar: T,
}

/// Starting value of the posterior scale iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EbInit<T> {
    /// The empirical standardized site variances.
    Empirical,
    Constant(T),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EbOptions<T> {
    pub tol: T,
    pub max_iters: usize,
    pub init: EbInit<T>,
    /// Regress only on these covariates; `None` uses all of them.
    pub covariates: Option<Vec<usize>>,
    /// Add site indicators to the pooled regression.
    pub site_indicators: bool,
}

impl<T: Scalar> Default for EbOptions<T> {
    fn default() -> Self {
        Self {
            tol: lit(1e-6),
            max_iters: 100,
            init: EbInit::Empirical,
            covariates: None,
            site_indicators: false,
        }
    }
}

/// Fits empirical-Bayes ComBAT with the given stopping rule.
pub fn fit_eb_combat<T: Scalar>(sites: &[SiteDataset<T>], tol: T, max_iters: usize) -> Result<PooledModel<T>> {
    fit_eb_combat_with(
        sites,
        &EbOptions {
            tol,
            max_iters,
            ..EbOptions::default()
        },
    )
}

pub fn fit_eb_combat_with<T: Scalar>(sites: &[SiteDataset<T>], opts: &EbOptions<T>) -> Result<PooledModel<T>> {
    if let Some(s) = sites.iter().find(|s| s.regions().len() < 2) {
        return Err(Error::InsufficientRegions(format!(
            "site `{}` has {} region(s); the prior pools across at least 2",
            s.site_id(),
            s.regions().len()
        )));
    }
    let all: Vec<usize> = (0..sites.first().map_or(0, |s| s.covariate_names().len())).collect();
    let fit = pooled_fit(sites, opts.covariates.as_deref().unwrap_or(&all), opts.site_indicators)?;
    if let Some(v) = fit.sigma2.iter().position(|s| !(*s > T::zero())) {
        return Err(Error::DegenerateVariance(format!(
            "pooled residual variance of region `{}` is zero",
            fit.regions[v]
        )));
    }
    let sigma: Vec<T> = fit.sigma2.iter().map(|s| s.sqrt()).collect();

    let per_site: Vec<(String, SitePosterior<T>)> = fit
        .residuals
        .par_iter()
        .map(|(id, per_region)| {
            let z: Vec<Vec<T>> = per_region
                .iter()
                .zip(&sigma)
                .map(|(r, &s)| r.iter().map(|&e| e / s).collect())
                .collect();
            site_posterior(id, &z, opts).map(|p| (id.clone(), p))
        })
        .collect::<Result<_>>()?;

    let mut site_gamma = BTreeMap::new();
    let mut site_delta2 = BTreeMap::new();
    let mut eb_hyperparams = BTreeMap::new();
    let mut eb_trace = BTreeMap::new();
    for (id, p) in per_site {
        site_gamma.insert(id.clone(), p.gamma);
        site_delta2.insert(id.clone(), p.delta2);
        eb_hyperparams.insert(id.clone(), p.prior);
        eb_trace.insert(id, p.trace);
    }
    Ok(PooledModel {
        flavor: ComBatFlavor::EmpiricalBayes,
        regions: fit.regions,
        covariates: fit.covariates,
        covariate_index: fit.covariate_index,
        alpha: fit.alpha,
        beta: fit.beta,
        sigma2: fit.sigma2,
        site_gamma,
        site_delta2,
        eb_hyperparams,
        eb_trace,
    })
}

struct SitePosterior<T> {
    gamma: Vec<T>,
    delta2: Vec<T>,
    prior: EbHyperparams<T>,
    trace: Vec<T>,
}

/// Moment estimates of the priors from standardized per-region data.
fn prior_moments<T: Scalar>(gamma_hat: &[T], delta2_hat: &[T]) -> EbHyperparams<T> {
    let mu_bar = mean(gamma_hat);
    let tau2_bar = sample_variance(gamma_hat);
    let g = mean(delta2_hat);
    let s2 = sample_variance(delta2_hat).max(T::epsilon() * g * g);
    let two = lit::<T>(2.0);
    let mut lambda_bar = (g * g + two * s2) / s2;
    if lambda_bar <= two {
        lambda_bar = two + lit(1e-6);
    }
    let theta_bar = (g * g * g + g * s2) / s2;
    EbHyperparams {
        mu_bar,
        tau2_bar,
        lambda_bar,
        theta_bar,
    }
}

fn site_posterior<T: Scalar>(site: &str, z: &[Vec<T>], opts: &EbOptions<T>) -> Result<SitePosterior<T>> {
    let n = from_usize::<T>(z[0].len());
    let gamma_hat: Vec<T> = z.iter().map(|r| mean(r)).collect();
    let delta2_hat: Vec<T> = z.iter().map(|r| sample_variance(r)).collect();
    let prior = prior_moments(&gamma_hat, &delta2_hat);
    let half = lit::<T>(0.5);

    let mut gamma = gamma_hat.clone();
    let mut delta2 = match opts.init {
        EbInit::Empirical => delta2_hat.clone(),
        EbInit::Constant(c) => vec![c; z.len()],
    };
    let rel = |new: T, old: T| (new - old).abs() / (old.abs() + lit(1e-12));
    let mut trace = Vec::new();
    for _ in 0..opts.max_iters {
        let new_gamma: Vec<T> = gamma_hat
            .iter()
            .zip(&delta2)
            .map(|(&g, &d)| (n * prior.tau2_bar * g + d * prior.mu_bar) / (n * prior.tau2_bar + d))
            .collect();
        let new_delta2: Vec<T> = z
            .iter()
            .zip(&new_gamma)
            .map(|(r, &g)| {
                let ss = r.iter().map(|&x| (x - g) * (x - g)).sum::<T>();
                (prior.theta_bar + half * ss) / (half * n + prior.lambda_bar - T::one())
            })
            .collect();
        let change = new_gamma
            .iter()
            .zip(&gamma)
            .chain(new_delta2.iter().zip(&delta2))
            .map(|(&a, &b)| rel(a, b))
            .fold(T::zero(), T::max);
        gamma = new_gamma;
        delta2 = new_delta2;
        trace.push(change);
        if change < opts.tol {
            return Ok(SitePosterior {
                gamma,
                delta2,
                prior,
                trace,
            });
        }
    }
    Err(Error::ConvergenceFailure {
        site: site.to_string(),
        iterations: opts.max_iters,
        last_change: trace.last().and_then(|c| c.to_f64()).unwrap_or(f64::NAN),
        last_gamma: gamma.iter().filter_map(|g| g.to_f64()).collect(),
        last_delta2: delta2.iter().filter_map(|d| d.to_f64()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moment_inversion_round_trips() {
        // inverse-gamma(λ=5, θ=8): mean 2, variance 4/3
        let g = 2.0_f64;
        let s2 = 4.0 / 3.0;
        let lambda = (g * g + 2.0 * s2) / s2;
        let theta = (g * g * g + g * s2) / s2;
        assert!((lambda - 5.0).abs() < 1e-12);
        assert!((theta - 8.0).abs() < 1e-12);
        assert!((theta / (lambda - 1.0) - g).abs() < 1e-12);
    }

    #[test]
    fn zero_prior_spread_pins_location_to_mean() {
        let z = vec![vec![0.5, 1.5, 1.0], vec![0.0, 2.0, 1.0], vec![1.2, 0.8, 1.0]];
        let p = site_posterior("s", &z, &EbOptions::default()).unwrap();
        assert_eq!(p.prior.tau2_bar, 0.0);
        for g in p.gamma {
            assert_eq!(g, 1.0);
        }
    }

    #[test]
    fn non_convergence_reports_last_iterate() {
        let z = vec![vec![0.1, 1.5, -1.0], vec![0.0, 2.0, 1.0], vec![1.2, -0.8, 3.0]];
        let opts = EbOptions {
            max_iters: 1,
            tol: 1e-15,
            ..EbOptions::default()
        };
        match site_posterior("s", &z, &opts) {
            Err(Error::ConvergenceFailure { last_gamma, iterations, .. }) => {
                assert_eq!(iterations, 1);
                assert_eq!(last_gamma.len(), 3);
            }
            other => panic!("expected ConvergenceFailure, got {:?}", other.map(|p| p.trace)),
        }
    }

    #[test]
    fn small_spread_clamps_shape() {
        let p = prior_moments(&[0.0, 1.0], &[1.0, 100.0]);
        assert!(p.lambda_bar > 2.0);
    }
}
