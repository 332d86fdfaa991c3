//! Pooled ComBAT baselines: location/scale and empirical Bayes.
//!
//! Both flavors fit one covariate model per region on the data of every
//! site pooled together, then estimate an additive and a multiplicative
//! effect per site and region. They differ only in how those site effects
//! are estimated.

mod eb;
mod ls;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Cholesky, Matrix};
use crate::model::{SiteDataset, SubjectRecord};
use crate::scalar::{dot, from_usize, Scalar};

pub use eb::{fit_eb_combat, fit_eb_combat_with, EbHyperparams, EbInit, EbOptions};
pub use ls::{fit_ls_combat, fit_ls_combat_with};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComBatFlavor {
    LocationScale,
    EmpiricalBayes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledModel<T> {
    pub flavor: ComBatFlavor,
    pub regions: Vec<String>,
    /// Covariates entering the pooled regression (may be empty).
    pub covariates: Vec<String>,
    covariate_index: Vec<usize>,
    pub alpha: Vec<T>,
    /// `beta[v][k]`: region `v`, covariate `k`.
    pub beta: Vec<Vec<T>>,
    /// Pooled residual variance per region, after removing site means.
    pub sigma2: Vec<T>,
    /// Location/scale: raw-unit site means. Empirical Bayes: posterior
    /// means of the standardized site means.
    pub site_gamma: BTreeMap<String, Vec<T>>,
    /// Location/scale: raw-unit site variances (`J_i − 1` denominator).
    /// Empirical Bayes: posterior standardized site variances.
    pub site_delta2: BTreeMap<String, Vec<T>>,
    /// Empirical-Bayes prior moments per site.
    pub eb_hyperparams: BTreeMap<String, EbHyperparams<T>>,
    /// Iteration count and per-iteration max relative change, per site.
    pub eb_trace: BTreeMap<String, Vec<T>>,
}

impl<T: Scalar> PooledModel<T> {
    fn region_index(&self, region: &str) -> Result<usize> {
        self.regions
            .iter()
            .position(|r| r == region)
            .ok_or_else(|| Error::UnknownRegion(region.to_string()))
    }

    /// Site effect in raw units: additive shift and multiplicative factor
    /// relative to the pooled residual spread.
    pub fn site_effect(&self, site: &str, v: usize) -> Result<(T, T)> {
        let gamma = self
            .site_gamma
            .get(site)
            .ok_or_else(|| Error::UnknownSite(site.to_string()))?[v];
        let delta2 = self.site_delta2[site][v];
        let sigma = self.sigma2[v].sqrt();
        Ok(match self.flavor {
            ComBatFlavor::LocationScale => (gamma, delta2.sqrt() / sigma),
            ComBatFlavor::EmpiricalBayes => (gamma * sigma, delta2.sqrt()),
        })
    }

    /// Pooled covariate curve `α + xᵀβ` for region `v`.
    pub fn curve(&self, v: usize, x: &[T]) -> T {
        let sel: Vec<T> = self.covariate_index.iter().map(|&k| x[k]).collect();
        self.alpha[v] + dot(&self.beta[v], &sel)
    }

    fn check_site(&self, site: &SiteDataset<T>) -> Result<()> {
        if !self.site_gamma.contains_key(site.site_id()) {
            return Err(Error::UnknownSite(site.site_id().to_string()));
        }
        for (i, name) in self.covariate_index.iter().zip(&self.covariates) {
            if site.covariate_names().get(*i) != Some(name) {
                return Err(Error::CovariateMismatch {
                    expected: self.covariates.join(","),
                    found: site.covariate_names().join(","),
                });
            }
        }
        Ok(())
    }

    fn map_site(
        &self,
        site: &SiteDataset<T>,
        target: impl Fn(usize) -> Result<(T, T)>,
    ) -> Result<SiteDataset<T>> {
        self.check_site(site)?;
        let effects: Vec<((T, T), (T, T))> = self
            .regions
            .iter()
            .enumerate()
            .map(|(v, _)| Ok((self.site_effect(site.site_id(), v)?, target(v)?)))
            .collect::<Result<_>>()?;
        let records = site
            .records()
            .iter()
            .map(|r| {
                let mut out = r.clone();
                for (region, value) in out.metrics.iter_mut() {
                    let v = self.region_index(region)?;
                    let ((loc, scale), (tloc, tscale)) = effects[v];
                    let curve = self.curve(v, r.covariates.values());
                    *value = (*value - curve - loc) / scale * tscale + curve + tloc;
                }
                Ok(out)
            })
            .collect::<Result<Vec<SubjectRecord<T>>>>()?;
        SiteDataset::new(site.site_id(), site.metric_name(), records)
    }

    /// Removes each site's effects, mapping onto the pooled model.
    pub fn apply(&self, sites: &[SiteDataset<T>]) -> Result<Vec<SiteDataset<T>>> {
        sites
            .iter()
            .map(|s| self.map_site(s, |_| Ok((T::zero(), T::one()))))
            .collect()
    }

    /// Maps every site onto the distribution of `reference_site`: its
    /// effects are removed and the reference site's effects added back.
    pub fn apply_to_reference(
        &self,
        sites: &[SiteDataset<T>],
        reference_site: &str,
    ) -> Result<Vec<SiteDataset<T>>> {
        sites
            .iter()
            .map(|s| self.map_site(s, |v| self.site_effect(reference_site, v)))
            .collect()
    }
}

/// Harmonizes each site with a fitted pooled model.
pub fn apply_combat<T: Scalar>(model: &PooledModel<T>, sites: &[SiteDataset<T>]) -> Result<Vec<SiteDataset<T>>> {
    model.apply(sites)
}

/// Pooled regression shared by both flavors.
pub(crate) struct PooledFit<T> {
    pub regions: Vec<String>,
    pub covariates: Vec<String>,
    pub covariate_index: Vec<usize>,
    pub alpha: Vec<T>,
    pub beta: Vec<Vec<T>>,
    /// Site id and `[region][subject]` residuals `y − α − xᵀβ`.
    pub residuals: Vec<(String, Vec<Vec<T>>)>,
    pub site_gamma: BTreeMap<String, Vec<T>>,
    pub sigma2: Vec<T>,
}

/// With `site_indicators`, the regression also carries one indicator per
/// site but the first, so site offsets do not leak into the slopes; the
/// intercept is still the grand mean of covariate-adjusted values.
pub(crate) fn pooled_fit<T: Scalar>(
    sites: &[SiteDataset<T>],
    covariate_index: &[usize],
    site_indicators: bool,
) -> Result<PooledFit<T>> {
    if sites.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "ComBAT needs at least 2 sites, got {}",
            sites.len()
        )));
    }
    let first = &sites[0];
    let names = first.covariate_names();
    let regions = first.regions();
    for s in sites {
        if s.covariate_names()[..] != names[..] {
            return Err(Error::CovariateMismatch {
                expected: names.join(","),
                found: s.covariate_names().join(","),
            });
        }
        if s.region_set() != first.region_set() {
            return Err(Error::RegionMismatch(format!(
                "site `{}` vs `{}`",
                s.site_id(),
                first.site_id()
            )));
        }
        if s.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "site `{}` has {} subject(s); at least 2 needed",
                s.site_id(),
                s.len()
            )));
        }
    }
    let mut ids: Vec<&str> = sites.iter().map(|s| s.site_id()).collect();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() != sites.len() {
        return Err(Error::InvalidInput("duplicate site ids".into()));
    }
    if let Some(&k) = covariate_index.iter().find(|&&k| k >= names.len()) {
        return Err(Error::InvalidInput(format!("covariate index {k} out of range")));
    }
    let covariates: Vec<String> = covariate_index.iter().map(|&k| names[k].clone()).collect();
    let q = covariate_index.len() + 1 + if site_indicators { sites.len() - 1 } else { 0 };
    let total: usize = sites.iter().map(SiteDataset::len).sum();
    if total <= q {
        return Err(Error::InsufficientData(format!(
            "pooled fit needs more than {q} subjects, got {total}"
        )));
    }

    // Covariates are centered before solving; slopes are unchanged and the
    // intercept is recovered below as the mean adjusted value.
    let raw: Vec<Vec<T>> = sites
        .iter()
        .flat_map(|s| s.records().iter())
        .map(|r| covariate_index.iter().map(|&k| r.covariates.values()[k]).collect())
        .collect();
    let centers: Vec<T> = (0..covariate_index.len())
        .map(|c| raw.iter().map(|r| r[c]).sum::<T>() / from_usize(total))
        .collect();
    let site_of: Vec<usize> = sites
        .iter()
        .enumerate()
        .flat_map(|(i, s)| std::iter::repeat(i).take(s.len()))
        .collect();
    let rows: Vec<Vec<T>> = raw
        .iter()
        .zip(&site_of)
        .map(|(r, &site)| {
            let dummies = (1..sites.len())
                .filter(|_| site_indicators)
                .map(|i| if i == site { T::one() } else { T::zero() });
            std::iter::once(T::one())
                .chain(r.iter().zip(&centers).map(|(&x, &c)| x - c))
                .chain(dummies)
                .collect()
        })
        .collect();
    let design = Matrix::from_rows(&rows);
    let gram = design.gram();
    let cond = gram.condition_number();
    if !(cond < T::max_condition()) {
        return Err(Error::SingularDesign(format!("pooled design condition number {cond}")));
    }
    let chol = Cholesky::factor(&gram)?;

    let mut alpha = Vec::with_capacity(regions.len());
    let mut beta = Vec::with_capacity(regions.len());
    let mut columns = Vec::with_capacity(regions.len());
    for region in &regions {
        let y: Vec<T> = sites
            .iter()
            .map(|s| s.values(region))
            .collect::<Result<Vec<_>>>()?
            .concat();
        let coef = chol.solve(&design.t_mul_vec(&y));
        let slopes = &coef[1..1 + covariate_index.len()];
        let fitted_no_alpha: Vec<T> = raw.iter().map(|r| dot(r, slopes)).collect();
        // intercept as the mean of covariate-adjusted values
        let a = y
            .iter()
            .zip(&fitted_no_alpha)
            .map(|(&yy, &f)| yy - f)
            .sum::<T>()
            / from_usize(total);
        alpha.push(a);
        beta.push(slopes.to_vec());
        columns.push(
            y.iter()
                .zip(&fitted_no_alpha)
                .map(|(&yy, &f)| yy - a - f)
                .collect::<Vec<T>>(),
        );
    }

    let mut residuals = Vec::with_capacity(sites.len());
    let mut site_gamma = BTreeMap::new();
    let mut offset = 0;
    let mut ss = vec![T::zero(); regions.len()];
    for s in sites {
        let n = s.len();
        let per_region: Vec<Vec<T>> = columns.iter().map(|c| c[offset..offset + n].to_vec()).collect();
        let gamma: Vec<T> = per_region.iter().map(|r| crate::scalar::mean(r)).collect();
        for (v, r) in per_region.iter().enumerate() {
            ss[v] = ss[v] + r.iter().map(|&e| (e - gamma[v]) * (e - gamma[v])).sum::<T>();
        }
        site_gamma.insert(s.site_id().to_string(), gamma);
        residuals.push((s.site_id().to_string(), per_region));
        offset += n;
    }
    let sigma2 = ss.into_iter().map(|x| x / from_usize(total)).collect();
    Ok(PooledFit {
        regions,
        covariates,
        covariate_index: covariate_index.to_vec(),
        alpha,
        beta,
        residuals,
        site_gamma,
        sigma2,
    })
}
