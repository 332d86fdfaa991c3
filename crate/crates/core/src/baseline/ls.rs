//! Location/scale ComBAT: site means and variances of pooled residuals.

use std::collections::BTreeMap;

use super::{pooled_fit, ComBatFlavor, PooledModel};
use crate::error::Result;
use crate::model::SiteDataset;
use crate::scalar::{sample_variance, Scalar};

/// Fits location/scale ComBAT using every covariate.
pub fn fit_ls_combat<T: Scalar>(sites: &[SiteDataset<T>]) -> Result<PooledModel<T>> {
    let k = sites.first().map_or(0, |s| s.covariate_names().len());
    fit_ls_combat_with(sites, &(0..k).collect::<Vec<_>>())
}

/// Fits location/scale ComBAT regressing only on the covariates at
/// `covariate_index`; an empty selection gives an intercept-only model.
pub fn fit_ls_combat_with<T: Scalar>(sites: &[SiteDataset<T>], covariate_index: &[usize]) -> Result<PooledModel<T>> {
    let fit = pooled_fit(sites, covariate_index, false)?;
    let site_delta2: BTreeMap<String, Vec<T>> = fit
        .residuals
        .iter()
        .map(|(id, per_region)| (id.clone(), per_region.iter().map(|r| sample_variance(r)).collect()))
        .collect();
    Ok(PooledModel {
        flavor: ComBatFlavor::LocationScale,
        regions: fit.regions,
        covariates: fit.covariates,
        covariate_index: fit.covariate_index,
        alpha: fit.alpha,
        beta: fit.beta,
        sigma2: fit.sigma2,
        site_gamma: fit.site_gamma,
        site_delta2,
        eb_hyperparams: BTreeMap::new(),
        eb_trace: BTreeMap::new(),
    })
}
