use crate::error::{Error, Result};
use crate::model::{HarmonizationBundle, RegionModel, ResidualScaling, SubjectRecord};
use crate::scalar::{dot, Scalar};

/// Maps one moving-site value with features `phi` onto the reference site.
pub fn harmonize_value<T: Scalar>(
    model: &RegionModel<T>,
    phi: &[T],
    y: T,
    scaling: ResidualScaling,
) -> Result<T> {
    let residual = y - dot(&model.beta_mov, phi);
    let on_reference = dot(&model.beta_ref, phi);
    if model.var_mov == T::zero() {
        if residual == T::zero() {
            return Ok(on_reference);
        }
        return Err(Error::DegenerateVariance(format!(
            "region `{}`: moving variance is zero but residual is {residual}",
            model.region_id
        )));
    }
    let factor = match scaling {
        ResidualScaling::StdRatio => (model.var_ref / model.var_mov).sqrt(),
        ResidualScaling::VarianceRatio => model.var_ref / model.var_mov,
    };
    Ok(residual * factor + on_reference)
}

/// Harmonizes one region of the given records, returning new values in order.
pub fn apply_region<T: Scalar>(
    model: &RegionModel<T>,
    records: &[SubjectRecord<T>],
    scaling: ResidualScaling,
) -> Result<Vec<T>> {
    records
        .iter()
        .map(|r| {
            let phi = model.basis.expand(r.covariates.values())?;
            harmonize_value(model, &phi, r.value(&model.region_id)?, scaling)
        })
        .collect()
}

/// Harmonizes every region present in each subject. Subjects need not have
/// been seen at fit time; nothing is refitted.
pub fn apply<T: Scalar>(
    bundle: &HarmonizationBundle<T>,
    subjects: &[SubjectRecord<T>],
) -> Result<Vec<SubjectRecord<T>>> {
    let names = bundle.covariate_names();
    let scaling = bundle.hyperparameters.scaling;
    subjects
        .iter()
        .map(|s| {
            if s.covariates.names()[..] != names[..] {
                return Err(Error::CovariateMismatch {
                    expected: names.join(","),
                    found: s.covariates.names().join(","),
                });
            }
            let mut out = s.clone();
            for (region, value) in out.metrics.iter_mut() {
                let model = bundle
                    .models
                    .get(region)
                    .ok_or_else(|| Error::UnknownRegion(region.clone()))?;
                let phi = model.basis.expand(s.covariates.values())?;
                *value = harmonize_value(model, &phi, *value, scaling)
                    .map_err(|e| e.in_region(region))?;
            }
            Ok(out)
        })
        .collect()
}
