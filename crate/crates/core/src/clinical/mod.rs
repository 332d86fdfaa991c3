//! Sitewise harmonization of a moving site onto a reference site.
//!
//! Per region the reference is fitted by ordinary least squares, the moving
//! site by ridge regression shrunk toward the reference coefficients, and
//! the moving variance by a prior-weighted average with the reference
//! variance. Harmonization removes the moving curve, rescales the residual
//! and adds back the reference curve at the subject's own covariates.

mod apply;
mod bundle;
mod fit;
mod qc;
mod tune;

pub use apply::{apply, apply_region, harmonize_value};
pub use bundle::{fit_bundle, RegionProblem};
pub use fit::{
    fit_moving, fit_moving_design, fit_reference, fit_reference_design, resolve_lambda,
    shrink_variance, MovingFit, ReferenceFit,
};
pub use qc::{bhattacharyya, qc_bhattacharyya, rectify, GaussianSummary, RectifiedResiduals, ResidualSource};
pub use tune::{auto_tune, tune_criterion, TuneDiagnostics};
