//! Sitewise harmonization of per-region scalar brain metrics.
//!
//! A moving site is mapped onto a well-populated reference site region by
//! region: each site gets its own polynomial covariate model, the moving
//! model is shrunk toward the reference one, and residuals are rescaled
//! onto the reference spread. Pooled location/scale and empirical-Bayes
//! ComBAT are included as baselines, with a seeded synthetic-cohort
//! generator and an evaluation harness.
//!
//! Estimators are generic over the floating-point type; the aliases below
//! fix it to `f64`, which is what the I/O layer reads and writes.

pub mod baseline;
pub mod basis;
pub mod clinical;
pub mod error;
pub mod eval;
pub mod io;
pub mod linalg;
pub mod model;
pub mod scalar;
pub mod synth;

pub use baseline::{apply_combat, fit_eb_combat, fit_ls_combat, ComBatFlavor};
pub use basis::{BasisMode, BasisSpec};
pub use clinical::{apply, auto_tune, bhattacharyya, fit_bundle, qc_bhattacharyya, TuneDiagnostics};
pub use error::{Error, ErrorClass, Result};
pub use model::{LambdaPolicy, ResidualScaling};
pub use scalar::Scalar;

pub type CovariateVector = model::CovariateVector<f64>;
pub type SubjectRecord = model::SubjectRecord<f64>;
pub type SiteDataset = model::SiteDataset<f64>;
pub type Hyperparameters = model::Hyperparameters<f64>;
pub type RegionModel = model::RegionModel<f64>;
pub type HarmonizationBundle = model::HarmonizationBundle<f64>;
pub type PooledModel = baseline::PooledModel<f64>;
pub type EbHyperparams = baseline::EbHyperparams<f64>;
