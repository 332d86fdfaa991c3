//! Polynomial feature map over standardized covariates.
//!
//! Covariates are centered and scaled with statistics taken from the
//! reference site, then expanded into monomials. Feature 0 is always the
//! constant term; higher terms follow in graded-lexicographic order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::SiteDataset;
use crate::scalar::{from_usize, mean, population_variance, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisMode {
    /// Every monomial of total degree `<= P`.
    #[default]
    MonomialsUpToP,
    /// The distinct monomials of `(x̃ᵀx̃ + 1)^P`: even powers only.
    LiteralKernelExpansion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization<T> {
    pub name: String,
    pub center: T,
    pub scale: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisSpec<T> {
    pub degree: usize,
    pub mode: BasisMode,
    pub standardization: Vec<Standardization<T>>,
}

/// Per-covariate mean and population standard deviation of the reference.
/// A constant covariate gets scale 1.
pub fn fit_standardization<T: Scalar>(reference: &SiteDataset<T>) -> Result<Vec<Standardization<T>>> {
    if reference.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "standardization needs at least 2 reference records, got {}",
            reference.len()
        )));
    }
    let rows = reference.covariate_rows();
    Ok(reference
        .covariate_names()
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let col: Vec<T> = rows.iter().map(|r| r[k]).collect();
            let sd = population_variance(&col).sqrt();
            Standardization {
                name: name.clone(),
                center: mean(&col),
                scale: if sd > T::zero() { sd } else { T::one() },
            }
        })
        .collect())
}

/// Exponent vectors of all monomials of total degree `<= degree` over
/// `vars` variables, constant first, then graded lexicographic.
pub fn monomial_exponents(vars: usize, degree: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![0; vars]];
    for d in 1..=degree {
        // nondecreasing index tuples of length d
        let mut idx = vec![0usize; d];
        if vars == 0 {
            break;
        }
        loop {
            let mut e = vec![0; vars];
            for &i in &idx {
                e[i] += 1;
            }
            out.push(e);
            // advance
            let mut pos = d;
            while pos > 0 && idx[pos - 1] == vars - 1 {
                pos -= 1;
            }
            if pos == 0 {
                break;
            }
            let next = idx[pos - 1] + 1;
            for slot in idx.iter_mut().skip(pos - 1) {
                *slot = next;
            }
        }
    }
    out
}

impl<T: Scalar> BasisSpec<T> {
    pub fn new(degree: usize, mode: BasisMode, standardization: Vec<Standardization<T>>) -> Result<Self> {
        if standardization.is_empty() {
            return Err(Error::InvalidInput("basis needs at least one covariate".into()));
        }
        if let Some(s) = standardization
            .iter()
            .find(|s| !(s.scale > T::zero()) || !s.scale.is_finite() || !s.center.is_finite())
        {
            return Err(Error::InvalidInput(format!(
                "covariate `{}` has an invalid standardization",
                s.name
            )));
        }
        Ok(Self {
            degree,
            mode,
            standardization,
        })
    }

    /// Standardization fitted on `reference`.
    pub fn fit(reference: &SiteDataset<T>, degree: usize, mode: BasisMode) -> Result<Self> {
        Self::new(degree, mode, fit_standardization(reference)?)
    }

    pub fn covariate_count(&self) -> usize {
        self.standardization.len()
    }

    pub fn covariate_names(&self) -> Vec<String> {
        self.standardization.iter().map(|s| s.name.clone()).collect()
    }

    pub fn exponents(&self) -> Vec<Vec<usize>> {
        let e = monomial_exponents(self.covariate_count(), self.degree);
        match self.mode {
            BasisMode::MonomialsUpToP => e,
            BasisMode::LiteralKernelExpansion => e
                .into_iter()
                .map(|v| v.into_iter().map(|k| 2 * k).collect())
                .collect(),
        }
    }

    /// Number of features: `C(K + P, P)` in both modes.
    pub fn feature_dim(&self) -> usize {
        let k = self.covariate_count();
        let p = self.degree;
        // C(k+p, p) computed incrementally to stay exact
        (1..=p).fold(1usize, |acc, i| acc * (k + i) / i)
    }

    pub fn standardize(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.covariate_count() {
            return Err(Error::CovariateMismatch {
                expected: format!("{} covariates ({})", self.covariate_count(), self.covariate_names().join(",")),
                found: format!("{} covariates", x.len()),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("covariate value is not finite".into()));
        }
        Ok(x.iter()
            .zip(&self.standardization)
            .map(|(&v, s)| (v - s.center) / s.scale)
            .collect())
    }

    /// Features for raw covariates `x`.
    pub fn expand(&self, x: &[T]) -> Result<Vec<T>> {
        let z = self.standardize(x)?;
        Ok(self.expand_standardized(&z))
    }

    /// Features for already-standardized covariates.
    pub fn expand_standardized(&self, z: &[T]) -> Vec<T> {
        self.exponents()
            .iter()
            .map(|e| {
                e.iter()
                    .zip(z)
                    .fold(T::one(), |acc, (&k, &v)| acc * v.powi(k as i32))
            })
            .collect()
    }

    /// Design matrix with one row per covariate vector.
    pub fn design<'a, I>(&self, rows: I) -> Result<Matrix<T>>
    where
        I: IntoIterator<Item = &'a [T]>,
    {
        let rows: Vec<Vec<T>> = rows.into_iter().map(|x| self.expand(x)).collect::<Result<_>>()?;
        if rows.is_empty() {
            return Ok(Matrix::zeros(0, self.feature_dim()));
        }
        Ok(Matrix::from_rows(&rows))
    }

    pub fn check_names(&self, names: &[String]) -> Result<()> {
        let own = self.covariate_names();
        if own[..] != names[..] {
            return Err(Error::CovariateMismatch {
                expected: own.join(","),
                found: names.join(","),
            });
        }
        Ok(())
    }
}

/// Feature vector of a covariate vector under `basis`.
pub fn expand_basis<T: Scalar>(x: &crate::model::CovariateVector<T>, basis: &BasisSpec<T>) -> Result<Vec<T>> {
    basis.check_names(x.names())?;
    basis.expand(x.values())
}

/// Uniform grid of `n >= 2` points on `[lo, hi]`.
pub fn linspace<T: Scalar>(lo: T, hi: T, n: usize) -> Vec<T> {
    let step = (hi - lo) / from_usize::<T>(n - 1);
    (0..n).map(|i| lo + step * from_usize(i)).collect()
}
