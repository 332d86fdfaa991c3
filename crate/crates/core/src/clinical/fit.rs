use crate::basis::BasisSpec;
use crate::error::{Error, Result};
use crate::linalg::{solve_spd, Matrix};
use crate::model::SiteDataset;
use crate::scalar::{from_usize, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceFit<T> {
    pub beta: Vec<T>,
    pub var: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MovingFit<T> {
    pub beta: Vec<T>,
    /// Prior-shrunk variance used by the transform.
    pub var: T,
    /// Plain residual variance of the moving fit.
    pub var_empirical: T,
}

fn residual_variance<T: Scalar>(phi: &Matrix<T>, y: &[T], beta: &[T]) -> T {
    let fitted = phi.mul_vec(beta);
    y.iter()
        .zip(&fitted)
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum::<T>()
        / from_usize(y.len())
}

/// Least-squares reference fit on a prepared design matrix.
pub fn fit_reference_design<T: Scalar>(phi: &Matrix<T>, y: &[T]) -> Result<ReferenceFit<T>> {
    if phi.rows() <= phi.cols() {
        return Err(Error::InsufficientData(format!(
            "reference fit needs more than {} records, got {}",
            phi.cols(),
            phi.rows()
        )));
    }
    let beta = solve_spd(&phi.gram(), &phi.t_mul_vec(y))?;
    let var = residual_variance(phi, y, &beta);
    Ok(ReferenceFit { beta, var })
}

pub fn fit_reference<T: Scalar>(
    reference: &SiteDataset<T>,
    region: &str,
    basis: &BasisSpec<T>,
) -> Result<ReferenceFit<T>> {
    basis.check_names(reference.covariate_names())?;
    let phi = basis.design(reference.covariate_rows())?;
    let y = reference.values(region)?;
    fit_reference_design(&phi, &y)
}

/// Expands a fixed lambda to one entry per feature.
pub fn resolve_lambda<T: Scalar>(lambda: &[T], dim: usize) -> Result<Vec<T>> {
    if lambda.iter().any(|l| !(*l >= T::zero())) {
        return Err(Error::InvalidInput("lambda entries must be >= 0".into()));
    }
    match lambda.len() {
        1 => Ok(vec![lambda[0]; dim]),
        n if n == dim => Ok(lambda.to_vec()),
        n => Err(Error::InvalidInput(format!(
            "lambda has {n} entries, feature dimension is {dim}"
        ))),
    }
}

/// `J/(J+ν)·emp + ν/(J+ν)·ref`; equals `ref` when no moving data exist.
pub fn shrink_variance<T: Scalar>(n_moving: usize, empirical: T, var_ref: T, nu: T) -> T {
    if nu == T::zero() && n_moving > 0 {
        return empirical;
    }
    let n = from_usize::<T>(n_moving);
    if n + nu == T::zero() {
        return var_ref;
    }
    let w = n / (n + nu);
    let v = w * empirical + (T::one() - w) * var_ref;
    v.max(empirical.min(var_ref)).min(empirical.max(var_ref))
}

/// Regularized moving fit on a prepared design matrix.
pub fn fit_moving_design<T: Scalar>(
    phi: &Matrix<T>,
    y: &[T],
    beta_ref: &[T],
    var_ref: T,
    lambda: &[T],
    nu: T,
) -> Result<MovingFit<T>> {
    if phi.rows() == 0 {
        return Err(Error::InsufficientData("moving site has no records".into()));
    }
    if !(nu >= T::zero()) {
        return Err(Error::InvalidInput("nu must be >= 0".into()));
    }
    let p = phi.cols();
    let lambda = resolve_lambda(lambda, p)?;
    let mut a = phi.gram();
    let mut b = phi.t_mul_vec(y);
    for k in 0..p {
        a.set(k, k, a.get(k, k) + lambda[k]);
        b[k] = b[k] + lambda[k] * beta_ref[k];
    }
    let beta = solve_spd(&a, &b)?;
    let var_empirical = residual_variance(phi, y, &beta);
    let var = shrink_variance(phi.rows(), var_empirical, var_ref, nu);
    Ok(MovingFit {
        beta,
        var,
        var_empirical,
    })
}

#[allow(clippy::too_many_arguments)]
pub fn fit_moving<T: Scalar>(
    moving: &SiteDataset<T>,
    region: &str,
    basis: &BasisSpec<T>,
    beta_ref: &[T],
    var_ref: T,
    lambda: &[T],
    nu: T,
) -> Result<MovingFit<T>> {
    basis.check_names(moving.covariate_names())?;
    let phi = basis.design(moving.covariate_rows())?;
    let y = moving.values(region)?;
    fit_moving_design(&phi, &y, beta_ref, var_ref, lambda, nu)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{BasisMode, Standardization};
    use approx::assert_relative_eq;

    fn basis(p: usize) -> BasisSpec<f64> {
        BasisSpec::new(
            p,
            BasisMode::MonomialsUpToP,
            vec![Standardization { name: "x".into(), center: 0.0, scale: 1.0 }],
        )
        .unwrap()
    }

    fn design(p: usize, xs: &[f64]) -> Matrix<f64> {
        let b = basis(p);
        b.design(xs.iter().map(std::slice::from_ref)).unwrap()
    }

    #[test]
    fn noiseless_line_is_interpolated() {
        let xs = [-1.0, -0.5, 0.0, 0.7, 1.3];
        let y: Vec<f64> = xs.iter().map(|x| 1.0 + 2.0 * x).collect();
        let f = fit_reference_design(&design(1, &xs), &y).unwrap();
        assert_relative_eq!(f.beta[0], 1.0, epsilon = 1e-9);
        assert_relative_eq!(f.beta[1], 2.0, epsilon = 1e-9);
        assert!(f.var.abs() < 1e-9);
    }

    #[test]
    fn degree_zero_is_mean_and_population_variance() {
        let xs = [0.1, 0.2, 0.3, 0.4];
        let y = [3.0, 5.0, 4.0, 8.0];
        let f = fit_reference_design(&design(0, &xs), &y).unwrap();
        assert_relative_eq!(f.beta[0], 5.0, epsilon = 1e-12);
        // deviations -2, 0, -1, 3 -> (4 + 0 + 1 + 9) / 4
        assert_relative_eq!(f.var, 3.5, epsilon = 1e-12);
    }

    #[test]
    fn too_few_reference_records() {
        let xs = [0.0, 1.0, 2.0];
        let y = [0.0, 1.0, 4.0];
        assert!(matches!(
            fit_reference_design(&design(2, &xs), &y),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn collinear_reference_is_singular() {
        let xs = [1.0, 1.0, 1.0, 1.0];
        let y = [0.0, 1.0, 4.0, 2.0];
        assert!(matches!(
            fit_reference_design(&design(1, &xs), &y),
            Err(Error::SingularDesign(_))
        ));
    }

    #[test]
    fn zero_lambda_reduces_to_least_squares() {
        let xs = [-1.0, -0.2, 0.3, 0.9, 1.4, 2.0];
        let y = [0.3, 0.1, 0.7, 1.9, 2.2, 4.1];
        let phi = design(2, &xs);
        let ols = fit_reference_design(&phi, &y).unwrap();
        let m = fit_moving_design(&phi, &y, &[9.0, 9.0, 9.0], 1.0, &[0.0], 0.0).unwrap();
        for k in 0..3 {
            assert_relative_eq!(m.beta[k], ols.beta[k], epsilon = 1e-9);
        }
        assert_relative_eq!(m.var, ols.var, epsilon = 1e-12);
    }

    #[test]
    fn huge_lambda_pins_to_reference() {
        let xs = [-1.0, 0.0, 1.0, 2.0];
        let y = [5.0, 1.0, 2.0, 9.0];
        let beta_ref = [0.5, -1.5, 2.0];
        let m = fit_moving_design(&design(2, &xs), &y, &beta_ref, 1.0, &[1e12], 5.0).unwrap();
        let diff: f64 = m.beta.iter().zip(&beta_ref).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let nref: f64 = beta_ref.iter().map(|b| b * b).sum::<f64>().sqrt();
        assert!(diff / nref < 1e-4);
    }

    #[test]
    fn variance_shrinkage_identities() {
        assert_eq!(shrink_variance(7, 2.5, 9.0, 0.0), 2.5);
        assert_relative_eq!(shrink_variance(5, 2.0, 4.0, 5.0), 3.0, epsilon = 1e-15);
        assert_eq!(shrink_variance(0, 2.0, 4.0, 5.0), 4.0);
        assert_eq!(shrink_variance(0, f64::NAN, 4.0, 0.0), 4.0);
    }

    #[test]
    fn underdetermined_unregularized_moving_fit_is_singular() {
        let xs = [0.0, 1.0];
        let y = [1.0, 2.0];
        let r = fit_moving_design(&design(2, &xs), &y, &[0.0, 0.0, 0.0], 1.0, &[0.0], 5.0);
        assert!(matches!(r, Err(Error::SingularDesign(_))));
        let ok = fit_moving_design(&design(2, &xs), &y, &[0.0, 0.0, 0.0], 1.0, &[0.1], 5.0);
        assert!(ok.is_ok());
    }

    #[test]
    fn lambda_broadcast_and_length_check() {
        assert_eq!(resolve_lambda(&[2.0], 3).unwrap(), vec![2.0; 3]);
        assert!(resolve_lambda(&[1.0, 2.0], 3).is_err());
        assert!(resolve_lambda(&[-1.0], 3).is_err());
    }
}
