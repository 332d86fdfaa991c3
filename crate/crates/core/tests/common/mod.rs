#![allow(dead_code)]

use std::collections::BTreeMap;
use std::sync::Arc;

use ccombat::{CovariateVector, SiteDataset, SubjectRecord};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

pub fn normal(rng: &mut StdRng) -> f64 {
    Normal::new(0.0, 1.0).unwrap().sample(rng)
}

/// Builds a site from covariate rows and per-region value columns.
pub fn site(id: &str, names: &[&str], x: &[Vec<f64>], regions: &[(&str, Vec<f64>)]) -> SiteDataset {
    let names: Arc<[String]> = names.iter().map(|s| s.to_string()).collect();
    let records = x
        .iter()
        .enumerate()
        .map(|(j, row)| {
            let metrics: BTreeMap<String, f64> = regions.iter().map(|(r, v)| (r.to_string(), v[j])).collect();
            SubjectRecord::new(
                format!("{id}-{j}"),
                CovariateVector::new(names.clone(), row.clone()).unwrap(),
                metrics,
            )
            .unwrap()
        })
        .collect();
    SiteDataset::new(id, "md", records).unwrap()
}

pub fn age_site(id: &str, ages: &[f64], regions: &[(&str, Vec<f64>)]) -> SiteDataset {
    let x: Vec<Vec<f64>> = ages.iter().map(|&a| vec![a]).collect();
    site(id, &["age"], &x, regions)
}

pub fn uniform(rng: &mut StdRng, lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Least squares through a modified Gram-Schmidt QR of the design.
/// Returns `R⁻¹Qᵀy`, i.e. the pseudoinverse solution for full column rank.
pub fn qr_solve(rows: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let n = rows.len();
    let p = rows[0].len();
    let mut q: Vec<Vec<f64>> = (0..p).map(|k| rows.iter().map(|r| r[k]).collect()).collect();
    let mut r = vec![vec![0.0; p]; p];
    for k in 0..p {
        for i in 0..k {
            let d: f64 = (0..n).map(|t| q[i][t] * q[k][t]).sum();
            r[i][k] += d;
            for t in 0..n {
                q[k][t] -= d * q[i][t];
            }
        }
        // second pass keeps the columns orthogonal for ill-conditioned designs
        for i in 0..k {
            let d: f64 = (0..n).map(|t| q[i][t] * q[k][t]).sum();
            r[i][k] += d;
            for t in 0..n {
                q[k][t] -= d * q[i][t];
            }
        }
        let norm = q[k].iter().map(|v| v * v).sum::<f64>().sqrt();
        r[k][k] = norm;
        for t in 0..n {
            q[k][t] /= norm;
        }
    }
    let qty: Vec<f64> = (0..p).map(|k| (0..n).map(|t| q[k][t] * y[t]).sum()).collect();
    let mut beta = vec![0.0; p];
    for k in (0..p).rev() {
        let s: f64 = (k + 1..p).map(|i| r[k][i] * beta[i]).sum();
        beta[k] = (qty[k] - s) / r[k][k];
    }
    beta
}

/// Ridge toward `prior` as the stacked least-squares problem
/// `[Φ; √Λ] β ≈ [y; √Λ prior]`.
pub fn ridge_solve(rows: &[Vec<f64>], y: &[f64], lambda: &[f64], prior: &[f64]) -> Vec<f64> {
    let p = rows[0].len();
    let mut a = rows.to_vec();
    let mut b = y.to_vec();
    for k in 0..p {
        let mut row = vec![0.0; p];
        row[k] = lambda[k].sqrt();
        a.push(row);
        b.push(lambda[k].sqrt() * prior[k]);
    }
    qr_solve(&a, &b)
}

/// All products of the standardized covariates of total degree `<= degree`,
/// generated by recursion over the covariate index. Order differs from the
/// library's, so only basis-invariant quantities should be compared.
pub fn monomials(z: &[f64], degree: usize) -> Vec<f64> {
    fn rec(z: &[f64], start: usize, left: usize, acc: f64, out: &mut Vec<f64>) {
        out.push(acc);
        if left == 0 {
            return;
        }
        for k in start..z.len() {
            rec(z, k, left - 1, acc * z[k], out);
        }
    }
    let mut out = Vec::new();
    rec(z, 0, degree, 1.0, &mut out);
    out
}

/// Column mean and population standard deviation.
pub fn standardizer(x: &[Vec<f64>]) -> Vec<(f64, f64)> {
    let n = x.len() as f64;
    (0..x[0].len())
        .map(|k| {
            let m = x.iter().map(|r| r[k]).sum::<f64>() / n;
            let v = x.iter().map(|r| (r[k] - m).powi(2)).sum::<f64>() / n;
            (m, v.sqrt())
        })
        .collect()
}

pub fn design(x: &[Vec<f64>], st: &[(f64, f64)], degree: usize) -> Vec<Vec<f64>> {
    x.iter()
        .map(|r| {
            let z: Vec<f64> = r.iter().zip(st).map(|(v, (m, s))| (v - m) / s).collect();
            monomials(&z, degree)
        })
        .collect()
}

pub fn predict(rows: &[Vec<f64>], beta: &[f64]) -> Vec<f64> {
    rows.iter().map(|r| r.iter().zip(beta).map(|(a, b)| a * b).sum()).collect()
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(f64::MIN_POSITIVE)
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn sample_std(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0)).sqrt()
}
