use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::report::{Condition, ExperimentReport, Failure, Method};
use super::{harmonize, score, Setup};
use crate::basis::BasisSpec;
use crate::clinical::{apply, fit_bundle, fit_reference, rectify, ResidualSource};
use crate::error::{Error, Result};
use crate::model::SiteDataset;
use crate::scalar::population_variance;
use crate::synth::{derive_seed, generate_reference, inject_bias, sample_indices, BiasSpec, GeneratorSpec, GroundTruth};

const REFERENCE: u64 = 0;
const MOVING: u64 = 1;
const TEST_SPLIT: u64 = 2;
const TRAIN_DRAW: u64 = 3;

fn all_methods() -> Vec<Method> {
    vec![Method::Clinical, Method::Eb, Method::None]
}

fn reference_for(setup: &Setup, j_ref: usize, rep: usize) -> Result<SiteDataset<f64>> {
    let spec = GeneratorSpec {
        n_subjects: j_ref,
        seed: derive_seed(setup.seed, &[REFERENCE, rep as u64]),
        ..setup.spec.clone()
    };
    Ok(generate_reference(&spec)?.0)
}

fn moving_for(setup: &Setup, bias: &BiasSpec, n: usize, rep: usize) -> Result<(SiteDataset<f64>, GroundTruth)> {
    let seed = derive_seed(setup.seed, &[MOVING, rep as u64]);
    inject_bias(&setup.spec, bias, n, setup.spec.age_range, seed, "moving")
}

/// Moving cohort split into a training pool and a fixed full-range test set.
struct Split {
    reference: SiteDataset<f64>,
    pool: SiteDataset<f64>,
    test: SiteDataset<f64>,
    truth: GroundTruth,
}

fn split_for(setup: &Setup, bias: &BiasSpec, j_ref: usize, pool: usize, test: usize, rep: usize) -> Result<Split> {
    let reference = reference_for(setup, j_ref, rep)?;
    let (moving, truth) = moving_for(setup, bias, pool + test, rep)?;
    let ages = first_covariate(&moving);
    let (test_idx, pool_idx) = sample_indices(&ages, test, None, derive_seed(setup.seed, &[TEST_SPLIT, rep as u64]))?;
    Ok(Split {
        reference,
        pool: moving.subset(&pool_idx)?,
        test: moving.subset(&test_idx)?,
        truth,
    })
}

fn first_covariate(d: &SiteDataset<f64>) -> Vec<f64> {
    d.covariate_rows().iter().map(|r| r[0]).collect()
}

/// Draws `n` training subjects from the pool, optionally within a window.
fn draw_train(setup: &Setup, pool: &SiteDataset<f64>, n: usize, window: Option<(f64, f64)>, rep: usize) -> Result<SiteDataset<f64>> {
    let seed = derive_seed(setup.seed, &[TRAIN_DRAW, rep as u64, n as u64]);
    let (idx, _) = sample_indices(&first_covariate(pool), n, window, seed)?;
    pool.subset(&idx)
}

type JobResult = (usize, usize, Result<BTreeMap<String, f64>>);

fn collect(report: &mut ExperimentReport, results: Vec<JobResult>) {
    for (cond, rep, outcome) in results {
        let id = report.conditions[cond].id.clone();
        match outcome {
            Ok(metrics) => {
                for (m, v) in metrics {
                    report.push(&id, rep, &m, v);
                }
            }
            Err(e) => {
                log::warn!("{} repetition {rep}: {e}", id);
                report.failures.push(Failure {
                    condition: id,
                    repetition: rep,
                    error: e.to_string(),
                });
            }
        }
    }
    report.finalize();
}

fn config_json<C: Serialize>(setup: &Setup, cfg: &C) -> serde_json::Value {
    serde_json::json!({ "setup": setup, "experiment": cfg })
}

fn check_reps(repetitions: usize) -> Result<()> {
    if repetitions == 0 {
        return Err(Error::InvalidInput("repetitions must be at least 1".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BiasGridConfig {
    pub s_values: Vec<f64>,
    pub m_values: Vec<f64>,
    pub a: f64,
    pub j_ref: usize,
    pub j_mov: usize,
    pub repetitions: usize,
    pub methods: Vec<Method>,
}

impl Default for BiasGridConfig {
    fn default() -> Self {
        Self {
            s_values: vec![0.0, 0.5, 1.0, 1.5, 2.0],
            m_values: vec![0.25, 1.0, 1.75],
            a: 0.9,
            j_ref: 341,
            j_mov: 341,
            repetitions: 5,
            methods: all_methods(),
        }
    }
}

/// In-sample RMSE over a grid of slope and variance biases. Every cell
/// of one repetition shares the reference and moving noise draws.
pub fn run_bias_grid(setup: &Setup, cfg: &BiasGridConfig) -> Result<ExperimentReport> {
    setup.validate()?;
    check_reps(cfg.repetitions)?;
    if cfg.s_values.is_empty() || cfg.m_values.is_empty() || cfg.methods.is_empty() {
        return Err(Error::InvalidInput("bias grid is empty".into()));
    }
    let mut report = ExperimentReport::new("bias_grid", config_json(setup, cfg), cfg.repetitions);
    let mut cells = Vec::new();
    for &s in &cfg.s_values {
        for &m in &cfg.m_values {
            BiasSpec::new(cfg.a, s, m).validate()?;
            cells.push((s, m));
        }
    }
    for &(s, m) in &cells {
        for &method in &cfg.methods {
            report.conditions.push(Condition::new(&[("S", s), ("M", m), ("A", cfg.a)], method));
        }
    }
    let jobs: Vec<(usize, usize)> = (0..cfg.repetitions)
        .flat_map(|rep| (0..cells.len()).map(move |c| (c, rep)))
        .collect();
    let nm = cfg.methods.len();
    let results: Vec<JobResult> = jobs
        .par_iter()
        .flat_map_iter(|&(c, rep)| {
            let (s, m) = cells[c];
            let data = reference_for(setup, cfg.j_ref, rep)
                .and_then(|r| moving_for(setup, &BiasSpec::new(cfg.a, s, m), cfg.j_mov, rep).map(|mv| (r, mv)));
            cfg.methods
                .iter()
                .enumerate()
                .map(|(k, &method)| {
                    let out = match &data {
                        Ok((reference, (moving, truth))) => {
                            harmonize(method, reference, moving, moving, &setup.hp, &setup.eb)
                                .and_then(|h| score(setup, reference, moving, &h, truth))
                        }
                        Err(e) => Err(e.clone()),
                    };
                    (c * nm + k, rep, out)
                })
                .collect::<Vec<_>>()
        })
        .collect();
    collect(&mut report, results);
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleSizeConfig {
    pub sizes: Vec<usize>,
    pub repetitions: usize,
    pub j_ref: usize,
    /// Moving subjects available for training.
    pub pool: usize,
    /// Held-out moving subjects scored after harmonization.
    pub test: usize,
    pub bias: BiasSpec,
    pub methods: Vec<Method>,
}

impl Default for SampleSizeConfig {
    fn default() -> Self {
        Self {
            sizes: vec![5, 10, 20, 30],
            repetitions: 10,
            j_ref: 341,
            pool: 341,
            test: 100,
            bias: BiasSpec::new(0.9, 0.75, 1.5),
            methods: vec![Method::Clinical, Method::Eb],
        }
    }
}

impl SampleSizeConfig {
    /// The alternative bias triple `S = 0.5, M = 1.25, A = 1.1`.
    pub fn alternate_bias() -> Self {
        Self {
            bias: BiasSpec::new(1.1, 0.5, 1.25),
            ..Self::default()
        }
    }
}

/// Held-out RMSE as a function of the number of training subjects.
pub fn run_sample_size_curve(setup: &Setup, cfg: &SampleSizeConfig) -> Result<ExperimentReport> {
    setup.validate()?;
    check_reps(cfg.repetitions)?;
    cfg.bias.validate()?;
    if let Some(&n) = cfg.sizes.iter().find(|&&n| n > cfg.pool) {
        return Err(Error::InvalidInput(format!("size {n} exceeds the training pool of {}", cfg.pool)));
    }
    let mut report = ExperimentReport::new("sample_size", config_json(setup, cfg), cfg.repetitions);
    for &n in &cfg.sizes {
        for &method in &cfg.methods {
            report.conditions.push(Condition::new(&[("n", n as f64)], method));
        }
    }
    let nm = cfg.methods.len();
    let results: Vec<JobResult> = (0..cfg.repetitions)
        .into_par_iter()
        .flat_map_iter(|rep| {
            let split = split_for(setup, &cfg.bias, cfg.j_ref, cfg.pool, cfg.test, rep);
            let mut out = Vec::new();
            for (i, &n) in cfg.sizes.iter().enumerate() {
                let train = split.as_ref().map_err(Clone::clone).and_then(|s| draw_train(setup, &s.pool, n, None, rep));
                for (k, &method) in cfg.methods.iter().enumerate() {
                    let r = match (&split, &train) {
                        (Ok(s), Ok(t)) => held_out(setup, s, t, method, &setup.hp),
                        (Err(e), _) | (_, Err(e)) => Err(e.clone()),
                    };
                    out.push((i * nm + k, rep, r));
                }
            }
            out
        })
        .collect();
    collect(&mut report, results);
    Ok(report)
}

fn held_out(
    setup: &Setup,
    split: &Split,
    train: &SiteDataset<f64>,
    method: Method,
    hp: &crate::model::Hyperparameters<f64>,
) -> Result<BTreeMap<String, f64>> {
    let h = harmonize(method, &split.reference, train, &split.test, hp, &setup.eb)?;
    let setup = Setup {
        hp: hp.clone(),
        ..setup.clone()
    };
    score(&setup, &split.reference, &split.test, &h, &split.truth)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgeWindowConfig {
    pub centers: Vec<f64>,
    pub half_width: f64,
    /// Training subjects per window; `None` takes every pool subject inside it.
    pub n_train: Option<usize>,
    pub repetitions: usize,
    pub j_ref: usize,
    pub pool: usize,
    pub test: usize,
    pub bias: BiasSpec,
    /// Tuning tolerance used by the clinical model in this experiment.
    pub tau: f64,
    pub methods: Vec<Method>,
}

impl Default for AgeWindowConfig {
    fn default() -> Self {
        Self {
            centers: vec![28.0, 40.0, 52.5, 65.0, 77.0],
            half_width: 10.0,
            n_train: None,
            repetitions: 10,
            j_ref: 341,
            pool: 341,
            test: 100,
            bias: BiasSpec::new(0.9, 1.0, 1.5),
            tau: 1.75,
            methods: vec![Method::Clinical, Method::Eb],
        }
    }
}

/// Held-out full-range RMSE when training is restricted to an age window.
pub fn run_age_window_curve(setup: &Setup, cfg: &AgeWindowConfig) -> Result<ExperimentReport> {
    setup.validate()?;
    check_reps(cfg.repetitions)?;
    cfg.bias.validate()?;
    if !(cfg.half_width > 0.0) {
        return Err(Error::InvalidInput("half_width must be positive".into()));
    }
    let hp = crate::model::Hyperparameters {
        tau: cfg.tau,
        ..setup.hp.clone()
    };
    hp.validate()?;
    let mut report = ExperimentReport::new("age_window", config_json(setup, cfg), cfg.repetitions);
    let (lo, hi) = setup.spec.age_range;
    let mut centers = Vec::new();
    for &c in &cfg.centers {
        if c + cfg.half_width < lo || c - cfg.half_width > hi {
            log::warn!("age window {c} ± {} lies outside the age range; skipped", cfg.half_width);
            report.skipped.push(format!("center={c}"));
            continue;
        }
        centers.push(c);
        for &method in &cfg.methods {
            report.conditions.push(Condition::new(&[("center", c)], method));
        }
    }
    let nm = cfg.methods.len();
    let results: Vec<JobResult> = (0..cfg.repetitions)
        .into_par_iter()
        .flat_map_iter(|rep| {
            let split = split_for(setup, &cfg.bias, cfg.j_ref, cfg.pool, cfg.test, rep);
            let mut out = Vec::new();
            for (i, &c) in centers.iter().enumerate() {
                let window = Some((c, cfg.half_width));
                let train = split.as_ref().map_err(Clone::clone).and_then(|s| {
                    let n = cfg
                        .n_train
                        .unwrap_or_else(|| count_in_window(&s.pool, c, cfg.half_width));
                    if n == 0 {
                        return Err(Error::InsufficientData(format!("no training subjects within {c} ± {}", cfg.half_width)));
                    }
                    draw_train(setup, &s.pool, n, window, rep)
                });
                for (k, &method) in cfg.methods.iter().enumerate() {
                    let r = match (&split, &train) {
                        (Ok(s), Ok(t)) => held_out(setup, s, t, method, &hp),
                        (Err(e), _) | (_, Err(e)) => Err(e.clone()),
                    };
                    out.push((i * nm + k, rep, r));
                }
            }
            out
        })
        .collect();
    collect(&mut report, results);
    Ok(report)
}

fn count_in_window(d: &SiteDataset<f64>, center: f64, half_width: f64) -> usize {
    first_covariate(d).iter().filter(|a| (*a - center).abs() <= half_width).count()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NuSweepConfig {
    pub nu_values: Vec<f64>,
    pub n_moving: usize,
    /// Size of the held-out draw the residual spread is measured on.
    pub test: usize,
    pub j_ref: usize,
    pub repetitions: usize,
    pub bias: BiasSpec,
}

impl Default for NuSweepConfig {
    fn default() -> Self {
        Self {
            nu_values: vec![0.0, 5.0, 10.0, 100.0],
            n_moving: 10,
            test: 2000,
            j_ref: 341,
            repetitions: 10,
            bias: BiasSpec::new(0.9, 1.0, 1.5),
        }
    }
}

/// Ratio of the harmonized moving residual spread to the reference's, as
/// a function of the variance prior weight.
pub fn run_nu_sweep(setup: &Setup, cfg: &NuSweepConfig) -> Result<ExperimentReport> {
    setup.validate()?;
    check_reps(cfg.repetitions)?;
    cfg.bias.validate()?;
    if cfg.nu_values.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::InvalidInput("nu values must be >= 0".into()));
    }
    let mut report = ExperimentReport::new("nu_sweep", config_json(setup, cfg), cfg.repetitions);
    for &nu in &cfg.nu_values {
        report.conditions.push(Condition::new(&[("nu", nu)], Method::Clinical));
    }
    let regions: Vec<&str> = setup.score_regions.iter().map(String::as_str).collect();
    let results: Vec<JobResult> = (0..cfg.repetitions)
        .into_par_iter()
        .flat_map_iter(|rep| {
            let data = (|| -> Result<_> {
                let reference = reference_for(setup, cfg.j_ref, rep)?.with_regions(&regions)?;
                let (moving, truth) = moving_for(setup, &cfg.bias, cfg.n_moving + cfg.test, rep)?;
                let moving = moving.with_regions(&regions)?;
                let train = moving.subset(&(0..cfg.n_moving).collect::<Vec<_>>())?;
                let test = moving.subset(&(cfg.n_moving..moving.len()).collect::<Vec<_>>())?;
                Ok((reference, train, test, truth))
            })();
            cfg.nu_values
                .iter()
                .enumerate()
                .map(|(i, &nu)| {
                    let r = match &data {
                        Ok((reference, train, test, truth)) => spread_ratio(setup, reference, train, test, truth, nu),
                        Err(e) => Err(e.clone()),
                    };
                    (i, rep, r)
                })
                .collect::<Vec<_>>()
        })
        .collect();
    collect(&mut report, results);
    Ok(report)
}

fn spread_ratio(
    setup: &Setup,
    reference: &SiteDataset<f64>,
    train: &SiteDataset<f64>,
    test: &SiteDataset<f64>,
    truth: &GroundTruth,
    nu: f64,
) -> Result<BTreeMap<String, f64>> {
    let hp = crate::model::Hyperparameters {
        nu,
        ..setup.hp.clone()
    };
    let bundle = fit_bundle(reference, train, &hp)?;
    let harmonized = SiteDataset::new(test.site_id(), test.metric_name(), apply(&bundle, test.records())?)?;
    let basis = BasisSpec::fit(reference, hp.degree, hp.basis_mode)?;
    let mut ratio = 0.0;
    for region in &setup.score_regions {
        let fit = fit_reference(reference, region, &basis)?;
        let z = rectify(harmonized.records(), region, &fit.beta, &basis, ResidualSource::MovingHarmonized)?;
        ratio += (population_variance(&z.values) / fit.var).sqrt();
    }
    let mut out = BTreeMap::new();
    out.insert("std_ratio".to_string(), ratio / setup.score_regions.len() as f64);
    out.insert("rmse".to_string(), super::rmse_to_truth(&harmonized, truth)?);
    Ok(out)
}
