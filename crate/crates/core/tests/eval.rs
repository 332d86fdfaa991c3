mod common;

use ccombat::eval::{
    rmse_regions, rmse_to_truth, run_age_window_curve, run_bias_grid, run_nu_sweep, run_sample_size_curve,
    AgeWindowConfig, BiasGridConfig, ExperimentReport, Method, NuSweepConfig, SampleSizeConfig, Setup,
};
use ccombat::synth::{derive_seed, generate_reference, inject_bias, sample_indices, BiasSpec, GeneratorSpec, SKELETON};
use ccombat::{apply, fit_bundle, Hyperparameters, LambdaPolicy, SiteDataset};
use common::*;

fn rmse_mean(r: &ExperimentReport, params: &[(&str, f64)], method: Method) -> f64 {
    r.mean(&r.condition(params, method).unwrap().id, "rmse").unwrap()
}

fn rmse_values(r: &ExperimentReport, params: &[(&str, f64)], method: Method) -> Vec<f64> {
    r.values(&r.condition(params, method).unwrap().id, "rmse")
}

#[test]
fn rmse_of_truth_and_of_an_offset() {
    let spec = ccombat::synth::fixture_spec(30, 1);
    let (d, truth) = inject_bias(&spec, &BiasSpec::new(0.9, 1.5, 1.2), 30, spec.age_range, 3, "m").unwrap();
    let shifted = |c: f64| {
        let records = d
            .records()
            .iter()
            .map(|r| {
                let mut r = r.clone();
                for (region, v) in r.metrics.iter_mut() {
                    *v = truth.get(&r.subject_id, region).unwrap().unbiased + c;
                }
                r
            })
            .collect();
        SiteDataset::new("m", "md", records).unwrap()
    };
    assert_eq!(rmse_to_truth(&shifted(0.0), &truth).unwrap(), 0.0);
    let c = 2.5e-6;
    assert!((rmse_to_truth(&shifted(c), &truth).unwrap() - c).abs() < 1e-15);
    assert!((rmse_regions(&shifted(-c), &truth, &[SKELETON]).unwrap() - c).abs() < 1e-15);
    assert!(rmse_regions(&shifted(0.0), &truth, &["nope"]).is_err());
}

fn small_grid() -> ExperimentReport {
    let cfg = BiasGridConfig {
        repetitions: 3,
        ..BiasGridConfig::default()
    };
    run_bias_grid(&Setup::default(), &cfg).unwrap()
}

#[test]
fn aggregates_are_recomputable_from_records() {
    let report = small_grid();
    assert!(report.failures.is_empty());
    for a in &report.aggregate {
        let v = report.values(&a.condition, &a.metric);
        assert_eq!(v.len(), a.n);
        assert!((mean(&v) - a.mean).abs() <= 1e-12 * a.mean.abs().max(1e-300));
        assert!((sample_std(&v) - a.std).abs() <= 1e-12 * a.std.abs().max(1e-300) + 1e-300);
        assert!(v.iter().all(|x| *x >= 0.0));
    }
    let back: ExperimentReport = serde_json::from_str(&report.to_json()).unwrap();
    assert_eq!(back, report);
    assert_eq!(report.to_csv().lines().count(), report.records.len() + 1);
}

#[test]
fn clinical_wins_every_repetition_off_the_shared_slope() {
    let report = small_grid();
    for m in [0.25, 1.0, 1.75] {
        for s in [0.0, 0.5, 2.0] {
            let c = rmse_values(&report, &[("S", s), ("M", m), ("A", 0.9)], Method::Clinical);
            let e = rmse_values(&report, &[("S", s), ("M", m), ("A", 0.9)], Method::Eb);
            assert!(c.iter().zip(&e).all(|(c, e)| c < e), "S={s} M={m}: {c:?} vs {e:?}");
        }
    }
}

// With a shared slope both models are right, provided the pooled regression
// carries the site intercepts; without them the offset leaks into the slope.
#[test]
fn shared_slope_column_has_comparable_methods() {
    let mut setup = Setup::default();
    setup.eb.site_indicators = true;
    let cfg = BiasGridConfig {
        s_values: vec![1.0],
        repetitions: 3,
        methods: vec![Method::Clinical, Method::Eb],
        ..BiasGridConfig::default()
    };
    let report = run_bias_grid(&setup, &cfg).unwrap();
    for m in [0.25, 1.0, 1.75] {
        let c = rmse_mean(&report, &[("S", 1.0), ("M", m), ("A", 0.9)], Method::Clinical);
        let e = rmse_mean(&report, &[("S", 1.0), ("M", m), ("A", 0.9)], Method::Eb);
        assert!(c <= 2.0 * e && e <= 2.0 * c, "S=1 M={m}: clinical {c:e} eb {e:e}");
    }
}

#[test]
fn unharmonized_error_grows_with_slope_distortion() {
    let cfg = BiasGridConfig {
        a: 1.0,
        s_values: vec![1.0, 1.5, 0.5, 2.0, 0.0],
        repetitions: 2,
        methods: vec![Method::None],
        ..BiasGridConfig::default()
    };
    let report = run_bias_grid(&Setup::default(), &cfg).unwrap();
    for m in [0.25, 1.0, 1.75] {
        let at = |s: f64| rmse_mean(&report, &[("S", s), ("M", m), ("A", 1.0)], Method::None);
        assert!(at(1.0) < at(0.5).min(at(1.5)));
        assert!(at(0.5).max(at(1.5)) < at(0.0).min(at(2.0)));
    }
}

#[test]
fn unbiased_cell_stays_at_the_noise_floor() {
    let cfg = BiasGridConfig {
        a: 1.0,
        s_values: vec![1.0],
        m_values: vec![1.0],
        j_ref: 2000,
        j_mov: 2000,
        repetitions: 2,
        methods: vec![Method::Clinical],
    };
    let report = run_bias_grid(&Setup::default(), &cfg).unwrap();
    let noise = Setup::default().spec.regions[0].noise_std;
    let rmse = rmse_mean(&report, &[("S", 1.0), ("M", 1.0), ("A", 1.0)], Method::Clinical);
    assert!(rmse < 0.1 * noise, "{rmse:e} vs noise {noise:e}");
}

#[test]
fn full_pool_matches_a_direct_fit() {
    let setup = Setup::default();
    let cfg = SampleSizeConfig {
        sizes: vec![60],
        pool: 60,
        test: 40,
        repetitions: 2,
        methods: vec![Method::Clinical],
        ..SampleSizeConfig::default()
    };
    let report = run_sample_size_curve(&setup, &cfg).unwrap();
    let got = rmse_values(&report, &[("n", 60.0)], Method::Clinical);
    for rep in 0..2u64 {
        let reference = generate_reference(&GeneratorSpec {
            n_subjects: cfg.j_ref,
            seed: derive_seed(setup.seed, &[0, rep]),
            ..setup.spec.clone()
        })
        .unwrap()
        .0;
        let (moving, truth) =
            inject_bias(&setup.spec, &cfg.bias, 100, setup.spec.age_range, derive_seed(setup.seed, &[1, rep]), "moving")
                .unwrap();
        let ages: Vec<f64> = moving.covariate_rows().iter().map(|r| r[0]).collect();
        let (test, pool) = sample_indices(&ages, 40, None, derive_seed(setup.seed, &[2, rep])).unwrap();
        let bundle = fit_bundle(&reference, &moving.subset(&pool).unwrap(), &setup.hp).unwrap();
        let test = moving.subset(&test).unwrap();
        let h = SiteDataset::new("moving", "md", apply(&bundle, test.records()).unwrap()).unwrap();
        assert_eq!(rmse_regions(&h, &truth, &[SKELETON]).unwrap(), got[rep as usize]);
    }
}

#[test]
fn clinical_error_falls_with_sample_size() {
    let report = run_sample_size_curve(&Setup::default(), &SampleSizeConfig::default()).unwrap();
    let id5 = report.condition(&[("n", 5.0)], Method::Clinical).unwrap().id.clone();
    let id30 = report.condition(&[("n", 30.0)], Method::Clinical).unwrap().id.clone();
    let pooled = ((report.std(&id5, "rmse").unwrap().powi(2) + report.std(&id30, "rmse").unwrap().powi(2)) / 2.0).sqrt();
    assert!(report.mean(&id30, "rmse").unwrap() <= report.mean(&id5, "rmse").unwrap() + pooled);
}

#[test]
fn unrestricted_window_equals_the_sample_size_curve() {
    let setup = Setup::default();
    let size = run_sample_size_curve(
        &setup,
        &SampleSizeConfig {
            sizes: vec![15],
            repetitions: 3,
            ..SampleSizeConfig::default()
        },
    )
    .unwrap();
    let window = run_age_window_curve(
        &setup,
        &AgeWindowConfig {
            centers: vec![52.5],
            half_width: 34.5,
            n_train: Some(15),
            repetitions: 3,
            tau: setup.hp.tau,
            bias: SampleSizeConfig::default().bias,
            ..AgeWindowConfig::default()
        },
    )
    .unwrap();
    for method in [Method::Clinical, Method::Eb] {
        assert_eq!(
            rmse_values(&size, &[("n", 15.0)], method),
            rmse_values(&window, &[("center", 52.5)], method)
        );
    }
}

#[test]
fn clinical_is_steadier_across_windows() {
    let report = run_age_window_curve(&Setup::default(), &AgeWindowConfig::default()).unwrap();
    let spread = |method| {
        let m: Vec<f64> = [28.0, 40.0, 52.5, 65.0, 77.0]
            .iter()
            .map(|&c| rmse_mean(&report, &[("center", c)], method))
            .collect();
        m.iter().copied().fold(f64::NEG_INFINITY, f64::max) - m.iter().copied().fold(f64::INFINITY, f64::min)
    };
    assert!(spread(Method::Clinical) < spread(Method::Eb));
}

#[test]
fn tuned_lambda_beats_no_regularization_at_an_edge_window() {
    let tuned = Setup::default();
    let free = Setup {
        hp: Hyperparameters {
            lambda: LambdaPolicy::Fixed(vec![0.0]),
            ..Hyperparameters::default()
        },
        ..Setup::default()
    };
    let cfg = AgeWindowConfig {
        centers: vec![77.0],
        n_train: Some(10),
        methods: vec![Method::Clinical],
        ..AgeWindowConfig::default()
    };
    let a = run_age_window_curve(&tuned, &cfg).unwrap();
    let b = run_age_window_curve(&free, &cfg).unwrap();
    let (ta, tb) = (rmse_mean(&a, &[("center", 77.0)], Method::Clinical), rmse_mean(&b, &[("center", 77.0)], Method::Clinical));
    assert!(ta < tb, "tuned {ta:e} vs lambda=0 {tb:e}");
}

#[test]
fn windows_outside_the_range_are_skipped() {
    let cfg = AgeWindowConfig {
        centers: vec![5.0, 52.5, 120.0],
        repetitions: 1,
        ..AgeWindowConfig::default()
    };
    let report = run_age_window_curve(&Setup::default(), &cfg).unwrap();
    assert_eq!(report.skipped, vec!["center=5", "center=120"]);
    assert_eq!(report.conditions.len(), 2);
}

#[test]
fn weak_and_strong_priors_miss_the_reference_spread() {
    let report = run_nu_sweep(&Setup::default(), &NuSweepConfig::default()).unwrap();
    let dev = |nu: f64| {
        let id = &report.condition(&[("nu", nu)], Method::Clinical).unwrap().id;
        (report.mean(id, "std_ratio").unwrap() - 1.0).abs()
    };
    assert!(dev(0.0) > dev(5.0));
    assert!(dev(100.0) > dev(5.0));
}

#[test]
fn reports_do_not_depend_on_thread_count() {
    let run = || {
        let setup = Setup::default();
        let cfg = SampleSizeConfig {
            repetitions: 3,
            ..SampleSizeConfig::default()
        };
        let a = run_sample_size_curve(&setup, &cfg).unwrap();
        let b = run_nu_sweep(&setup, &NuSweepConfig { repetitions: 3, test: 200, ..NuSweepConfig::default() }).unwrap();
        (a.to_json(), a.to_tsv(), b.to_json())
    };
    let pool = |n| rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap();
    let one = pool(1).install(run);
    let many = pool(5).install(run);
    assert_eq!(one, many);
}
