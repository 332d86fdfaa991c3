mod common;

use std::collections::BTreeSet;

use ccombat::synth::{
    draw_cohort, fixture_spec, generate_reference, inject_bias, sample_indices, sample_restricted, AgeDistribution,
    BiasSpec, GeneratorSpec, SKELETON,
};
use common::*;

#[test]
fn same_seed_gives_identical_data() {
    let spec = fixture_spec(100, 42);
    assert_eq!(generate_reference(&spec).unwrap(), generate_reference(&spec).unwrap());
    let bias = BiasSpec::new(0.9, 1.5, 1.75);
    let a = inject_bias(&spec, &bias, 50, (30.0, 50.0), 7, "m").unwrap();
    let b = inject_bias(&spec, &bias, 50, (30.0, 50.0), 7, "m").unwrap();
    assert_eq!(a, b);
    let c = inject_bias(&spec, &bias, 50, (30.0, 50.0), 8, "m").unwrap();
    assert_ne!(a.0, c.0);
}

#[test]
fn uniform_ages_average_to_the_midpoint() {
    let spec = fixture_spec(10_000, 1);
    let ages: Vec<f64> = draw_cohort(&spec, 10_000, spec.age_range, 3).unwrap().iter().map(|d| d.age).collect();
    assert!((mean(&ages) - 52.5).abs() < 1.0);
    assert!(ages.iter().all(|a| (18.0..=87.0).contains(a)));
}

#[test]
fn truncated_gaussian_ages_stay_in_range() {
    let spec = GeneratorSpec {
        age_distribution: AgeDistribution::TruncatedGaussian { mean: 30.0, std: 15.0 },
        ..fixture_spec(2000, 1)
    };
    let ages: Vec<f64> = draw_cohort(&spec, 2000, spec.age_range, 5).unwrap().iter().map(|d| d.age).collect();
    assert!(ages.iter().all(|a| (18.0..=87.0).contains(a)));
    // truncated-normal mean: 30 + 15(φ(-0.8) - φ(3.8)) / (Φ(3.8) - Φ(-0.8))
    assert!((mean(&ages) - 35.508).abs() < 1.0, "{}", mean(&ages));
}

#[test]
fn noise_multiplier_scales_residual_spread() {
    let spec = fixture_spec(10, 2);
    let (moving, truth) = inject_bias(&spec, &BiasSpec::new(1.0, 1.0, 1.75), 20_000, spec.age_range, 9, "m").unwrap();
    let resid: Vec<f64> = moving
        .records()
        .iter()
        .map(|r| r.metrics[SKELETON] - truth.get(&r.subject_id, SKELETON).unwrap().noiseless)
        .collect();
    let target = 1.75 * spec.regions[0].noise_std;
    assert!((sample_std(&resid) / target - 1.0).abs() < 0.05);
}

#[test]
fn vanishing_noise_puts_subjects_on_the_curve() {
    let mut spec = fixture_spec(200, 3);
    for r in &mut spec.regions {
        r.noise_std = 1e-12;
    }
    let (d, truth) = generate_reference(&spec).unwrap();
    for r in d.records() {
        for (region, v) in &r.metrics {
            assert!((v - truth.get(&r.subject_id, region).unwrap().noiseless).abs() < 1e-9);
        }
    }
}

#[test]
fn exhaustive_draw_leaves_no_test_set() {
    let (d, _) = generate_reference(&fixture_spec(40, 4)).unwrap();
    let (train, test) = sample_restricted(&d, 40, None, 1).unwrap();
    assert_eq!(train, d);
    assert!(test.is_none());
}

#[test]
fn window_draws_stay_inside() {
    let (d, _) = generate_reference(&fixture_spec(400, 5)).unwrap();
    let (train, test) = sample_restricted(&d, 20, Some((50.0, 10.0)), 2).unwrap();
    assert_eq!(train.len(), 20);
    assert_eq!(test.unwrap().len(), 380);
    assert!(train.covariate_rows().iter().all(|r| (40.0..=60.0).contains(&r[0])));
}

#[test]
fn repeated_draws_cover_the_window_population() {
    let spec = fixture_spec(400, 6);
    let ages: Vec<f64> = draw_cohort(&spec, 400, spec.age_range, 6).unwrap().iter().map(|d| d.age).collect();
    let window = Some((50.0, 10.0));
    let population = ages.iter().filter(|a| (**a - 50.0).abs() <= 10.0).count();
    let mut seen = BTreeSet::new();
    let mut sizes = Vec::new();
    for rep in 0..30 {
        let (train, _) = sample_indices(&ages, 10, window, rep).unwrap();
        seen.extend(train);
        sizes.push(seen.len());
    }
    assert!(sizes.windows(2).all(|w| w[0] <= w[1]));
    // about 1 - (1 - 10/N)^30 of the window is expected to appear
    let expected = population as f64 * (1.0 - (1.0 - 10.0 / population as f64).powi(30));
    assert!((seen.len() as f64) > 0.85 * expected, "{} of {population}, expected {expected}", seen.len());
    assert!(seen.len() <= population);
}

#[test]
fn flat_slope_site_ignores_age() {
    let spec = fixture_spec(10, 7);
    let (d, _) = inject_bias(&spec, &BiasSpec::new(0.8, 0.0, 1e-9), 50, spec.age_range, 1, "m").unwrap();
    for region in &spec.regions {
        let v = d.values(&region.region_id).unwrap();
        for x in v {
            assert!((x - 0.8 * region.curve[0]).abs() < 1e-12);
        }
    }
}
