mod common;

use std::collections::BTreeMap;

use ccombat::io::{
    datasets_to_table, load_model, model_from_json, model_to_json, save_model, CovariateColumn, RunConfig, Table,
    TableLayout, SCHEMA_VERSION,
};
use ccombat::synth::{fixture_spec, generate_reference, inject_bias, BiasSpec};
use ccombat::{apply, fit_bundle, ErrorClass, Hyperparameters, LambdaPolicy};
use common::*;

fn fitted() -> ccombat::HarmonizationBundle {
    let spec = fixture_spec(120, 4);
    let (reference, _) = generate_reference(&spec).unwrap();
    let (moving, _) = inject_bias(&spec, &BiasSpec::new(0.9, 0.75, 1.5), 25, spec.age_range, 2, "mov").unwrap();
    fit_bundle(&reference, &moving, &Hyperparameters::default()).unwrap()
}

#[test]
fn model_file_round_trips_field_for_field() {
    let bundle = fitted();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    save_model(&path, &bundle).unwrap();
    let back = load_model(&path).unwrap();
    assert_eq!(back, bundle);
    for (id, m) in &bundle.models {
        let b = &back.models[id];
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&b.beta_ref), bits(&m.beta_ref));
        assert_eq!(bits(&b.beta_mov), bits(&m.beta_mov));
        assert_eq!(b.var_ref.to_bits(), m.var_ref.to_bits());
        assert_eq!(b.var_mov.to_bits(), m.var_mov.to_bits());
        assert_eq!(b.basis, m.basis);
    }
    assert_eq!(model_to_json(&back), model_to_json(&bundle));
}

#[test]
fn reloaded_model_harmonizes_identically() {
    let bundle = fitted();
    let back = model_from_json(&model_to_json(&bundle)).unwrap();
    let spec = fixture_spec(120, 4);
    let (fresh, _) = inject_bias(&spec, &BiasSpec::new(0.9, 0.75, 1.5), 30, (10.0, 95.0), 9, "mov").unwrap();
    assert_eq!(apply(&bundle, fresh.records()).unwrap(), apply(&back, fresh.records()).unwrap());
}

#[test]
fn newer_schema_is_refused() {
    let json = model_to_json(&fitted());
    let mut v: serde_json::Value = serde_json::from_str(&json).unwrap();
    v["schema_version"] = (SCHEMA_VERSION + 1).into();
    let err = model_from_json(&v.to_string()).unwrap_err();
    assert_eq!(err.class(), ErrorClass::Schema);
    assert!(err.to_string().contains("newer"), "{err}");

    v["schema_version"] = SCHEMA_VERSION.into();
    v["kind"] = "something_else".into();
    assert!(model_from_json(&v.to_string()).is_err());
    v["kind"] = "clinical_combat_bundle".into();
    v["extra"] = 1.into();
    assert!(model_from_json(&v.to_string()).is_err());
    assert!(model_from_json("{").is_err());
}

#[test]
fn truncated_coefficients_are_refused() {
    let mut v: serde_json::Value = serde_json::from_str(&model_to_json(&fitted())).unwrap();
    let models = v["bundle"]["models"].as_object_mut().unwrap();
    let first = models.values_mut().next().unwrap();
    first["beta_mov"].as_array_mut().unwrap().pop();
    assert!(model_from_json(&v.to_string()).is_err());
}

#[test]
fn generated_tables_round_trip_through_csv() {
    let spec = fixture_spec(50, 8);
    let (reference, _) = generate_reference(&spec).unwrap();
    let (moving, _) = inject_bias(&spec, &BiasSpec::new(1.1, 0.5, 1.25), 20, spec.age_range, 4, "mov").unwrap();
    let cov = vec![CovariateColumn::numeric("age")];
    let table = datasets_to_table(&[reference.clone(), moving.clone()]).unwrap();
    for layout in [TableLayout::Wide, TableLayout::Long] {
        let text = table.to_csv(layout, &cov).unwrap();
        let back = Table::from_csv(&text, layout).unwrap();
        let sites = back.datasets(&cov, reference.metric_name()).unwrap();
        assert_eq!(sites, vec![reference.clone(), moving.clone()]);
    }
}

#[test]
fn random_cells_survive_formatting() {
    let mut r = rng(5);
    let cov = vec![CovariateColumn::numeric("age")];
    let mut text = String::from("subject_id,site_id,age,a,b\n");
    let mut expected = Vec::new();
    for i in 0..200 {
        let (age, a, b) = (normal(&mut r) * 30.0, normal(&mut r) * 1e-5, normal(&mut r).exp());
        text.push_str(&format!("s{i},X,{age:?},{a:?},{b:?}\n"));
        expected.push([age, a, b]);
    }
    let t = Table::from_csv(&text, TableLayout::Wide).unwrap();
    let values: Vec<BTreeMap<String, f64>> = expected
        .iter()
        .map(|e| [("a".to_string(), e[1]), ("b".to_string(), e[2])].into_iter().collect())
        .collect();
    let out = t.with_harmonized(&cov, &values, "m").unwrap().to_csv(TableLayout::Wide, &cov).unwrap();
    let d = Table::from_csv(&out, TableLayout::Wide).unwrap().single_site(&cov, "md").unwrap();
    for (rec, e) in d.records().iter().zip(&expected) {
        assert_eq!(rec.covariates.values()[0].to_bits(), e[0].to_bits());
        assert_eq!(rec.value("a").unwrap().to_bits(), e[1].to_bits());
        assert_eq!(rec.value("b").unwrap().to_bits(), e[2].to_bits());
    }
}

#[test]
fn config_file_drives_the_setup() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.toml");
    std::fs::write(
        &path,
        r#"
seed = 11
[hyperparameters]
degree = 3
lambda = { policy = "fixed", values = [0.0, 1.0, 2.0, 3.0] }
[experiment.bias_grid]
repetitions = 2
s_values = [1.0]
"#,
    )
    .unwrap();
    let cfg = RunConfig::load(&path).unwrap();
    let setup = cfg.setup();
    assert_eq!(setup.seed, 11);
    assert_eq!(setup.hp.degree, 3);
    assert_eq!(setup.hp.lambda, LambdaPolicy::Fixed(vec![0.0, 1.0, 2.0, 3.0]));
    assert_eq!(setup.spec, fixture_spec(341, 11));
    assert_eq!(cfg.experiment.bias_grid.repetitions, 2);
    assert_eq!(cfg.covariate_names(), vec!["age".to_string()]);
    assert!(RunConfig::load(&dir.path().join("missing.toml")).is_err());
}
