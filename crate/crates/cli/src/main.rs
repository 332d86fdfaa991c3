use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use ccombat::clinical::{apply, fit_bundle, qc_bhattacharyya};
use ccombat::eval::{self, ExperimentReport};
use ccombat::io::{
    datasets_to_table, format_cell, load_model, save_model, write_atomic, CovariateColumn, RunConfig, Table,
    TableLayout,
};
use ccombat::synth::{fixture_spec, generate_reference, inject_bias, BiasSpec, GeneratorSpec};
use ccombat::{Error, ErrorClass, HarmonizationBundle};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "ccombat", version, about = "Sitewise harmonization of per-region brain metrics")]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Overrides the seed of the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Also write a plot-ready tab-separated table here.
    #[arg(long, global = true, value_name = "TSV")]
    emit_table: Option<PathBuf>,
    /// Read and write tables in long format (one row per subject and region).
    #[arg(long, global = true)]
    long: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a moving site against a reference site and write the model file.
    Fit {
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        moving: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Harmonize a table with a fitted model.
    Apply {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Only needed for categorical covariate encodings.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Bhattacharyya distance between the reference and the harmonized moving site.
    Qc {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        moving: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run the lambda auto-tuning and report its diagnostics per region.
    Tune {
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        moving: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Restrict to one region.
        #[arg(long)]
        region: Option<String>,
    },
    /// Generate a synthetic site (reference, or biased with --bias).
    Simulate {
        /// Generator spec (TOML); the built-in fixture if omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Bias spec (TOML with A, S, M and optional b).
        #[arg(long)]
        bias: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also write the per-subject unbiased values.
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        site_id: Option<String>,
    },
    /// Run one of the synthetic experiments and write its report.
    Evaluate {
        #[arg(long, value_enum)]
        experiment: Experiment,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Report JSON; printed to standard output if omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Flat experiment,condition,repetition,metric,value table.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Experiment {
    #[value(name = "bias_grid")]
    BiasGrid,
    #[value(name = "sample_size")]
    SampleSize,
    #[value(name = "age_window")]
    AgeWindow,
    #[value(name = "nu_sweep")]
    NuSweep,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            for (region, err) in region_errors(&e) {
                eprintln!("  region {region}: {err}");
            }
            ExitCode::from(match e.class() {
                ErrorClass::Schema => 2,
                ErrorClass::Numeric => 3,
                ErrorClass::Reference => 4,
            })
        }
    }
}

fn region_errors(e: &Error) -> Vec<(String, String)> {
    match e {
        Error::Regions(v) => v.iter().map(|(r, e)| (r.clone(), e.to_string())).collect(),
        Error::Region { region, source } => vec![(region.clone(), source.to_string())],
        _ => Vec::new(),
    }
}

fn layout(cli: &Cli) -> TableLayout {
    if cli.long {
        TableLayout::Long
    } else {
        TableLayout::Wide
    }
}

fn load_config(cli: &Cli, path: Option<&Path>) -> ccombat::Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn read_site(cli: &Cli, path: &Path, cfg: &RunConfig) -> ccombat::Result<ccombat::SiteDataset> {
    Table::read(path, layout(cli))?.single_site(&cfg.data.covariates, &cfg.data.metric_name)
}

fn emit(cli: &Cli, tsv: &str) -> ccombat::Result<()> {
    match &cli.emit_table {
        Some(p) => write_atomic(p, tsv.as_bytes()),
        None => Ok(()),
    }
}

fn run(cli: &Cli) -> ccombat::Result<()> {
    match &cli.command {
        Command::Fit {
            reference,
            moving,
            config,
            out,
        } => {
            let cfg = load_config(cli, config.as_deref())?;
            let r = read_site(cli, reference, &cfg)?;
            let m = read_site(cli, moving, &cfg)?;
            let bundle = fit_bundle(&r, &m, &cfg.hyperparameters)?;
            save_model(out, &bundle)?;
            let table = fit_summary(&bundle);
            print!("{table}");
            emit(cli, &table)
        }
        Command::Apply {
            model,
            input,
            out,
            config,
        } => {
            let bundle = load_model(model)?;
            let covariates = model_covariates(cli, &bundle, config.as_deref())?;
            let table = Table::read(input, layout(cli))?;
            let missing: Vec<&String> = covariates
                .iter()
                .map(|c| &c.name)
                .filter(|n| table.column(n).is_none())
                .collect();
            if !missing.is_empty() {
                return Err(Error::CovariateMismatch {
                    expected: bundle.covariate_names().join(","),
                    found: format!("table without {}", missing.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(",")),
                });
            }
            let prior = table.provenance();
            if !prior.is_empty() {
                log::warn!(
                    "{} row(s) were already harmonized ({}); harmonizing again is not idempotent",
                    prior.len(),
                    prior[0]
                );
            }
            let rows = table.records(&covariates)?;
            if let Some((site, _)) = rows.iter().find(|(s, _)| s != &bundle.moving_site_id) {
                log::warn!("site `{site}` differs from the model's moving site `{}`", bundle.moving_site_id);
            }
            let records: Vec<_> = rows.into_iter().map(|(_, r)| r).collect();
            let harmonized = apply(&bundle, &records)?;
            let values: Vec<BTreeMap<String, f64>> = harmonized.into_iter().map(|r| r.metrics).collect();
            let tag = format!("ccombat:{}->{}", bundle.moving_site_id, bundle.reference_site_id);
            let result = table.with_harmonized(&covariates, &values, &tag)?;
            write_atomic(out, result.to_csv(layout(cli), &covariates)?.as_bytes())
        }
        Command::Qc {
            model,
            reference,
            moving,
            config,
        } => {
            let bundle = load_model(model)?;
            let mut cfg = load_config(cli, config.as_deref())?;
            cfg.data.covariates = model_covariates(cli, &bundle, config.as_deref())?;
            cfg.data.metric_name = bundle.metric_name.clone();
            let r = read_site(cli, reference, &cfg)?;
            let m = read_site(cli, moving, &cfg)?;
            let harmonized = apply(&bundle, m.records())?;
            let mut out = String::from("region\td_b\n");
            for (region, rm) in &bundle.models {
                let d = qc_bhattacharyya(&r, &harmonized, region, &rm.beta_ref, &rm.basis)
                    .map_err(|e| e.in_region(region))?;
                out.push_str(&format!("{region}\t{}\n", format_cell(d)));
            }
            print!("{out}");
            emit(cli, &out)
        }
        Command::Tune {
            reference,
            moving,
            config,
            region,
        } => {
            let cfg = load_config(cli, config.as_deref())?;
            let r = read_site(cli, reference, &cfg)?;
            let m = read_site(cli, moving, &cfg)?;
            let regions = match region {
                Some(x) => vec![x.clone()],
                None => r.regions(),
            };
            let mut out = String::from("region\tconverged\tsteps\tlambda\td_min\td_max\td_1\td_2\n");
            for reg in &regions {
                let (lambda, diag) =
                    ccombat::auto_tune(&r, &m, reg, &cfg.hyperparameters).map_err(|e| e.in_region(reg))?;
                let lam: Vec<String> = lambda.iter().map(|l| format_cell(*l)).collect();
                out.push_str(&format!(
                    "{reg}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                    diag.converged,
                    diag.lambda_trace.len(),
                    lam.join(","),
                    format_cell(diag.d_min),
                    format_cell(diag.d_max),
                    format_cell(diag.d_1),
                    format_cell(diag.d_2)
                ));
            }
            print!("{out}");
            emit(cli, &out)
        }
        Command::Simulate {
            spec,
            bias,
            out,
            truth,
            site_id,
        } => {
            let seed = cli.seed.unwrap_or(0);
            let mut spec: GeneratorSpec = match spec {
                Some(p) => parse_toml(p)?,
                None => fixture_spec(341, seed),
            };
            if let Some(s) = cli.seed {
                spec.seed = s;
            }
            let (data, gt) = match bias {
                Some(p) => {
                    let b: BiasSpec = parse_toml(p)?;
                    let id = site_id.clone().unwrap_or_else(|| "moving".into());
                    inject_bias(&spec, &b, spec.n_subjects, spec.age_range, spec.seed, &id)?
                }
                None => {
                    if let Some(id) = site_id {
                        spec.site_id = id.clone();
                    }
                    generate_reference(&spec)?
                }
            };
            let covariates = vec![CovariateColumn::numeric("age")];
            let table = datasets_to_table(std::slice::from_ref(&data))?;
            write_atomic(out, table.to_csv(layout(cli), &covariates)?.as_bytes())?;
            if let Some(p) = truth {
                let mut t = table.clone();
                let regions = t.region_columns(&covariates);
                for row in &mut t.rows {
                    for &c in &regions {
                        row[c] = format_cell(gt.get(&row[0], &table.headers[c])?.unbiased);
                    }
                }
                write_atomic(p, t.to_csv(layout(cli), &covariates)?.as_bytes())?;
            }
            Ok(())
        }
        Command::Evaluate {
            experiment,
            config,
            out,
            csv,
        } => {
            let cfg = load_config(cli, config.as_deref())?;
            let setup = cfg.setup();
            let x = &cfg.experiment;
            let report = match experiment {
                Experiment::BiasGrid => eval::run_bias_grid(&setup, &x.bias_grid)?,
                Experiment::SampleSize => eval::run_sample_size_curve(&setup, &x.sample_size)?,
                Experiment::AgeWindow => eval::run_age_window_curve(&setup, &x.age_window)?,
                Experiment::NuSweep => eval::run_nu_sweep(&setup, &x.nu_sweep)?,
            };
            for f in &report.failures {
                log::warn!("{} repetition {}: {}", f.condition, f.repetition, f.error);
            }
            match out {
                Some(p) => {
                    write_atomic(p, report.to_json().as_bytes())?;
                    print!("{}", headline(&report));
                }
                None => println!("{}", report.to_json()),
            }
            if let Some(p) = csv {
                write_atomic(p, report.to_csv().as_bytes())?;
            }
            emit(cli, &report.to_tsv())
        }
    }
}

fn parse_toml<T: serde::de::DeserializeOwned>(path: &Path) -> ccombat::Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::InvalidInput(format!("cannot read `{}`: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Error::InvalidInput(format!("`{}`: {e}", path.display())))
}

/// Covariate columns of a model, with encodings from the config when given.
fn model_covariates(
    cli: &Cli,
    bundle: &HarmonizationBundle,
    config: Option<&Path>,
) -> ccombat::Result<Vec<CovariateColumn>> {
    let declared = match config {
        Some(_) => load_config(cli, config)?.data.covariates,
        None => Vec::new(),
    };
    Ok(bundle
        .covariate_names()
        .into_iter()
        .map(|n| {
            declared
                .iter()
                .find(|c| c.name == n)
                .cloned()
                .unwrap_or_else(|| CovariateColumn::numeric(&n))
        })
        .collect())
}

fn fit_summary(bundle: &HarmonizationBundle) -> String {
    let mut out = String::from("region\td_b\td_b_before\tlambda\n");
    for (region, qc) in &bundle.qc {
        let lam: Vec<String> = bundle.tuned_lambda[region].iter().map(|l| format!("{l:.6e}")).collect();
        out.push_str(&format!(
            "{region}\t{}\t{}\t{}\n",
            format_cell(*qc),
            format_cell(bundle.qc_before[region]),
            lam.join(",")
        ));
    }
    out
}

fn headline(report: &ExperimentReport) -> String {
    let mut out = String::from("condition\tmetric\tmean\tstd\n");
    for a in report.aggregate.iter().filter(|a| !a.metric.contains('[')) {
        out.push_str(&format!("{}\t{}\t{:.6e}\t{:.6e}\n", a.condition, a.metric, a.mean, a.std));
    }
    out
}
