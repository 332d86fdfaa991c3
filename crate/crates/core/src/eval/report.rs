use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::scalar::{mean, sample_variance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Clinical,
    Eb,
    None,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Clinical => "clinical",
            Method::Eb => "eb",
            Method::None => "none",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One experimental condition: parameter assignment plus method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub id: String,
    pub params: BTreeMap<String, f64>,
    pub method: Method,
}

impl Condition {
    pub fn new(params: &[(&str, f64)], method: Method) -> Self {
        let mut id: Vec<String> = params.iter().map(|(k, v)| format!("{k}={v}")).collect();
        id.push(format!("method={method}"));
        Self {
            id: id.join(";"),
            params: params.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            method,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub condition: String,
    pub repetition: usize,
    pub metric: String,
    pub value: f64,
}

/// Mean and sample standard deviation over repetitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub condition: String,
    pub metric: String,
    pub n: usize,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub condition: String,
    pub repetition: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment_id: String,
    /// The full configuration the report was produced from.
    pub config: serde_json::Value,
    pub repetitions: usize,
    pub conditions: Vec<Condition>,
    pub records: Vec<MetricRecord>,
    pub aggregate: Vec<Aggregate>,
    pub failures: Vec<Failure>,
    /// Conditions skipped before running (e.g. empty age windows).
    #[serde(default)]
    pub skipped: Vec<String>,
}

impl ExperimentReport {
    pub fn new(experiment_id: &str, config: serde_json::Value, repetitions: usize) -> Self {
        Self {
            experiment_id: experiment_id.into(),
            config,
            repetitions,
            conditions: Vec::new(),
            records: Vec::new(),
            aggregate: Vec::new(),
            failures: Vec::new(),
            skipped: Vec::new(),
        }
    }

    pub fn push(&mut self, condition: &str, repetition: usize, metric: &str, value: f64) {
        self.records.push(MetricRecord {
            condition: condition.into(),
            repetition,
            metric: metric.into(),
            value,
        });
    }

    /// Per-repetition values of one metric, in repetition order.
    pub fn values(&self, condition: &str, metric: &str) -> Vec<f64> {
        let mut v: Vec<(usize, f64)> = self
            .records
            .iter()
            .filter(|r| r.condition == condition && r.metric == metric)
            .map(|r| (r.repetition, r.value))
            .collect();
        v.sort_by_key(|p| p.0);
        v.into_iter().map(|p| p.1).collect()
    }

    pub fn condition(&self, params: &[(&str, f64)], method: Method) -> Option<&Condition> {
        let id = Condition::new(params, method).id;
        self.conditions.iter().find(|c| c.id == id)
    }

    pub fn mean(&self, condition: &str, metric: &str) -> Option<f64> {
        self.aggregate
            .iter()
            .find(|a| a.condition == condition && a.metric == metric)
            .map(|a| a.mean)
    }

    pub fn std(&self, condition: &str, metric: &str) -> Option<f64> {
        self.aggregate
            .iter()
            .find(|a| a.condition == condition && a.metric == metric)
            .map(|a| a.std)
    }

    /// Sorts records and recomputes aggregates from them.
    pub fn finalize(&mut self) {
        let order: BTreeMap<&str, usize> = self
            .conditions
            .iter()
            .enumerate()
            .map(|(i, c)| (c.id.as_str(), i))
            .collect();
        let key = |c: &str| order.get(c).copied().unwrap_or(usize::MAX);
        self.records.sort_by(|a, b| {
            (key(&a.condition), &a.metric, a.repetition).cmp(&(key(&b.condition), &b.metric, b.repetition))
        });
        self.failures
            .sort_by(|a, b| (key(&a.condition), a.repetition).cmp(&(key(&b.condition), b.repetition)));
        self.aggregate = recompute_aggregates(&self.records);
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Flat `experiment,condition,repetition,metric,value` table.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["experiment", "condition", "repetition", "metric", "value"])
            .expect("in-memory write");
        for r in &self.records {
            w.write_record([
                self.experiment_id.as_str(),
                r.condition.as_str(),
                &r.repetition.to_string(),
                r.metric.as_str(),
                &format_value(r.value),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }

    /// Plot-ready table of aggregates with one column per condition parameter.
    pub fn to_tsv(&self) -> String {
        let mut params: Vec<&String> = self.conditions.iter().flat_map(|c| c.params.keys()).collect();
        params.sort();
        params.dedup();
        let mut out = String::new();
        for p in &params {
            let _ = write!(out, "{p}\t");
        }
        out.push_str("method\tmetric\tn\tmean\tstd\n");
        for a in &self.aggregate {
            let Some(c) = self.conditions.iter().find(|c| c.id == a.condition) else {
                continue;
            };
            for p in &params {
                match c.params.get(*p) {
                    Some(v) => {
                        let _ = write!(out, "{v}\t");
                    }
                    None => out.push('\t'),
                }
            }
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}",
                c.method,
                a.metric,
                a.n,
                format_value(a.mean),
                format_value(a.std)
            );
        }
        out
    }
}

/// 17 significant digits: round-trips any `f64`.
pub fn format_value(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn recompute_aggregates(records: &[MetricRecord]) -> Vec<Aggregate> {
    let mut groups: Vec<((&str, &str), Vec<f64>)> = Vec::new();
    for r in records {
        match groups.last_mut() {
            Some(((c, m), v)) if *c == r.condition && *m == r.metric => v.push(r.value),
            _ => groups.push(((&r.condition, &r.metric), vec![r.value])),
        }
    }
    groups
        .into_iter()
        .map(|((c, m), v)| Aggregate {
            condition: c.into(),
            metric: m.into(),
            n: v.len(),
            mean: mean(&v),
            std: if v.len() > 1 { sample_variance(&v).sqrt() } else { 0.0 },
        })
        .collect()
}
