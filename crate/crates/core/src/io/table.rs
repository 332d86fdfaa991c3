//! Wide CSV tables: `subject_id`, `site_id`, covariate columns, one column
//! per region, and an optional `harmonized_by` provenance column.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use super::config::CovariateColumn;
use crate::error::{Error, Result};
use crate::model::{CovariateVector, SiteDataset, SubjectRecord};

pub const PROVENANCE_COLUMN: &str = "harmonized_by";
const SUBJECT: &str = "subject_id";
const SITE: &str = "site_id";
const REGION: &str = "region";
const VALUE: &str = "value";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum TableLayout {
    /// One column per region.
    #[default]
    Wide,
    /// One row per subject and region, with `region` and `value` columns.
    Long,
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn format_cell(x: f64) -> String {
    format!("{x:.16e}")
}

fn schema(msg: String) -> Error {
    Error::InvalidInput(msg)
}

/// Raw cells, always held in the wide layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn from_csv(text: &str, layout: TableLayout) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
        let headers: Vec<String> = reader
            .headers()
            .map_err(|e| schema(format!("cannot read header row: {e}")))?
            .iter()
            .map(str::to_string)
            .collect();
        if headers.is_empty() || headers.iter().all(String::is_empty) {
            return Err(schema("missing header row".into()));
        }
        let mut rows = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| schema(format!("row {}: {e}", i + 2)))?;
            rows.push(rec.iter().map(str::to_string).collect());
        }
        let table = Table { headers, rows };
        table.check_unique_headers()?;
        match layout {
            TableLayout::Wide => Ok(table),
            TableLayout::Long => table.pivot_long(),
        }
    }

    pub fn read(path: &Path, layout: TableLayout) -> Result<Self> {
        Self::from_csv(&super::read_to_string(path)?, layout)
    }

    fn check_unique_headers(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for h in &self.headers {
            if !seen.insert(h.as_str()) {
                return Err(schema(format!("duplicate column `{h}`")));
            }
        }
        Ok(())
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }

    fn require(&self, name: &str) -> Result<usize> {
        self.column(name).ok_or_else(|| schema(format!("missing column `{name}`")))
    }

    /// Region columns: every column that is not an identifier, a declared
    /// covariate or the provenance column.
    pub fn region_columns(&self, covariates: &[CovariateColumn]) -> Vec<usize> {
        (0..self.headers.len())
            .filter(|&i| {
                let h = self.headers[i].as_str();
                h != SUBJECT && h != SITE && h != PROVENANCE_COLUMN && !covariates.iter().any(|c| c.name == h)
            })
            .collect()
    }

    /// Non-empty provenance cells.
    pub fn provenance(&self) -> Vec<&str> {
        match self.column(PROVENANCE_COLUMN) {
            Some(c) => self.rows.iter().map(|r| r[c].as_str()).filter(|s| !s.is_empty()).collect(),
            None => Vec::new(),
        }
    }

    /// Parses every row into a subject record, in row order, paired with
    /// its site id.
    pub fn records(&self, covariates: &[CovariateColumn]) -> Result<Vec<(String, SubjectRecord<f64>)>> {
        let subject = self.require(SUBJECT)?;
        let site = self.require(SITE)?;
        let cov_cols: Vec<usize> = covariates.iter().map(|c| self.require(&c.name)).collect::<Result<_>>()?;
        let regions = self.region_columns(covariates);
        if regions.is_empty() {
            return Err(schema("no region columns".into()));
        }
        let names: Arc<[String]> = covariates.iter().map(|c| c.name.clone()).collect::<Vec<_>>().into();
        self.rows
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let line = i + 2;
                let cell = |c: usize| -> Result<&str> {
                    let s = row[c].trim();
                    if s.is_empty() {
                        return Err(schema(format!("row {line}: missing value in column `{}`", self.headers[c])));
                    }
                    Ok(s)
                };
                let number = |c: usize| -> Result<f64> {
                    let s = cell(c)?;
                    match s.parse::<f64>() {
                        Ok(v) if v.is_finite() => Ok(v),
                        _ => Err(schema(format!(
                            "row {line}: `{s}` in column `{}` is not a finite number",
                            self.headers[c]
                        ))),
                    }
                };
                let values = covariates
                    .iter()
                    .zip(&cov_cols)
                    .map(|(spec, &c)| match &spec.levels {
                        None => number(c),
                        Some(levels) => {
                            let s = cell(c)?;
                            levels.get(s).copied().ok_or_else(|| {
                                schema(format!("row {line}: `{s}` is not a declared level of `{}`", spec.name))
                            })
                        }
                    })
                    .collect::<Result<Vec<f64>>>()?;
                let metrics = regions
                    .iter()
                    .map(|&c| Ok((self.headers[c].clone(), number(c)?)))
                    .collect::<Result<BTreeMap<_, _>>>()?;
                let record = SubjectRecord::new(cell(subject)?, CovariateVector::new(names.clone(), values)?, metrics)?;
                Ok((cell(site)?.to_string(), record))
            })
            .collect()
    }

    /// Groups rows into one dataset per site, in order of first appearance.
    pub fn datasets(&self, covariates: &[CovariateColumn], metric_name: &str) -> Result<Vec<SiteDataset<f64>>> {
        let mut order: Vec<String> = Vec::new();
        let mut groups: BTreeMap<String, Vec<SubjectRecord<f64>>> = BTreeMap::new();
        for (site, rec) in self.records(covariates)? {
            if !groups.contains_key(&site) {
                order.push(site.clone());
            }
            groups.entry(site).or_default().push(rec);
        }
        order
            .into_iter()
            .map(|s| {
                let recs = groups.remove(&s).unwrap_or_default();
                SiteDataset::new(s, metric_name, recs)
            })
            .collect()
    }

    /// The single site of this table.
    pub fn single_site(&self, covariates: &[CovariateColumn], metric_name: &str) -> Result<SiteDataset<f64>> {
        let mut sites = self.datasets(covariates, metric_name)?;
        match sites.len() {
            1 => Ok(sites.remove(0)),
            0 => Err(Error::InsufficientData("table has no subjects".into())),
            n => Err(schema(format!("expected one site per table, found {n}"))),
        }
    }

    /// Replaces region cells with `values[row]` and stamps provenance.
    pub fn with_harmonized(
        &self,
        covariates: &[CovariateColumn],
        values: &[BTreeMap<String, f64>],
        provenance: &str,
    ) -> Result<Table> {
        if values.len() != self.rows.len() {
            return Err(Error::AlignmentError(format!(
                "{} harmonized rows for {} input rows",
                values.len(),
                self.rows.len()
            )));
        }
        let regions = self.region_columns(covariates);
        let mut out = self.clone();
        let prov = match out.column(PROVENANCE_COLUMN) {
            Some(c) => c,
            None => {
                out.headers.push(PROVENANCE_COLUMN.into());
                for r in &mut out.rows {
                    r.push(String::new());
                }
                out.headers.len() - 1
            }
        };
        for (row, v) in out.rows.iter_mut().zip(values) {
            for &c in &regions {
                let y = v
                    .get(&self.headers[c])
                    .ok_or_else(|| Error::AlignmentError(format!("no harmonized value for `{}`", self.headers[c])))?;
                row[c] = format_cell(*y);
            }
            row[prov] = if row[prov].is_empty() {
                provenance.to_string()
            } else {
                format!("{}|{provenance}", row[prov])
            };
        }
        Ok(out)
    }

    pub fn to_csv(&self, layout: TableLayout, covariates: &[CovariateColumn]) -> Result<String> {
        let table = match layout {
            TableLayout::Wide => self.clone(),
            TableLayout::Long => self.unpivot(covariates),
        };
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| schema(format!("cannot format table: {e}"));
        w.write_record(&table.headers).map_err(io)?;
        for r in &table.rows {
            w.write_record(r).map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| schema(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| schema(e.to_string()))
    }

    fn unpivot(&self, covariates: &[CovariateColumn]) -> Table {
        let regions = self.region_columns(covariates);
        let keep: Vec<usize> = (0..self.headers.len()).filter(|c| !regions.contains(c)).collect();
        let mut headers: Vec<String> = keep.iter().map(|&c| self.headers[c].clone()).collect();
        headers.push(REGION.into());
        headers.push(VALUE.into());
        let rows = self
            .rows
            .iter()
            .flat_map(|r| {
                let keep = &keep;
                regions.iter().map(move |&c| {
                    let mut out: Vec<String> = keep.iter().map(|&k| r[k].clone()).collect();
                    out.push(self.headers[c].clone());
                    out.push(r[c].clone());
                    out
                })
            })
            .collect();
        Table { headers, rows }
    }

    fn pivot_long(&self) -> Result<Table> {
        let subject = self.require(SUBJECT)?;
        let region = self.require(REGION)?;
        let value = self.require(VALUE)?;
        let fixed: Vec<usize> = (0..self.headers.len()).filter(|&c| c != region && c != value).collect();
        let mut regions: Vec<String> = Vec::new();
        let mut subjects: Vec<String> = Vec::new();
        let mut cells: BTreeMap<String, (Vec<String>, BTreeMap<String, String>)> = BTreeMap::new();
        for (i, r) in self.rows.iter().enumerate() {
            let line = i + 2;
            let id = r[subject].clone();
            let fixed_cells: Vec<String> = fixed.iter().map(|&c| r[c].clone()).collect();
            if !regions.contains(&r[region]) {
                regions.push(r[region].clone());
            }
            let entry = cells.entry(id.clone()).or_insert_with(|| {
                subjects.push(id.clone());
                (fixed_cells.clone(), BTreeMap::new())
            });
            if entry.0 != fixed_cells {
                return Err(schema(format!("row {line}: subject `{id}` has inconsistent columns across regions")));
            }
            if entry.1.insert(r[region].clone(), r[value].clone()).is_some() {
                return Err(schema(format!("row {line}: duplicate region `{}` for subject `{id}`", r[region])));
            }
        }
        let mut headers: Vec<String> = fixed.iter().map(|&c| self.headers[c].clone()).collect();
        let prov = headers.iter().position(|h| h == PROVENANCE_COLUMN);
        if let Some(p) = prov {
            headers.remove(p);
        }
        headers.extend(regions.iter().cloned());
        if prov.is_some() {
            headers.push(PROVENANCE_COLUMN.into());
        }
        let rows = subjects
            .iter()
            .map(|id| {
                let (mut f, vals) = cells.remove(id).expect("subject present");
                let p = prov.map(|p| f.remove(p));
                let mut row = f;
                for reg in &regions {
                    row.push(
                        vals.get(reg)
                            .cloned()
                            .ok_or_else(|| schema(format!("subject `{id}` has no value for region `{reg}`")))?,
                    );
                }
                row.extend(p);
                Ok(row)
            })
            .collect::<Result<Vec<_>>>()?;
        let t = Table { headers, rows };
        t.check_unique_headers()?;
        Ok(t)
    }
}

/// Wide table of one or more datasets (e.g. generated cohorts).
pub fn datasets_to_table(datasets: &[SiteDataset<f64>]) -> Result<Table> {
    let first = datasets
        .first()
        .ok_or_else(|| Error::InsufficientData("no datasets to write".into()))?;
    let covariates = first.covariate_names().to_vec();
    let regions = first.regions();
    let mut headers = vec![SUBJECT.to_string(), SITE.to_string()];
    headers.extend(covariates.iter().cloned());
    headers.extend(regions.iter().cloned());
    let mut rows = Vec::new();
    for d in datasets {
        if d.covariate_names()[..] != covariates[..] || d.regions() != regions {
            return Err(schema(format!("dataset `{}` has a different layout", d.site_id())));
        }
        for r in d.records() {
            let mut row = vec![r.subject_id.clone(), d.site_id().to_string()];
            row.extend(r.covariates.values().iter().map(|&v| format_cell(v)));
            row.extend(r.metrics.values().map(|&v| format_cell(v)));
            rows.push(row);
        }
    }
    Ok(Table { headers, rows })
}
