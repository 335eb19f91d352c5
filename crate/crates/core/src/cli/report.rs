//! Result tables merged from run directories.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::metrics::MetricReport;
use crate::{Error, Result};

/// File in each run directory holding its [`ReportRow`].
pub const METRICS_JSON: &str = "metrics.json";

/// Test-split results of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub dataset: String,
    pub model: String,
    pub loss: String,
    pub mode: String,
    pub class_names: Vec<String>,
    pub metrics: MetricReport,
}

impl ReportRow {
    fn key(&self) -> (&str, &str, &str) {
        (&self.dataset, &self.model, &self.loss)
    }
}

/// Rows sorted by `(dataset, model, loss)`; `best[i]` marks the highest DS
/// within row `i`'s dataset (ties all marked).
#[derive(Clone, Debug, PartialEq)]
pub struct ReportTable {
    pub rows: Vec<ReportRow>,
    pub best: Vec<bool>,
}

impl ReportTable {
    pub fn new(mut rows: Vec<ReportRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidArgument("no runs to report".into()));
        }
        rows.sort_by(|a, b| a.key().cmp(&b.key()));
        let best = rows
            .iter()
            .map(|r| {
                let top = rows
                    .iter()
                    .filter(|o| o.dataset == r.dataset)
                    .map(|o| o.metrics.ds)
                    .fold(f64::NEG_INFINITY, f64::max);
                r.metrics.ds == top
            })
            .collect();
        Ok(Self { rows, best })
    }

    fn has_classification(&self) -> bool {
        self.rows.iter().any(|r| r.metrics.classification.is_some())
    }

    /// Class-wise F1 column names, `F1[<class>]`, over all rows.
    fn class_columns(&self) -> Vec<String> {
        let mut names: Vec<String> = Vec::new();
        for r in &self.rows {
            for c in &r.class_names {
                if r.metrics.classification.is_some() && !names.contains(c) {
                    names.push(c.clone());
                }
            }
        }
        names
    }

    fn cells(&self, row: &ReportRow, decimals: usize) -> Vec<String> {
        let mut cells: Vec<String> = row
            .metrics
            .segmentation_values()
            .iter()
            .map(|v| format!("{v:.decimals$}"))
            .collect();
        if self.has_classification() {
            let cls = row.metrics.classification.as_ref();
            cells.push(cls.map_or(String::new(), |c| format!("{:.decimals$}", c.accuracy)));
            for name in self.class_columns() {
                let v = cls.and_then(|c| {
                    row.class_names
                        .iter()
                        .position(|n| *n == name)
                        .and_then(|i| c.f1.get(i))
                });
                cells.push(v.map_or(String::new(), |v| format!("{v:.decimals$}")));
            }
        }
        cells
    }

    fn header(&self) -> Vec<String> {
        let mut h: Vec<String> = MetricReport::SEGMENTATION_COLUMNS
            .iter()
            .map(|s| s.to_string())
            .collect();
        if self.has_classification() {
            h.push("ACC".into());
            h.extend(self.class_columns().into_iter().map(|c| format!("F1[{c}]")));
        }
        h
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("dataset,model,loss,best,{}\n", self.header().join(","));
        for (row, best) in self.rows.iter().zip(&self.best) {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                row.dataset,
                row.model,
                row.loss,
                u8::from(*best),
                self.cells(row, 6).join(",")
            );
        }
        out
    }

    /// Markdown table; the best-DS row of each dataset is bold.
    pub fn to_markdown(&self) -> String {
        let header = self.header();
        let mut out = format!("| Dataset | Model | {} |\n", header.join(" | "));
        let _ = writeln!(out, "|---|---|{}", "---|".repeat(header.len()));
        for (row, best) in self.rows.iter().zip(&self.best) {
            let model = format!("{}-{}", row.model, row.loss);
            let mut cells = vec![row.dataset.clone(), model];
            cells.extend(self.cells(row, 4));
            if *best {
                for c in cells.iter_mut().skip(1).filter(|c| !c.is_empty()) {
                    *c = format!("**{c}**");
                }
            }
            let _ = writeln!(out, "| {} |", cells.join(" | "));
        }
        out
    }
}

pub fn read_row(dir: &Path) -> Result<ReportRow> {
    let path = dir.join(METRICS_JSON);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Merges the runs in `dirs`. Every directory lacking metrics is listed in
/// the error.
pub fn report(dirs: &[PathBuf]) -> Result<ReportTable> {
    if dirs.is_empty() {
        return Err(Error::InvalidArgument("no run directories given".into()));
    }
    let mut rows = Vec::new();
    let mut missing = Vec::new();
    for d in dirs {
        match read_row(d) {
            Ok(r) => rows.push(r),
            Err(e) => missing.push(format!("{}: {e}", d.display())),
        }
    }
    if !missing.is_empty() {
        return Err(Error::Data(format!("missing run artifacts:\n  {}", missing.join("\n  "))));
    }
    ReportTable::new(rows)
}
