//! Sequential grids of runs.
//!
//! A grid file uses the run-config syntax plus three list keys,
//! `datasets`, `variants` and `losses` (comma separated). Every other key
//! applies to all runs. Runs go to `<out>/<dataset>_<variant>_<loss>`;
//! a run whose directory holds a `DONE` marker is skipped, so an
//! interrupted sweep can simply be restarted.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::data::DatasetKind;
use crate::losses::LossKind;
use crate::segmentor::make_variant;
use crate::{Error, Result};

use super::config::RunConfig;
use super::report::report;
use super::run::{run, DONE_MARKER};

#[derive(Clone, Debug, PartialEq)]
pub struct SweepGrid {
    pub base: RunConfig,
    pub datasets: Vec<DatasetKind>,
    pub variants: Vec<String>,
    pub losses: Vec<LossKind>,
}

impl SweepGrid {
    pub fn parse(text: &str) -> Result<Self> {
        let mut base = RunConfig::default();
        let (mut datasets, mut variants, mut losses) = (None, None, None);
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let content = raw.trim();
            if content.is_empty() || content.starts_with('#') {
                continue;
            }
            let err = |message: String| Error::Config { line, message };
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got `{content}`")))?;
            let (key, value) = (key.trim(), value.trim());
            let items = || value.split(',').map(str::trim).filter(|s| !s.is_empty());
            match key {
                "datasets" => {
                    datasets = Some(
                        items()
                            .map(|s| s.parse::<DatasetKind>())
                            .collect::<Result<Vec<_>>>()
                            .map_err(|e| err(format!("datasets: {e}")))?,
                    )
                }
                "variants" => {
                    let v: Vec<String> = items().map(String::from).collect();
                    for name in &v {
                        make_variant(name).map_err(|e| err(format!("variants: {e}")))?;
                    }
                    variants = Some(v);
                }
                "losses" => {
                    losses = Some(
                        items()
                            .map(|s| s.parse::<LossKind>())
                            .collect::<Result<Vec<_>>>()
                            .map_err(|e| err(format!("losses: {e}")))?,
                    )
                }
                "dataset" | "variant" | "loss" => {
                    return Err(err(format!("{key}: use `{key}s` in a grid file")))
                }
                _ => base.set(key, value).map_err(err)?,
            }
        }
        Ok(Self {
            datasets: need(datasets, "datasets")?,
            variants: need(variants, "variants")?,
            losses: need(losses, "losses")?,
            base,
        })
    }

    /// `(directory name, config)` for every cell, datasets outermost.
    pub fn runs(&self) -> Vec<(String, RunConfig)> {
        let mut out = Vec::new();
        for &d in &self.datasets {
            for v in &self.variants {
                for &l in &self.losses {
                    let mut cfg = self.base.clone();
                    cfg.dataset = d;
                    cfg.variant = v.clone();
                    cfg.train.loss = l;
                    out.push((format!("{}_{}_{}", d.name(), v, l.name()), cfg));
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SweepOutcome {
    pub completed: Vec<PathBuf>,
    pub skipped: Vec<PathBuf>,
    pub failed: Vec<(PathBuf, String)>,
}

/// Runs every cell of `grid` under `out`, then writes `summary.md`,
/// `summary.csv` and, when runs failed, `failures.txt`.
pub fn sweep(grid: &SweepGrid, out: &Path) -> Result<SweepOutcome> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut outcome = SweepOutcome::default();
    for (name, cfg) in grid.runs() {
        let dir = out.join(&name);
        if dir.join(DONE_MARKER).exists() {
            log::info!("{name}: already done");
            outcome.skipped.push(dir);
            continue;
        }
        log::info!("{name}: running");
        match run(&cfg, &dir, true) {
            Ok(_) => outcome.completed.push(dir),
            Err(e) => {
                log::error!("{name}: {e}");
                outcome.failed.push((dir, e.to_string()));
            }
        }
    }
    let finished: Vec<PathBuf> = outcome
        .completed
        .iter()
        .chain(&outcome.skipped)
        .cloned()
        .collect();
    if !finished.is_empty() {
        let table = report(&finished)?;
        write(&out.join("summary.md"), &table.to_markdown())?;
        write(&out.join("summary.csv"), &table.to_csv())?;
    }
    let failures = out.join("failures.txt");
    if outcome.failed.is_empty() {
        if failures.exists() {
            std::fs::remove_file(&failures).map_err(|e| Error::io(&failures, e))?;
        }
    } else {
        let mut text = String::new();
        for (dir, e) in &outcome.failed {
            let _ = writeln!(text, "{}\t{e}", dir.display());
        }
        write(&failures, &text)?;
    }
    Ok(outcome)
}

fn need<T>(v: Option<Vec<T>>, key: &str) -> Result<Vec<T>> {
    v.filter(|v| !v.is_empty()).ok_or_else(|| Error::Config {
        line: 0,
        message: format!("{key}: missing or empty"),
    })
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
