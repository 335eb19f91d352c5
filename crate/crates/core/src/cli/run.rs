//! One training run and its artifact directory.
//!
//! ```text
//! <out>/config.txt            every key, reloadable
//! <out>/run.json              seed, code version, data hash, split sizes
//! <out>/checkpoint/           resumable trainer state
//! <out>/segmentor.safetensors selected weights (and discriminator.safetensors)
//! <out>/trace.csv             epoch,step,term,value
//! <out>/metrics.csv|md|json   test-split results
//! <out>/overlays/*.png        prediction vs ground truth
//! <out>/DONE                  written last
//! ```

use std::path::Path;

use serde::Serialize;

use crate::data::{load_dataset, Dataset};
use crate::discriminator::Discriminator;
use crate::metrics::{binarize, MetricReport};
use crate::segmentor::Segmentor;
use crate::trainer::{evaluate, TrainState, Trainer};
use crate::{Error, Result};

use super::config::{RunConfig, RunMode};
use super::overlay::write_overlay;
use super::report::{ReportRow, ReportTable, METRICS_JSON};

pub const DONE_MARKER: &str = "DONE";

#[derive(Serialize)]
struct RunInfo<'a> {
    version: &'a str,
    seed: u64,
    dataset: &'a str,
    model: String,
    loss: &'a str,
    mode: &'a str,
    train_hash: String,
    split_sizes: (usize, usize, usize),
    labeled: Option<usize>,
}

pub struct RunOutcome {
    pub report: MetricReport,
    pub state: TrainState,
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Trains and evaluates per `cfg`, writing artifacts into `out`. With
/// `resume`, continues from `out/checkpoint` when present.
pub fn run(cfg: &RunConfig, out: &Path, resume: bool) -> Result<RunOutcome> {
    cfg.validate()?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let done = out.join(DONE_MARKER);
    if done.exists() {
        std::fs::remove_file(&done).map_err(|e| Error::io(&done, e))?;
    }
    write(&out.join("config.txt"), &cfg.to_text())?;

    let splits = load_dataset(&cfg.dataset_spec())?;
    let seed = cfg.train.seed;
    let segmentor = Segmentor::new(cfg.segmentor_config()?, seed)?;
    let discriminator = match cfg.mode {
        RunMode::SegOnly => None,
        RunMode::MultiTask => Some(Discriminator::new(
            cfg.discriminator_config(splits.train.n_classes().max(1)),
            seed.wrapping_add(1),
        )?),
    };
    let mut trainer = match &discriminator {
        None => Trainer::supervised(&segmentor, &splits.train, cfg.train.clone())?,
        Some(d) => Trainer::semisupervised(&segmentor, d, &splits.train, cfg.train.clone())?,
    };

    let info = RunInfo {
        version: crate::VERSION,
        seed,
        dataset: cfg.dataset.name(),
        model: cfg.model_label(),
        loss: cfg.train.loss.name(),
        mode: cfg.mode.name(),
        train_hash: splits.train.content_hash(),
        split_sizes: splits.sizes(),
        labeled: discriminator.as_ref().map(|_| trainer.partition().labeled.len()),
    };
    write(&out.join("run.json"), &serde_json::to_string_pretty(&info)?)?;

    let ckpt = out.join("checkpoint");
    if resume && ckpt.join("state.json").exists() {
        trainer.restore_checkpoint(&ckpt)?;
        log::info!("resumed at epoch {}", trainer.state().epoch);
    }
    let every = cfg.train.checkpoint_every;
    let total = cfg.train.epochs;
    let fitted = trainer.fit(&splits.train, Some(&splits.val), |t| {
        let epoch = t.state().epoch;
        log::info!("epoch {epoch}/{total}");
        if (every > 0 && epoch % every == 0) || epoch == total {
            t.save_checkpoint(&ckpt)?;
        }
        Ok(())
    });
    write(&out.join("trace.csv"), &trainer.state().trace_csv())?;
    fitted?;
    let state = trainer.into_state();

    segmentor.save(&out.join("segmentor.safetensors"))?;
    if let Some(d) = &discriminator {
        d.save(&out.join("discriminator.safetensors"))?;
    }
    let report = write_evaluation(cfg, out, &segmentor, discriminator.as_ref(), &splits.test)?;
    write(&done, "")?;
    Ok(RunOutcome { report, state })
}

/// Re-evaluates the saved weights of a finished run on its test split.
pub fn evaluate_run(out: &Path, cfg: Option<&RunConfig>) -> Result<MetricReport> {
    let cfg = match cfg {
        Some(c) => c.clone(),
        None => {
            let path = out.join("config.txt");
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            RunConfig::parse(&text)?
        }
    };
    let splits = load_dataset(&cfg.dataset_spec())?;
    let segmentor = Segmentor::load(&out.join("segmentor.safetensors"))?;
    let discriminator = match cfg.mode {
        RunMode::SegOnly => None,
        RunMode::MultiTask => Some(Discriminator::load(&out.join("discriminator.safetensors"))?),
    };
    write_evaluation(&cfg, out, &segmentor, discriminator.as_ref(), &splits.test)
}

fn write_evaluation(
    cfg: &RunConfig,
    out: &Path,
    segmentor: &Segmentor,
    discriminator: Option<&Discriminator>,
    test: &Dataset,
) -> Result<MetricReport> {
    let report = evaluate(segmentor, discriminator, test, cfg.train.threshold)?;
    let row = ReportRow {
        dataset: cfg.dataset.name().into(),
        model: cfg.model_label(),
        loss: cfg.train.loss.name().into(),
        mode: cfg.mode.name().into(),
        class_names: test.class_names.clone(),
        metrics: report.clone(),
    };
    write(&out.join(METRICS_JSON), &serde_json::to_string_pretty(&row)?)?;
    let table = ReportTable::new(vec![row])?;
    write(&out.join("metrics.csv"), &table.to_csv())?;
    write(&out.join("metrics.md"), &table.to_markdown())?;

    let n = cfg.overlays.min(test.len());
    if n > 0 {
        let dir = out.join("overlays");
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let images: Vec<_> = test.samples[..n].iter().map(|s| &s.image).collect();
        let maps = segmentor.predict(&images)?;
        for (s, map) in test.samples[..n].iter().zip(&maps) {
            let pred = binarize(map, cfg.train.threshold)?;
            let name = s.source_id.replace(['/', '\\'], "_");
            write_overlay(&dir.join(format!("{name}.png")), &s.image, s.mask.as_ref(), &pred)?;
        }
    }
    Ok(report)
}
