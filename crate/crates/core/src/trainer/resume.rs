//! Resumable checkpoints.
//!
//! A checkpoint directory holds the weights of each network, its optimizer
//! moments, the best-validation weights when there are any, and
//! `state.json` with the run state and RNG streams. Restoring into a fresh
//! session built from the same config continues bit-identically.

use std::collections::BTreeMap;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{load_tensors, save_tensors};
use crate::{Error, Result};

use super::{TrainConfig, TrainState, Trainer};

#[derive(Serialize, Deserialize)]
struct SavedState {
    config: TrainConfig,
    state: TrainState,
    dropout_rng: Option<ChaCha8Rng>,
    has_best: bool,
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

fn ckpt(path: &Path, message: impl Into<String>) -> Error {
    Error::Checkpoint {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

impl Trainer<'_> {
    pub fn save_checkpoint(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        self.segmentor.save(&dir.join("segmentor.safetensors"))?;
        if let Some(d) = self.discriminator {
            d.save(&dir.join("discriminator.safetensors"))?;
        }
        for (name, opt) in self.optimizer_states() {
            let (step, tensors) = opt.state();
            let meta = BTreeMap::from([
                ("kind".to_string(), "adam".to_string()),
                ("step".to_string(), step.to_string()),
            ]);
            save_tensors(&dir.join(format!("optim_{name}.safetensors")), &tensors, meta)?;
        }
        if let Some((seg, disc)) = &self.best {
            let meta = || BTreeMap::from([("kind".to_string(), "best".to_string())]);
            save_tensors(&dir.join("best_segmentor.safetensors"), seg, meta())?;
            if let Some(disc) = disc {
                save_tensors(&dir.join("best_discriminator.safetensors"), disc, meta())?;
            }
        }
        let saved = SavedState {
            config: self.cfg.clone(),
            state: self.state.clone(),
            dropout_rng: self.discriminator.map(|d| d.dropout_rng_state()),
            has_best: self.best.is_some(),
        };
        let path = dir.join("state.json");
        std::fs::write(&path, serde_json::to_string_pretty(&saved)?).map_err(io(&path))
    }

    /// Loads a checkpoint written by [`Trainer::save_checkpoint`] into this
    /// session. The configs must agree except for `epochs`.
    pub fn restore_checkpoint(&mut self, dir: &Path) -> Result<()> {
        let path = dir.join("state.json");
        let text = std::fs::read_to_string(&path).map_err(io(&path))?;
        let saved: SavedState = serde_json::from_str(&text)?;
        let mut expected = self.cfg.clone();
        expected.epochs = saved.config.epochs;
        if expected != saved.config {
            return Err(ckpt(&path, "training config differs from the checkpoint"));
        }
        if saved.dropout_rng.is_some() != self.discriminator.is_some() {
            return Err(ckpt(&path, "checkpoint and session disagree on the discriminator"));
        }

        let load_weights = |file: &str, store: &crate::nn::ParamStore| -> Result<()> {
            let (tensors, _) = load_tensors(&dir.join(file))?;
            store.restore(&tensors)
        };
        load_weights("segmentor.safetensors", self.segmentor.store())?;
        if let Some(d) = self.discriminator {
            load_weights("discriminator.safetensors", d.store())?;
        }
        let load_opt = |name: &str| -> Result<(u64, BTreeMap<String, candle_core::Tensor>)> {
            let p = dir.join(format!("optim_{name}.safetensors"));
            let (tensors, meta) = load_tensors(&p)?;
            let step = meta
                .get("step")
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| ckpt(&p, "missing optimizer step"))?;
            Ok((step, tensors))
        };
        let (step, tensors) = load_opt("segmentor")?;
        self.seg_opt.load_state(step, &tensors)?;
        if let Some(opt) = self.disc_opt.as_mut() {
            let (step, tensors) = load_opt("discriminator")?;
            opt.load_state(step, &tensors)?;
        }
        self.best = if saved.has_best {
            let (seg, _) = load_tensors(&dir.join("best_segmentor.safetensors"))?;
            let disc = if self.discriminator.is_some() {
                Some(load_tensors(&dir.join("best_discriminator.safetensors"))?.0)
            } else {
                None
            };
            Some((seg, disc))
        } else {
            None
        };
        if let (Some(d), Some(rng)) = (self.discriminator, saved.dropout_rng) {
            d.set_dropout_rng_state(rng);
        }
        self.state = saved.state;
        Ok(())
    }
}
