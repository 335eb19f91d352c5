//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Every key is
//! optional; unknown or repeated keys are errors that carry the line number.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{DatasetKind, DatasetSpec};
use crate::discriminator::DiscriminatorConfig;
use crate::segmentor::{make_variant, SegmentorConfig};
use crate::trainer::TrainConfig;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RunMode {
    SegOnly,
    MultiTask,
}

impl RunMode {
    pub fn name(self) -> &'static str {
        match self {
            RunMode::SegOnly => "seg-only",
            RunMode::MultiTask => "multi-task",
        }
    }
}

impl FromStr for RunMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "seg-only" => Ok(RunMode::SegOnly),
            "multi-task" => Ok(RunMode::MultiTask),
            other => Err(Error::UnknownName {
                kind: "mode",
                name: other.to_string(),
            }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub mode: RunMode,
    pub dataset: DatasetKind,
    pub data_root: Option<PathBuf>,
    pub synth_count: usize,
    pub variant: String,
    pub input_size: usize,
    pub base_channels: usize,
    pub disc_base_channels: usize,
    pub dropout: f64,
    pub overlays: usize,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: RunMode::SegOnly,
            dataset: DatasetKind::Synth,
            data_root: None,
            synth_count: 200,
            variant: "PPAU-Net".into(),
            input_size: 128,
            base_channels: 32,
            disc_base_channels: 32,
            dropout: 0.4,
            overlays: 4,
            train: TrainConfig::default(),
        }
    }
}

/// Documented keys with their meaning, in snapshot order.
pub const KEYS: &[(&str, &str)] = &[
    ("mode", "seg-only | multi-task"),
    ("dataset", "MCX | SCX | JCX | CCX | SYNTH"),
    ("data_root", "dataset root; defaults to $LUNGSEG_DATA_ROOT"),
    ("synth_count", "number of synthetic samples"),
    ("variant", "U-Net, PU-Net, ProgU-Net, AU-Net, PAU-Net, ProgAU-Net, PPU-Net, PPAU-Net"),
    ("loss", "XE | DICE | TV | XETV | KLTV"),
    ("input_size", "image side length, multiple of 16"),
    ("base_channels", "segmentor width of the first stage"),
    ("disc_base_channels", "discriminator width of the first block"),
    ("dropout", "discriminator dropout rate"),
    ("epochs", "training epochs"),
    ("batch_size", "mini-batch size"),
    ("lr_segmentor", "segmentor learning rate"),
    ("lr_discriminator", "discriminator learning rate"),
    ("labeled_fraction", "share of training samples with labels (multi-task)"),
    ("seed", "master seed"),
    ("checkpoint_every", "epochs between checkpoints, 0 = only at the end"),
    ("threshold", "binarisation threshold"),
    ("loss_a", "weight of the KL (or XE) term"),
    ("loss_b", "weight of the Tversky term"),
    ("loss_c", "weight of the adversarial term"),
    ("tversky_alpha", "false-positive weight"),
    ("tversky_beta", "false-negative weight"),
    ("epsilon", "Tversky smoothing"),
    ("kappa", "KL clamp"),
    ("overlays", "number of overlay images written"),
];

fn parse_value<T: FromStr>(key: &str, value: &str) -> std::result::Result<T, String>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| format!("{key}: cannot parse `{value}`: {e}"))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::BTreeSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let content = raw.trim();
            if content.is_empty() || content.starts_with('#') {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| Error::Config {
                line,
                message: format!("expected `key = value`, got `{content}`"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) && KEYS.iter().any(|(k, _)| *k == key) {
                return Err(Error::Config {
                    line,
                    message: format!("{key}: set more than once"),
                });
            }
            cfg.set(key, value)
                .map_err(|message| Error::Config { line, message })?;
        }
        cfg.validate().map_err(|e| Error::Config {
            line: 0,
            message: e.to_string(),
        })?;
        Ok(cfg)
    }

    /// Applies one key. The error message names the key.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let t = &mut self.train;
        let l = &mut t.loss_config;
        match key {
            "mode" => self.mode = parse_value(key, value)?,
            "dataset" => self.dataset = parse_value(key, value)?,
            "data_root" => self.data_root = Some(PathBuf::from(value)),
            "synth_count" => self.synth_count = parse_value(key, value)?,
            "variant" => {
                make_variant(value).map_err(|e| format!("{key}: {e}"))?;
                self.variant = value.to_string();
            }
            "loss" => t.loss = parse_value(key, value)?,
            "input_size" => self.input_size = parse_value(key, value)?,
            "base_channels" => self.base_channels = parse_value(key, value)?,
            "disc_base_channels" => self.disc_base_channels = parse_value(key, value)?,
            "dropout" => self.dropout = parse_value(key, value)?,
            "epochs" => t.epochs = parse_value(key, value)?,
            "batch_size" => t.batch_size = parse_value(key, value)?,
            "lr_segmentor" => t.lr_segmentor = parse_value(key, value)?,
            "lr_discriminator" => t.lr_discriminator = parse_value(key, value)?,
            "labeled_fraction" => t.labeled_fraction = parse_value(key, value)?,
            "seed" => t.seed = parse_value(key, value)?,
            "checkpoint_every" => t.checkpoint_every = parse_value(key, value)?,
            "threshold" => t.threshold = parse_value(key, value)?,
            "loss_a" => l.a = parse_value(key, value)?,
            "loss_b" => l.b = parse_value(key, value)?,
            "loss_c" => l.c = parse_value(key, value)?,
            "tversky_alpha" => l.alpha = parse_value(key, value)?,
            "tversky_beta" => l.beta = parse_value(key, value)?,
            "epsilon" => l.epsilon = parse_value(key, value)?,
            "kappa" => l.kappa = parse_value(key, value)?,
            "overlays" => self.overlays = parse_value(key, value)?,
            other => return Err(format!("unknown key `{other}`")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.segmentor_config()?.validate()?;
        if self.mode == RunMode::MultiTask {
            self.discriminator_config(2).validate()?;
        }
        if !(self.train.threshold > 0.0 && self.train.threshold < 1.0) {
            return Err(Error::InvalidArgument("threshold outside (0, 1)".into()));
        }
        if self.dataset == DatasetKind::Synth && ![32, 64, 128].contains(&self.input_size) {
            return Err(Error::InvalidArgument(
                "synthetic data comes in sizes 32, 64 and 128".into(),
            ));
        }
        Ok(())
    }

    pub fn segmentor_config(&self) -> Result<SegmentorConfig> {
        Ok(make_variant(&self.variant)?.with_size(self.input_size, self.base_channels))
    }

    pub fn discriminator_config(&self, n_real_classes: usize) -> DiscriminatorConfig {
        let mut cfg = DiscriminatorConfig::new(n_real_classes, self.input_size)
            .with_base_channels(self.disc_base_channels);
        cfg.dropout_rate = self.dropout;
        cfg
    }

    pub fn dataset_spec(&self) -> DatasetSpec {
        let mut spec = DatasetSpec::new(self.dataset, self.input_size, self.train.seed);
        if self.data_root.is_some() {
            spec.root = self.data_root.clone();
        }
        spec.synth_count = self.synth_count;
        spec
    }

    /// Model label used in reports, e.g. `APPAU-Net-KLTV`.
    pub fn model_label(&self) -> String {
        let prefix = if self.mode == RunMode::MultiTask { "A" } else { "" };
        format!("{prefix}{}", self.variant)
    }

    /// Every key with its current value, one per line, parseable by
    /// [`RunConfig::parse`].
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let l = &t.loss_config;
        let values: Vec<(&str, String)> = vec![
            ("mode", self.mode.name().into()),
            ("dataset", self.dataset.name().into()),
            (
                "data_root",
                self.data_root
                    .as_ref()
                    .map(|p| p.display().to_string())
                    .unwrap_or_default(),
            ),
            ("synth_count", self.synth_count.to_string()),
            ("variant", self.variant.clone()),
            ("loss", t.loss.name().into()),
            ("input_size", self.input_size.to_string()),
            ("base_channels", self.base_channels.to_string()),
            ("disc_base_channels", self.disc_base_channels.to_string()),
            ("dropout", self.dropout.to_string()),
            ("epochs", t.epochs.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("lr_segmentor", t.lr_segmentor.to_string()),
            ("lr_discriminator", t.lr_discriminator.to_string()),
            ("labeled_fraction", t.labeled_fraction.to_string()),
            ("seed", t.seed.to_string()),
            ("checkpoint_every", t.checkpoint_every.to_string()),
            ("threshold", t.threshold.to_string()),
            ("loss_a", l.a.to_string()),
            ("loss_b", l.b.to_string()),
            ("loss_c", l.c.to_string()),
            ("tversky_alpha", l.alpha.to_string()),
            ("tversky_beta", l.beta.to_string()),
            ("epsilon", l.epsilon.to_string()),
            ("kappa", l.kappa.to_string()),
            ("overlays", self.overlays.to_string()),
        ];
        let mut out = String::new();
        for (k, v) in values {
            if k == "data_root" && v.is_empty() {
                continue;
            }
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::LossKind;

    #[test]
    fn round_trip() {
        let cfg = RunConfig::parse("mode = multi-task\nloss = TV\nepochs = 7\n# comment\n").unwrap();
        assert_eq!(cfg.mode, RunMode::MultiTask);
        assert_eq!(cfg.train.loss, LossKind::Tv);
        assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn unknown_key_names_line() {
        match RunConfig::parse("epochs = 3\nlearning_rate = 1\n") {
            Err(Error::Config { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("learning_rate"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_loss_names_field() {
        match RunConfig::parse("loss = HINGE\n") {
            Err(Error::Config { line: 1, message }) => assert!(message.contains("loss")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn repeated_key_is_rejected() {
        assert!(RunConfig::parse("seed = 1\nseed = 2\n").is_err());
    }
}
