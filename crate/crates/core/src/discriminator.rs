//! `(n + 1)`-class classifier over image-mask pairs.
//!
//! Classes `0..n` are the real disease classes of a ground-truth pair; class
//! `n` means "the mask was produced by the segmentor". With no class labels
//! `n = 1` and this is an ordinary real/fake discriminator.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Mutex;

use candle_core::{DType, Tensor, D};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{
    global_avg_pool, leaky_relu, load_tensors, save_tensors, BatchNorm2d, Conv2d, Linear, Mode,
    ParamStore,
};
use crate::segmentor::{ckpt_error, expect_kind};
use crate::{Error, Result};

pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    pub n_real_classes: usize,
    pub input_size: usize,
    /// Width of the first block; each later block doubles it.
    pub base_channels: usize,
    /// Number of stride-2 conv blocks.
    pub blocks: usize,
    pub dropout_rate: f64,
}

impl DiscriminatorConfig {
    /// Full-scale plan: five blocks, 32 to 512 channels.
    pub fn new(n_real_classes: usize, input_size: usize) -> Self {
        Self {
            n_real_classes,
            input_size,
            base_channels: 32,
            blocks: 5,
            dropout_rate: 0.4,
        }
    }

    pub fn with_base_channels(mut self, base_channels: usize) -> Self {
        self.base_channels = base_channels;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_real_classes == 0 {
            return Err(Error::InvalidArgument("need at least one real class".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidArgument(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        if self.base_channels == 0 || self.blocks == 0 {
            return Err(Error::InvalidArgument("empty discriminator".into()));
        }
        if self.input_size == 0 || self.input_size % (1 << self.blocks) != 0 {
            return Err(Error::InvalidArgument(format!(
                "input size {} not divisible by 2^{}",
                self.input_size, self.blocks
            )));
        }
        Ok(())
    }
}

/// Logits `(B, n + 1)`.
pub struct DiscriminatorOutput {
    pub logits: Tensor,
}

impl DiscriminatorOutput {
    pub fn n_real_classes(&self) -> usize {
        self.logits.dims()[1] - 1
    }

    /// Row-wise softmax, `(B, n + 1)`.
    pub fn probs(&self) -> Result<Tensor> {
        softmax_rows(&self.logits)
    }

    /// `p(z = n)` per sample, `(B,)`.
    pub fn prob_predicted(&self) -> Result<Tensor> {
        let n = self.n_real_classes();
        Ok(self.probs()?.narrow(1, n, 1)?.squeeze(1)?)
    }

    /// `p(z = i)` for a real class `i < n`, `(B,)`.
    pub fn prob_real_class(&self, i: usize) -> Result<Tensor> {
        let n = self.n_real_classes();
        if i >= n {
            return Err(Error::InvalidArgument(format!(
                "class {i} is not a real class (n = {n})"
            )));
        }
        Ok(self.probs()?.narrow(1, i, 1)?.squeeze(1)?)
    }

    /// Most probable real class per sample, ignoring the predicted class.
    pub fn predicted_classes(&self) -> Result<Vec<usize>> {
        let n = self.n_real_classes();
        let real = self.logits.narrow(1, 0, n)?;
        let idx: Vec<u32> = real.argmax(D::Minus1)?.to_vec1()?;
        Ok(idx.into_iter().map(|i| i as usize).collect())
    }
}

/// Softmax over the last axis of a `(B, K)` tensor with max subtraction.
/// The subtracted maximum is detached; softmax is invariant to it.
pub fn softmax_rows(logits: &Tensor) -> Result<Tensor> {
    let max = logits.max_keepdim(D::Minus1)?.detach();
    let e = logits.broadcast_sub(&max)?.exp()?;
    let sum = e.sum_keepdim(D::Minus1)?;
    Ok(e.broadcast_div(&sum)?)
}

/// Softmax of one logit vector.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = e.iter().sum();
    e.into_iter().map(|v| v / sum).collect()
}

struct Block {
    conv: Conv2d,
    bn: BatchNorm2d,
}

pub struct Discriminator {
    config: DiscriminatorConfig,
    store: ParamStore,
    blocks: Vec<Block>,
    head: Linear,
    dropout_rng: Mutex<ChaCha8Rng>,
}

impl Discriminator {
    pub fn new(config: DiscriminatorConfig, seed: u64) -> Result<Self> {
        Self::with_dtype(config, seed, DType::F32)
    }

    pub fn with_dtype(config: DiscriminatorConfig, seed: u64, dtype: DType) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new(dtype, seed);
        let mut root = store.root();
        let mut blocks = Vec::with_capacity(config.blocks);
        let mut cin = 2;
        for k in 0..config.blocks {
            let cout = config.base_channels << k;
            let mut path = root.pp(format!("block.{k}"));
            blocks.push(Block {
                conv: Conv2d::new(path.pp("conv"), cin, cout, 3, 2, 1, false)?,
                bn: BatchNorm2d::new(path.pp("bn"), cout)?,
            });
            cin = cout;
        }
        let head = Linear::new(root.pp("head"), cin, config.n_real_classes + 1)?;
        Ok(Self {
            config,
            store,
            blocks,
            head,
            dropout_rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed ^ 0xD0D0_D0D0)),
        })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn num_params(&self) -> usize {
        self.store.num_params()
    }

    /// Reseeds the dropout stream.
    pub fn reseed_dropout(&self, seed: u64) {
        *self.dropout_rng.lock().expect("dropout rng") = ChaCha8Rng::seed_from_u64(seed);
    }

    pub fn dropout_rng_state(&self) -> ChaCha8Rng {
        self.dropout_rng.lock().expect("dropout rng").clone()
    }

    pub fn set_dropout_rng_state(&self, rng: ChaCha8Rng) {
        *self.dropout_rng.lock().expect("dropout rng") = rng;
    }

    /// Classifies the pairs `(x, mask)`, both `(B, 1, m, m)`.
    pub fn forward(&self, x: &Tensor, mask: &Tensor, mode: Mode) -> Result<DiscriminatorOutput> {
        let m = self.config.input_size;
        if x.dims() != mask.dims() {
            return Err(Error::shape(format!(
                "image {:?} and mask {:?} differ",
                x.dims(),
                mask.dims()
            )));
        }
        let (_, c, h, w) = x.dims4()?;
        if (c, h, w) != (1, m, m) {
            return Err(Error::shape(format!(
                "discriminator expects (B, 1, {m}, {m}), got {:?}",
                x.dims()
            )));
        }
        let dtype = self.store.dtype();
        let mut h = Tensor::cat(&[&x.to_dtype(dtype)?, &mask.to_dtype(dtype)?], 1)?;
        for block in &self.blocks {
            h = leaky_relu(&block.bn.forward(&block.conv.forward(&h)?, mode)?, LEAKY_SLOPE)?;
        }
        if mode.is_train() && self.config.dropout_rate > 0.0 {
            h = h.broadcast_mul(&self.dropout_mask(h.dims(), dtype)?)?;
        }
        let logits = self.head.forward(&global_avg_pool(&h)?)?;
        Ok(DiscriminatorOutput { logits })
    }

    /// Inverted-dropout multiplier: `0` with probability `rate`, otherwise
    /// `1 / (1 - rate)`.
    fn dropout_mask(&self, dims: &[usize], dtype: DType) -> Result<Tensor> {
        let rate = self.config.dropout_rate;
        let keep = 1.0 / (1.0 - rate);
        let len: usize = dims.iter().product();
        let mut rng = self.dropout_rng.lock().expect("dropout rng");
        let data: Vec<f64> = (0..len)
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect();
        Ok(Tensor::from_vec(data, dims, self.store.device())?.to_dtype(dtype)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = BTreeMap::from([
            ("kind".to_string(), "discriminator".to_string()),
            ("config".to_string(), serde_json::to_string(&self.config)?),
            ("crate_version".to_string(), crate::VERSION.to_string()),
        ]);
        save_tensors(path, &self.store.snapshot()?, meta)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (tensors, meta) = load_tensors(path)?;
        expect_kind(path, &meta, "discriminator")?;
        let config: DiscriminatorConfig = serde_json::from_str(
            meta.get("config")
                .ok_or_else(|| ckpt_error(path, "missing config"))?,
        )?;
        let dtype = tensors.values().next().map_or(DType::F32, Tensor::dtype);
        let model = Self::with_dtype(config, 0, dtype)?;
        model.store.restore(&tensors)?;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_examples() {
        let p = softmax(&[1.0, 0.0, 0.0]);
        assert!((p[0] - 0.576117).abs() < 1e-6);
        assert!((p[1] - 0.211942).abs() < 1e-6);
        let p = softmax(&[0.0, 0.0, 3f64.ln()]);
        assert!((p[2] - 0.6).abs() < 1e-12);
        let p = softmax(&[2f64.ln(), 0.0, 0.0]);
        assert!((p[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn rejects_predicted_class_as_real() {
        let logits = Tensor::new(&[[0.0f64, 0.0, 0.0]], &candle_core::Device::Cpu).unwrap();
        let out = DiscriminatorOutput { logits };
        assert!(out.prob_real_class(2).is_err());
        assert!(out.prob_real_class(1).is_ok());
    }
}
