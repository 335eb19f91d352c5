//! Training objectives over probability maps.
//!
//! Every loss takes tensors of identical shape holding foreground
//! probabilities in `[0, 1]` and returns a differentiable scalar. Pixel
//! sums run over the whole minibatch. Logarithms are natural.

use std::fmt;
use std::str::FromStr;

use candle_core::{DType, Tensor, D};
use serde::{Deserialize, Serialize};

use crate::data::downsample_mask_tensor;
use crate::{Error, Result};

/// Clamp applied to probabilities before every log in the cross-entropy and
/// adversarial terms.
pub const PROB_CLAMP: f64 = 1e-7;

/// Loss hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Weight of the absolute-KL term (and of XE in XETV).
    pub a: f64,
    /// Weight of the Tversky term.
    pub b: f64,
    /// Weight of the segmentor's adversarial term.
    pub c: f64,
    /// Tversky false-positive weight.
    pub alpha: f64,
    /// Tversky false-negative weight.
    pub beta: f64,
    /// Guard added to the Tversky/Dice numerator and denominator.
    pub epsilon: f64,
    /// Both maps are clamped to `[kappa, 1 - kappa]` inside the KL term.
    pub kappa: f64,
    /// Side-output weights from the coarsest (m/8) to the finest (m) scale.
    pub side_weights: [f64; 4],
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            a: 1.0,
            b: 1.0,
            c: 0.1,
            alpha: 0.3,
            beta: 0.7,
            epsilon: 1e-6,
            kappa: 1e-4,
            side_weights: [0.125, 0.25, 0.5, 1.0],
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(format!("loss config: {msg}")));
        let all = [self.a, self.b, self.c, self.alpha, self.beta, self.epsilon, self.kappa];
        if all.iter().any(|v| !v.is_finite()) || self.side_weights.iter().any(|v| !v.is_finite())
        {
            return bad("non-finite value");
        }
        if self.a < 0.0 || self.b < 0.0 || self.c < 0.0 {
            return bad("a, b and c must be >= 0");
        }
        if self.alpha < 0.0 || self.beta < 0.0 {
            return bad("alpha and beta must be >= 0");
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1e-2) {
            return bad("epsilon must be a small positive number");
        }
        if !(self.kappa > 0.0 && self.kappa < 0.5) {
            return bad("kappa must lie in (0, 0.5)");
        }
        if self.side_weights.iter().any(|w| *w < 0.0) {
            return bad("side weights must be nonnegative");
        }
        if self.side_weights.windows(2).any(|w| w[1] < w[0]) {
            return bad("side weights must be nondecreasing with resolution");
        }
        Ok(())
    }
}

/// Segmentation loss selector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LossKind {
    Xe,
    Dice,
    Tv,
    Xetv,
    Kltv,
}

impl LossKind {
    pub const ALL: [LossKind; 5] = [
        LossKind::Xe,
        LossKind::Dice,
        LossKind::Tv,
        LossKind::Xetv,
        LossKind::Kltv,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Xe => "XE",
            LossKind::Dice => "DICE",
            LossKind::Tv => "TV",
            LossKind::Xetv => "XETV",
            LossKind::Kltv => "KLTV",
        }
    }

    pub fn apply(self, y: &Tensor, yhat: &Tensor, cfg: &LossConfig) -> Result<Tensor> {
        match self {
            LossKind::Xe => xe_loss(y, yhat),
            LossKind::Dice => dice_loss(y, yhat, cfg.epsilon),
            LossKind::Tv => tversky_loss(y, yhat, cfg),
            LossKind::Xetv => xetv_loss(y, yhat, cfg),
            LossKind::Kltv => kltv_loss(y, yhat, cfg),
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::UnknownName {
                kind: "loss",
                name: s.to_string(),
            })
    }
}

fn check_pair(y: &Tensor, yhat: &Tensor) -> Result<()> {
    if y.dims() != yhat.dims() {
        return Err(Error::shape(format!(
            "target {:?} vs prediction {:?}",
            y.dims(),
            yhat.dims()
        )));
    }
    if y.elem_count() == 0 {
        return Err(Error::shape("empty probability map"));
    }
    Ok(())
}

fn check_finite(t: &Tensor, what: &str) -> Result<()> {
    let s = t.detach().to_dtype(DType::F64)?.sum_all()?.to_scalar::<f64>()?;
    if s.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

/// `1 - (TP + eps) / (TP + alpha FP + beta FN + eps)` with soft counts
/// accumulated over every pixel of the batch.
pub fn tversky_loss(y: &Tensor, yhat: &Tensor, cfg: &LossConfig) -> Result<Tensor> {
    check_pair(y, yhat)?;
    check_finite(y, "target")?;
    check_finite(yhat, "prediction")?;
    let tp = (y * yhat)?.sum_all()?;
    let fp = (y.affine(-1.0, 1.0)? * yhat)?.sum_all()?;
    let fn_ = (y * yhat.affine(-1.0, 1.0)?)?.sum_all()?;
    let num = (&tp + cfg.epsilon)?;
    let den = (((tp + (fp * cfg.alpha)?)? + (fn_ * cfg.beta)?)? + cfg.epsilon)?;
    Ok((num / den)?.affine(-1.0, 1.0)?)
}

/// `sum |(y - yhat) ln(y / yhat)|` over all pixels, both maps clamped to
/// `[kappa, 1 - kappa]` first.
pub fn abs_kl_loss(y: &Tensor, yhat: &Tensor, cfg: &LossConfig) -> Result<Tensor> {
    check_pair(y, yhat)?;
    let lo = cfg.kappa;
    let hi = 1.0 - cfg.kappa;
    let y = y.clamp(lo, hi)?;
    let yhat = yhat.clamp(lo, hi)?;
    let diff = (&y - &yhat)?;
    let log_ratio = (y.log()? - yhat.log()?)?;
    Ok((diff * log_ratio)?.abs()?.sum_all()?)
}

/// `a * abs_kl + b * tversky`.
pub fn kltv_loss(y: &Tensor, yhat: &Tensor, cfg: &LossConfig) -> Result<Tensor> {
    let kl = abs_kl_loss(y, yhat, cfg)?;
    let tv = tversky_loss(y, yhat, cfg)?;
    Ok(((kl * cfg.a)? + (tv * cfg.b)?)?)
}

/// Pixel-mean binary cross-entropy, prediction clamped to
/// `[PROB_CLAMP, 1 - PROB_CLAMP]`.
pub fn xe_loss(y: &Tensor, yhat: &Tensor) -> Result<Tensor> {
    check_pair(y, yhat)?;
    let p = yhat.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)?;
    let pos = (y * p.log()?)?;
    let neg = (y.affine(-1.0, 1.0)? * p.affine(-1.0, 1.0)?.log()?)?;
    Ok((pos + neg)?.mean_all()?.neg()?)
}

/// Soft Dice loss `1 - (TP + eps) / ((sum y + sum yhat) / 2 + eps)`.
///
/// The guard sits where the Tversky guard sits, so this coincides with
/// [`tversky_loss`] at `alpha = beta = 0.5` up to rounding.
pub fn dice_loss(y: &Tensor, yhat: &Tensor, eps: f64) -> Result<Tensor> {
    check_pair(y, yhat)?;
    let tp = (y * yhat)?.sum_all()?;
    let total = (y.sum_all()? + yhat.sum_all()?)?;
    let num = (tp + eps)?;
    let den = total.affine(0.5, eps)?;
    Ok((num / den)?.affine(-1.0, 1.0)?)
}

/// `a * xe + b * tversky`.
pub fn xetv_loss(y: &Tensor, yhat: &Tensor, cfg: &LossConfig) -> Result<Tensor> {
    let xe = xe_loss(y, yhat)?;
    let tv = tversky_loss(y, yhat, cfg)?;
    Ok(((xe * cfg.a)? + (tv * cfg.b)?)?)
}

/// Weighted deep-supervision loss `sum_i w_i L(y_i, yhat_i)`.
///
/// `y` is the full-resolution binary mask and `sides` the four side outputs
/// from coarsest to finest; each side's target is `y` downsampled with the
/// majority rule of [`downsample_mask_tensor`]. Side `i` must have
/// resolution `m / 2^(3 - i)`.
pub fn side_output_loss(
    y: &Tensor,
    sides: &[Tensor],
    cfg: &LossConfig,
    kind: LossKind,
) -> Result<Tensor> {
    if sides.len() != 4 {
        return Err(Error::shape(format!("expected 4 side outputs, got {}", sides.len())));
    }
    let full = *y.dims().last().ok_or_else(|| Error::shape("scalar mask"))?;
    let mut total: Option<Tensor> = None;
    for (i, (side, w)) in sides.iter().zip(cfg.side_weights).enumerate() {
        let factor = 1usize << (3 - i);
        let res = *side.dims().last().ok_or_else(|| Error::shape("scalar side output"))?;
        if res * factor != full {
            return Err(Error::shape(format!(
                "side output {i} has resolution {res}, expected {}",
                full / factor
            )));
        }
        let target = downsample_mask_tensor(y, factor)?;
        let target = target.reshape(side.dims())?;
        let term = (kind.apply(&target, side, cfg)? * w)?;
        total = Some(match total {
            Some(t) => (t + term)?,
            None => term,
        });
    }
    Ok(total.expect("four sides"))
}

fn clamp_prob(p: &Tensor) -> Result<Tensor> {
    Ok(p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)?)
}

/// Segmentor's adversarial term: `mean(-ln(1 - p_fake))` where `p_fake` is
/// the discriminator's probability that `(x, S(x))` is a predicted pair.
pub fn segmentor_adv_loss(p_fake: &Tensor) -> Result<Tensor> {
    Ok(clamp_prob(p_fake)?.affine(-1.0, 1.0)?.log()?.mean_all()?.neg()?)
}

/// Supervised classification term `mean(-ln p(z = label))` over real
/// classes. `probs` is `(batch, n + 1)`; the last column is the predicted
/// class and is not a valid label.
pub fn discriminator_sup_loss(probs: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let labels: Vec<Option<usize>> = labels.iter().copied().map(Some).collect();
    discriminator_sup_loss_masked(probs, &labels)
}

/// As [`discriminator_sup_loss`], averaging only over rows with a label.
/// Unlabeled rows are multiplied by an exact zero weight.
pub fn discriminator_sup_loss_masked(probs: &Tensor, labels: &[Option<usize>]) -> Result<Tensor> {
    let (batch, classes) = probs.dims2()?;
    if labels.len() != batch {
        return Err(Error::shape(format!(
            "{} labels for a batch of {batch}",
            labels.len()
        )));
    }
    if classes < 2 {
        return Err(Error::shape("need at least one real class plus the predicted class"));
    }
    let n_real = classes - 1;
    let mut index = Vec::with_capacity(batch);
    let mut weight = Vec::with_capacity(batch);
    for l in labels {
        match l {
            Some(l) if *l >= n_real => {
                return Err(Error::InvalidArgument(format!(
                    "label {l} is not a real class (n = {n_real})"
                )))
            }
            Some(l) => {
                index.push(*l as u32);
                weight.push(1.0f64);
            }
            None => {
                index.push(0);
                weight.push(0.0);
            }
        }
    }
    let count: f64 = weight.iter().sum();
    if count == 0.0 {
        return Err(Error::InvalidArgument("no labeled samples in batch".into()));
    }
    let device = probs.device();
    let index = Tensor::from_vec(index, (batch, 1), device)?;
    let weight = Tensor::from_vec(weight, batch, device)?.to_dtype(probs.dtype())?;
    let picked = probs.gather(&index, D::Minus1)?.squeeze(D::Minus1)?;
    let nll = clamp_prob(&picked)?.log()?.neg()?;
    Ok(((nll * weight)?.sum_all()? / count)?)
}

/// Unsupervised discriminator term:
/// `mean(-ln(1 - p_fake_on_real)) + mean(-ln p_fake_on_pred)`.
pub fn discriminator_unsup_loss(p_fake_on_real: &Tensor, p_fake_on_pred: &Tensor) -> Result<Tensor> {
    let real = clamp_prob(p_fake_on_real)?
        .affine(-1.0, 1.0)?
        .log()?
        .mean_all()?
        .neg()?;
    let pred = clamp_prob(p_fake_on_pred)?.log()?.mean_all()?.neg()?;
    Ok((real + pred)?)
}
