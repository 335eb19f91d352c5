use candle_core::{Device, Tensor, Var};
use lungseg::losses::{self, LossConfig, LossKind};

use crate::{guard, out, slice, slice_mut, Failure, LsStatus, Outcome};

/// Segmentation loss selector.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LsLossKind {
    Xe = 0,
    Dice = 1,
    Tv = 2,
    Xetv = 3,
    Kltv = 4,
}

impl From<LsLossKind> for LossKind {
    fn from(k: LsLossKind) -> Self {
        match k {
            LsLossKind::Xe => LossKind::Xe,
            LsLossKind::Dice => LossKind::Dice,
            LsLossKind::Tv => LossKind::Tv,
            LsLossKind::Xetv => LossKind::Xetv,
            LsLossKind::Kltv => LossKind::Kltv,
        }
    }
}

/// Loss weights and constants; see `ls_loss_config_default`.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LsLossConfig {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub alpha: f64,
    pub beta: f64,
    pub epsilon: f64,
    pub kappa: f64,
    /// Coarsest (m/8) to finest (m).
    pub side_weights: [f64; 4],
}

impl From<LossConfig> for LsLossConfig {
    fn from(c: LossConfig) -> Self {
        Self {
            a: c.a,
            b: c.b,
            c: c.c,
            alpha: c.alpha,
            beta: c.beta,
            epsilon: c.epsilon,
            kappa: c.kappa,
            side_weights: c.side_weights,
        }
    }
}

impl From<LsLossConfig> for LossConfig {
    fn from(c: LsLossConfig) -> Self {
        Self {
            a: c.a,
            b: c.b,
            c: c.c,
            alpha: c.alpha,
            beta: c.beta,
            epsilon: c.epsilon,
            kappa: c.kappa,
            side_weights: c.side_weights,
        }
    }
}

fn tensor(values: &[f64]) -> Outcome<Tensor> {
    Ok(Tensor::from_slice(values, values.len(), &Device::Cpu)?)
}

fn scalar(t: &Tensor) -> Outcome<f64> {
    Ok(t.to_scalar::<f64>()?)
}

/// Writes the default configuration to `cfg`.
///
/// # Safety
/// `cfg` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ls_loss_config_default(cfg: *mut LsLossConfig) -> LsStatus {
    guard(|| {
        *out(cfg, "cfg")? = LossConfig::default().into();
        Ok(())
    })
}

/// Loss between a target map `y` and a prediction `yhat` of `n` pixels.
/// When `grad` is non-null it receives the `n` partial derivatives with
/// respect to `yhat`. A null `cfg` selects the defaults.
///
/// # Safety
/// `y` and `yhat` must point to `n` readable values, `grad` (if non-null)
/// to `n` writable values, `cfg` (if non-null) to a config, `value` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn ls_loss(
    kind: LsLossKind,
    y: *const f64,
    yhat: *const f64,
    n: usize,
    cfg: *const LsLossConfig,
    value: *mut f64,
    grad: *mut f64,
) -> LsStatus {
    guard(|| {
        let y = tensor(slice(y, n, "y")?)?;
        let yhat = slice(yhat, n, "yhat")?;
        let value = out(value, "value")?;
        let cfg: LossConfig = cfg.as_ref().map_or_else(LossConfig::default, |c| (*c).into());
        cfg.validate()?;
        let var = Var::from_tensor(&tensor(yhat)?)?;
        let loss = LossKind::from(kind).apply(&y, var.as_tensor(), &cfg)?;
        *value = scalar(&loss)?;
        if !grad.is_null() {
            let grads = loss.backward()?;
            let g: Vec<f64> = match grads.get(var.as_tensor()) {
                Some(g) => g.to_vec1()?,
                None => vec![0.0; n],
            };
            slice_mut(grad, n, "grad")?.copy_from_slice(&g);
        }
        Ok(())
    })
}

/// Segmentor adversarial term over `n` probabilities of the predicted class.
///
/// # Safety
/// `p_fake` must point to `n` readable values and `value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ls_segmentor_adv_loss(p_fake: *const f64, n: usize, value: *mut f64) -> LsStatus {
    guard(|| {
        if n == 0 {
            return Err(Failure::invalid("empty batch"));
        }
        let p = tensor(slice(p_fake, n, "p_fake")?)?;
        *out(value, "value")? = scalar(&losses::segmentor_adv_loss(&p)?)?;
        Ok(())
    })
}

/// Unsupervised discriminator term from the predicted-class probabilities
/// on `n` real pairs and `n` predicted pairs.
///
/// # Safety
/// Both inputs must point to `n` readable values and `value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ls_discriminator_unsup_loss(
    p_fake_on_real: *const f64,
    p_fake_on_pred: *const f64,
    n: usize,
    value: *mut f64,
) -> LsStatus {
    guard(|| {
        if n == 0 {
            return Err(Failure::invalid("empty batch"));
        }
        let real = tensor(slice(p_fake_on_real, n, "p_fake_on_real")?)?;
        let pred = tensor(slice(p_fake_on_pred, n, "p_fake_on_pred")?)?;
        *out(value, "value")? = scalar(&losses::discriminator_unsup_loss(&real, &pred)?)?;
        Ok(())
    })
}
