use candle_core::{DType, Device, Tensor};

use crate::{Error, Result};

/// Row-stochastic `(2n, n)` matrix for 2x bilinear interpolation with
/// half-pixel centres (`align_corners = false`), edges clamped.
pub fn upsample_matrix(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; 2 * n * n];
    for dst in 0..2 * n {
        let src = (dst as f64 + 0.5) / 2.0 - 0.5;
        let lo = src.floor();
        let frac = src - lo;
        let lo_i = (lo.max(0.0) as usize).min(n - 1);
        let hi_i = ((lo + 1.0).max(0.0) as usize).min(n - 1);
        m[dst * n + lo_i] += 1.0 - frac;
        m[dst * n + hi_i] += frac;
    }
    m
}

fn interp(n: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    Ok(Tensor::from_vec(upsample_matrix(n), (2 * n, n), device)?.to_dtype(dtype)?)
}

/// 2x bilinear upsampling of `(N, C, H, W)`.
pub fn bilinear_upsample2x(xs: &Tensor) -> Result<Tensor> {
    Ok(super::ops::upsample2x(xs)?)
}

/// [`bilinear_upsample2x`] written as `U X V^T` with plain matrix products.
pub fn bilinear_upsample2x_reference(xs: &Tensor) -> Result<Tensor> {
    let (_, _, h, w) = xs.dims4()?;
    let uh = interp(h, xs.dtype(), xs.device())?;
    let uw = interp(w, xs.dtype(), xs.device())?;
    let rows = xs.broadcast_matmul(&uw.t()?.contiguous()?)?;
    Ok(uh.broadcast_matmul(&rows)?)
}

/// Non-overlapping average pooling by an integer factor.
pub fn avg_pool(xs: &Tensor, factor: usize) -> Result<Tensor> {
    if factor == 1 {
        return Ok(xs.clone());
    }
    let (_, _, h, w) = xs.dims4()?;
    if h % factor != 0 || w % factor != 0 {
        return Err(Error::shape(format!(
            "pool factor {factor} does not divide {h}x{w}"
        )));
    }
    Ok(xs.avg_pool2d(factor)?)
}
