use candle_core::Tensor;
use ndarray::Array2;

use super::Sample;
use crate::{Error, Result};

pub const DEFAULT_INPUT_SIZE: usize = 128;

/// Bilinear resampling with half-pixel centres, edges clamped.
pub fn bilinear_resize(src: &Array2<f32>, size: usize) -> Array2<f32> {
    let (h, w) = src.dim();
    if (h, w) == (size, size) {
        return src.clone();
    }
    let coord = |dst: usize, n: usize| {
        let s = ((dst as f64 + 0.5) * n as f64 / size as f64 - 0.5).max(0.0);
        let lo = (s.floor() as usize).min(n - 1);
        let hi = (lo + 1).min(n - 1);
        (lo, hi, s - s.floor())
    };
    let mut out = Array2::zeros((size, size));
    for r in 0..size {
        let (r0, r1, fr) = coord(r, h);
        for c in 0..size {
            let (c0, c1, fc) = coord(c, w);
            let top = src[(r0, c0)] as f64 * (1.0 - fc) + src[(r0, c1)] as f64 * fc;
            let bot = src[(r1, c0)] as f64 * (1.0 - fc) + src[(r1, c1)] as f64 * fc;
            out[(r, c)] = (top * (1.0 - fr) + bot * fr) as f32;
        }
    }
    out
}

/// Nearest-neighbour resampling sampling each destination pixel centre.
pub fn nearest_resize<T: Copy + Default>(src: &Array2<T>, size: usize) -> Array2<T> {
    let (h, w) = src.dim();
    let pick = |dst: usize, n: usize| (((dst as f64 + 0.5) * n as f64 / size as f64) as usize).min(n - 1);
    Array2::from_shape_fn((size, size), |(r, c)| src[(pick(r, h), pick(c, w))])
}

/// Min-max normalises `image` to `[0, 1]` and resizes it to `size`; the mask
/// (nonzero = ROI) is resized nearest-neighbour and re-binarised at 0.5.
/// A constant image becomes all zeros.
pub fn preprocess(
    image: &Array2<f32>,
    mask: Option<&Array2<f32>>,
    size: usize,
    source_id: &str,
) -> Result<Sample> {
    if image.is_empty() {
        return Err(Error::Data(format!("{source_id}: empty image")));
    }
    if let Some(m) = mask {
        if m.dim() != image.dim() {
            return Err(Error::Data(format!(
                "{source_id}: mask {:?} does not match image {:?}",
                m.dim(),
                image.dim()
            )));
        }
    }
    let lo = image.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = image.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    if !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Data(format!("{source_id}: non-finite pixel")));
    }
    let normalized = if hi > lo {
        image.mapv(|v| (v - lo) / (hi - lo))
    } else {
        log::warn!("{source_id}: constant image, normalised to zeros");
        Array2::zeros(image.dim())
    };
    let resized = bilinear_resize(&normalized, size).mapv(|v| v.clamp(0.0, 1.0));
    let mask = mask.map(|m| {
        let binary = m.mapv(|v| u8::from(v >= 0.5));
        nearest_resize(&binary, size).mapv(|v| u8::from(v as f32 >= 0.5))
    });
    Ok(Sample {
        image: resized,
        mask,
        class_label: None,
        source_id: source_id.to_string(),
    })
}

/// Average-pools a binary mask by `factor` and thresholds at 0.5 (ties go
/// to the ROI).
pub fn downsample_mask(mask: &Array2<u8>, factor: usize) -> Result<Array2<u8>> {
    let (h, w) = mask.dim();
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(Error::shape(format!("factor {factor} does not divide {h}x{w}")));
    }
    let area = (factor * factor) as f64;
    Ok(Array2::from_shape_fn((h / factor, w / factor), |(r, c)| {
        let mut sum = 0u32;
        for dr in 0..factor {
            for dc in 0..factor {
                sum += mask[(r * factor + dr, c * factor + dc)] as u32;
            }
        }
        u8::from(sum as f64 / area >= 0.5)
    }))
}

/// Tensor form of [`downsample_mask`] over the last two dimensions. The
/// result is detached and has the input's dtype.
pub fn downsample_mask_tensor(mask: &Tensor, factor: usize) -> Result<Tensor> {
    if factor == 1 {
        return Ok(mask.detach());
    }
    let dims = mask.dims().to_vec();
    if dims.len() < 2 {
        return Err(Error::shape("mask needs at least two dimensions"));
    }
    let (h, w) = (dims[dims.len() - 2], dims[dims.len() - 1]);
    if h % factor != 0 || w % factor != 0 {
        return Err(Error::shape(format!("factor {factor} does not divide {h}x{w}")));
    }
    let lead: usize = dims[..dims.len() - 2].iter().product();
    let pooled = mask
        .detach()
        .reshape((lead, 1, h, w))?
        .avg_pool2d(factor)?
        .ge(0.5)?
        .to_dtype(mask.dtype())?;
    let mut out_dims = dims[..dims.len() - 2].to_vec();
    out_dims.extend([h / factor, w / factor]);
    Ok(pooled.reshape(out_dims)?)
}
