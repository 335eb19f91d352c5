use ndarray::Array2;

use super::check_same_shape;
use crate::Result;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable Gaussian filter, "valid" region only.
fn filter_valid(img: &Array2<f64>, k: &[f64; SSIM_WINDOW]) -> Array2<f64> {
    let (h, w) = img.dim();
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let rows = Array2::from_shape_fn((h, ow), |(r, c)| {
        k.iter().enumerate().map(|(i, kv)| kv * img[(r, c + i)]).sum::<f64>()
    });
    Array2::from_shape_fn((oh, ow), |(r, c)| {
        k.iter().enumerate().map(|(i, kv)| kv * rows[(r + i, c)]).sum::<f64>()
    })
}

fn ssim_formula(mx: f64, my: f64, vx: f64, vy: f64, cov: f64) -> f64 {
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
}

/// Mean local SSIM with an 11x11 Gaussian window (sigma 1.5), K1 = 0.01,
/// K2 = 0.03 and dynamic range 1. Images smaller than the window fall back
/// to a single global-statistics SSIM.
pub fn ssim<A, B>(x: &Array2<A>, y: &Array2<B>) -> Result<f64>
where
    A: Copy + Into<f64>,
    B: Copy + Into<f64>,
{
    check_same_shape(x, y)?;
    let x = x.mapv(Into::into);
    let y = y.mapv(Into::into);
    let (h, w) = x.dim();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        let n = (h * w) as f64;
        let mx = x.sum() / n;
        let my = y.sum() / n;
        let vx = x.mapv(|v| (v - mx) * (v - mx)).sum() / n;
        let vy = y.mapv(|v| (v - my) * (v - my)).sum() / n;
        let cov = (&x - mx).iter().zip((&y - my).iter()).map(|(a, b)| a * b).sum::<f64>() / n;
        return Ok(ssim_formula(mx, my, vx, vy, cov));
    }
    let k = gaussian_kernel();
    let mx = filter_valid(&x, &k);
    let my = filter_valid(&y, &k);
    let exx = filter_valid(&(&x * &x), &k);
    let eyy = filter_valid(&(&y * &y), &k);
    let exy = filter_valid(&(&x * &y), &k);
    let mut total = 0.0;
    for idx in ndarray::indices(mx.dim()) {
        let (a, b) = (mx[idx], my[idx]);
        total += ssim_formula(a, b, exx[idx] - a * a, eyy[idx] - b * b, exy[idx] - a * b);
    }
    Ok(total / mx.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_and_constant() {
        let x = Array2::from_shape_fn((20, 20), |(r, c)| ((r * 3 + c) % 7) as f64 / 7.0);
        assert!((ssim(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        let c = Array2::from_elem((16, 16), 0.5f64);
        assert!((ssim(&c, &c).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn inverted_binary_is_dissimilar() {
        let y = Array2::from_shape_fn((24, 24), |(r, c)| u8::from((r / 4 + c / 4) % 2 == 0));
        let p = y.mapv(|v| 1 - v);
        let s = ssim(&y, &p).unwrap();
        assert!(s < 1.0 && s > -1.0);
    }

    #[test]
    fn small_image_fallback() {
        let x = ndarray::array![[0.0f64, 1.0], [1.0, 0.0]];
        assert!((ssim(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        assert!(ssim(&x, &x.mapv(|v| 1.0 - v)).unwrap() < 0.0);
    }
}
