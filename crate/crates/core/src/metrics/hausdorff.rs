use ndarray::Array2;

use super::check_same_shape;
use crate::Result;

/// Squared Euclidean distance from every pixel centre to the nearest
/// nonzero pixel of `mask` (exact, separable lower-envelope algorithm).
/// Returns `None` for an empty mask.
pub fn distance_transform_sq(mask: &Array2<u8>) -> Option<Array2<f64>> {
    if mask.iter().all(|v| *v == 0) {
        return None;
    }
    let (h, w) = mask.dim();
    let inf = ((h * h + w * w) as f64 + 1.0) * 4.0;
    let mut cols = Array2::from_shape_fn((h, w), |(r, c)| if mask[(r, c)] != 0 { 0.0 } else { inf });
    let mut buf = vec![0.0; h.max(w)];
    for c in 0..w {
        for r in 0..h {
            buf[r] = cols[(r, c)];
        }
        let out = envelope_1d(&buf[..h]);
        for r in 0..h {
            cols[(r, c)] = out[r];
        }
    }
    for r in 0..h {
        for c in 0..w {
            buf[c] = cols[(r, c)];
        }
        let out = envelope_1d(&buf[..w]);
        for c in 0..w {
            cols[(r, c)] = out[c];
        }
    }
    Some(cols)
}

/// 1-D squared distance transform of a sampled function `f`:
/// `d(p) = min_q (p - q)^2 + f(q)`.
fn envelope_1d(f: &[f64]) -> Vec<f64> {
    let n = f.len();
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let mut k = 0usize;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let mut s;
        loop {
            let p = v[k];
            s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
            // z[0] is -inf, so k never underflows.
            if s <= z[k] {
                k -= 1;
            } else {
                break;
            }
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    let mut out = vec![0.0; n];
    k = 0;
    for (p, o) in out.iter_mut().enumerate() {
        while z[k + 1] < p as f64 {
            k += 1;
        }
        let d = p as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
    out
}

fn directed_mean(from: &Array2<u8>, to_dt: &Array2<f64>) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (idx, &v) in from.indexed_iter() {
        if v != 0 {
            sum += to_dt[idx].sqrt();
            n += 1;
        }
    }
    sum / n as f64
}

/// Average Hausdorff distance in pixels: the mean of the two directed
/// average nearest-neighbour distances. Two empty masks score 0; exactly
/// one empty mask scores the image diagonal.
pub fn avg_hausdorff(truth: &Array2<u8>, pred: &Array2<u8>) -> Result<f64> {
    check_same_shape(truth, pred)?;
    let (h, w) = truth.dim();
    match (distance_transform_sq(truth), distance_transform_sq(pred)) {
        (None, None) => Ok(0.0),
        (Some(_), None) | (None, Some(_)) => Ok(((h * h + w * w) as f64).sqrt()),
        (Some(dt_truth), Some(dt_pred)) => {
            Ok(0.5 * (directed_mean(truth, &dt_pred) + directed_mean(pred, &dt_truth)))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn brute_dt(mask: &Array2<u8>) -> Array2<f64> {
        let pts: Vec<(usize, usize)> = mask
            .indexed_iter()
            .filter(|(_, v)| **v != 0)
            .map(|(i, _)| i)
            .collect();
        Array2::from_shape_fn(mask.dim(), |(r, c)| {
            pts.iter()
                .map(|&(pr, pc)| {
                    let dr = r as f64 - pr as f64;
                    let dc = c as f64 - pc as f64;
                    dr * dr + dc * dc
                })
                .fold(f64::INFINITY, f64::min)
        })
    }

    #[test]
    fn dt_matches_brute_force() {
        let mut state = 12345u64;
        for _ in 0..50 {
            let mask = Array2::from_shape_fn((9, 13), |_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                u8::from((state >> 60) < 3)
            });
            if mask.iter().all(|v| *v == 0) {
                continue;
            }
            assert_eq!(distance_transform_sq(&mask).unwrap(), brute_dt(&mask));
        }
    }

    #[test]
    fn single_pixels() {
        let a = array![[1u8, 0, 0]];
        let b = array![[0u8, 0, 1]];
        assert_eq!(avg_hausdorff(&a, &b).unwrap(), 2.0);
        assert_eq!(avg_hausdorff(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn empty_sentinel() {
        let a = Array2::<u8>::zeros((3, 4));
        let mut b = a.clone();
        b[(1, 1)] = 1;
        assert_eq!(avg_hausdorff(&a, &b).unwrap(), 5.0);
        assert_eq!(avg_hausdorff(&a, &a).unwrap(), 0.0);
    }
}
