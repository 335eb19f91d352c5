//! Lossless PNG overlays: the predicted mask alpha-blended in red over the
//! input image, with the ground-truth contour drawn in green.

use std::path::Path;

use image::{Rgb, RgbImage};
use ndarray::Array2;

use crate::Result;

const PRED_ALPHA: f32 = 0.4;

/// Pixels of `mask` with at least one 4-neighbour outside the mask (image
/// borders count as outside).
pub fn contour(mask: &Array2<u8>) -> Array2<u8> {
    let (h, w) = mask.dim();
    Array2::from_shape_fn((h, w), |(r, c)| {
        if mask[(r, c)] == 0 {
            return 0;
        }
        let outside = |dr: isize, dc: isize| {
            let (rr, cc) = (r as isize + dr, c as isize + dc);
            rr < 0
                || cc < 0
                || rr >= h as isize
                || cc >= w as isize
                || mask[(rr as usize, cc as usize)] == 0
        };
        u8::from(outside(-1, 0) || outside(1, 0) || outside(0, -1) || outside(0, 1))
    })
}

pub fn overlay_image(image: &Array2<f32>, truth: Option<&Array2<u8>>, pred: &Array2<u8>) -> RgbImage {
    let (h, w) = image.dim();
    let edge = truth.map(contour);
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let (r, c) = (y as usize, x as usize);
        if edge.as_ref().is_some_and(|e| e[(r, c)] == 1) {
            return Rgb([0, 255, 0]);
        }
        let g = image[(r, c)].clamp(0.0, 1.0) * 255.0;
        let mut px = [g, g, g];
        if pred[(r, c)] == 1 {
            let red = [255.0, 0.0, 0.0];
            for (p, t) in px.iter_mut().zip(red) {
                *p = (1.0 - PRED_ALPHA) * *p + PRED_ALPHA * t;
            }
        }
        Rgb(px.map(|v| v.round() as u8))
    })
}

pub fn write_overlay(
    path: &Path,
    image: &Array2<f32>,
    truth: Option<&Array2<u8>>,
    pred: &Array2<u8>,
) -> Result<()> {
    overlay_image(image, truth, pred).save(path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn contour_of_square() {
        let mut m = Array2::<u8>::zeros((5, 5));
        m.slice_mut(ndarray::s![1..4, 1..4]).fill(1);
        let c = contour(&m);
        assert_eq!(c.sum(), 8);
        assert_eq!(c[(2, 2)], 0);
    }
}
