//! Segmentation and classification metrics on thresholded predictions.

mod classification;
mod hausdorff;
mod overlap;
mod ssim;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub use classification::{classification_metrics, ClassificationReport};
pub use hausdorff::{avg_hausdorff, distance_transform_sq};
pub use overlap::{confusion, overlap_metrics, Confusion, OverlapMetrics};
pub use ssim::{ssim, SSIM_K1, SSIM_K2, SSIM_SIGMA, SSIM_WINDOW};

use crate::{Error, Result};

/// Default binarisation threshold.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// `1` where `value >= threshold`, else `0`.
pub fn binarize(probs: &Array2<f32>, threshold: f64) -> Result<Array2<u8>> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "threshold {threshold} outside (0, 1)"
        )));
    }
    Ok(probs.mapv(|v| u8::from(v as f64 >= threshold)))
}

/// Segmentation metrics for one evaluation pass (means over images) plus
/// classification results when a classifier was evaluated.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub ds: f64,
    pub ji: f64,
    pub ssim: f64,
    pub f1: f64,
    pub hd: f64,
    pub sn: f64,
    pub sp: f64,
    pub pr: f64,
    pub rc: f64,
    pub classification: Option<ClassificationReport>,
}

impl MetricReport {
    /// Column order of the segmentation tables.
    pub const SEGMENTATION_COLUMNS: [&'static str; 9] =
        ["DS", "JI", "SSIM", "F1", "HD", "SN", "SP", "PR", "RC"];

    pub fn segmentation_values(&self) -> [f64; 9] {
        [
            self.ds, self.ji, self.ssim, self.f1, self.hd, self.sn, self.sp, self.pr, self.rc,
        ]
    }
}

fn check_same_shape<A, B>(a: &Array2<A>, b: &Array2<B>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::shape(format!("{:?} vs {:?}", a.dim(), b.dim())));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binarize_tie_goes_up() {
        let p = ndarray::array![[0.5f32, 0.49], [0.7, 0.0]];
        assert_eq!(binarize(&p, 0.5).unwrap(), ndarray::array![[1u8, 0], [1, 0]]);
        assert!(binarize(&p, 1.0).is_err());
    }

    #[test]
    fn binarize_constant_map() {
        let p = Array2::from_elem((4, 4), 0.7f32);
        assert!(binarize(&p, 0.5).unwrap().iter().all(|v| *v == 1));
    }
}
