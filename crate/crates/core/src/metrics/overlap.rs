use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::check_same_shape;
use crate::Result;

/// Pixel confusion counts with ROI as the positive class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

pub fn confusion(truth: &Array2<u8>, pred: &Array2<u8>) -> Result<Confusion> {
    check_same_shape(truth, pred)?;
    let mut c = Confusion::default();
    for (&t, &p) in truth.iter().zip(pred.iter()) {
        match (t != 0, p != 0) {
            (true, true) => c.tp += 1,
            (false, true) => c.fp += 1,
            (false, false) => c.tn += 1,
            (true, false) => c.fn_ += 1,
        }
    }
    Ok(c)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverlapMetrics {
    pub ds: f64,
    pub ji: f64,
    pub f1: f64,
    pub sn: f64,
    pub sp: f64,
    pub pr: f64,
    pub rc: f64,
}

/// `num / den`; an empty denominator scores 1 when the complementary error
/// count is also zero (nothing to find and nothing wrongly found), else 0.
fn ratio(num: u64, den: u64, other_errors: u64) -> f64 {
    if den == 0 {
        if other_errors == 0 {
            1.0
        } else {
            0.0
        }
    } else {
        num as f64 / den as f64
    }
}

impl From<Confusion> for OverlapMetrics {
    fn from(c: Confusion) -> Self {
        let Confusion { tp, fp, tn, fn_ } = c;
        let ds = ratio(2 * tp, 2 * tp + fp + fn_, 0);
        let ji = ratio(tp, tp + fp + fn_, 0);
        let pr = ratio(tp, tp + fp, tp + fn_);
        let rc = ratio(tp, tp + fn_, fp);
        let sp = ratio(tn, tn + fp, fn_);
        let f1 = if pr + rc > 0.0 { 2.0 * pr * rc / (pr + rc) } else { 0.0 };
        OverlapMetrics {
            ds,
            ji,
            f1,
            sn: rc,
            sp,
            pr,
            rc,
        }
    }
}

/// Dice, Jaccard, F1, sensitivity, specificity, precision and recall.
pub fn overlap_metrics(truth: &Array2<u8>, pred: &Array2<u8>) -> Result<OverlapMetrics> {
    Ok(confusion(truth, pred)?.into())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn half_overlap() {
        let m = overlap_metrics(&array![[1u8, 1, 0, 0]], &array![[1u8, 0, 0, 1]]).unwrap();
        assert_eq!(m.ds, 0.5);
        assert!((m.ji - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!((m.pr, m.rc, m.sp), (0.5, 0.5, 0.5));
    }

    #[test]
    fn identical_masks() {
        let y = array![[1u8, 0], [1, 1]];
        let m = overlap_metrics(&y, &y).unwrap();
        assert_eq!([m.ds, m.ji, m.f1, m.sn, m.pr, m.rc, m.sp], [1.0; 7]);
    }

    #[test]
    fn empty_conventions() {
        let z = array![[0u8, 0], [0, 0]];
        let m = overlap_metrics(&z, &z).unwrap();
        assert_eq!((m.ds, m.ji, m.pr, m.rc), (1.0, 1.0, 1.0, 1.0));
        let p = array![[1u8, 0], [0, 0]];
        let m = overlap_metrics(&z, &p).unwrap();
        assert_eq!((m.ds, m.pr, m.rc), (0.0, 0.0, 0.0));
        assert!(overlap_metrics(&z, &array![[0u8, 0, 0]]).is_err());
    }
}
