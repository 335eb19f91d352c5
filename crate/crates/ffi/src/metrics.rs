use ndarray::Array2;

use crate::{guard, out, slice, Failure, LsStatus, Outcome};

/// Overlap metrics of one mask pair.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LsOverlap {
    pub ds: f64,
    pub ji: f64,
    pub f1: f64,
    pub sn: f64,
    pub sp: f64,
    pub pr: f64,
    pub rc: f64,
}

unsafe fn mask(ptr: *const u8, rows: usize, cols: usize, what: &str) -> Outcome<Array2<u8>> {
    let len = rows
        .checked_mul(cols)
        .ok_or_else(|| Failure::invalid("mask size overflows"))?;
    let data = slice(ptr, len, what)?.to_vec();
    Array2::from_shape_vec((rows, cols), data).map_err(|e| Failure::invalid(e.to_string()))
}

/// Overlap metrics between binary masks (`0` background, `1` foreground).
///
/// # Safety
/// `truth` and `pred` must point to `rows * cols` readable bytes; `result`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn ls_overlap_metrics(
    truth: *const u8,
    pred: *const u8,
    rows: usize,
    cols: usize,
    result: *mut LsOverlap,
) -> LsStatus {
    guard(|| {
        let m = lungseg::metrics::overlap_metrics(
            &mask(truth, rows, cols, "truth")?,
            &mask(pred, rows, cols, "pred")?,
        )?;
        *out(result, "result")? = LsOverlap {
            ds: m.ds,
            ji: m.ji,
            f1: m.f1,
            sn: m.sn,
            sp: m.sp,
            pr: m.pr,
            rc: m.rc,
        };
        Ok(())
    })
}

/// Average Hausdorff distance in pixels between two binary masks.
///
/// # Safety
/// As for `ls_overlap_metrics`.
#[no_mangle]
pub unsafe extern "C" fn ls_avg_hausdorff(
    truth: *const u8,
    pred: *const u8,
    rows: usize,
    cols: usize,
    result: *mut f64,
) -> LsStatus {
    guard(|| {
        *out(result, "result")? = lungseg::metrics::avg_hausdorff(
            &mask(truth, rows, cols, "truth")?,
            &mask(pred, rows, cols, "pred")?,
        )?;
        Ok(())
    })
}

/// Mean SSIM between two grayscale images in `[0, 1]`.
///
/// # Safety
/// `x` and `y` must point to `rows * cols` readable values; `result` must
/// be writable.
#[no_mangle]
pub unsafe extern "C" fn ls_ssim(
    x: *const f64,
    y: *const f64,
    rows: usize,
    cols: usize,
    result: *mut f64,
) -> LsStatus {
    guard(|| {
        let len = rows
            .checked_mul(cols)
            .ok_or_else(|| Failure::invalid("image size overflows"))?;
        let image = |p: *const f64, what| -> Outcome<Array2<f64>> {
            Array2::from_shape_vec((rows, cols), slice(p, len, what)?.to_vec())
                .map_err(|e| Failure::invalid(e.to_string()))
        };
        *out(result, "result")? = lungseg::metrics::ssim(&image(x, "x")?, &image(y, "y")?)?;
        Ok(())
    })
}
