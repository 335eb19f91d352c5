use lungseg::data::{synth_dataset, Dataset};

use crate::{guard, out, slice_mut, Failure, LsStatus, Outcome};

/// Opaque in-memory dataset.
pub struct LsDataset {
    inner: Dataset,
}

/// Sentinel written by `ls_dataset_label` for samples without a label.
pub const LS_NO_LABEL: i32 = -1;

/// Generates the seeded synthetic chest X-ray set of `count` `size x size`
/// images (size 32, 64 or 128).
///
/// # Safety
/// `handle` must be writable. Release with `ls_dataset_free`.
#[no_mangle]
pub unsafe extern "C" fn ls_synth_dataset(
    count: usize,
    seed: u64,
    size: usize,
    handle: *mut *mut LsDataset,
) -> LsStatus {
    guard(|| {
        let handle = out(handle, "handle")?;
        let inner = synth_dataset(count, seed, size)?;
        *handle = Box::into_raw(Box::new(LsDataset { inner }));
        Ok(())
    })
}

unsafe fn dataset<'a>(ds: *const LsDataset) -> Outcome<&'a Dataset> {
    ds.as_ref().map(|d| &d.inner).ok_or_else(|| Failure::null("dataset"))
}

fn sample(ds: &Dataset, index: usize) -> Outcome<&lungseg::data::Sample> {
    ds.samples
        .get(index)
        .ok_or_else(|| Failure::invalid(format!("index {index} out of range ({} samples)", ds.len())))
}

/// Sample count and image side length.
///
/// # Safety
/// `ds` must be a live handle; `len` and `size` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ls_dataset_shape(ds: *const LsDataset, len: *mut usize, size: *mut usize) -> LsStatus {
    guard(|| {
        let ds = dataset(ds)?;
        *out(len, "len")? = ds.len();
        *out(size, "size")? = ds.image_size();
        Ok(())
    })
}

/// Copies image `index` (`size * size` values) into `pixels`.
///
/// # Safety
/// `ds` must be a live handle and `pixels` writable for `size * size` values.
#[no_mangle]
pub unsafe extern "C" fn ls_dataset_image(ds: *const LsDataset, index: usize, pixels: *mut f32) -> LsStatus {
    guard(|| {
        let s = sample(dataset(ds)?, index)?;
        let dst = slice_mut(pixels, s.image.len(), "pixels")?;
        dst.iter_mut().zip(s.image.iter()).for_each(|(d, &v)| *d = v);
        Ok(())
    })
}

/// Copies mask `index` into `mask`. Fails with `LS_STATUS_DATA` when the
/// sample has no mask.
///
/// # Safety
/// `ds` must be a live handle and `mask` writable for `size * size` bytes.
#[no_mangle]
pub unsafe extern "C" fn ls_dataset_mask(ds: *const LsDataset, index: usize, mask: *mut u8) -> LsStatus {
    guard(|| {
        let s = sample(dataset(ds)?, index)?;
        let m = s
            .mask
            .as_ref()
            .ok_or_else(|| Failure::new(LsStatus::Data, format!("sample {index} has no mask")))?;
        let dst = slice_mut(mask, m.len(), "mask")?;
        dst.iter_mut().zip(m.iter()).for_each(|(d, &v)| *d = v);
        Ok(())
    })
}

/// Class label of sample `index`, or `LS_NO_LABEL`.
///
/// # Safety
/// `ds` must be a live handle and `label` writable.
#[no_mangle]
pub unsafe extern "C" fn ls_dataset_label(ds: *const LsDataset, index: usize, label: *mut i32) -> LsStatus {
    guard(|| {
        let s = sample(dataset(ds)?, index)?;
        *out(label, "label")? = s.class_label.map_or(LS_NO_LABEL, |l| l as i32);
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `ds` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ls_dataset_free(ds: *mut LsDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}
