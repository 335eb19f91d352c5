use std::ffi::c_char;
use std::path::Path;

use lungseg::segmentor::{make_variant, Segmentor};
use ndarray::Array2;

use crate::{guard, out, slice, slice_mut, string, Failure, LsStatus};

/// Opaque segmentation network.
pub struct LsSegmentor {
    inner: Segmentor,
}

/// Creates a freshly initialized network of the named variant
/// (e.g. `"PPAU-Net"`) with input side `input_size` (a multiple of 16).
///
/// # Safety
/// `variant` must be a NUL-terminated string; `handle` must be writable.
/// The handle is released with `ls_segmentor_free`.
#[no_mangle]
pub unsafe extern "C" fn ls_segmentor_new(
    variant: *const c_char,
    input_size: usize,
    base_channels: usize,
    seed: u64,
    handle: *mut *mut LsSegmentor,
) -> LsStatus {
    guard(|| {
        let handle = out(handle, "handle")?;
        let config = make_variant(string(variant, "variant")?)?.with_size(input_size, base_channels);
        let inner = Segmentor::new(config, seed)?;
        *handle = Box::into_raw(Box::new(LsSegmentor { inner }));
        Ok(())
    })
}

/// Loads a network saved by `ls_segmentor_save` or the `lungseg` binary.
///
/// # Safety
/// `path` must be a NUL-terminated string; `handle` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ls_segmentor_load(path: *const c_char, handle: *mut *mut LsSegmentor) -> LsStatus {
    guard(|| {
        let handle = out(handle, "handle")?;
        let inner = Segmentor::load(Path::new(string(path, "path")?))?;
        *handle = Box::into_raw(Box::new(LsSegmentor { inner }));
        Ok(())
    })
}

/// # Safety
/// `seg` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ls_segmentor_save(seg: *const LsSegmentor, path: *const c_char) -> LsStatus {
    guard(|| {
        let seg = seg.as_ref().ok_or_else(|| Failure::null("segmentor"))?;
        seg.inner.save(Path::new(string(path, "path")?))?;
        Ok(())
    })
}

/// Input side length expected by `ls_segmentor_predict`.
///
/// # Safety
/// `seg` must be a live handle; `size` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ls_segmentor_input_size(seg: *const LsSegmentor, size: *mut usize) -> LsStatus {
    guard(|| {
        let seg = seg.as_ref().ok_or_else(|| Failure::null("segmentor"))?;
        *out(size, "size")? = seg.inner.config().input_size;
        Ok(())
    })
}

/// Number of trainable scalars.
///
/// # Safety
/// `seg` must be a live handle; `count` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ls_segmentor_num_params(seg: *const LsSegmentor, count: *mut usize) -> LsStatus {
    guard(|| {
        let seg = seg.as_ref().ok_or_else(|| Failure::null("segmentor"))?;
        *out(count, "count")? = seg.inner.num_params();
        Ok(())
    })
}

/// Lung probability maps for `count` images of `m x m` pixels in `[0, 1]`,
/// stored back to back. `m` must equal the network's input size.
///
/// # Safety
/// `images` must point to `count * m * m` readable values and `probs` to as
/// many writable values.
#[no_mangle]
pub unsafe extern "C" fn ls_segmentor_predict(
    seg: *const LsSegmentor,
    images: *const f32,
    count: usize,
    m: usize,
    probs: *mut f32,
) -> LsStatus {
    guard(|| {
        let seg = seg.as_ref().ok_or_else(|| Failure::null("segmentor"))?;
        let expected = seg.inner.config().input_size;
        if m != expected {
            return Err(Failure::new(
                LsStatus::Shape,
                format!("images are {m}x{m}, network expects {expected}x{expected}"),
            ));
        }
        if count == 0 {
            return Ok(());
        }
        let len = count * m * m;
        let input = slice(images, len, "images")?;
        let output = slice_mut(probs, len, "probs")?;
        let arrays: Vec<Array2<f32>> = input
            .chunks_exact(m * m)
            .map(|c| Array2::from_shape_vec((m, m), c.to_vec()).expect("chunk is m*m"))
            .collect();
        let refs: Vec<&Array2<f32>> = arrays.iter().collect();
        let maps = seg.inner.predict(&refs)?;
        for (dst, map) in output.chunks_exact_mut(m * m).zip(&maps) {
            dst.iter_mut().zip(map.iter()).for_each(|(d, &v)| *d = v);
        }
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `seg` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ls_segmentor_free(seg: *mut LsSegmentor) {
    if !seg.is_null() {
        drop(Box::from_raw(seg));
    }
}
