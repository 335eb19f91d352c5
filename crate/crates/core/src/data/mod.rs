//! Datasets: the four chest X-ray collections, preprocessing, deterministic
//! splits and a synthetic lung-like generator.

mod loader;
mod preprocess;
mod split;
mod synth;

use ndarray::Array2;
use sha2::{Digest, Sha256};

pub use loader::{
    load_dataset, read_manifest, write_dataset, write_manifest, DatasetKind, DatasetSpec, Splits,
    DATA_ROOT_ENV,
};
pub use preprocess::{
    bilinear_resize, downsample_mask, downsample_mask_tensor, nearest_resize, preprocess,
    DEFAULT_INPUT_SIZE,
};
pub use split::{apportion, stratified_split, stratified_subset, SplitTag};
pub use synth::{synth_dataset, synth_dataset_with_geometry, Disc, Ellipse, SynthGeometry};

/// One image with optional ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// `m x m` grayscale in `[0, 1]`.
    pub image: Array2<f32>,
    /// Binary lung mask, same size as `image`.
    pub mask: Option<Array2<u8>>,
    pub class_label: Option<usize>,
    /// Provenance, unique within a dataset (file stem or synthetic index).
    pub source_id: String,
}

impl Sample {
    pub fn size(&self) -> usize {
        self.image.nrows()
    }
}

/// A named collection of samples sharing one class vocabulary.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub class_names: Vec<String>,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Spatial size `m` of the samples (0 when empty).
    pub fn image_size(&self) -> usize {
        self.samples.first().map_or(0, Sample::size)
    }

    /// Per-class sample counts, indexed by class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes()];
        for s in &self.samples {
            if let Some(c) = s.class_label {
                if c < counts.len() {
                    counts[c] += 1;
                }
            }
        }
        counts
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            name: self.name.clone(),
            class_names: self.class_names.clone(),
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }

    /// Checks the invariants every emitted dataset must satisfy.
    pub fn validate(&self) -> crate::Result<()> {
        let m = self.image_size();
        for s in &self.samples {
            if s.image.dim() != (m, m) {
                return Err(crate::Error::Data(format!(
                    "{}: image is {:?}, expected {m}x{m}",
                    s.source_id,
                    s.image.dim()
                )));
            }
            if s.image.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(crate::Error::Data(format!("{}: image outside [0, 1]", s.source_id)));
            }
            if let Some(mask) = &s.mask {
                if mask.dim() != (m, m) || mask.iter().any(|v| *v > 1) {
                    return Err(crate::Error::Data(format!(
                        "{}: mask is not a {m}x{m} binary map",
                        s.source_id
                    )));
                }
            }
            if let Some(c) = s.class_label {
                if c >= self.n_classes() {
                    return Err(crate::Error::Data(format!(
                        "{}: class {c} out of range",
                        s.source_id
                    )));
                }
            }
        }
        Ok(())
    }

    /// SHA-256 over every sample's id, pixels, mask and label.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.name.as_bytes());
        for s in &self.samples {
            h.update(s.source_id.as_bytes());
            h.update((s.image.nrows() as u64).to_le_bytes());
            for v in s.image.iter() {
                h.update(v.to_bits().to_le_bytes());
            }
            match &s.mask {
                Some(m) => {
                    h.update([1u8]);
                    h.update(m.as_slice().map_or_else(|| m.iter().copied().collect(), <[u8]>::to_vec));
                }
                None => h.update([0u8]),
            }
            h.update(s.class_label.map_or(u64::MAX, |c| c as u64).to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}
