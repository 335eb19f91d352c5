//! Synthetic chest-film-like images: two dark elliptical "lungs" on a noisy
//! brighter background. Abnormal samples carry a bright "nodule" disc fully
//! inside one lung. The mask is the union of the two ellipses, evaluated at
//! pixel centres, so the generator is its own ground truth.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Dataset, Sample};
use crate::{Error, Result};

/// Rotated ellipse in pixel coordinates (x = column, y = row).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub cx: f64,
    pub cy: f64,
    pub rx: f64,
    pub ry: f64,
    pub angle: f64,
}

impl Ellipse {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.angle.sin_cos();
        let dx = x - self.cx;
        let dy = y - self.cy;
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        (u / self.rx).powi(2) + (v / self.ry).powi(2) <= 1.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Disc {
    pub cx: f64,
    pub cy: f64,
    pub r: f64,
}

impl Disc {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        (x - self.cx).powi(2) + (y - self.cy).powi(2) <= self.r * self.r
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthGeometry {
    pub lungs: [Ellipse; 2],
    pub nodule: Option<Disc>,
}

pub const SYNTH_CLASSES: [&str; 2] = ["normal", "abnormal"];

/// `count` samples of `size x size`, half of them abnormal (class 1).
pub fn synth_dataset(count: usize, seed: u64, size: usize) -> Result<Dataset> {
    Ok(synth_dataset_with_geometry(count, seed, size)?.0)
}

pub fn synth_dataset_with_geometry(
    count: usize,
    seed: u64,
    size: usize,
) -> Result<(Dataset, Vec<SynthGeometry>)> {
    if ![32, 64, 128].contains(&size) {
        return Err(Error::InvalidArgument(format!(
            "synthetic size must be 32, 64 or 128, got {size}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<usize> = (0..count).map(|i| usize::from(i < count / 2)).collect();
    labels.shuffle(&mut rng);
    let mut samples = Vec::with_capacity(count);
    let mut geometry = Vec::with_capacity(count);
    for (i, &label) in labels.iter().enumerate() {
        let (sample, geo) = one_sample(&mut rng, size, label == 1, i);
        samples.push(sample);
        geometry.push(geo);
    }
    let ds = Dataset {
        name: "SYNTH".into(),
        class_names: SYNTH_CLASSES.iter().map(|s| s.to_string()).collect(),
        samples,
    };
    Ok((ds, geometry))
}

fn one_sample(rng: &mut ChaCha8Rng, size: usize, abnormal: bool, index: usize) -> (Sample, SynthGeometry) {
    let s = size as f64;
    let mut lung = |side: f64| Ellipse {
        cx: s * (0.5 + side * rng.random_range(0.17..0.23)),
        cy: s * rng.random_range(0.46..0.54),
        rx: s * rng.random_range(0.12..0.17),
        ry: s * rng.random_range(0.27..0.35),
        angle: side * rng.random_range(0.0..0.2),
    };
    let lungs = [lung(-1.0), lung(1.0)];
    let nodule = abnormal.then(|| {
        let host = lungs[rng.random_range(0..2)];
        let r = (s * rng.random_range(0.05..0.08)).max(1.5);
        // Rejection-sample a centre whose whole disc lies inside the lung.
        loop {
            let cx = host.cx + rng.random_range(-host.rx..host.rx) * 0.6;
            let cy = host.cy + rng.random_range(-host.ry..host.ry) * 0.6;
            let d = Disc { cx, cy, r };
            let inside = (0..16).all(|k| {
                let t = k as f64 * std::f64::consts::TAU / 16.0;
                host.contains(cx + r * t.cos(), cy + r * t.sin())
            });
            if inside {
                break d;
            }
        }
    });
    let tilt = rng.random_range(-0.1..0.1);
    let noise = Normal::new(0.0, 0.04).expect("valid sigma");
    let mut image = Array2::<f32>::zeros((size, size));
    let mut mask = Array2::<u8>::zeros((size, size));
    for r in 0..size {
        for c in 0..size {
            let (x, y) = (c as f64 + 0.5, r as f64 + 0.5);
            let in_lung = lungs.iter().any(|e| e.contains(x, y));
            let mut v = 0.62 + tilt * (y / s - 0.5);
            if in_lung {
                v = 0.28;
                mask[(r, c)] = 1;
            }
            if nodule.is_some_and(|d| d.contains(x, y)) {
                v = 0.85;
            }
            v += noise.sample(rng);
            image[(r, c)] = v.clamp(0.0, 1.0) as f32;
        }
    }
    let sample = Sample {
        image,
        mask: Some(mask),
        class_label: Some(usize::from(abnormal)),
        source_id: format!("synth_{index:05}"),
    };
    (sample, SynthGeometry { lungs, nodule })
}
