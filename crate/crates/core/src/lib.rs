//! Semi-supervised multi-task lung segmentation and chest X-ray classification.
//!
//! The crate bundles a pyramid / attention-gated / deeply supervised U-Net
//! segmentor, an `(n+1)`-class adversarial discriminator over image-mask
//! pairs, the KL-Tversky loss family, the segmentation metric suite, dataset
//! ingestion for the Montgomery, Shenzhen, JSRT and combined chest X-ray sets,
//! a synthetic lung dataset for desk-scale experiments, and the training and
//! reporting harness behind the `lungseg` binary.

pub mod cli;
pub mod data;
pub mod discriminator;
mod error;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod segmentor;
pub mod trainer;

pub use error::{Error, Result};

/// Version string recorded in run artifacts and checkpoints.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
