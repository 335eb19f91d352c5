//! Minimal neural-network plumbing on top of `candle_core`: a seeded
//! parameter store with stable parameter paths, the handful of layers the
//! segmentor and discriminator need, Adam, resampling helpers and
//! safetensors checkpoints.

mod adam;
mod checkpoint;
mod layers;
mod ops;
mod params;
mod resample;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{load_tensors, save_tensors, CHECKPOINT_FORMAT_VERSION};
pub use layers::{BatchNorm2d, Conv2d, Linear};
pub(crate) use layers::{global_avg_pool, leaky_relu};
pub use params::{ParamPath, ParamStore, Snapshot};
pub use resample::{avg_pool, bilinear_upsample2x, bilinear_upsample2x_reference, upsample_matrix};

/// Forward-pass mode shared by every layer with train/eval behaviour.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, running statistics updated, dropout active.
    Train,
    /// Batch statistics and dropout, but running statistics left untouched.
    /// Used when a network is evaluated inside the other network's update.
    TrainFrozen,
    /// Running statistics, no dropout. Deterministic.
    Eval,
}

impl Mode {
    pub fn is_train(self) -> bool {
        !matches!(self, Mode::Eval)
    }
}
