//! Experiment harness behind the `lungseg` binary: run configs, training
//! runs with their artifact directories, report tables and sweeps.

mod config;
mod overlay;
mod report;
mod run;
mod sweep;

pub use config::{RunConfig, RunMode, KEYS};
pub use overlay::{contour, overlay_image, write_overlay};
pub use report::{read_row, report, ReportRow, ReportTable, METRICS_JSON};
pub use run::{evaluate_run, run, RunOutcome, DONE_MARKER};
pub use sweep::{sweep, SweepGrid, SweepOutcome};

use crate::Error;

pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;
pub const EXIT_DATA: i32 = 4;

/// Process exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config { .. } | Error::UnknownName { .. } | Error::InvalidArgument(_) => EXIT_CONFIG,
        Error::Diverged { .. } => EXIT_DIVERGED,
        Error::Data(_) | Error::Io { .. } | Error::Image(_) => EXIT_DATA,
        _ => EXIT_FAILURE,
    }
}
