// SPDX-License-Identifier: Apache-2.0

mod eval;
mod gen;
mod infer;
mod meanshape;
mod track;
mod train;

use std::path::Path;

pub use eval::eval;
pub use gen::gen;
pub use infer::infer;
pub use meanshape::meanshape;
pub use track::track;
pub use train::train;

use crate::error::CliError;

/// Fails with a missing-file error unless `path` exists.
fn require(path: &Path) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::missing(path))
    }
}

fn positive(name: &str, v: f64) -> Result<(), CliError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(CliError::usage(format!("--{name} must be a positive number, got {v}")))
    }
}
