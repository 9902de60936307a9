// SPDX-License-Identifier: Apache-2.0

pub mod dataset;
pub mod detection;
pub mod error;
pub mod losses;
pub mod mesh;
pub mod metrics;
pub mod pipeline;
pub mod refine;
pub mod spatial;
pub mod tracker;

pub use detection::{BBox, Detection, GroundTruthObject, Mask};
pub use error::{Error, Result};
pub use mesh::{Mesh, PointSet, Vec3};
