// SPDX-License-Identifier: Apache-2.0

//! Temporal mesh prediction: reference selection, the rotation head, the
//! multi-stage VertAlign + graph-convolution refiner and its training loop.

mod camera;
mod checkpoint;
mod feature;
mod gcn;
mod model;
mod rotation;
mod train;

pub use camera::{project_vertices, CameraRig, Projection};
pub use checkpoint::Checkpoint;
pub use feature::{vert_align, RoiFeature};
pub use gcn::{graph_conv, neighbor_sum};
pub use model::{LossInput, Model, ModelDims, Reference, GRAPH_CONV_LAYERS};
pub(crate) use model::mix;
pub use rotation::{euler_zyx, euler_zyx_derivatives};
pub use train::{evaluate_loss, train, train_stage, TrainConfig, TrainLogRow, TrainSample, TrainStage};

use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{Mesh, Vec3};

/// Depth range of a mesh given in camera coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthExtent {
    pub z_near: f64,
    pub z_far: f64,
    pub dz: f64,
    pub z_c: f64,
}

impl DepthExtent {
    pub fn of_mesh(mesh: &Mesh) -> Result<Self> {
        let (mut z_near, mut z_far) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in mesh.vertices() {
            z_near = z_near.min(v.z);
            z_far = z_far.max(v.z);
        }
        if !z_near.is_finite() {
            return Err(Error::arg("mesh has no vertices"));
        }
        Ok(Self {
            z_near,
            z_far,
            dz: z_far - z_near,
            z_c: 0.5 * (z_far + z_near),
        })
    }

    /// Extent normalized by center depth and by box height over focal length.
    pub fn normalized(&self, focal: f64, box_height: f64) -> Result<f64> {
        normalize_extent(self.dz, self.z_c, focal, box_height)
    }
}

/// `dz / z_c * f / h`.
pub fn normalize_extent(dz: f64, z_c: f64, focal: f64, box_height: f64) -> Result<f64> {
    if z_c <= 0.0 || box_height <= 0.0 {
        return Err(Error::arg(format!("need z_c > 0 and h > 0, got z_c={z_c}, h={box_height}")));
    }
    Ok(dz / z_c * focal / box_height)
}

/// Inverse of [`normalize_extent`].
pub fn denormalize_extent(dz_bar: f64, z_c: f64, focal: f64, box_height: f64) -> Result<f64> {
    if z_c <= 0.0 || box_height <= 0.0 || focal == 0.0 {
        return Err(Error::arg("need z_c > 0, h > 0 and f != 0"));
    }
    Ok(dz_bar * z_c * box_height / focal)
}

/// Random rotation with Euler angles uniform in `[-rot_range, rot_range]`
/// (radians), followed by i.i.d. Gaussian vertex noise of std `sigma`.
pub fn augment_reference(gt: &Mesh, rot_range: f64, sigma: f64, seed: u64) -> Result<Mesh> {
    if sigma < 0.0 || rot_range < 0.0 || !sigma.is_finite() || !rot_range.is_finite() {
        return Err(Error::arg("rotation range and sigma must be finite and non-negative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut angle = || {
        if rot_range > 0.0 {
            rng.random_range(-rot_range..=rot_range)
        } else {
            0.0
        }
    };
    let r = euler_zyx([angle(), angle(), angle()]);
    let noise = Normal::new(0.0, sigma).unwrap();
    let vertices = gt
        .vertices()
        .iter()
        .map(|v| {
            let p = r * v;
            if sigma > 0.0 {
                p + Vec3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng))
            } else {
                p
            }
        })
        .collect();
    gt.with_vertices(vertices)
}

/// The no-match token selects the rotated class mean shape; a tracked object
/// reuses its previous prediction unchanged.
pub fn select_reference(previous: Option<&Mesh>, mean_shape: Option<&Mesh>, rotation: &Matrix3<f64>) -> Result<Mesh> {
    match previous {
        Some(m) => Ok(m.clone()),
        None => {
            let mean = mean_shape.ok_or_else(|| Error::Config("no mean shape for this class".into()))?;
            Ok(mean.transformed(rotation))
        }
    }
}
