// SPDX-License-Identifier: Apache-2.0

use nalgebra::{Matrix2x3, Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use crate::detection::BBox;
use crate::error::{Error, Result};
use crate::mesh::Vec3;

/// Model -> world -> camera -> clip transforms plus the pixel viewport.
/// Camera space looks down +z with y up; clip `w` equals camera depth for
/// [`CameraRig::perspective`] projections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraRig {
    pub world: Matrix4<f64>,
    pub view: Matrix4<f64>,
    pub projection: Matrix4<f64>,
    /// `(x, y, width, height)` in pixels.
    pub viewport: [f64; 4],
}

impl CameraRig {
    pub fn new(world: Matrix4<f64>, view: Matrix4<f64>, projection: Matrix4<f64>, viewport: [f64; 4]) -> Result<Self> {
        if viewport[2] <= 0.0 || viewport[3] <= 0.0 {
            return Err(Error::arg("viewport width and height must be positive"));
        }
        let all = world.iter().chain(view.iter()).chain(projection.iter());
        if !all.chain(viewport.iter()).all(|v| v.is_finite()) {
            return Err(Error::arg("camera matrices must be finite"));
        }
        Ok(Self {
            world,
            view,
            projection,
            viewport,
        })
    }

    /// Perspective projection with vertical field of view `fov_y` (radians).
    pub fn perspective(fov_y: f64, aspect: f64, near: f64, far: f64) -> Matrix4<f64> {
        let f = 1.0 / (0.5 * fov_y).tan();
        let mut p = Matrix4::zeros();
        p[(0, 0)] = f / aspect;
        p[(1, 1)] = f;
        p[(2, 2)] = far / (far - near);
        p[(2, 3)] = -near * far / (far - near);
        p[(3, 2)] = 1.0;
        p
    }

    /// The same camera with a different model -> world transform.
    pub fn with_world(&self, world: Matrix4<f64>) -> Self {
        Self { world, ..self.clone() }
    }

    /// Vertical focal length in pixels.
    pub fn focal_px(&self) -> f64 {
        self.projection[(1, 1)] * 0.5 * self.viewport[3]
    }

    pub fn model_to_clip(&self) -> Matrix4<f64> {
        self.projection * self.view * self.world
    }

    pub fn model_to_camera(&self) -> Matrix4<f64> {
        self.view * self.world
    }

    /// Pixel position of a model-space point, `None` behind the camera.
    pub fn project_point(&self, p: &Vec3) -> Option<(f64, f64)> {
        let c = self.model_to_clip() * Vector4::new(p.x, p.y, p.z, 1.0);
        (c.w > 0.0).then(|| self.ndc_to_pixel(c.x / c.w, c.y / c.w))
    }

    pub fn ndc_to_pixel(&self, x: f64, y: f64) -> (f64, f64) {
        let [vx, vy, w, h] = self.viewport;
        (vx + 0.5 * (x + 1.0) * w, vy + 0.5 * (1.0 - y) * h)
    }
}

/// Vertex positions normalized into an ROI box, with their derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    /// `(u, v)` in `[0, 1]^2`; `u` grows with pixel x, `v` with pixel y.
    pub coords: Vec<[f64; 2]>,
    /// `d(u, v) / d(vertex)`; zero rows along clamped axes and for vertices
    /// behind the camera.
    pub jacobian: Vec<Matrix2x3<f64>>,
    /// False for vertices with clip `w <= 0`.
    pub valid: Vec<bool>,
}

/// Projects model-space vertices through the rig and normalizes the pixel
/// positions into `roi`, clamping to the box.
pub fn project_vertices(vertices: &[Vec3], camera: &CameraRig, roi: &BBox) -> Projection {
    let m = camera.model_to_clip();
    let [_, _, vw, vh] = camera.viewport;
    let (rw, rh) = (roi.width(), roi.height());
    let mut out = Projection {
        coords: Vec::with_capacity(vertices.len()),
        jacobian: Vec::with_capacity(vertices.len()),
        valid: Vec::with_capacity(vertices.len()),
    };
    for v in vertices {
        let c = m * Vector4::new(v.x, v.y, v.z, 1.0);
        if c.w <= 0.0 {
            out.coords.push([0.0, 0.0]);
            out.jacobian.push(Matrix2x3::zeros());
            out.valid.push(false);
            continue;
        }
        let (px, py) = camera.ndc_to_pixel(c.x / c.w, c.y / c.w);
        let u = (px - roi.x0) / rw;
        let s = (py - roi.y0) / rh;
        // d(ndc_x)/dc = (1/w, 0, 0, -x/w^2); pixels scale it by vw/2, the ROI by 1/rw.
        let inv_w = 1.0 / c.w;
        let du_dc = Vector4::new(inv_w, 0.0, 0.0, -c.x * inv_w * inv_w) * (0.5 * vw / rw);
        let ds_dc = Vector4::new(0.0, inv_w, 0.0, -c.y * inv_w * inv_w) * (-0.5 * vh / rh);
        let lin = m.fixed_view::<4, 3>(0, 0);
        let mut j = Matrix2x3::zeros();
        if (0.0..=1.0).contains(&u) {
            j.set_row(0, &(du_dc.transpose() * lin));
        }
        if (0.0..=1.0).contains(&s) {
            j.set_row(1, &(ds_dc.transpose() * lin));
        }
        out.coords.push([u.clamp(0.0, 1.0), s.clamp(0.0, 1.0)]);
        out.jacobian.push(j);
        out.valid.push(true);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Translation3;

    fn rig() -> CameraRig {
        let world = Translation3::new(0.2, -0.1, 5.0).to_homogeneous();
        let p = CameraRig::perspective(0.8, 1.0, 0.1, 100.0);
        CameraRig::new(world, Matrix4::identity(), p, [0.0, 0.0, 128.0, 128.0]).unwrap()
    }

    #[test]
    fn identity_rig_maps_ndc_origin_to_viewport_center() {
        let cam = CameraRig::new(
            Matrix4::identity(),
            Matrix4::identity(),
            Matrix4::identity(),
            [0.0, 0.0, 100.0, 100.0],
        )
        .unwrap();
        assert_eq!(cam.project_point(&Vec3::zeros()), Some((50.0, 50.0)));
        assert!(CameraRig::new(Matrix4::identity(), Matrix4::identity(), Matrix4::identity(), [0.0, 0.0, 0.0, 1.0]).is_err());
    }

    #[test]
    fn optical_axis_hits_principal_point() {
        let cam = rig().with_world(Translation3::new(0.0, 0.0, 7.0).to_homogeneous());
        let (x, y) = cam.project_point(&Vec3::zeros()).unwrap();
        assert!((x - 64.0).abs() < 1e-12 && (y - 64.0).abs() < 1e-12);
        // Up in camera space is up on screen, i.e. smaller pixel y.
        assert!(cam.project_point(&Vec3::new(0.0, 1.0, 0.0)).unwrap().1 < 64.0);
    }

    #[test]
    fn outside_roi_is_clamped_and_behind_camera_flagged() {
        let cam = rig();
        let roi = BBox::new(60.0, 60.0, 70.0, 70.0).unwrap();
        let p = project_vertices(&[Vec3::new(3.0, 0.0, 0.0), Vec3::new(0.0, 0.0, -9.0)], &cam, &roi);
        assert_eq!(p.coords[0][0], 1.0);
        assert_eq!(p.jacobian[0].row(0).norm(), 0.0);
        assert!(!p.valid[1]);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let cam = rig();
        let roi = BBox::new(40.0, 30.0, 90.0, 100.0).unwrap();
        let v = Vec3::new(0.3, 0.25, -0.4);
        let p = project_vertices(&[v], &cam, &roi);
        let h = 1e-6;
        for k in 0..3 {
            let mut a = v;
            let mut b = v;
            a[k] += h;
            b[k] -= h;
            let pa = project_vertices(&[a], &cam, &roi).coords[0];
            let pb = project_vertices(&[b], &cam, &roi).coords[0];
            for r in 0..2 {
                let fd = (pa[r] - pb[r]) / (2.0 * h);
                assert!((fd - p.jacobian[0][(r, k)]).abs() < 1e-7, "{fd} vs {}", p.jacobian[0][(r, k)]);
            }
        }
    }
}
