// SPDX-License-Identifier: Apache-2.0

//! Object-level painter's-algorithm rendering of fixture scenes: amodal and
//! modal masks per object plus synthetic ROI feature grids.

use nalgebra::Vector4;

use crate::detection::{BBox, Mask};
use crate::mesh::Mesh;
use crate::refine::{CameraRig, RoiFeature};

pub const FEATURE_SIZE: usize = 28;
pub const FEATURE_CHANNELS: usize = 3;

/// Camera-space z below which a vertex counts as behind the camera.
const NEAR: f64 = 1e-3;

/// A mesh projected to pixels, keeping camera depth per vertex.
#[derive(Debug, Clone)]
pub struct ProjectedMesh {
    pixels: Vec<[f64; 2]>,
    depth: Vec<f64>,
    /// Triangles with every vertex in front of the camera, with pixel bounds.
    triangles: Vec<([usize; 3], [f64; 4])>,
}

impl ProjectedMesh {
    /// `camera.world` places the mesh.
    pub fn new(mesh: &Mesh, camera: &CameraRig) -> Self {
        let to_clip = camera.model_to_clip();
        let to_cam = camera.model_to_camera();
        let mut pixels = Vec::with_capacity(mesh.num_vertices());
        let mut depth = Vec::with_capacity(mesh.num_vertices());
        for v in mesh.vertices() {
            let h = Vector4::new(v.x, v.y, v.z, 1.0);
            let c = to_clip * h;
            let z = (to_cam * h).z;
            if z > NEAR && c.w > 0.0 {
                let (x, y) = camera.ndc_to_pixel(c.x / c.w, c.y / c.w);
                pixels.push([x, y]);
            } else {
                pixels.push([f64::NAN, f64::NAN]);
            }
            depth.push(z);
        }
        let triangles = mesh
            .faces()
            .iter()
            .filter(|f| f.iter().all(|&i| depth[i] > NEAR))
            .map(|&f| {
                let xs = f.map(|i| pixels[i][0]);
                let ys = f.map(|i| pixels[i][1]);
                let min = |a: [f64; 3]| a[0].min(a[1]).min(a[2]);
                let max = |a: [f64; 3]| a[0].max(a[1]).max(a[2]);
                (f, [min(xs), min(ys), max(xs), max(ys)])
            })
            .collect();
        Self { pixels, depth, triangles }
    }

    /// Camera depth of the nearest surface through pixel position `(x, y)`.
    pub fn depth_at(&self, x: f64, y: f64) -> Option<f64> {
        let mut best: Option<f64> = None;
        for &(f, b) in &self.triangles {
            if x < b[0] || x > b[2] || y < b[1] || y > b[3] {
                continue;
            }
            let [p0, p1, p2] = f.map(|i| self.pixels[i]);
            let area = edge(p0, p1, p2);
            if area == 0.0 {
                continue;
            }
            let w0 = edge(p1, p2, [x, y]) / area;
            let w1 = edge(p2, p0, [x, y]) / area;
            let w2 = edge(p0, p1, [x, y]) / area;
            if w0 < 0.0 || w1 < 0.0 || w2 < 0.0 {
                continue;
            }
            // Perspective-correct depth: 1/z is affine in screen space.
            let inv = w0 / self.depth[f[0]] + w1 / self.depth[f[1]] + w2 / self.depth[f[2]];
            let z = 1.0 / inv;
            if best.is_none_or(|b| z < b) {
                best = Some(z);
            }
        }
        best
    }

    /// Front depth at every pixel center; `None` where uncovered.
    pub fn depth_image(&self, width: usize, height: usize) -> Vec<Option<f64>> {
        let mut out = vec![None; width * height];
        for y in 0..height {
            for x in 0..width {
                out[y * width + x] = self.depth_at(x as f64 + 0.5, y as f64 + 0.5);
            }
        }
        out
    }
}

fn edge(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

/// Something drawn into the frame; only objects get annotations.
#[derive(Debug, Clone)]
pub struct Layer {
    pub projected: ProjectedMesh,
    /// Painter's sort key: camera depth of the layer's origin.
    pub depth: f64,
    pub is_object: bool,
}

/// Per-layer rendering results in layer order.
#[derive(Debug, Clone)]
pub struct Rendered {
    pub amodal: Vec<Mask>,
    pub modal: Vec<Mask>,
    /// Painter's order, far to near.
    pub order: Vec<usize>,
}

/// Paints layers far to near (ties by index); a pixel belongs to the last
/// layer painted over it.
pub fn render(layers: &[Layer], width: usize, height: usize) -> Rendered {
    let mut order: Vec<usize> = (0..layers.len()).collect();
    order.sort_by(|&a, &b| layers[b].depth.total_cmp(&layers[a].depth).then(a.cmp(&b)));
    let mut owner = vec![usize::MAX; width * height];
    let mut amodal = Vec::with_capacity(layers.len());
    for l in layers {
        let img = l.projected.depth_image(width, height);
        amodal.push(Mask::new(width, height, img.iter().map(Option::is_some).collect()).unwrap());
    }
    for &i in &order {
        for (o, &b) in owner.iter_mut().zip(amodal[i].bits()) {
            if b {
                *o = i;
            }
        }
    }
    let modal = (0..layers.len())
        .map(|i| Mask::new(width, height, owner.iter().map(|&o| o == i).collect()).unwrap())
        .collect();
    Rendered { amodal, modal, order }
}

/// Synthetic ROI feature for layer `index` over `roi`, sampled at the
/// centers of a `FEATURE_SIZE` square grid:
/// 0. modal silhouette (1 where the object is the visible surface);
/// 1. visible front depth as `(z - z_c) / z_c * f / h`, 0 elsewhere;
/// 2. signed distance to the modal mask boundary over the longer ROI side,
///    positive inside.
pub fn roi_feature(
    layers: &[Layer],
    rendered: &Rendered,
    index: usize,
    roi: &BBox,
    z_c: f64,
    focal: f64,
) -> RoiFeature {
    let n = FEATURE_SIZE;
    let rank: Vec<usize> = {
        let mut r = vec![0; layers.len()];
        for (k, &i) in rendered.order.iter().enumerate() {
            r[i] = k;
        }
        r
    };
    let nearer: Vec<usize> = (0..layers.len()).filter(|&j| rank[j] > rank[index]).collect();
    let modal = &rendered.modal[index];
    let boundary = boundary_pixels(modal);
    let scale = roi.width().max(roi.height());
    let mut data = vec![0.0; FEATURE_CHANNELS * n * n];
    for gy in 0..n {
        for gx in 0..n {
            let x = roi.x0 + (gx as f64 + 0.5) * roi.width() / n as f64;
            let y = roi.y0 + (gy as f64 + 0.5) * roi.height() / n as f64;
            let own = layers[index].projected.depth_at(x, y);
            let hidden = nearer.iter().any(|&j| layers[j].projected.depth_at(x, y).is_some());
            let visible = own.is_some() && !hidden;
            let cell = gy * n + gx;
            if let (true, Some(z)) = (visible, own) {
                data[cell] = 1.0;
                data[n * n + cell] = (z - z_c) / z_c * focal / roi.height();
            }
            let d = boundary
                .iter()
                .map(|&[bx, by]| (bx - x).powi(2) + (by - y).powi(2))
                .fold(f64::INFINITY, f64::min);
            let d = if d.is_finite() { d.sqrt() / scale } else { 1.0 };
            data[2 * n * n + cell] = if visible { d } else { -d };
        }
    }
    RoiFeature::new(FEATURE_CHANNELS, n, n, data, *roi).expect("finite feature grid")
}

/// Centers of mask pixels with a 4-neighbor outside the mask (or the image).
fn boundary_pixels(mask: &Mask) -> Vec<[f64; 2]> {
    let (w, h) = (mask.width(), mask.height());
    let inside = |x: isize, y: isize| x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h && mask.get(x as usize, y as usize);
    let mut out = Vec::new();
    for y in 0..h as isize {
        for x in 0..w as isize {
            if inside(x, y) && [(1, 0), (-1, 0), (0, 1), (0, -1)].iter().any(|(dx, dy)| !inside(x + dx, y + dy)) {
                out.push([x as f64 + 0.5, y as f64 + 0.5]);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{primitives, Vec3};
    use nalgebra::{Matrix4, Translation3};

    fn camera(size: f64) -> CameraRig {
        CameraRig::new(
            Matrix4::identity(),
            Matrix4::identity(),
            CameraRig::perspective(50f64.to_radians(), 1.0, 0.1, 100.0),
            [0.0, 0.0, size, size],
        )
        .unwrap()
    }

    fn layer(mesh: &Mesh, at: Vec3, is_object: bool) -> Layer {
        let cam = camera(64.0).with_world(Translation3::from(at).to_homogeneous());
        Layer {
            projected: ProjectedMesh::new(mesh, &cam),
            depth: at.z,
            is_object,
        }
    }

    #[test]
    fn square_covers_expected_pixels() {
        // A unit square at depth 4 spans 2 * (0.5 / 4) / tan(25 deg) of the image height.
        let quad = Mesh::new(
            vec![
                Vec3::new(-0.5, -0.5, 0.0),
                Vec3::new(0.5, -0.5, 0.0),
                Vec3::new(0.5, 0.5, 0.0),
                Vec3::new(-0.5, 0.5, 0.0),
            ],
            vec![[0, 1, 2], [0, 2, 3]],
        )
        .unwrap();
        let l = layer(&quad, Vec3::new(0.0, 0.0, 4.0), true);
        let r = render(&[l], 64, 64);
        let side = 64.0 * 0.5 * (0.5 / 4.0) / 25f64.to_radians().tan() * 2.0;
        let expected = side * side;
        let got = r.amodal[0].count() as f64;
        assert!((got - expected).abs() < 4.0 * side, "{got} vs {expected}");
        assert_eq!(r.amodal[0], r.modal[0]);
    }

    #[test]
    fn nearer_layer_hides_farther_one() {
        let cube = primitives::cube(1);
        let far = layer(&cube, Vec3::new(0.0, 0.0, 6.0), true);
        let near = layer(&cube, Vec3::new(0.3, 0.0, 3.0), true);
        let r = render(&[far, near], 64, 64);
        assert_eq!(r.order, vec![0, 1]);
        assert_eq!(r.modal[1], r.amodal[1]);
        assert!(r.modal[0].count() < r.amodal[0].count());
        for (m, a) in r.modal[0].bits().iter().zip(r.amodal[0].bits()) {
            assert!(!m || *a);
        }
    }

    #[test]
    fn behind_camera_draws_nothing() {
        let l = layer(&primitives::cube(1), Vec3::new(0.0, 0.0, -5.0), true);
        assert_eq!(render(&[l], 32, 32).amodal[0].count(), 0);
    }

    #[test]
    fn feature_channels() {
        let cube = primitives::cube(2);
        let l = layer(&cube, Vec3::new(0.0, 0.0, 4.0), true);
        let layers = [l];
        let r = render(&layers, 64, 64);
        let roi = r.amodal[0].bbox().unwrap();
        let f = roi_feature(&layers, &r, 0, &roi, 4.0, camera(64.0).focal_px());
        let c = FEATURE_SIZE / 2;
        assert_eq!(f.get(0, c, c), 1.0);
        // The front face sits half a unit in front of the center.
        let expected = -0.5 / 4.0 * camera(64.0).focal_px() / roi.height();
        assert!((f.get(1, c, c) - expected).abs() < 1e-9);
        assert!(f.get(2, c, c) > f.get(2, 1, c));
        assert!(f.get(2, c, c) > 0.0);
    }
}
