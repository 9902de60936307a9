// SPDX-License-Identifier: Apache-2.0

//! Triangle meshes, oriented point sets and the volumetric tools used to build
//! per-class mean shapes.

mod marching_cubes;
mod mc_tables;
mod mean_shape;
mod obj;
mod sample;
mod simplify;
mod voxel;

use std::collections::BTreeSet;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

pub use marching_cubes::marching_cubes;
pub use mean_shape::{largest_component, mean_shape, shared_spec, MeanShapeConfig};
pub use obj::{load_obj, save_obj};
pub use sample::{sample_points, sample_surface, SurfaceSamples};
pub use simplify::simplify;
pub use voxel::{voxelize, voxelize_in, GridSpec, OccupancyGrid, VoxelStatus};

pub type Vec3 = Vector3<f64>;

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Vec3>) -> Option<Self> {
        let mut it = points.into_iter();
        let first = *it.next()?;
        let (min, max) = it.fold((first, first), |(lo, hi), p| (lo.inf(p), hi.sup(p)));
        Some(Self { min, max })
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn diagonal(&self) -> f64 {
        self.extent().norm()
    }

    pub fn longest_edge(&self) -> f64 {
        self.extent().max()
    }

    pub fn union(&self, other: &Aabb) -> Aabb {
        Aabb {
            min: self.min.inf(&other.min),
            max: self.max.sup(&other.max),
        }
    }
}

/// Indexed triangle mesh.
///
/// Construction validates that every face references existing, pairwise
/// distinct vertices and that all coordinates are finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    vertices: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
    normals: Option<Vec<Vec3>>,
}

impl Mesh {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        validate(&vertices, &faces)?;
        Ok(Self {
            vertices,
            faces,
            normals: None,
        })
    }

    /// Attaches per-vertex normals (as read from `vn` records).
    pub fn with_normals(mut self, normals: Vec<Vec3>) -> Result<Self> {
        if normals.len() != self.vertices.len() {
            return Err(Error::Structure(format!(
                "{} normals for {} vertices",
                normals.len(),
                self.vertices.len()
            )));
        }
        self.normals = Some(normals);
        Ok(self)
    }

    /// Same connectivity, new vertex positions.
    pub fn with_vertices(&self, vertices: Vec<Vec3>) -> Result<Self> {
        if vertices.len() != self.vertices.len() {
            return Err(Error::Structure(format!(
                "expected {} vertices, got {}",
                self.vertices.len(),
                vertices.len()
            )));
        }
        if let Some(i) = vertices.iter().position(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::Structure(format!("vertex {i} has non-finite coordinates")));
        }
        Ok(Self {
            vertices,
            faces: self.faces.clone(),
            normals: None,
        })
    }

    pub(crate) fn from_parts_unchecked(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Self {
        debug_assert!(validate(&vertices, &faces).is_ok());
        Self {
            vertices,
            faces,
            normals: None,
        }
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn normals(&self) -> Option<&[Vec3]> {
        self.normals.as_deref()
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn into_parts(self) -> (Vec<Vec3>, Vec<[usize; 3]>) {
        (self.vertices, self.faces)
    }

    /// Unnormalized face normal `(v1 - v0) x (v2 - v0)`; its length is twice the area.
    pub fn face_cross(&self, f: usize) -> Vec3 {
        let [a, b, c] = self.faces[f];
        let (a, b, c) = (self.vertices[a], self.vertices[b], self.vertices[c]);
        (b - a).cross(&(c - a))
    }

    pub fn face_area(&self, f: usize) -> f64 {
        0.5 * self.face_cross(f).norm()
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    pub fn bbox(&self) -> Option<Aabb> {
        Aabb::from_points(&self.vertices)
    }

    /// Unique undirected edges, each as `[lo, hi]`, in ascending order.
    pub fn edges(&self) -> Vec<[usize; 2]> {
        let mut set = BTreeSet::new();
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                set.insert([a.min(b), a.max(b)]);
            }
        }
        set.into_iter().collect()
    }

    /// Sorted neighbor lists derived from the edge set.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.vertices.len()];
        for [a, b] in self.edges() {
            adj[a].push(b);
            adj[b].push(a);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    /// Number of edges used by exactly one face.
    pub fn boundary_edge_count(&self) -> usize {
        let mut counts = std::collections::BTreeMap::<[usize; 2], usize>::new();
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                *counts.entry([a.min(b), a.max(b)]).or_default() += 1;
            }
        }
        counts.values().filter(|&&c| c == 1).count()
    }

    /// Signed enclosed volume (divergence theorem); positive for outward winding.
    pub fn signed_volume(&self) -> f64 {
        self.faces
            .iter()
            .map(|&[a, b, c]| {
                self.vertices[a].dot(&self.vertices[b].cross(&self.vertices[c])) / 6.0
            })
            .sum()
    }

    pub fn transformed(&self, rotation: &Matrix3<f64>) -> Mesh {
        self.map_vertices(|v| rotation * v)
    }

    pub fn translated(&self, offset: &Vec3) -> Mesh {
        self.map_vertices(|v| v + offset)
    }

    pub fn scaled(&self, s: f64) -> Mesh {
        self.map_vertices(|v| v * s)
    }

    fn map_vertices(&self, f: impl Fn(&Vec3) -> Vec3) -> Mesh {
        Mesh {
            vertices: self.vertices.iter().map(f).collect(),
            faces: self.faces.clone(),
            normals: None,
        }
    }
}

fn validate(vertices: &[Vec3], faces: &[[usize; 3]]) -> Result<()> {
    if let Some(i) = vertices.iter().position(|v| !v.iter().all(|c| c.is_finite())) {
        return Err(Error::Structure(format!("vertex {i} has non-finite coordinates")));
    }
    for (fi, f) in faces.iter().enumerate() {
        if let Some(&bad) = f.iter().find(|&&i| i >= vertices.len()) {
            return Err(Error::Structure(format!(
                "face {fi} references vertex {bad} but mesh has {} vertices",
                vertices.len()
            )));
        }
        if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
            return Err(Error::Structure(format!("face {fi} repeats a vertex: {f:?}")));
        }
    }
    Ok(())
}

/// Surface points with unit normals.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    points: Vec<Vec3>,
    normals: Vec<Vec3>,
}

impl PointSet {
    pub const NORMAL_TOLERANCE: f64 = 1e-6;

    pub fn new(points: Vec<Vec3>, normals: Vec<Vec3>) -> Result<Self> {
        if points.len() != normals.len() {
            return Err(Error::arg(format!(
                "{} points but {} normals",
                points.len(),
                normals.len()
            )));
        }
        if let Some(i) = normals
            .iter()
            .position(|n| (n.norm() - 1.0).abs() > Self::NORMAL_TOLERANCE)
        {
            return Err(Error::arg(format!("normal {i} is not unit length")));
        }
        Ok(Self { points, normals })
    }

    /// Skips the unit-normal check; losses re-validate with their own tolerance.
    pub fn new_unchecked(points: Vec<Vec3>, normals: Vec<Vec3>) -> Self {
        assert_eq!(points.len(), normals.len());
        Self { points, normals }
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn normals(&self) -> &[Vec3] {
        &self.normals
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Scales `pred` and `gt` by the single factor that makes the longest edge of
/// the ground truth's bounding box equal to `target`.
pub fn rescale_to_gt(pred: &Mesh, gt: &Mesh, target: f64) -> Result<(Mesh, Mesh)> {
    let s = rescale_factor(gt, target)?;
    Ok((pred.scaled(s), gt.scaled(s)))
}

pub fn rescale_factor(gt: &Mesh, target: f64) -> Result<f64> {
    let longest = gt
        .bbox()
        .ok_or_else(|| Error::Degenerate("ground-truth mesh has no vertices".into()))?
        .longest_edge();
    if !(longest > 0.0) {
        return Err(Error::Degenerate(
            "ground-truth bounding box has zero extent".into(),
        ));
    }
    if !(target > 0.0) {
        return Err(Error::arg(format!("rescale target must be positive, got {target}")));
    }
    Ok(target / longest)
}

/// Closed-form primitives used by fixtures, tests and benches.
pub mod primitives {
    use super::{Mesh, Vec3};

    /// Axis-aligned box centered at the origin, each face split into an
    /// `n x n` grid of quads (two triangles each), outward winding.
    pub fn box_mesh(size: Vec3, n: usize) -> Mesh {
        let n = n.max(1);
        let mut vertices = Vec::new();
        let mut faces = Vec::new();
        let mut index = std::collections::HashMap::<[i64; 3], usize>::new();
        // Integer lattice keys make shared edge vertices unique.
        let mut vid = |p: [i64; 3], vertices: &mut Vec<Vec3>| -> usize {
            *index.entry(p).or_insert_with(|| {
                let to = |c: i64, s: f64| (c as f64 / n as f64 - 0.5) * s;
                vertices.push(Vec3::new(to(p[0], size.x), to(p[1], size.y), to(p[2], size.z)));
                vertices.len() - 1
            })
        };
        let n_i = n as i64;
        // (normal axis, side, u axis, v axis) with u x v pointing outward.
        let sides: [(usize, i64, usize, usize); 6] = [
            (0, n_i, 1, 2),
            (0, 0, 2, 1),
            (1, n_i, 2, 0),
            (1, 0, 0, 2),
            (2, n_i, 0, 1),
            (2, 0, 1, 0),
        ];
        for &(axis, side, u, v) in &sides {
            for i in 0..n_i {
                for j in 0..n_i {
                    let corner = |du: i64, dv: i64| {
                        let mut p = [0i64; 3];
                        p[axis] = side;
                        p[u] = i + du;
                        p[v] = j + dv;
                        p
                    };
                    let a = vid(corner(0, 0), &mut vertices);
                    let b = vid(corner(1, 0), &mut vertices);
                    let c = vid(corner(1, 1), &mut vertices);
                    let d = vid(corner(0, 1), &mut vertices);
                    faces.push([a, b, c]);
                    faces.push([a, c, d]);
                }
            }
        }
        Mesh::from_parts_unchecked(vertices, faces)
    }

    pub fn cube(n: usize) -> Mesh {
        box_mesh(Vec3::new(1.0, 1.0, 1.0), n)
    }

    /// UV sphere centered at the origin.
    pub fn uv_sphere(radius: f64, stacks: usize, slices: usize) -> Mesh {
        let stacks = stacks.max(2);
        let slices = slices.max(3);
        let mut vertices = vec![Vec3::new(0.0, 0.0, radius)];
        for i in 1..stacks {
            let theta = std::f64::consts::PI * i as f64 / stacks as f64;
            for j in 0..slices {
                let phi = 2.0 * std::f64::consts::PI * j as f64 / slices as f64;
                vertices.push(Vec3::new(
                    radius * theta.sin() * phi.cos(),
                    radius * theta.sin() * phi.sin(),
                    radius * theta.cos(),
                ));
            }
        }
        vertices.push(Vec3::new(0.0, 0.0, -radius));
        let south = vertices.len() - 1;
        let ring = |i: usize, j: usize| 1 + (i - 1) * slices + (j % slices);
        let mut faces = Vec::new();
        for j in 0..slices {
            faces.push([0, ring(1, j), ring(1, j + 1)]);
        }
        for i in 1..stacks - 1 {
            for j in 0..slices {
                let (a, b) = (ring(i, j), ring(i, j + 1));
                let (c, d) = (ring(i + 1, j), ring(i + 1, j + 1));
                faces.push([a, c, d]);
                faces.push([a, d, b]);
            }
        }
        for j in 0..slices {
            faces.push([south, ring(stacks - 1, j + 1), ring(stacks - 1, j)]);
        }
        Mesh::from_parts_unchecked(vertices, faces)
    }

    /// Closed cylinder along z, centered at the origin.
    pub fn cylinder(radius: f64, height: f64, segments: usize, rings: usize) -> Mesh {
        let segments = segments.max(3);
        let rings = rings.max(1);
        let mut vertices = Vec::new();
        for r in 0..=rings {
            let z = height * (r as f64 / rings as f64 - 0.5);
            for s in 0..segments {
                let phi = 2.0 * std::f64::consts::PI * s as f64 / segments as f64;
                vertices.push(Vec3::new(radius * phi.cos(), radius * phi.sin(), z));
            }
        }
        let top = vertices.len();
        vertices.push(Vec3::new(0.0, 0.0, height / 2.0));
        let bottom = vertices.len();
        vertices.push(Vec3::new(0.0, 0.0, -height / 2.0));
        let at = |r: usize, s: usize| r * segments + (s % segments);
        let mut faces = Vec::new();
        for r in 0..rings {
            for s in 0..segments {
                let (a, b) = (at(r, s), at(r, s + 1));
                let (c, d) = (at(r + 1, s), at(r + 1, s + 1));
                faces.push([a, b, d]);
                faces.push([a, d, c]);
            }
        }
        for s in 0..segments {
            faces.push([top, at(rings, s), at(rings, s + 1)]);
            faces.push([bottom, at(0, s + 1), at(0, s)]);
        }
        Mesh::from_parts_unchecked(vertices, faces)
    }
}
