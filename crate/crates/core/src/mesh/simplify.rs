// SPDX-License-Identifier: Apache-2.0

//! Quadric-error edge collapse (Garland-Heckbert) with a boundary penalty.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::{Matrix3, Matrix4, Vector4};

use super::{Mesh, Vec3};

/// Weight of the perpendicular planes added along open boundary edges.
const BOUNDARY_WEIGHT: f64 = 1e3;
/// Collapses that turn any surviving face by more than ~78 degrees are rejected.
const MIN_NORMAL_COS: f64 = 0.2;

#[derive(Debug, Clone, Copy)]
struct Candidate {
    cost: f64,
    keep: usize,
    drop: usize,
    stamp: (u32, u32),
    target: Vec3,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Candidate {}
impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Candidate {
    // BinaryHeap is a max-heap; invert so the cheapest (then lowest-index) edge pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.keep.cmp(&self.keep))
            .then_with(|| other.drop.cmp(&self.drop))
    }
}

struct State {
    pos: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
    face_alive: Vec<bool>,
    incident: Vec<Vec<usize>>,
    quadric: Vec<Matrix4<f64>>,
    stamp: Vec<u32>,
    alive_faces: usize,
}

impl State {
    fn neighbors(&self, v: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self.incident[v]
            .iter()
            .filter(|&&f| self.face_alive[f])
            .flat_map(|&f| self.faces[f])
            .filter(|&u| u != v)
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    fn edge_faces(&self, a: usize, b: usize) -> Vec<usize> {
        self.incident[a]
            .iter()
            .copied()
            .filter(|&f| self.face_alive[f] && self.faces[f].contains(&b))
            .collect()
    }

    fn is_boundary_vertex(&self, v: usize) -> bool {
        self.neighbors(v)
            .into_iter()
            .any(|u| self.edge_faces(v, u).len() == 1)
    }

    fn candidate(&self, a: usize, b: usize) -> Candidate {
        let (keep, drop) = (a.min(b), a.max(b));
        let q = self.quadric[keep] + self.quadric[drop];
        let (pa, pb) = (self.pos[keep], self.pos[drop]);
        let mid = (pa + pb) * 0.5;
        let mut best = (quadric_error(&q, &mid), mid);
        for p in [pa, pb] {
            let e = quadric_error(&q, &p);
            if e < best.0 {
                best = (e, p);
            }
        }
        let a3: Matrix3<f64> = q.fixed_view::<3, 3>(0, 0).into_owned();
        let rhs = -q.fixed_view::<3, 1>(0, 3).into_owned();
        let scale = a3.norm();
        if scale > 0.0 && a3.determinant().abs() > 1e-9 * scale.powi(3) {
            if let Some(inv) = a3.try_inverse() {
                let p = inv * rhs;
                // Stay near the edge; far optima come from nearly flat neighborhoods.
                if (p - mid).norm() <= 2.0 * (pa - pb).norm() {
                    let e = quadric_error(&q, &p);
                    if e <= best.0 {
                        best = (e, p);
                    }
                }
            }
        }
        Candidate {
            cost: best.0.max(0.0),
            keep,
            drop,
            stamp: (self.stamp[keep], self.stamp[drop]),
            target: best.1,
        }
    }

    fn collapse_is_valid(&self, c: &Candidate) -> bool {
        let (a, b) = (c.keep, c.drop);
        let shared = self.edge_faces(a, b);
        if shared.is_empty() || self.alive_faces < shared.len() + 4 {
            return false;
        }
        // Link condition: common neighbors are exactly the apexes of the shared faces.
        let na = self.neighbors(a);
        let nb = self.neighbors(b);
        let common: Vec<usize> = na.iter().copied().filter(|u| nb.contains(u)).collect();
        let mut apexes: Vec<usize> = shared
            .iter()
            .flat_map(|&f| self.faces[f])
            .filter(|&u| u != a && u != b)
            .collect();
        apexes.sort_unstable();
        apexes.dedup();
        if common != apexes {
            return false;
        }
        if shared.len() == 2 && self.is_boundary_vertex(a) && self.is_boundary_vertex(b) {
            return false;
        }
        for v in [a, b] {
            for &f in &self.incident[v] {
                if !self.face_alive[f] || shared.contains(&f) {
                    continue;
                }
                let tri = self.faces[f];
                let old = tri_cross(&tri.map(|i| self.pos[i]));
                let new = tri_cross(&tri.map(|i| if i == a || i == b { c.target } else { self.pos[i] }));
                let (lo, ln) = (old.norm(), new.norm());
                if ln <= 1e-12 * (1.0 + lo) || old.dot(&new) < MIN_NORMAL_COS * lo * ln {
                    return false;
                }
            }
        }
        true
    }

    fn collapse(&mut self, c: &Candidate) {
        let (a, b) = (c.keep, c.drop);
        for f in self.edge_faces(a, b) {
            self.face_alive[f] = false;
            self.alive_faces -= 1;
        }
        let moved = std::mem::take(&mut self.incident[b]);
        for &f in &moved {
            if self.face_alive[f] {
                for slot in self.faces[f].iter_mut() {
                    if *slot == b {
                        *slot = a;
                    }
                }
                self.incident[a].push(f);
            }
        }
        self.incident[a].retain(|&f| self.face_alive[f]);
        self.incident[a].sort_unstable();
        self.incident[a].dedup();
        self.pos[a] = c.target;
        self.quadric[a] = self.quadric[a] + self.quadric[b];
        self.stamp[a] += 1;
        self.stamp[b] += 1;
    }
}

fn tri_cross(p: &[Vec3; 3]) -> Vec3 {
    (p[1] - p[0]).cross(&(p[2] - p[0]))
}

fn quadric_error(q: &Matrix4<f64>, p: &Vec3) -> f64 {
    let h = Vector4::new(p.x, p.y, p.z, 1.0);
    (h.transpose() * q * h)[(0, 0)]
}

fn plane_quadric(normal: &Vec3, point: &Vec3, weight: f64) -> Matrix4<f64> {
    let plane = Vector4::new(normal.x, normal.y, normal.z, -normal.dot(point));
    plane * plane.transpose() * weight
}

/// Collapses edges in order of increasing quadric error until the mesh has at
/// most `target_faces` faces or no collapse preserves manifoldness and face
/// orientation. Returns a compacted mesh.
pub fn simplify(mesh: &Mesh, target_faces: usize) -> Mesh {
    if mesh.num_faces() <= target_faces {
        return mesh.clone();
    }
    let n = mesh.num_vertices();
    let mut st = State {
        pos: mesh.vertices().to_vec(),
        faces: mesh.faces().to_vec(),
        face_alive: vec![true; mesh.num_faces()],
        incident: vec![Vec::new(); n],
        quadric: vec![Matrix4::zeros(); n],
        stamp: vec![0; n],
        alive_faces: mesh.num_faces(),
    };
    for (f, tri) in mesh.faces().iter().enumerate() {
        for &v in tri {
            st.incident[v].push(f);
        }
        let cross = mesh.face_cross(f);
        let len = cross.norm();
        if len > 0.0 {
            let q = plane_quadric(&(cross / len), &st.pos[tri[0]], 0.5 * len);
            for &v in tri {
                st.quadric[v] += q;
            }
        }
    }
    for [a, b] in mesh.edges() {
        let faces = st.edge_faces(a, b);
        if faces.len() == 1 {
            let face_n = mesh.face_cross(faces[0]);
            let edge = st.pos[b] - st.pos[a];
            let perp = edge.cross(&face_n);
            let len = perp.norm();
            if len > 0.0 {
                let q = plane_quadric(&(perp / len), &st.pos[a], BOUNDARY_WEIGHT * edge.norm_squared());
                st.quadric[a] += q;
                st.quadric[b] += q;
            }
        }
    }

    let mut heap: BinaryHeap<Candidate> = mesh
        .edges()
        .into_iter()
        .map(|[a, b]| st.candidate(a, b))
        .collect();

    while st.alive_faces > target_faces {
        let Some(c) = heap.pop() else { break };
        if c.stamp != (st.stamp[c.keep], st.stamp[c.drop]) {
            continue;
        }
        if !st.collapse_is_valid(&c) {
            continue;
        }
        st.collapse(&c);
        for u in st.neighbors(c.keep) {
            heap.push(st.candidate(c.keep, u));
        }
    }

    let mut remap = vec![usize::MAX; n];
    let mut vertices = Vec::new();
    let mut faces = Vec::with_capacity(st.alive_faces);
    for (f, tri) in st.faces.iter().enumerate() {
        if !st.face_alive[f] {
            continue;
        }
        let mapped = tri.map(|v| {
            if remap[v] == usize::MAX {
                remap[v] = vertices.len();
                vertices.push(st.pos[v]);
            }
            remap[v]
        });
        faces.push(mapped);
    }
    Mesh::from_parts_unchecked(vertices, faces)
}
