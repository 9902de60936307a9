// SPDX-License-Identifier: Apache-2.0

use std::collections::HashMap;

use super::mc_tables::TRI_TABLE;
use super::{Mesh, OccupancyGrid, Vec3};

const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

const EDGES: [[usize; 2]; 12] = [
    [0, 1],
    [1, 2],
    [2, 3],
    [3, 0],
    [4, 5],
    [5, 6],
    [6, 7],
    [7, 4],
    [0, 4],
    [1, 5],
    [2, 6],
    [3, 7],
];

/// Extracts the `iso` level set of a grid whose samples sit at cell centers.
/// Cells with value > iso are inside; triangles wind outward. Vertices on
/// shared lattice edges are welded, so a field that is empty on the grid
/// border yields a closed surface.
pub fn marching_cubes(grid: &OccupancyGrid, iso: f64) -> Mesh {
    let spec = grid.spec();
    let [nx, ny, nz] = spec.dims;
    let mut vertices: Vec<Vec3> = Vec::new();
    let mut faces = Vec::new();
    // (lower lattice point, axis) -> vertex id
    let mut welded: HashMap<(usize, u8), usize> = HashMap::new();

    for i in 0..nx - 1 {
        for j in 0..ny - 1 {
            for k in 0..nz - 1 {
                let mut values = [0.0; 8];
                let mut case = 0usize;
                for (c, off) in CORNERS.iter().enumerate() {
                    values[c] = grid.get(i + off[0], j + off[1], k + off[2]);
                    if values[c] <= iso {
                        case |= 1 << c;
                    }
                }
                if case == 0 || case == 255 {
                    continue;
                }
                let row = &TRI_TABLE[case];
                let mut edge_vertex = [usize::MAX; 12];
                for t in row.chunks(3).take_while(|t| t[0] >= 0) {
                    let mut tri = [0usize; 3];
                    for (slot, &e) in tri.iter_mut().zip(t) {
                        let e = e as usize;
                        if edge_vertex[e] == usize::MAX {
                            let [a, b] = EDGES[e];
                            let (pa, pb) = (CORNERS[a], CORNERS[b]);
                            let lower = [
                                i + pa[0].min(pb[0]),
                                j + pa[1].min(pb[1]),
                                k + pa[2].min(pb[2]),
                            ];
                            let axis = (0..3).find(|&d| pa[d] != pb[d]).unwrap() as u8;
                            let key = (spec.index(lower[0], lower[1], lower[2]), axis);
                            edge_vertex[e] = *welded.entry(key).or_insert_with(|| {
                                let ca = spec.center(i + pa[0], j + pa[1], k + pa[2]);
                                let cb = spec.center(i + pb[0], j + pb[1], k + pb[2]);
                                let (va, vb) = (values[a], values[b]);
                                let t = if (vb - va).abs() > 1e-12 {
                                    ((iso - va) / (vb - va)).clamp(0.0, 1.0)
                                } else {
                                    0.5
                                };
                                vertices.push(ca + (cb - ca) * t);
                                vertices.len() - 1
                            });
                        }
                        *slot = edge_vertex[e];
                    }
                    faces.push(tri);
                }
            }
        }
    }
    Mesh::from_parts_unchecked(vertices, faces)
}
