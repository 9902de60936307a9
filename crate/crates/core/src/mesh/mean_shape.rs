// SPDX-License-Identifier: Apache-2.0

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::{marching_cubes, simplify, voxelize_in, Aabb, GridSpec, Mesh, OccupancyGrid};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanShapeConfig {
    /// Cells per axis across the union bounding box of the inputs.
    pub resolution: usize,
    /// Averaged occupancy must exceed this to count as inside.
    pub iso: f64,
    pub target_faces: usize,
}

impl Default for MeanShapeConfig {
    fn default() -> Self {
        Self {
            resolution: 32,
            iso: 0.5,
            target_faces: 4000,
        }
    }
}

/// Builds a class mean shape from instance meshes that already share an
/// object coordinate frame: average their occupancy grids, binarize at
/// `iso`, keep the largest 6-connected component, extract its boundary with
/// marching cubes (interpolating the averaged occupancy) and simplify to at
/// most `target_faces` faces.
pub fn mean_shape(meshes: &[Mesh], cfg: &MeanShapeConfig) -> Result<Mesh> {
    let refs: Vec<&Mesh> = meshes.iter().collect();
    let spec = shared_spec(&refs, cfg.resolution, 1)
        .map_err(|_| Error::arg("mean shape needs at least one non-empty mesh"))?;
    let grids: Vec<OccupancyGrid> = meshes.iter().map(|m| voxelize_in(m, &spec).0).collect();
    let mean = OccupancyGrid::average(&grids)?;
    let solid = largest_component(&mean.binarize(cfg.iso));
    if solid.occupied_count(0.5) == 0 {
        return Err(Error::Degenerate(format!(
            "no cell exceeds iso {} after averaging {} grids",
            cfg.iso,
            meshes.len()
        )));
    }
    // Same inside set as `solid`, but the averaged values place the surface
    // between cell centers.
    let field: Vec<f64> = mean
        .values()
        .iter()
        .zip(solid.values())
        .map(|(&m, &s)| if s > 0.5 || m <= cfg.iso { m } else { 0.0 })
        .collect();
    let surface = marching_cubes(&OccupancyGrid::new(spec, field)?, cfg.iso);
    Ok(simplify(&surface, cfg.target_faces))
}

/// Keeps the largest 6-connected component of a binary grid. Equal sizes are
/// resolved in favor of the component containing the lowest linear index.
pub fn largest_component(binary: &OccupancyGrid) -> OccupancyGrid {
    let spec = *binary.spec();
    let occupied: Vec<bool> = binary.values().iter().map(|&v| v > 0.5).collect();
    let mut label = vec![usize::MAX; occupied.len()];
    let mut best: Option<(usize, usize)> = None; // (label, size)
    let mut queue = VecDeque::new();
    let mut next_label = 0;
    for start in 0..occupied.len() {
        if !occupied[start] || label[start] != usize::MAX {
            continue;
        }
        let id = next_label;
        next_label += 1;
        label[start] = id;
        queue.push_back(start);
        let mut size = 0;
        while let Some(idx) = queue.pop_front() {
            size += 1;
            for nb in face_neighbors(&spec, idx) {
                if occupied[nb] && label[nb] == usize::MAX {
                    label[nb] = id;
                    queue.push_back(nb);
                }
            }
        }
        if best.map_or(true, |(_, s)| size > s) {
            best = Some((id, size));
        }
    }
    let keep = best.map(|(id, _)| id);
    binary.map_values(
        label
            .iter()
            .map(|&l| if Some(l) == keep { 1.0 } else { 0.0 })
            .collect(),
    )
}

fn face_neighbors(spec: &GridSpec, idx: usize) -> impl Iterator<Item = usize> + '_ {
    let c = spec.unindex(idx);
    (0..3).flat_map(move |axis| {
        [-1i64, 1].into_iter().filter_map(move |d| {
            let v = c[axis] as i64 + d;
            if v < 0 || v >= spec.dims[axis] as i64 {
                return None;
            }
            let mut n = c;
            n[axis] = v as usize;
            Some(spec.index(n[0], n[1], n[2]))
        })
    })
}

/// Grid fitted around the union bounds of several meshes.
pub fn shared_spec(meshes: &[&Mesh], resolution: usize, pad: usize) -> Result<GridSpec> {
    let bounds: Aabb = meshes
        .iter()
        .filter_map(|m| m.bbox())
        .reduce(|a, b| a.union(&b))
        .ok_or_else(|| Error::arg("no vertices"))?;
    GridSpec::fit(&bounds, resolution, pad)
}
