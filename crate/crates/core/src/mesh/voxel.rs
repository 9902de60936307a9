// SPDX-License-Identifier: Apache-2.0

use super::{Aabb, Mesh, Vec3};
use crate::error::{Error, Result};

/// Placement of a regular grid: `dims` cells per axis starting at `origin`
/// (the min corner), each `cell` wide.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub dims: [usize; 3],
    pub origin: Vec3,
    pub cell: Vec3,
}

impl GridSpec {
    /// `resolution` cells per axis spanning `bounds`, plus `pad` extra cells on every side.
    pub fn fit(bounds: &Aabb, resolution: usize, pad: usize) -> Result<Self> {
        if resolution < 2 {
            return Err(Error::arg(format!("grid resolution must be >= 2, got {resolution}")));
        }
        let extent = bounds.extent();
        if extent.iter().any(|&e| !(e > 0.0)) {
            return Err(Error::Degenerate(format!(
                "bounding box has zero extent on some axis: {:?}",
                extent.as_slice()
            )));
        }
        let cell = extent / resolution as f64;
        Ok(Self {
            dims: [resolution + 2 * pad; 3],
            origin: bounds.min - cell * pad as f64,
            cell,
        })
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row-major linear index, z fastest.
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.dims[1] + j) * self.dims[2] + k
    }

    pub fn unindex(&self, idx: usize) -> [usize; 3] {
        let k = idx % self.dims[2];
        let j = (idx / self.dims[2]) % self.dims[1];
        let i = idx / (self.dims[1] * self.dims[2]);
        [i, j, k]
    }

    pub fn center(&self, i: usize, j: usize, k: usize) -> Vec3 {
        self.origin
            + Vec3::new(
                (i as f64 + 0.5) * self.cell.x,
                (j as f64 + 0.5) * self.cell.y,
                (k as f64 + 0.5) * self.cell.z,
            )
    }

    pub fn cell_volume(&self) -> f64 {
        self.cell.x * self.cell.y * self.cell.z
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    spec: GridSpec,
    values: Vec<f64>,
}

/// Outcome flags of a voxelization pass.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct VoxelStatus {
    pub boundary_edges: usize,
}

impl VoxelStatus {
    pub fn is_open(&self) -> bool {
        self.boundary_edges > 0
    }
}

const GRID_MAGIC: &[u8; 4] = b"MTOG";
const GRID_VERSION: u32 = 1;

impl OccupancyGrid {
    pub fn new(spec: GridSpec, values: Vec<f64>) -> Result<Self> {
        if spec.dims.iter().any(|&d| d < 2) {
            return Err(Error::arg(format!("grid dims must be >= 2, got {:?}", spec.dims)));
        }
        if values.len() != spec.len() {
            return Err(Error::arg(format!(
                "grid needs {} values, got {}",
                spec.len(),
                values.len()
            )));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::arg("occupancy values must lie in [0, 1]"));
        }
        Ok(Self { spec, values })
    }

    pub fn zeros(spec: GridSpec) -> Self {
        Self {
            values: vec![0.0; spec.len()],
            spec,
        }
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.spec.index(i, j, k)]
    }

    pub fn occupied_count(&self, iso: f64) -> usize {
        self.values.iter().filter(|&&v| v > iso).count()
    }

    /// Occupied volume (cells with value > 0.5) over total grid volume.
    pub fn occupied_fraction(&self) -> f64 {
        self.occupied_count(0.5) as f64 / self.values.len() as f64
    }

    /// Cell-wise mean of grids sharing one spec.
    pub fn average(grids: &[OccupancyGrid]) -> Result<OccupancyGrid> {
        let first = grids
            .first()
            .ok_or_else(|| Error::arg("cannot average zero grids"))?;
        if grids.iter().any(|g| g.spec != first.spec) {
            return Err(Error::arg("grids must share a spec to be averaged"));
        }
        let n = grids.len() as f64;
        let values = (0..first.values.len())
            .map(|i| grids.iter().map(|g| g.values[i]).sum::<f64>() / n)
            .collect();
        Ok(OccupancyGrid {
            spec: first.spec,
            values,
        })
    }

    /// 1 where value > iso, else 0.
    pub fn binarize(&self, iso: f64) -> OccupancyGrid {
        OccupancyGrid {
            spec: self.spec,
            values: self
                .values
                .iter()
                .map(|&v| if v > iso { 1.0 } else { 0.0 })
                .collect(),
        }
    }

    pub(crate) fn map_values(&self, values: Vec<f64>) -> OccupancyGrid {
        debug_assert_eq!(values.len(), self.values.len());
        OccupancyGrid {
            spec: self.spec,
            values,
        }
    }

    /// Volumetric IoU of the occupied (> 0.5) cells of two grids on the same spec.
    pub fn iou(&self, other: &OccupancyGrid) -> Result<f64> {
        if self.spec != other.spec {
            return Err(Error::arg("IoU needs grids on the same spec"));
        }
        let (mut inter, mut union) = (0usize, 0usize);
        for (a, b) in self.values.iter().zip(&other.values) {
            let (a, b) = (*a > 0.5, *b > 0.5);
            inter += (a && b) as usize;
            union += (a || b) as usize;
        }
        Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
    }

    /// Header (magic, version, dims, origin, cell size) followed by the
    /// row-major payload as little-endian `f32`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + 4 * self.values.len());
        out.extend_from_slice(GRID_MAGIC);
        out.extend_from_slice(&GRID_VERSION.to_le_bytes());
        for d in self.spec.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for c in self.spec.origin.iter().chain(self.spec.cell.iter()) {
            out.extend_from_slice(&c.to_le_bytes());
        }
        for v in &self.values {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(4)? != GRID_MAGIC {
            return Err(Error::arg("not an occupancy grid (bad magic)"));
        }
        let version = cur.u32()?;
        if version != GRID_VERSION {
            return Err(Error::arg(format!("unsupported grid version {version}")));
        }
        let dims = [cur.u32()? as usize, cur.u32()? as usize, cur.u32()? as usize];
        let origin = Vec3::new(cur.f64()?, cur.f64()?, cur.f64()?);
        let cell = Vec3::new(cur.f64()?, cur.f64()?, cur.f64()?);
        let spec = GridSpec { dims, origin, cell };
        let values = (0..spec.len())
            .map(|_| cur.f32().map(f64::from))
            .collect::<Result<Vec<_>>>()?;
        if cur.pos != bytes.len() {
            return Err(Error::arg("trailing bytes after grid payload"));
        }
        OccupancyGrid::new(spec, values)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        let s = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| Error::arg("truncated grid"))?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Slightly skewed so rays do not graze axis-aligned edges or vertices.
const RAY_DIR: [f64; 3] = [1.0, 1e-3, 1e-4];

/// Marks each cell whose center lies inside the mesh (ray-crossing parity).
/// The grid spans the mesh's bounding box with `resolution` cells per axis.
pub fn voxelize(mesh: &Mesh, resolution: usize) -> Result<(OccupancyGrid, VoxelStatus)> {
    let bounds = mesh
        .bbox()
        .ok_or_else(|| Error::Degenerate("mesh has no vertices".into()))?;
    let spec = GridSpec::fit(&bounds, resolution, 0)?;
    Ok(voxelize_in(mesh, &spec))
}

/// Parity voxelization on a caller-provided grid.
pub fn voxelize_in(mesh: &Mesh, spec: &GridSpec) -> (OccupancyGrid, VoxelStatus) {
    let status = VoxelStatus {
        boundary_edges: mesh.boundary_edge_count(),
    };
    if status.is_open() {
        log::warn!(
            "voxelizing an open mesh ({} boundary edges); parity results may be wrong",
            status.boundary_edges
        );
    }

    let dir = Vec3::new(RAY_DIR[0], RAY_DIR[1], RAY_DIR[2]);
    let tris: Vec<[Vec3; 3]> = mesh
        .faces()
        .iter()
        .map(|&[a, b, c]| [mesh.vertices()[a], mesh.vertices()[b], mesh.vertices()[c]])
        .collect();
    let mut grid = OccupancyGrid::zeros(*spec);
    let Some(bounds) = mesh.bbox() else {
        return (grid, status);
    };

    // A ray from a row of cells drifts at most this far off its start in y/z
    // before it leaves the mesh's x-range.
    let span = (bounds.max.x - spec.origin.x).max(0.0) + 1e-9;
    let margin_y = dir.y * span + 1e-9;
    let margin_z = dir.z * span + 1e-9;
    let tri_bounds: Vec<Aabb> = tris
        .iter()
        .map(|t| Aabb::from_points(t.iter()).unwrap())
        .collect();

    let [nx, ny, nz] = spec.dims;
    let mut candidates = Vec::new();
    for j in 0..ny {
        for k in 0..nz {
            let c0 = spec.center(0, j, k);
            candidates.clear();
            candidates.extend((0..tris.len()).filter(|&t| {
                let b = &tri_bounds[t];
                b.min.y - margin_y <= c0.y
                    && c0.y <= b.max.y + margin_y
                    && b.min.z - margin_z <= c0.z
                    && c0.z <= b.max.z + margin_z
            }));
            if candidates.is_empty() {
                continue;
            }
            for i in 0..nx {
                let origin = spec.center(i, j, k);
                if origin.x > bounds.max.x || origin.x < bounds.min.x {
                    continue;
                }
                let hits = candidates
                    .iter()
                    .filter(|&&t| ray_hits(&origin, &dir, &tris[t]))
                    .count();
                if hits % 2 == 1 {
                    let idx = spec.index(i, j, k);
                    grid.values[idx] = 1.0;
                }
            }
        }
    }
    (grid, status)
}

/// Moller-Trumbore; counts hits strictly in front of the origin.
fn ray_hits(origin: &Vec3, dir: &Vec3, tri: &[Vec3; 3]) -> bool {
    let e1 = tri[1] - tri[0];
    let e2 = tri[2] - tri[0];
    let p = dir.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < 1e-300 {
        return false;
    }
    let inv = 1.0 / det;
    let s = origin - tri[0];
    let u = s.dot(&p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return false;
    }
    let q = s.cross(&e1);
    let v = dir.dot(&q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return false;
    }
    e2.dot(&q) * inv > 0.0
}
