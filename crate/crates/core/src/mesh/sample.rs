// SPDX-License-Identifier: Apache-2.0

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Mesh, PointSet, Vec3};
use crate::error::{Error, Result};

/// Area-weighted surface samples together with the face and barycentric
/// weights that produced each point, so that gradients with respect to point
/// positions can be pulled back onto mesh vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceSamples {
    pub points: PointSet,
    pub faces: Vec<usize>,
    pub bary: Vec<[f64; 3]>,
}

impl SurfaceSamples {
    /// The same face and barycentric draws evaluated on `mesh`, which must
    /// share the sampled mesh's faces (e.g. a deformed copy).
    pub fn replay(&self, mesh: &Mesh) -> Result<SurfaceSamples> {
        let v = mesh.vertices();
        let mut points = Vec::with_capacity(self.faces.len());
        let mut normals = Vec::with_capacity(self.faces.len());
        for (&f, w) in self.faces.iter().zip(&self.bary) {
            let [a, b, c] = *mesh
                .faces()
                .get(f)
                .ok_or_else(|| Error::Sampling(format!("face {f} out of range")))?;
            let cross = mesh.face_cross(f);
            let len = cross.norm();
            if !(len > 0.0) {
                return Err(Error::Sampling(format!("face {f} has zero area")));
            }
            points.push(v[a] * w[0] + v[b] * w[1] + v[c] * w[2]);
            normals.push(cross / len);
        }
        Ok(SurfaceSamples {
            points: PointSet::new_unchecked(points, normals),
            faces: self.faces.clone(),
            bary: self.bary.clone(),
        })
    }
}

pub fn sample_points(mesh: &Mesh, n: usize, seed: u64) -> Result<PointSet> {
    sample_surface(mesh, n, seed).map(|s| s.points)
}

pub fn sample_surface(mesh: &Mesh, n: usize, seed: u64) -> Result<SurfaceSamples> {
    if n == 0 {
        return Err(Error::Sampling("sample count must be at least 1".into()));
    }
    let crosses: Vec<Vec3> = (0..mesh.num_faces()).map(|f| mesh.face_cross(f)).collect();
    let mut cumulative = Vec::with_capacity(crosses.len());
    let mut total = 0.0;
    for c in &crosses {
        total += c.norm();
        cumulative.push(total);
    }
    if !(total > 0.0) {
        return Err(Error::Sampling("mesh has no face with positive area".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n);
    let mut normals = Vec::with_capacity(n);
    let mut faces = Vec::with_capacity(n);
    let mut bary = Vec::with_capacity(n);
    for _ in 0..n {
        let r = rng.random::<f64>() * total;
        // First face whose cumulative area exceeds r; zero-area faces are never hit.
        let f = cumulative
            .partition_point(|&c| c <= r)
            .min(cumulative.len() - 1);
        let (r1, r2): (f64, f64) = (rng.random(), rng.random());
        let s = r1.sqrt();
        let w = [1.0 - s, s * (1.0 - r2), s * r2];
        let [a, b, c] = mesh.faces()[f];
        let v = mesh.vertices();
        points.push(v[a] * w[0] + v[b] * w[1] + v[c] * w[2]);
        normals.push(crosses[f].normalize());
        faces.push(f);
        bary.push(w);
    }
    Ok(SurfaceSamples {
        points: PointSet::new_unchecked(points, normals),
        faces,
        bary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tri() -> Mesh {
        Mesh::new(
            vec![Vec3::zeros(), Vec3::new(2.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)],
            vec![[0, 1, 2]],
        )
        .unwrap()
    }

    #[test]
    fn single_triangle_points_are_inside() {
        let s = sample_points(&tri(), 1000, 7).unwrap();
        assert_eq!(s.len(), 1000);
        for (p, n) in s.points().iter().zip(s.normals()) {
            assert_eq!(p.z, 0.0);
            assert!(p.x >= 0.0 && p.y >= 0.0 && p.x / 2.0 + p.y <= 1.0 + 1e-12);
            assert_eq!(*n, Vec3::z());
        }
    }

    #[test]
    fn area_proportional_face_choice() {
        // Face 0 has area 3/2, face 1 has area 1/2.
        let m = Mesh::new(
            vec![
                Vec3::zeros(),
                Vec3::new(3.0, 0.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
                Vec3::new(0.0, 0.0, 5.0),
                Vec3::new(1.0, 0.0, 5.0),
                Vec3::new(0.0, 1.0, 5.0),
            ],
            vec![[0, 1, 2], [3, 4, 5]],
        )
        .unwrap();
        let n = 100_000;
        let s = sample_surface(&m, n, 3).unwrap();
        let first = s.faces.iter().filter(|&&f| f == 0).count();
        let frac = first as f64 / n as f64;
        assert!((frac - 0.75).abs() < 0.01, "{frac}");
        // chi-square with one degree of freedom, 99.9% critical value 10.83
        let expected = [0.75 * n as f64, 0.25 * n as f64];
        let observed = [first as f64, (n - first) as f64];
        let chi2: f64 = (0..2)
            .map(|i| (observed[i] - expected[i]).powi(2) / expected[i])
            .sum();
        assert!(chi2 < 10.83, "{chi2}");
    }

    #[test]
    fn replay_reproduces_and_follows_vertices() {
        let m = tri();
        let s = sample_surface(&m, 50, 4).unwrap();
        assert_eq!(s.replay(&m).unwrap(), s);
        let moved = m.translated(&Vec3::new(1.0, 2.0, 3.0));
        let r = s.replay(&moved).unwrap();
        for (a, b) in r.points.points().iter().zip(s.points.points()) {
            assert!((a - b - Vec3::new(1.0, 2.0, 3.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = sample_surface(&tri(), 500, 11).unwrap();
        let b = sample_surface(&tri(), 500, 11).unwrap();
        assert_eq!(a, b);
        let c = sample_surface(&tri(), 500, 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn degenerate_mesh_fails() {
        let m = Mesh::new(
            vec![Vec3::zeros(), Vec3::x(), Vec3::x() * 2.0],
            vec![[0, 1, 2]],
        )
        .unwrap();
        assert!(matches!(sample_points(&m, 10, 0), Err(Error::Sampling(_))));
        assert!(sample_points(&tri(), 0, 0).is_err());
    }

    #[test]
    fn zero_area_faces_are_skipped() {
        let m = Mesh::new(
            vec![Vec3::zeros(), Vec3::x(), Vec3::x() * 2.0, Vec3::y()],
            vec![[0, 1, 2], [0, 1, 3]],
        )
        .unwrap();
        let s = sample_surface(&m, 2000, 1).unwrap();
        assert!(s.faces.iter().all(|&f| f == 1));
    }
}
