// SPDX-License-Identifier: Apache-2.0

//! Mesh training losses: Chamfer distance, normal distance and the edge
//! regularizer, with gradients with respect to predicted vertex positions.
//!
//! Gradients treat the sampled faces and barycentric weights as constants
//! (reparameterized sampling) and the nearest-neighbor pairing as fixed, so
//! they are exact derivatives of the loss away from pairing switches.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{sample_surface, Mesh, PointSet, SurfaceSamples, Vec3};
use crate::spatial::KdTree;

/// Normals further than this from unit length are rejected by the normal term.
pub const NORMAL_UNIT_TOLERANCE: f64 = 1e-4;

/// Default per-mesh sample count for the training loss.
pub const DEFAULT_LOSS_SAMPLES: usize = 5000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub chamfer: f64,
    pub normal: f64,
    pub edge: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            chamfer: 1.0,
            normal: 0.1,
            edge: 0.1,
        }
    }
}

impl LossWeights {
    pub fn new(chamfer: f64, normal: f64, edge: f64) -> Result<Self> {
        let w = Self {
            chamfer,
            normal,
            edge,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.chamfer, self.normal, self.edge];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::arg(format!("loss weights must be finite and >= 0: {all:?}")));
        }
        if all.iter().all(|&w| w == 0.0) {
            return Err(Error::arg("at least one loss weight must be positive"));
        }
        Ok(())
    }
}

/// Per-term values and their weighted sum.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub chamfer: f64,
    pub normal: f64,
    pub edge: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn weighted(chamfer: f64, normal: f64, edge: f64, w: &LossWeights) -> Self {
        Self {
            chamfer,
            normal,
            edge,
            total: w.chamfer * chamfer + w.normal * normal + w.edge * edge,
        }
    }

    /// Name of the first non-finite term, if any.
    pub fn non_finite_term(&self) -> Option<&'static str> {
        [
            ("chamfer", self.chamfer),
            ("normal", self.normal),
            ("edge", self.edge),
            ("total", self.total),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(n, _)| n)
    }
}

impl std::ops::AddAssign for LossBreakdown {
    fn add_assign(&mut self, o: Self) {
        self.chamfer += o.chamfer;
        self.normal += o.normal;
        self.edge += o.edge;
        self.total += o.total;
    }
}

/// Nearest neighbors in both directions between two point sets.
#[derive(Debug, Clone)]
pub struct Pairing {
    /// For each point of P: (index into Q, squared distance).
    pub p_to_q: Vec<(usize, f64)>,
    /// For each point of Q: (index into P, squared distance).
    pub q_to_p: Vec<(usize, f64)>,
}

impl Pairing {
    pub fn new(p: &[Vec3], q: &[Vec3]) -> Result<Self> {
        if p.is_empty() || q.is_empty() {
            return Err(Error::arg("point sets must be nonempty"));
        }
        let tq = KdTree::new(q);
        let tp = KdTree::new(p);
        let p_to_q = p.par_iter().map(|x| tq.nearest(x).unwrap()).collect();
        let q_to_p = q.par_iter().map(|x| tp.nearest(x).unwrap()).collect();
        Ok(Self { p_to_q, q_to_p })
    }

    pub fn chamfer(&self) -> f64 {
        mean(self.p_to_q.iter().map(|&(_, d)| d)) + mean(self.q_to_p.iter().map(|&(_, d)| d))
    }
}

/// Sequential mean; fixed summation order keeps results reproducible.
fn mean(values: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = values.len();
    values.sum::<f64>() / n as f64
}

/// Bidirectional mean of squared nearest-neighbor distances.
pub fn chamfer(p: &PointSet, q: &PointSet) -> Result<f64> {
    Ok(Pairing::new(p.points(), q.points())?.chamfer())
}

/// Negated mean absolute cosine between each point's normal and its Chamfer
/// partner's normal, summed over both directions. Lies in [-2, 0]; -2 when
/// every matched pair is parallel or anti-parallel.
pub fn normal_distance(p: &PointSet, q: &PointSet) -> Result<f64> {
    check_unit(p)?;
    check_unit(q)?;
    let pairing = Pairing::new(p.points(), q.points())?;
    Ok(normal_term(&pairing, p.normals(), q.normals()))
}

fn normal_term(pairing: &Pairing, pn: &[Vec3], qn: &[Vec3]) -> f64 {
    let fwd = mean(pairing.p_to_q.iter().enumerate().map(|(i, &(j, _))| pn[i].dot(&qn[j]).abs()));
    let bwd = mean(pairing.q_to_p.iter().enumerate().map(|(j, &(i, _))| qn[j].dot(&pn[i]).abs()));
    -(fwd + bwd)
}

fn check_unit(p: &PointSet) -> Result<()> {
    match p
        .normals()
        .iter()
        .position(|n| (n.norm() - 1.0).abs() > NORMAL_UNIT_TOLERANCE)
    {
        Some(i) => Err(Error::arg(format!("normal {i} is not unit length"))),
        None => Ok(()),
    }
}

/// Mean squared length over the unique undirected edges.
pub fn edge_regularizer(mesh: &Mesh) -> Result<f64> {
    let edges = mesh.edges();
    if edges.is_empty() {
        return Err(Error::arg("mesh has no edges"));
    }
    let v = mesh.vertices();
    Ok(mean(edges.iter().map(|&[a, b]| (v[a] - v[b]).norm_squared())))
}

fn edge_regularizer_grad(mesh: &Mesh, scale: f64, grad: &mut [Vec3]) -> f64 {
    let edges = mesh.edges();
    let v = mesh.vertices();
    let inv = 1.0 / edges.len() as f64;
    let mut total = 0.0;
    for &[a, b] in &edges {
        let d = v[a] - v[b];
        total += d.norm_squared();
        let g = d * (2.0 * inv * scale);
        grad[a] += g;
        grad[b] -= g;
    }
    total * inv
}

/// Loss value and gradient with respect to every predicted vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshLoss {
    pub breakdown: LossBreakdown,
    pub grad: Vec<Vec3>,
}

/// Samples `n_samples` points from each mesh (both with `seed`) and returns
/// the weighted Chamfer + normal + edge loss and its gradient.
pub fn mesh_loss(
    pred: &Mesh,
    gt: &Mesh,
    n_samples: usize,
    weights: &LossWeights,
    seed: u64,
) -> Result<MeshLoss> {
    weights.validate()?;
    let target = sample_surface(gt, n_samples, seed)?.points;
    mesh_loss_against(pred, &target, n_samples, weights, seed)
}

/// As [`mesh_loss`], against pre-sampled ground-truth points.
pub fn mesh_loss_against(
    pred: &Mesh,
    target: &PointSet,
    n_samples: usize,
    weights: &LossWeights,
    seed: u64,
) -> Result<MeshLoss> {
    weights.validate()?;
    let samples = match needs_samples(weights) {
        true => Some(sample_surface(pred, n_samples, seed)?),
        false => None,
    };
    let mut grad = vec![Vec3::zeros(); pred.num_vertices()];
    let breakdown = accumulate_mesh_loss(pred, samples.as_ref(), target, weights, 1.0, &mut grad)?;
    Ok(MeshLoss { breakdown, grad })
}

/// As [`mesh_loss_against`], with the predicted mesh sampled by replaying
/// fixed face and barycentric draws, so the loss is smooth in the vertices
/// while nearest-neighbor pairs stay put.
pub fn mesh_loss_replay(
    pred: &Mesh,
    draws: &SurfaceSamples,
    target: &PointSet,
    weights: &LossWeights,
) -> Result<MeshLoss> {
    weights.validate()?;
    let samples = match needs_samples(weights) {
        true => Some(draws.replay(pred)?),
        false => None,
    };
    let mut grad = vec![Vec3::zeros(); pred.num_vertices()];
    let breakdown = accumulate_mesh_loss(pred, samples.as_ref(), target, weights, 1.0, &mut grad)?;
    Ok(MeshLoss { breakdown, grad })
}

/// Adds `scale * d(loss)/d(vertices)` into `grad` and returns the unscaled
/// breakdown. `samples` are drawn from `pred` and may be `None` only when the
/// Chamfer and normal weights are zero.
pub(crate) fn accumulate_mesh_loss(
    pred: &Mesh,
    samples: Option<&SurfaceSamples>,
    target: &PointSet,
    weights: &LossWeights,
    scale: f64,
    grad: &mut [Vec3],
) -> Result<LossBreakdown> {
    let mut breakdown = LossBreakdown::default();
    if weights.chamfer > 0.0 || weights.normal > 0.0 {
        let samples = samples.ok_or_else(|| Error::arg("point terms need surface samples"))?;
        let (cham, norm) = point_terms(pred, samples, target, weights, scale, grad)?;
        breakdown.chamfer = cham;
        breakdown.normal = norm;
    }
    if weights.edge > 0.0 {
        if pred.edges().is_empty() {
            return Err(Error::arg("mesh has no edges"));
        }
        breakdown.edge = edge_regularizer_grad(pred, weights.edge * scale, grad);
    }
    breakdown.total =
        weights.chamfer * breakdown.chamfer + weights.normal * breakdown.normal + weights.edge * breakdown.edge;
    Ok(breakdown)
}

pub(crate) fn needs_samples(weights: &LossWeights) -> bool {
    weights.chamfer > 0.0 || weights.normal > 0.0
}

/// Chamfer and normal terms of predicted samples against a target set,
/// scattering their weighted gradients onto the predicted vertices.
pub(crate) fn point_terms(
    pred: &Mesh,
    samples: &SurfaceSamples,
    target: &PointSet,
    weights: &LossWeights,
    scale: f64,
    grad: &mut [Vec3],
) -> Result<(f64, f64)> {
    let p = samples.points.points();
    let pn = samples.points.normals();
    let (q, qn) = (target.points(), target.normals());
    let pairing = Pairing::new(p, q)?;
    let cham = pairing.chamfer();
    let norm = normal_term(&pairing, pn, qn);

    let inv_p = 1.0 / p.len() as f64;
    let inv_q = 1.0 / q.len() as f64;
    let mut point_grad = vec![Vec3::zeros(); p.len()];
    let mut normal_grad = vec![Vec3::zeros(); p.len()];
    let wc = weights.chamfer * scale;
    let wn = weights.normal * scale;
    for (i, &(j, _)) in pairing.p_to_q.iter().enumerate() {
        point_grad[i] += (p[i] - q[j]) * (2.0 * inv_p * wc);
        let c = pn[i].dot(&qn[j]);
        normal_grad[i] -= qn[j] * (c.signum_or_zero() * inv_p * wn);
    }
    for (j, &(i, _)) in pairing.q_to_p.iter().enumerate() {
        point_grad[i] += (p[i] - q[j]) * (2.0 * inv_q * wc);
        let c = qn[j].dot(&pn[i]);
        normal_grad[i] -= qn[j] * (c.signum_or_zero() * inv_q * wn);
    }

    // Positions: p = sum_k w_k v_k.
    let faces = pred.faces();
    let mut face_normal_grad = vec![Vec3::zeros(); faces.len()];
    for (s, (&f, w)) in samples.faces.iter().zip(&samples.bary).enumerate() {
        for k in 0..3 {
            grad[faces[f][k]] += point_grad[s] * w[k];
        }
        face_normal_grad[f] += normal_grad[s];
    }
    // Normals: u = n / |n| with n = (v1 - v0) x (v2 - v0).
    let v = pred.vertices();
    for (f, g) in face_normal_grad.iter().enumerate() {
        if g.norm_squared() == 0.0 {
            continue;
        }
        let [a, b, c] = faces[f];
        let e1 = v[b] - v[a];
        let e2 = v[c] - v[a];
        let n = e1.cross(&e2);
        let len = n.norm();
        let u = n / len;
        let gn = (g - u * u.dot(g)) / len;
        let g1 = e2.cross(&gn);
        let g2 = gn.cross(&e1);
        grad[b] += g1;
        grad[c] += g2;
        grad[a] -= g1 + g2;
    }
    Ok((cham, norm))
}

trait SignumOrZero {
    fn signum_or_zero(self) -> f64;
}

impl SignumOrZero for f64 {
    fn signum_or_zero(self) -> f64 {
        if self > 0.0 {
            1.0
        } else if self < 0.0 {
            -1.0
        } else {
            0.0
        }
    }
}
