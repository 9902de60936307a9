// SPDX-License-Identifier: Apache-2.0

use nalgebra::{DMatrix, DMatrixView, DMatrixViewMut, DVector, Matrix3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::camera::{project_vertices, CameraRig, Projection};
use super::feature::RoiFeature;
use super::gcn::{affine, neighbor_sum};
use super::rotation::{euler_zyx, euler_zyx_derivatives};
use crate::error::{Error, Result};
use crate::losses::{accumulate_mesh_loss, needs_samples, LossBreakdown, LossWeights, Pairing};
use crate::mesh::{sample_surface, Mesh, PointSet, SurfaceSamples, Vec3};

pub const GRAPH_CONV_LAYERS: usize = 3;

/// Graph-convolution weights start with standard deviation
/// `GCONV_INIT_GAIN / sqrt(fan_in)`; small, since neighbor sums compound
/// across layers.
pub const GCONV_INIT_GAIN: f64 = 0.08;

/// The rotation head average-pools the ROI feature over this many cells per side.
pub const ROT_POOL: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    /// ROI feature channels `C`.
    pub channels: usize,
    /// Per-vertex image feature width `E` after the 1x1 convolution.
    pub embed: usize,
    /// Graph-convolution hidden width.
    pub hidden: usize,
    /// Hidden width of the rotation head.
    pub rot_hidden: usize,
    /// Number of refinement stages `L`.
    pub stages: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self {
            channels: 3,
            embed: 64,
            hidden: 64,
            rot_hidden: 64,
            stages: 3,
        }
    }
}

/// Column-major `rows x cols` block inside the flat parameter vector.
#[derive(Debug, Clone, Copy)]
struct Block {
    off: usize,
    rows: usize,
    cols: usize,
}

impl Block {
    fn len(&self) -> usize {
        self.rows * self.cols
    }

    fn view<'a>(&self, p: &'a [f64]) -> DMatrixView<'a, f64> {
        DMatrixView::from_slice(&p[self.off..self.off + self.len()], self.rows, self.cols)
    }

    fn view_mut<'a>(&self, p: &'a mut [f64]) -> DMatrixViewMut<'a, f64> {
        DMatrixViewMut::from_slice(&mut p[self.off..self.off + self.len()], self.rows, self.cols)
    }

    fn vector(&self, p: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(&p[self.off..self.off + self.len()])
    }
}

#[derive(Debug, Clone)]
struct LayerLayout {
    w0: Block,
    w1: Block,
    b: Block,
}

#[derive(Debug, Clone)]
struct StageLayout {
    conv_w: Block,
    conv_b: Block,
    layers: Vec<LayerLayout>,
    head_w: Block,
    head_b: Block,
}

#[derive(Debug, Clone)]
struct RotLayout {
    w1: Block,
    b1: Block,
    w2: Block,
    b2: Block,
}

#[derive(Debug, Clone)]
struct Layout {
    rot: RotLayout,
    stages: Vec<StageLayout>,
    len: usize,
}

impl Layout {
    fn new(d: &ModelDims) -> Self {
        let mut off = 0;
        let mut block = |rows: usize, cols: usize| {
            let b = Block { off, rows, cols };
            off += rows * cols;
            b
        };
        let rot = RotLayout {
            w1: block(d.rot_hidden, ROT_POOL * ROT_POOL * d.channels),
            b1: block(d.rot_hidden, 1),
            w2: block(3, d.rot_hidden),
            b2: block(3, 1),
        };
        let stages = (0..d.stages)
            .map(|_| {
                let conv_w = block(d.embed, d.channels);
                let conv_b = block(d.embed, 1);
                let layers = (0..GRAPH_CONV_LAYERS)
                    .map(|l| {
                        let input = if l == 0 { d.embed + 3 } else { d.hidden };
                        LayerLayout {
                            w0: block(d.hidden, input),
                            w1: block(d.hidden, input),
                            b: block(d.hidden, 1),
                        }
                    })
                    .collect();
                StageLayout {
                    conv_w,
                    conv_b,
                    layers,
                    head_w: block(3, d.hidden),
                    head_b: block(3, 1),
                }
            })
            .collect();
        Layout { rot, stages, len: off }
    }
}

/// Which reference a prediction starts from.
#[derive(Debug, Clone, Copy)]
pub enum Reference<'a> {
    /// Class mean shape, rotated by the rotation head before refinement.
    MeanShape(&'a Mesh),
    /// A mesh used as-is (the previous prediction of a tracked object).
    Given(&'a Mesh),
}

/// Everything one training or evaluation example needs.
#[derive(Debug, Clone, Copy)]
pub struct LossInput<'a> {
    pub feature: &'a RoiFeature,
    pub camera: &'a CameraRig,
    pub reference: Reference<'a>,
    pub target: &'a PointSet,
}

/// Rotation head followed by `L` refinement stages, all parameters in one
/// flat vector.
#[derive(Debug, Clone)]
pub struct Model {
    dims: ModelDims,
    layout: Layout,
    params: Vec<f64>,
}

struct RotCache {
    pooled: DVector<f64>,
    pre: DVector<f64>,
    hidden: DVector<f64>,
    angles: [f64; 3],
}

struct StageCache {
    proj: Projection,
    sampled: DMatrix<f64>,
    d_u: DMatrix<f64>,
    d_v: DMatrix<f64>,
    inputs: Vec<DMatrix<f64>>,
    sums: Vec<DMatrix<f64>>,
    pre: Vec<DMatrix<f64>>,
    last: DMatrix<f64>,
    out: Vec<Vec3>,
}

impl Model {
    /// Random initialization; offset heads and the rotation head's output
    /// layer start at zero so the model is the identity on its reference.
    pub fn new(dims: ModelDims, seed: u64) -> Result<Self> {
        let mut m = Self::zeros(dims)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |p: &mut [f64], b: Block, std: f64| {
            let normal = Normal::new(0.0, std).unwrap();
            for v in &mut p[b.off..b.off + b.len()] {
                *v = normal.sample(&mut rng);
            }
        };
        let layout = m.layout.clone();
        fill(&mut m.params, layout.rot.w1, (2.0 / layout.rot.w1.cols as f64).sqrt());
        for s in &layout.stages {
            fill(&mut m.params, s.conv_w, (1.0 / s.conv_w.cols as f64).sqrt());
            for l in &s.layers {
                let std = GCONV_INIT_GAIN / (l.w0.cols as f64).sqrt();
                fill(&mut m.params, l.w0, std);
                fill(&mut m.params, l.w1, std);
            }
        }
        Ok(m)
    }

    pub fn zeros(dims: ModelDims) -> Result<Self> {
        if dims.channels == 0 || dims.embed == 0 || dims.hidden == 0 || dims.rot_hidden == 0 || dims.stages == 0 {
            return Err(Error::Config(format!("model dimensions must be positive: {dims:?}")));
        }
        let layout = Layout::new(&dims);
        Ok(Self {
            dims,
            params: vec![0.0; layout.len],
            layout,
        })
    }

    pub fn from_params(dims: ModelDims, params: Vec<f64>) -> Result<Self> {
        let mut m = Self::zeros(dims)?;
        if params.len() != m.params.len() {
            return Err(Error::Config(format!(
                "expected {} parameters, got {}",
                m.params.len(),
                params.len()
            )));
        }
        m.params = params;
        Ok(m)
    }

    pub fn dims(&self) -> &ModelDims {
        &self.dims
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Index range of the rotation-head parameters.
    pub fn rotation_params(&self) -> std::ops::Range<usize> {
        let r = &self.layout.rot;
        r.w1.off..r.b2.off + r.b2.len()
    }

    /// Sets every stage's offset head to zero.
    pub fn zero_offset_heads(&mut self) {
        for s in &self.layout.stages {
            for b in [s.head_w, s.head_b] {
                self.params[b.off..b.off + b.len()].fill(0.0);
            }
        }
    }

    fn rotation_forward(&self, feat: &RoiFeature) -> Result<RotCache> {
        if feat.channels() != self.dims.channels {
            return Err(Error::arg(format!(
                "feature has {} channels, model expects {}",
                feat.channels(),
                self.dims.channels
            )));
        }
        let r = &self.layout.rot;
        let p = &self.params;
        let pooled = feat.grid_pool(ROT_POOL);
        let pre = r.w1.view(p) * &pooled + r.b1.vector(p);
        let hidden = pre.map(|v| v.max(0.0));
        let a = r.w2.view(p) * &hidden + r.b2.vector(p);
        Ok(RotCache {
            pooled,
            pre,
            hidden,
            angles: [a[0], a[1], a[2]],
        })
    }

    /// Rotation predicted for an ROI.
    pub fn rotation(&self, feat: &RoiFeature) -> Result<Matrix3<f64>> {
        Ok(euler_zyx(self.rotation_forward(feat)?.angles))
    }

    /// Euler angles predicted for an ROI.
    pub fn rotation_angles(&self, feat: &RoiFeature) -> Result<[f64; 3]> {
        Ok(self.rotation_forward(feat)?.angles)
    }

    fn rotation_backward(&self, cache: &RotCache, mean: &Mesh, g_ref: &[Vec3], grad: &mut [f64]) {
        let r = &self.layout.rot;
        let mut d_rot = Matrix3::zeros();
        for (g, v) in g_ref.iter().zip(mean.vertices()) {
            d_rot += g * v.transpose();
        }
        let derivs = euler_zyx_derivatives(cache.angles);
        let d_ang = DVector::from_iterator(3, derivs.iter().map(|d| d.component_mul(&d_rot).sum()));
        let d_hidden = r.w2.view(&self.params).transpose() * &d_ang;
        r.w2.view_mut(grad).ger(1.0, &d_ang, &cache.hidden, 1.0);
        r.b2.view_mut(grad).column_mut(0).axpy(1.0, &d_ang, 1.0);
        let d_pre = d_hidden.zip_map(&cache.pre, |g, z| if z > 0.0 { g } else { 0.0 });
        r.w1.view_mut(grad).ger(1.0, &d_pre, &cache.pooled, 1.0);
        r.b1.view_mut(grad).column_mut(0).axpy(1.0, &d_pre, 1.0);
    }

    fn stage_forward(
        &self,
        stage: usize,
        feat: &RoiFeature,
        camera: &CameraRig,
        vertices: &[Vec3],
        adjacency: &[Vec<usize>],
    ) -> StageCache {
        let s = &self.layout.stages[stage];
        let p = &self.params;
        let n = vertices.len();
        let c = self.dims.channels;
        let e = self.dims.embed;
        let proj = project_vertices(vertices, camera, feat.roi());
        let mut sampled = DMatrix::zeros(n, c);
        let mut d_u = DMatrix::zeros(n, c);
        let mut d_v = DMatrix::zeros(n, c);
        for i in 0..n {
            if !proj.valid[i] {
                continue;
            }
            let [u, v] = proj.coords[i];
            let (val, du, dv) = feat.sample(u, v);
            sampled.set_row(i, &val.transpose());
            d_u.set_row(i, &du.transpose());
            d_v.set_row(i, &dv.transpose());
        }
        let conv_b = s.conv_b.vector(p);
        let mut x = DMatrix::zeros(n, e + 3);
        {
            let phi = &sampled * s.conv_w.view(p).transpose();
            for i in 0..n {
                if proj.valid[i] {
                    for k in 0..e {
                        x[(i, k)] = phi[(i, k)] + conv_b[k];
                    }
                }
                for k in 0..3 {
                    x[(i, e + k)] = vertices[i][k];
                }
            }
        }
        let mut inputs = Vec::with_capacity(GRAPH_CONV_LAYERS);
        let mut sums = Vec::with_capacity(GRAPH_CONV_LAYERS);
        let mut pre = Vec::with_capacity(GRAPH_CONV_LAYERS);
        for l in &s.layers {
            let ax = neighbor_sum(&x, adjacency);
            let z = affine(&x, &ax, l.w0.view(p), l.w1.view(p), &l.b.vector(p));
            let h = z.map(|v| v.max(0.0));
            inputs.push(std::mem::replace(&mut x, h));
            sums.push(ax);
            pre.push(z);
        }
        let delta = &x * s.head_w.view(p).transpose();
        let hb = s.head_b.vector(p);
        let out = (0..n)
            .map(|i| vertices[i] + Vec3::new(delta[(i, 0)] + hb[0], delta[(i, 1)] + hb[1], delta[(i, 2)] + hb[2]))
            .collect();
        StageCache {
            proj,
            sampled,
            d_u,
            d_v,
            inputs,
            sums,
            pre,
            last: x,
            out,
        }
    }

    /// Accumulates parameter gradients and returns d(loss)/d(input vertices).
    fn stage_backward(
        &self,
        stage: usize,
        cache: &StageCache,
        g_out: &[Vec3],
        adjacency: &[Vec<usize>],
        grad: &mut [f64],
    ) -> Vec<Vec3> {
        let s = &self.layout.stages[stage];
        let p = &self.params;
        let n = g_out.len();
        let e = self.dims.embed;
        let g = DMatrix::from_fn(n, 3, |i, k| g_out[i][k]);
        let mut d_v: Vec<Vec3> = g_out.to_vec();

        s.head_w.view_mut(grad).gemm_tr(1.0, &g, &cache.last, 1.0);
        add_column_sums(&mut s.head_b.view_mut(grad), &g);
        let mut d_h = &g * s.head_w.view(p);
        for (li, l) in s.layers.iter().enumerate().rev() {
            let d_z = d_h.zip_map(&cache.pre[li], |g, z| if z > 0.0 { g } else { 0.0 });
            l.w0.view_mut(grad).gemm_tr(1.0, &d_z, &cache.inputs[li], 1.0);
            l.w1.view_mut(grad).gemm_tr(1.0, &d_z, &cache.sums[li], 1.0);
            add_column_sums(&mut l.b.view_mut(grad), &d_z);
            let through_self = &d_z * l.w0.view(p);
            let through_nbrs = neighbor_sum(&(&d_z * l.w1.view(p)), adjacency);
            d_h = through_self + through_nbrs;
        }
        // d_h now holds d(loss)/d([phi | V]).
        let mut d_phi = d_h.columns(0, e).into_owned();
        for i in 0..n {
            for k in 0..3 {
                d_v[i][k] += d_h[(i, e + k)];
            }
            if !cache.proj.valid[i] {
                d_phi.row_mut(i).fill(0.0);
            }
        }
        s.conv_w.view_mut(grad).gemm_tr(1.0, &d_phi, &cache.sampled, 1.0);
        add_column_sums(&mut s.conv_b.view_mut(grad), &d_phi);
        let d_sampled = &d_phi * s.conv_w.view(p);
        for i in 0..n {
            if !cache.proj.valid[i] {
                continue;
            }
            let du = d_sampled.row(i).dot(&cache.d_u.row(i));
            let dv = d_sampled.row(i).dot(&cache.d_v.row(i));
            let j = &cache.proj.jacobian[i];
            d_v[i] += j.row(0).transpose() * du + j.row(1).transpose() * dv;
        }
        d_v
    }

    /// Reference vertices, rotated by the head for mean-shape references.
    pub fn reference_vertices(&self, feat: &RoiFeature, reference: Reference<'_>) -> Result<Vec<Vec3>> {
        Ok(match reference {
            Reference::MeanShape(m) => {
                let r = self.rotation(feat)?;
                m.vertices().iter().map(|v| r * v).collect()
            }
            Reference::Given(m) => m.vertices().to_vec(),
        })
    }

    /// Runs every refinement stage on `vertices` (faces taken from `mesh`).
    pub fn refine_vertices(&self, feat: &RoiFeature, camera: &CameraRig, mesh: &Mesh) -> Result<Mesh> {
        self.check_feature(feat)?;
        let adjacency = mesh.adjacency();
        let mut v = mesh.vertices().to_vec();
        for l in 0..self.dims.stages {
            v = self.stage_forward(l, feat, camera, &v, &adjacency).out;
        }
        mesh.with_vertices(v)
            .map_err(|_| Error::NonFinite { term: "vertices".into(), step: 0 })
    }

    /// Output of a single refinement stage.
    pub fn refine_stage(&self, stage: usize, feat: &RoiFeature, camera: &CameraRig, mesh: &Mesh) -> Result<Mesh> {
        self.check_feature(feat)?;
        if stage >= self.dims.stages {
            return Err(Error::arg(format!("stage {stage} out of range")));
        }
        let out = self.stage_forward(stage, feat, camera, mesh.vertices(), &mesh.adjacency()).out;
        mesh.with_vertices(out)
            .map_err(|_| Error::NonFinite { term: "vertices".into(), step: 0 })
    }

    /// Selects the reference (rotating mean shapes) and refines it.
    pub fn predict(&self, feat: &RoiFeature, camera: &CameraRig, reference: Reference<'_>) -> Result<Mesh> {
        let mesh = match reference {
            Reference::MeanShape(m) => m.with_vertices(self.reference_vertices(feat, reference)?)?,
            Reference::Given(m) => m.clone(),
        };
        self.refine_vertices(feat, camera, &mesh)
    }

    fn check_feature(&self, feat: &RoiFeature) -> Result<()> {
        if feat.channels() != self.dims.channels {
            return Err(Error::arg(format!(
                "feature has {} channels, model expects {}",
                feat.channels(),
                self.dims.channels
            )));
        }
        Ok(())
    }

    /// Training objective for one example: the mesh loss after every stage,
    /// plus a Chamfer + normal alignment loss on the rotated mean shape when
    /// the reference is a mean shape. With `grad`, adds the gradient with
    /// respect to all parameters.
    pub fn loss(
        &self,
        input: &LossInput<'_>,
        weights: &LossWeights,
        n_samples: usize,
        seed: u64,
        grad: Option<&mut [f64]>,
    ) -> Result<LossBreakdown> {
        let mut draw = |slot: usize, mesh: &Mesh| sample_surface(mesh, n_samples, mix(seed, slot as u64));
        self.loss_with(input, weights, &mut draw, grad, None)
    }

    /// The surface draws [`Model::loss`] makes with this seed: one per stage,
    /// then one for the alignment term when the reference is a mean shape.
    pub fn loss_draws(
        &self,
        input: &LossInput<'_>,
        weights: &LossWeights,
        n_samples: usize,
        seed: u64,
    ) -> Result<Vec<SurfaceSamples>> {
        let mut draws = Vec::new();
        let mut draw = |slot: usize, mesh: &Mesh| {
            let s = sample_surface(mesh, n_samples, mix(seed, slot as u64))?;
            draws.push(s.clone());
            Ok(s)
        };
        self.loss_with(input, weights, &mut draw, None, None)?;
        Ok(draws)
    }

    /// [`Model::loss`] with the face and barycentric draws held fixed, so the
    /// loss is a smooth function of the parameters away from nearest-neighbor
    /// and ReLU switches.
    pub fn loss_replay(
        &self,
        input: &LossInput<'_>,
        weights: &LossWeights,
        draws: &[SurfaceSamples],
        grad: Option<&mut [f64]>,
    ) -> Result<LossBreakdown> {
        let mut draw = |slot: usize, mesh: &Mesh| {
            draws
                .get(slot)
                .ok_or_else(|| Error::arg("too few surface draws"))?
                .replay(mesh)
        };
        self.loss_with(input, weights, &mut draw, grad, None)
    }

    /// The discrete choices behind [`Model::loss_replay`]: ReLU signs,
    /// projection and feature-grid clamps, bilinear cells, nearest-neighbor
    /// pairs and the signs of matched normal cosines. Where this is constant
    /// the replayed loss is a smooth function of the parameters. Returns the
    /// replayed loss alongside.
    pub fn loss_branches(
        &self,
        input: &LossInput<'_>,
        weights: &LossWeights,
        draws: &[SurfaceSamples],
    ) -> Result<(LossBreakdown, Vec<u64>)> {
        let mut draw = |slot: usize, mesh: &Mesh| {
            draws
                .get(slot)
                .ok_or_else(|| Error::arg("too few surface draws"))?
                .replay(mesh)
        };
        let mut trace = Vec::new();
        let loss = self.loss_with(input, weights, &mut draw, None, Some(&mut trace))?;
        Ok((loss, trace))
    }

    fn loss_with(
        &self,
        input: &LossInput<'_>,
        weights: &LossWeights,
        draw: &mut dyn FnMut(usize, &Mesh) -> Result<SurfaceSamples>,
        mut grad: Option<&mut [f64]>,
        mut trace: Option<&mut Vec<u64>>,
    ) -> Result<LossBreakdown> {
        weights.validate()?;
        self.check_feature(input.feature)?;
        if let Some(g) = grad.as_deref() {
            if g.len() != self.params.len() {
                return Err(Error::arg("gradient buffer has the wrong length"));
            }
        }
        let (base, rot_cache) = match input.reference {
            Reference::MeanShape(m) => (m, Some(self.rotation_forward(input.feature)?)),
            Reference::Given(m) => (m, None),
        };
        let faces = base.faces().to_vec();
        let adjacency = base.adjacency();
        let v0: Vec<Vec3> = match &rot_cache {
            Some(c) => {
                let r = euler_zyx(c.angles);
                base.vertices().iter().map(|v| r * v).collect()
            }
            None => base.vertices().to_vec(),
        };

        let stages = self.dims.stages;
        let mut caches = Vec::with_capacity(stages);
        let mut current = v0.clone();
        for l in 0..stages {
            let c = self.stage_forward(l, input.feature, input.camera, &current, &adjacency);
            current = c.out.clone();
            caches.push(c);
        }
        if let Some(t) = trace.as_deref_mut() {
            if let Some(rc) = &rot_cache {
                t.extend(rc.pre.iter().map(|&z| u64::from(z > 0.0)));
            }
            for c in &caches {
                for i in 0..c.proj.coords.len() {
                    let [u, v] = c.proj.coords[i];
                    let j = &c.proj.jacobian[i];
                    t.push(u64::from(c.proj.valid[i]));
                    t.push(u64::from(j.row(0).iter().all(|&x| x == 0.0)));
                    t.push(u64::from(j.row(1).iter().all(|&x| x == 0.0)));
                    t.extend(input.feature.cell(u, v));
                }
                for z in &c.pre {
                    t.extend(z.iter().map(|&z| u64::from(z > 0.0)));
                }
            }
        }

        let mut total = LossBreakdown::default();
        // stage_grads[l] = d(loss)/d(vertices after stage l).
        let mut stage_grads = Vec::with_capacity(stages);
        for (l, c) in caches.iter().enumerate() {
            if !c.out.iter().all(|v| v.iter().all(|x| x.is_finite())) {
                return Err(Error::NonFinite { term: "vertices".into(), step: 0 });
            }
            let mesh = Mesh::from_parts_unchecked(c.out.clone(), faces.clone());
            let mut g = vec![Vec3::zeros(); mesh.num_vertices()];
            let samples = needs_samples(weights).then(|| draw(l, &mesh)).transpose()?;
            if let (Some(t), Some(s)) = (trace.as_deref_mut(), &samples) {
                trace_pairs(t, s, input.target)?;
            }
            total += accumulate_mesh_loss(&mesh, samples.as_ref(), input.target, weights, 1.0, &mut g)?;
            stage_grads.push(g);
        }
        let mut g_ref = vec![Vec3::zeros(); v0.len()];
        if rot_cache.is_some() && (weights.chamfer > 0.0 || weights.normal > 0.0) {
            let align = LossWeights {
                edge: 0.0,
                ..*weights
            };
            let mesh = Mesh::from_parts_unchecked(v0.clone(), faces.clone());
            let samples = draw(stages, &mesh)?;
            if let Some(t) = trace.as_deref_mut() {
                trace_pairs(t, &samples, input.target)?;
            }
            total += accumulate_mesh_loss(&mesh, Some(&samples), input.target, &align, 1.0, &mut g_ref)?;
        }

        if let Some(grad) = grad.as_deref_mut() {
            let mut g = stage_grads.pop().expect("at least one stage");
            for l in (0..stages).rev() {
                let mut g_in = self.stage_backward(l, &caches[l], &g, &adjacency, grad);
                let extra = if l > 0 { stage_grads.pop() } else { None };
                if let Some(e) = extra {
                    for (a, b) in g_in.iter_mut().zip(e) {
                        *a += b;
                    }
                }
                g = g_in;
            }
            if let Some(cache) = &rot_cache {
                for (a, b) in g.iter_mut().zip(&g_ref) {
                    *a += b;
                }
                self.rotation_backward(cache, base, &g, grad);
            }
        }
        Ok(total)
    }
}

fn trace_pairs(trace: &mut Vec<u64>, samples: &SurfaceSamples, target: &PointSet) -> Result<()> {
    let (p, pn) = (samples.points.points(), samples.points.normals());
    let (q, qn) = (target.points(), target.normals());
    let pairing = Pairing::new(p, q)?;
    for (i, &(j, _)) in pairing.p_to_q.iter().enumerate() {
        trace.extend([j as u64, u64::from(pn[i].dot(&qn[j]) > 0.0)]);
    }
    for (j, &(i, _)) in pairing.q_to_p.iter().enumerate() {
        trace.extend([i as u64, u64::from(pn[i].dot(&qn[j]) > 0.0)]);
    }
    Ok(())
}

fn add_column_sums(target: &mut DMatrixViewMut<'_, f64>, m: &DMatrix<f64>) {
    for (k, col) in m.column_iter().enumerate() {
        target[(k, 0)] += col.sum();
    }
}

pub(crate) fn mix(seed: u64, k: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ k.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
