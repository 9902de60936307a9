// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::augment_reference;
use super::camera::CameraRig;
use super::feature::RoiFeature;
use super::model::{mix, LossInput, Model, ModelDims, Reference};
use crate::error::{Error, Result};
use crate::losses::{LossBreakdown, LossWeights, DEFAULT_LOSS_SAMPLES};
use crate::mesh::{Mesh, PointSet};

/// One annotated object in one frame.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub class_id: u32,
    pub feature: RoiFeature,
    pub camera: CameraRig,
    pub gt: Mesh,
    /// Points sampled from `gt`.
    pub target: PointSet,
    /// First frame of its track: there is no previous prediction to refine.
    pub first_in_track: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainStage {
    /// Every reference is the rotated class mean shape.
    MeanShape,
    /// Tracked frames refine an augmented copy of their ground truth in
    /// place of the previous prediction; the rotation head is frozen.
    Temporal,
}

impl TrainStage {
    pub fn number(&self) -> usize {
        match self {
            TrainStage::MeanShape => 1,
            TrainStage::Temporal => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub dims: ModelDims,
    pub stage1_steps: usize,
    pub stage2_steps: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weights: LossWeights,
    pub n_samples: usize,
    /// Examples averaged per SGD step.
    pub batch_size: usize,
    pub seed: u64,
    /// Augmentation rotation range in degrees.
    pub rot_range_deg: f64,
    /// Augmentation noise as a fraction of the bounding-box diagonal.
    pub sigma_frac: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dims: ModelDims::default(),
            stage1_steps: 2000,
            stage2_steps: 1000,
            lr: 0.02,
            momentum: 0.9,
            weights: LossWeights::default(),
            n_samples: DEFAULT_LOSS_SAMPLES,
            batch_size: 1,
            seed: 0,
            rot_range_deg: 15.0,
            sigma_frac: 0.02,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if !(self.lr >= 0.0 && self.lr.is_finite()) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("need lr >= 0 and momentum in [0, 1)".into()));
        }
        if self.n_samples == 0 || self.batch_size == 0 {
            return Err(Error::Config("n_samples and batch_size must be positive".into()));
        }
        if self.rot_range_deg < 0.0 || self.sigma_frac < 0.0 {
            return Err(Error::Config("augmentation magnitudes must be non-negative".into()));
        }
        Ok(())
    }
}

/// Mean loss of one SGD step (summed over refinement stages).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub step: usize,
    pub stage: TrainStage,
    pub loss: LossBreakdown,
}

impl TrainLogRow {
    pub const CSV_HEADER: &'static str = "step,stage,L_cham,L_norm,L_edge,total";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.step,
            self.stage.number(),
            self.loss.chamfer,
            self.loss.normal,
            self.loss.edge,
            self.loss.total
        )
    }
}

/// Stage 1 from a fresh model, then Stage 2.
pub fn train(
    samples: &[TrainSample],
    mean_shapes: &BTreeMap<u32, Mesh>,
    cfg: &TrainConfig,
    log: &mut dyn FnMut(&TrainLogRow),
) -> Result<Model> {
    cfg.validate()?;
    let mut model = Model::new(cfg.dims, cfg.seed)?;
    train_stage(&mut model, samples, mean_shapes, TrainStage::MeanShape, cfg.stage1_steps, cfg, 0, log)?;
    train_stage(
        &mut model,
        samples,
        mean_shapes,
        TrainStage::Temporal,
        cfg.stage2_steps,
        cfg,
        cfg.stage1_steps,
        log,
    )?;
    Ok(model)
}

fn mean_for<'a>(mean_shapes: &'a BTreeMap<u32, Mesh>, class_id: u32) -> Result<&'a Mesh> {
    mean_shapes
        .get(&class_id)
        .ok_or_else(|| Error::Config(format!("no mean shape for class {class_id}")))
}

fn augmented(sample: &TrainSample, cfg: &TrainConfig, seed: u64) -> Result<Mesh> {
    let diag = sample.gt.bbox().map_or(0.0, |b| b.diagonal());
    augment_reference(&sample.gt, cfg.rot_range_deg.to_radians(), cfg.sigma_frac * diag, seed)
}

/// Loss for one sample under a training stage's reference rule.
fn sample_loss(
    model: &Model,
    sample: &TrainSample,
    mean_shapes: &BTreeMap<u32, Mesh>,
    stage: TrainStage,
    cfg: &TrainConfig,
    seed: u64,
    grad: Option<&mut [f64]>,
) -> Result<LossBreakdown> {
    let aug;
    let reference = match stage {
        TrainStage::Temporal if !sample.first_in_track => {
            aug = augmented(sample, cfg, mix(seed, 1))?;
            Reference::Given(&aug)
        }
        _ => Reference::MeanShape(mean_for(mean_shapes, sample.class_id)?),
    };
    let input = LossInput {
        feature: &sample.feature,
        camera: &sample.camera,
        reference,
        target: &sample.target,
    };
    model.loss(&input, &cfg.weights, cfg.n_samples, seed, grad)
}

/// Runs `steps` SGD-with-momentum steps (`v = mu v + g; p -= lr v`). Samples
/// are visited in a seeded shuffled order, reshuffled every epoch. Step
/// numbers in the log start at `first_step`.
#[allow(clippy::too_many_arguments)]
pub fn train_stage(
    model: &mut Model,
    samples: &[TrainSample],
    mean_shapes: &BTreeMap<u32, Mesh>,
    stage: TrainStage,
    steps: usize,
    cfg: &TrainConfig,
    first_step: usize,
    log: &mut dyn FnMut(&TrainLogRow),
) -> Result<()> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::arg("no training samples"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, stage.number() as u64));
    let mut order: Vec<usize> = Vec::new();
    let mut velocity = vec![0.0; model.params().len()];
    let mut grad = vec![0.0; model.params().len()];
    let frozen = match stage {
        TrainStage::MeanShape => 0..0,
        TrainStage::Temporal => model.rotation_params(),
    };
    for local in 0..steps {
        let step = first_step + local;
        grad.fill(0.0);
        let mut mean = LossBreakdown::default();
        for b in 0..cfg.batch_size {
            if order.is_empty() {
                order = (0..samples.len()).collect();
                order.shuffle(&mut rng);
                order.reverse();
            }
            let idx = order.pop().unwrap();
            let seed = mix(cfg.seed ^ 0x7261_696e, (step * cfg.batch_size + b) as u64);
            let loss = sample_loss(model, &samples[idx], mean_shapes, stage, cfg, seed, Some(&mut grad))
                .map_err(|e| match e {
                    Error::NonFinite { term, .. } => Error::NonFinite { term, step },
                    other => other,
                })?;
            if let Some(term) = loss.non_finite_term() {
                return Err(Error::NonFinite { term: term.into(), step });
            }
            mean += loss;
        }
        let inv = 1.0 / cfg.batch_size as f64;
        mean = LossBreakdown {
            chamfer: mean.chamfer * inv,
            normal: mean.normal * inv,
            edge: mean.edge * inv,
            total: mean.total * inv,
        };
        grad[frozen.clone()].fill(0.0);
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite { term: "gradient".into(), step });
        }
        let params = model.params_mut();
        for ((p, v), g) in params.iter_mut().zip(velocity.iter_mut()).zip(&grad) {
            *v = cfg.momentum * *v + g * inv;
            *p -= cfg.lr * *v;
        }
        log(&TrainLogRow { step, stage, loss: mean });
    }
    Ok(())
}

/// Mean loss over all samples with fixed sampling seeds.
pub fn evaluate_loss(
    model: &Model,
    samples: &[TrainSample],
    mean_shapes: &BTreeMap<u32, Mesh>,
    stage: TrainStage,
    cfg: &TrainConfig,
) -> Result<LossBreakdown> {
    let mut total = LossBreakdown::default();
    for (i, s) in samples.iter().enumerate() {
        total += sample_loss(model, s, mean_shapes, stage, cfg, mix(cfg.seed ^ 0x6576_616c, i as u64), None)?;
    }
    let inv = 1.0 / samples.len().max(1) as f64;
    Ok(LossBreakdown {
        chamfer: total.chamfer * inv,
        normal: total.normal * inv,
        edge: total.edge * inv,
        total: total.total * inv,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{primitives, sample_points};
    use crate::refine::tests::{smooth_feature, test_camera};

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            dims: ModelDims {
                channels: 3,
                embed: 6,
                hidden: 8,
                rot_hidden: 6,
                stages: 2,
            },
            n_samples: 300,
            ..Default::default()
        }
    }

    fn one_sample(first: bool) -> (Vec<TrainSample>, BTreeMap<u32, Mesh>) {
        let gt = primitives::cube(2).scaled(1.2);
        let target = sample_points(&gt, 300, 1).unwrap();
        let s = TrainSample {
            class_id: 0,
            feature: smooth_feature(3, 3),
            camera: test_camera(),
            gt,
            target,
            first_in_track: first,
        };
        (vec![s], BTreeMap::from([(0, primitives::uv_sphere(0.5, 6, 8))]))
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let (samples, means) = one_sample(true);
        let cfg = TrainConfig { lr: 0.0, ..tiny_cfg() };
        let mut model = Model::new(cfg.dims, 1).unwrap();
        let before = model.params().to_vec();
        let mut rows = Vec::new();
        train_stage(&mut model, &samples, &means, TrainStage::MeanShape, 5, &cfg, 0, &mut |r| rows.push(*r)).unwrap();
        assert_eq!(model.params(), &before[..]);
        assert_eq!(rows.len(), 5);
        assert!(rows.iter().all(|r| r.loss.total.is_finite()));
        assert_eq!(rows.iter().map(|r| r.step).collect::<Vec<_>>(), vec![0, 1, 2, 3, 4]);
    }

    fn prediction_chamfer(model: &Model, s: &TrainSample, mean: &Mesh) -> f64 {
        let pred = model.predict(&s.feature, &s.camera, Reference::MeanShape(mean)).unwrap();
        let p = sample_points(&pred, 3000, 5).unwrap();
        let q = sample_points(&s.gt, 3000, 6).unwrap();
        crate::losses::chamfer(&p, &q).unwrap()
    }

    #[test]
    fn stage_one_fits_a_static_instance() {
        let (samples, means) = one_sample(true);
        let cfg = tiny_cfg();
        let mut model = Model::new(cfg.dims, 1).unwrap();
        let start = prediction_chamfer(&model, &samples[0], &means[&0]);
        let mut rows = Vec::new();
        train_stage(&mut model, &samples, &means, TrainStage::MeanShape, 300, &cfg, 0, &mut |r| rows.push(*r)).unwrap();
        let end = prediction_chamfer(&model, &samples[0], &means[&0]);
        assert!(end < 0.1 * start, "{start} -> {end}");
        assert!(rows.last().unwrap().loss.total < rows[0].loss.total);
    }

    #[test]
    fn temporal_stage_freezes_rotation_head() {
        let (samples, means) = one_sample(true);
        let cfg = tiny_cfg();
        let mut model = Model::new(cfg.dims, 2).unwrap();
        let range = model.rotation_params();
        let before = model.params()[range.clone()].to_vec();
        train_stage(&mut model, &samples, &means, TrainStage::Temporal, 5, &cfg, 0, &mut |_| {}).unwrap();
        assert_eq!(&model.params()[range], &before[..]);
    }

    #[test]
    fn non_finite_loss_names_the_term() {
        let (mut samples, means) = one_sample(true);
        let cfg = tiny_cfg();
        let mut model = Model::new(cfg.dims, 1).unwrap();
        model.params_mut().fill(f64::NAN);
        samples[0].first_in_track = true;
        let err = train_stage(&mut model, &samples, &means, TrainStage::MeanShape, 3, &cfg, 7, &mut |_| {}).unwrap_err();
        assert!(matches!(err, Error::NonFinite { step: 7, .. }), "{err}");
    }

    #[test]
    fn csv_row_format() {
        let row = TrainLogRow {
            step: 3,
            stage: TrainStage::Temporal,
            loss: LossBreakdown {
                chamfer: 0.5,
                normal: -1.0,
                edge: 0.25,
                total: 0.425,
            },
        };
        assert_eq!(row.to_csv(), "3,2,0.5,-1,0.25,0.425");
    }
}
