// SPDX-License-Identifier: Apache-2.0

//! Dataset-level glue: class mean shapes, training sets, tracked inference
//! and prediction files.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Map;

use crate::dataset::{write_atomic, Clip, PredictionRecord, Predictions};
use crate::detection::BBox;
use crate::error::{Error, Result};
use crate::mesh::{mean_shape, save_obj, MeanShapeConfig, Mesh};
use crate::refine::{mix, Model, Reference, TrainSample};
use crate::tracker::Tracker;

pub use crate::tracker::DEFAULT_IOU_GATE;

/// Ground-truth meshes of every annotated object in canonical pose (the
/// recorded orientation undone), grouped by class.
pub fn class_meshes(clips: &[Clip]) -> Result<BTreeMap<u32, Vec<Mesh>>> {
    let mut out: BTreeMap<u32, Vec<Mesh>> = BTreeMap::new();
    for clip in clips {
        for f in &clip.manifest.frames {
            for inst in &f.instances {
                let mesh = clip.load_mesh(inst)?;
                let mesh = match &inst.orientation {
                    Some(r) => mesh.transformed(&r.transpose()),
                    None => mesh,
                };
                out.entry(inst.class_id).or_default().push(mesh);
            }
        }
    }
    Ok(out)
}

/// One mean shape per class present in `clips`.
pub fn mean_shapes(clips: &[Clip], cfg: &MeanShapeConfig) -> Result<BTreeMap<u32, Mesh>> {
    let by_class: Vec<(u32, Vec<Mesh>)> = class_meshes(clips)?.into_iter().collect();
    by_class
        .into_par_iter()
        .map(|(c, meshes)| Ok((c, mean_shape(&meshes, cfg)?)))
        .collect()
}

/// Training samples of all clips; clip `i` samples targets with `mix(seed, i)`.
pub fn training_samples(clips: &[Clip], target_samples: usize, seed: u64) -> Result<Vec<TrainSample>> {
    let per_clip: Vec<Vec<TrainSample>> = clips
        .par_iter()
        .enumerate()
        .map(|(i, c)| c.training_samples(target_samples, mix(seed, i as u64)))
        .collect::<Result<_>>()?;
    Ok(per_clip.into_iter().flatten().collect())
}

/// Reference rule at inference time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceMode {
    /// Tracked objects refine their previous prediction; new tracks start
    /// from the rotated class mean shape.
    Temporal,
    /// Every object starts from the rotated class mean shape.
    MeanShape,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InferOptions {
    pub iou_gate: f64,
    pub mode: ReferenceMode,
}

impl Default for InferOptions {
    fn default() -> Self {
        Self {
            iou_gate: DEFAULT_IOU_GATE,
            mode: ReferenceMode::Temporal,
        }
    }
}

/// The prediction for one annotated object.
#[derive(Debug, Clone)]
pub struct InferredObject {
    /// Index into the clip's frames.
    pub frame_index: usize,
    pub frame_id: u64,
    /// Index into the frame's instances (the detection this came from).
    pub instance_index: usize,
    pub track_id: u64,
    pub class_id: u32,
    pub bbox: BBox,
    /// The reference was the track's previous prediction.
    pub from_previous: bool,
    pub reference: Mesh,
    pub mesh: Mesh,
}

/// Runs the model over a clip with ground-truth boxes as detections. Tracks
/// end at shot transitions.
pub fn infer_clip(
    model: &Model,
    clip: &Clip,
    mean_shapes: &BTreeMap<u32, Mesh>,
    opts: &InferOptions,
) -> Result<Vec<InferredObject>> {
    let mut tracker = Tracker::new(opts.iou_gate);
    let mut out = Vec::new();
    for (fi, frame) in clip.manifest.frames.iter().enumerate() {
        if frame.shot_transition {
            tracker.reset();
        }
        let objects: Vec<(BBox, u32)> = frame.instances.iter().map(|i| (i.bbox, i.class_id)).collect();
        let assoc = tracker.step(&objects);
        for (k, (inst, a)) in frame.instances.iter().zip(assoc).enumerate() {
            let feature = clip.load_feature(inst)?;
            let camera = clip.camera(frame, inst);
            let previous = match opts.mode {
                ReferenceMode::Temporal => tracker.track(a.track_id).and_then(|t| t.mesh.clone()),
                ReferenceMode::MeanShape => None,
            };
            let from_previous = previous.is_some();
            let reference = match previous {
                Some(m) => m,
                None => {
                    let mean = mean_shapes
                        .get(&inst.class_id)
                        .ok_or_else(|| Error::Config(format!("no mean shape for class {}", inst.class_id)))?;
                    mean.with_vertices(model.reference_vertices(&feature, Reference::MeanShape(mean))?)?
                }
            };
            let mesh = model.refine_vertices(&feature, &camera, &reference)?;
            tracker.set_mesh(a.track_id, mesh.clone());
            out.push(InferredObject {
                frame_index: fi,
                frame_id: frame.frame_id,
                instance_index: k,
                track_id: a.track_id,
                class_id: inst.class_id,
                bbox: inst.bbox,
                from_previous,
                reference,
                mesh,
            });
        }
    }
    Ok(out)
}

/// [`infer_clip`] over several clips in parallel; results keep clip order.
pub fn infer_clips(
    model: &Model,
    clips: &[Clip],
    mean_shapes: &BTreeMap<u32, Mesh>,
    opts: &InferOptions,
) -> Result<Vec<Vec<InferredObject>>> {
    clips.par_iter().map(|c| infer_clip(model, c, mean_shapes, opts)).collect()
}

/// Writes predicted meshes and copies of the detection masks under `out`,
/// then `out/predictions.jsonl`. Scores are 1 (detections are ground truth).
pub fn write_predictions(clips: &[Clip], inferred: &[Vec<InferredObject>], out: &Path) -> Result<Predictions> {
    let mut records = Vec::new();
    for (clip, objects) in clips.iter().zip(inferred) {
        for o in objects {
            let inst = &clip.manifest.frames[o.frame_index].instances[o.instance_index];
            let stem = format!("{}/f{:05}_t{}", clip.id(), o.frame_id, o.track_id);
            let mesh_rel = format!("meshes/{stem}.obj");
            let mask_rel = format!("masks/{stem}.pbm");
            write_atomic(&out.join(&mesh_rel), &save_obj(&o.mesh))?;
            write_atomic(&out.join(&mask_rel), &clip.load_amodal_mask(inst)?.to_pbm())?;
            records.push(PredictionRecord {
                clip_id: clip.id().to_string(),
                frame_id: o.frame_id,
                class_id: o.class_id,
                bbox: o.bbox,
                score: 1.0,
                track_id: Some(o.track_id),
                mask: Some(mask_rel),
                mesh: Some(mesh_rel),
                extra: Map::new(),
            });
        }
    }
    let preds = Predictions::new(records, out.to_path_buf());
    preds.write(&out.join(PREDICTIONS_FILE))?;
    Ok(preds)
}

pub const PREDICTIONS_FILE: &str = "predictions.jsonl";

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_dataset, open_clips, suites};
    use crate::refine::ModelDims;

    fn dims() -> ModelDims {
        ModelDims {
            embed: 4,
            hidden: 6,
            rot_hidden: 4,
            ..Default::default()
        }
    }

    #[test]
    fn temporal_inference_reuses_previous_prediction() {
        let dir = tempfile::tempdir().unwrap();
        generate_dataset(&[suites::crossing_objects(6, 3)], dir.path()).unwrap();
        let clips = open_clips(dir.path()).unwrap();
        let means = mean_shapes(&clips, &MeanShapeConfig { resolution: 12, ..Default::default() }).unwrap();
        let model = Model::new(dims(), 3).unwrap();
        let got = infer_clip(&model, &clips[0], &means, &InferOptions::default()).unwrap();
        assert_eq!(got.len(), 12);
        let fresh: Vec<bool> = got.iter().map(|o| !o.from_previous).collect();
        // Two tracks start at frame 0 and again after the cut at frame 3.
        let expected: Vec<bool> = (0..12).map(|i| i / 2 == 0 || i / 2 == 3).collect();
        assert_eq!(fresh, expected);
        for w in got.windows(3) {
            if w[2].from_previous && w[0].track_id == w[2].track_id {
                assert_eq!(w[2].reference, w[0].mesh);
            }
        }
        let tracks: Vec<u64> = got.iter().map(|o| o.track_id).collect();
        assert_eq!(tracks, vec![0, 1, 0, 1, 0, 1, 2, 3, 2, 3, 2, 3]);

        let opts = InferOptions {
            mode: ReferenceMode::MeanShape,
            ..Default::default()
        };
        let plain = infer_clip(&model, &clips[0], &means, &opts).unwrap();
        assert!(plain.iter().all(|o| !o.from_previous));
        assert_eq!(plain[0].mesh, got[0].mesh);
    }

    #[test]
    fn predictions_round_trip_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        generate_dataset(&[suites::drifting_cube(3)], dir.path()).unwrap();
        let clips = open_clips(dir.path()).unwrap();
        let means = mean_shapes(&clips, &MeanShapeConfig { resolution: 12, ..Default::default() }).unwrap();
        let model = Model::new(dims(), 3).unwrap();
        let inferred = infer_clips(&model, &clips, &means, &InferOptions::default()).unwrap();
        let out = dir.path().join("preds");
        let written = write_predictions(&clips, &inferred, &out).unwrap();
        let back = Predictions::read(&out.join(PREDICTIONS_FILE)).unwrap();
        assert_eq!(back.records, written.records);
        let dets = back.load_detections().unwrap();
        assert_eq!(dets.len(), 3);
        assert!(dets.iter().all(|d| d.mesh.is_some() && d.mask.is_some() && d.instance_id == Some(0)));
    }
}
