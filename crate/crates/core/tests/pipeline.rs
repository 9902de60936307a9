// SPDX-License-Identifier: Apache-2.0

use meshtrace_core::dataset::{generate_dataset, open_clips, suites, Clip, Predictions};
use meshtrace_core::mesh::MeanShapeConfig;
use meshtrace_core::metrics::{evaluate, EvalConfig, Split};
use meshtrace_core::pipeline::{
    infer_clips, mean_shapes, training_samples, write_predictions, InferOptions, ReferenceMode, PREDICTIONS_FILE,
};
use meshtrace_core::refine::{train, Checkpoint, Model, ModelDims, TrainConfig};

fn dataset(dir: &std::path::Path) -> Vec<Clip> {
    let mut specs = suites::rotating_primitives(2, 4, 0);
    specs.push(suites::crossing_objects(6, 4));
    generate_dataset(&specs, dir).unwrap();
    open_clips(dir).unwrap()
}

fn small_config(channels: usize) -> TrainConfig {
    TrainConfig {
        dims: ModelDims {
            channels,
            embed: 6,
            hidden: 6,
            rot_hidden: 6,
            stages: 2,
        },
        stage1_steps: 8,
        stage2_steps: 4,
        n_samples: 300,
        batch_size: 2,
        ..Default::default()
    }
}

#[test]
fn train_infer_evaluate() {
    let tmp = tempfile::tempdir().unwrap();
    let clips = dataset(&tmp.path().join("data"));
    let means = mean_shapes(
        &clips,
        &MeanShapeConfig {
            resolution: 16,
            target_faces: 300,
            ..Default::default()
        },
    )
    .unwrap();
    let samples = training_samples(&clips, 300, 0).unwrap();
    let cfg = small_config(samples[0].feature.channels());
    let mut rows = Vec::new();
    let model = train(&samples, &means, &cfg, &mut |r| rows.push(*r)).unwrap();
    assert_eq!(rows.len(), 12);
    assert!(rows.iter().all(|r| r.loss.total.is_finite()));

    // The checkpoint round-trips bit for bit.
    let ck = Checkpoint {
        model,
        mean_shapes: means,
        seed: 0,
        steps: [8, 4],
    };
    let bytes = ck.to_bytes();
    let back = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back.to_bytes(), bytes);

    let temporal = infer_clips(&back.model, &clips, &back.mean_shapes, &InferOptions::default()).unwrap();
    for (clip, objects) in clips.iter().zip(&temporal) {
        let n: usize = clip.manifest.frames.iter().map(|f| f.instances.len()).sum();
        assert_eq!(objects.len(), n);
        for o in objects {
            let frame = &clip.manifest.frames[o.frame_index];
            let first = o.frame_index == 0 || frame.shot_transition;
            assert_eq!(o.from_previous, !first, "{} frame {}", clip.id(), o.frame_index);
            assert!(o.mesh.vertices().iter().all(|v| v.iter().all(|x| x.is_finite())));
        }
    }
    let mean_mode = InferOptions {
        mode: ReferenceMode::MeanShape,
        ..Default::default()
    };
    let from_means = infer_clips(&back.model, &clips, &back.mean_shapes, &mean_mode).unwrap();
    assert!(from_means.iter().flatten().all(|o| !o.from_previous));

    let out = tmp.path().join("preds");
    write_predictions(&clips, &temporal, &out).unwrap();
    let preds = Predictions::read(&out.join(PREDICTIONS_FILE)).unwrap().load_detections().unwrap();
    let gts: Vec<_> = clips.iter().flat_map(|c| c.ground_truth().unwrap()).collect();
    assert_eq!(preds.len(), gts.len());
    let report = evaluate(&preds, &gts, &EvalConfig::default()).unwrap();
    let all = report.split(Split::All).unwrap();
    // Boxes and masks come from the annotations.
    assert_eq!(all.mean.box_ap, Some(1.0));
    assert_eq!(all.mean.mask_ap, Some(1.0));
    let mesh_ap = all.mean.mesh_ap.unwrap();
    assert!((0.0..=1.0).contains(&mesh_ap));
}

#[test]
fn untrained_model_returns_the_given_reference() {
    let tmp = tempfile::tempdir().unwrap();
    let clips = dataset(tmp.path());
    let clip = &clips[0];
    let frame = &clip.manifest.frames[1];
    let inst = &frame.instances[0];
    let feature = clip.load_feature(inst).unwrap();
    let model = Model::new(small_config(feature.channels()).dims, 3).unwrap();
    let reference = clip.load_mesh(inst).unwrap();
    let out = model.refine_vertices(&feature, &clip.camera(frame, inst), &reference).unwrap();
    assert_eq!(out, reference);
}

#[test]
fn annotations_as_predictions_score_perfectly() {
    let tmp = tempfile::tempdir().unwrap();
    let clips = dataset(tmp.path());
    let mut preds = Vec::new();
    let mut gts = Vec::new();
    let mut cfg = EvalConfig {
        splits: vec![Split::All, Split::Small, Split::Medium, Split::Large],
        ..Default::default()
    };
    for clip in &clips {
        preds.extend(Predictions::from_manifest(&clip.manifest, &clip.dir).load_detections().unwrap());
        gts.extend(clip.ground_truth().unwrap());
        cfg.clip_lengths.insert(clip.id().to_string(), clip.manifest.frames.len());
    }
    let report = evaluate(&preds, &gts, &cfg).unwrap();
    for s in &report.splits {
        for c in &s.categories {
            if c.n_gt > 0 {
                assert_eq!(c.ap.box_ap, Some(1.0), "{:?} class {}", s.split, c.class_id);
                assert_eq!(c.ap.mask_ap, Some(1.0));
                assert_eq!(c.ap.mesh_ap, Some(1.0));
            }
        }
    }
    assert_eq!(report.unknown_predictions, 0);
}
