// SPDX-License-Identifier: Apache-2.0

//! Acceptance suite: one PASS/FAIL line per criterion, exit status 1 when
//! any criterion fails. `MESHTRACE_ACCEPTANCE=1,4,9` runs a subset.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use meshtrace_core::dataset::{generate_dataset, open_clips, suites, Clip};
use meshtrace_core::detection::{BBox, Detection, GroundTruthObject};
use meshtrace_core::losses::{chamfer, mesh_loss_against, mesh_loss_replay, LossWeights, Pairing, DEFAULT_LOSS_SAMPLES};
use meshtrace_core::mesh::{
    mean_shape, primitives, sample_points, sample_surface, shared_spec, voxelize_in, MeanShapeConfig, Mesh, Vec3,
};
use meshtrace_core::metrics::{evaluate, f1_at, mesh_f1, EvalConfig, MatchParams, Split};
use meshtrace_core::pipeline::{infer_clip, mean_shapes, training_samples, InferOptions, ReferenceMode};
use meshtrace_core::refine::{
    train, train_stage, CameraRig, LossInput, Model, ModelDims, Reference, RoiFeature, TrainConfig, TrainSample,
    TrainStage,
};
use meshtrace_core::tracker::{score_boxes, solve_assignment, track_clip, DEFAULT_IOU_GATE};
use nalgebra::{DMatrix, Matrix4, Translation3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

type Criterion = (u32, &'static str, fn() -> Outcome);

const CRITERIA: [Criterion; 9] = [
    (1, "assignment matches exhaustive search", c1_assignment),
    (2, "AP matches brute-force PR enumeration", c2_average_precision),
    (3, "analytic gradients match finite differences", c3_gradients),
    (4, "F1@0.3 fidelity", c4_f1),
    (5, "mean shape of jittered cubes", c5_mean_shape),
    (6, "stage-1 training convergence", c6_training),
    (7, "temporal references beat mean shapes", c7_temporal),
    (8, "tracker ids through crossing and cut", c8_tracker),
    (9, "CLI outputs are byte-identical", c9_determinism),
];

fn main() {
    let only: Option<BTreeSet<u32>> = std::env::var("MESHTRACE_ACCEPTANCE")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let mut failed = 0;
    for (id, name, run) in CRITERIA {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let started = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        let verdict = if result.pass { "PASS" } else { "FAIL" };
        println!(
            "criterion {id} [{verdict}] {name}: {} ({:.1} s)",
            result.detail,
            started.elapsed().as_secs_f64()
        );
        failed += usize::from(!result.pass);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

// ---------------------------------------------------------------- 1

/// Best row-order total over every partial injection rows -> columns.
fn exhaustive_best(scores: &DMatrix<f64>) -> f64 {
    fn go(s: &DMatrix<f64>, row: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
        if row == s.nrows() {
            *best = best.max(acc);
            return;
        }
        go(s, row + 1, used, acc + 0.0, best);
        for j in 0..s.ncols() {
            if !used[j] {
                used[j] = true;
                go(s, row + 1, used, acc + s[(row, j)], best);
                used[j] = false;
            }
        }
    }
    let mut best = f64::NEG_INFINITY;
    go(scores, 0, &mut vec![false; scores.ncols()], 0.0, &mut best);
    best
}

fn random_box(rng: &mut ChaCha8Rng, extent: f64, min: f64, max: f64) -> BBox {
    let w = rng.random_range(min..max);
    let h = rng.random_range(min..max);
    let x = rng.random_range(0.0..extent);
    let y = rng.random_range(0.0..extent);
    BBox::new(x, y, x + w, y + h).unwrap()
}

fn c1_assignment() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut mismatches = 0;
    for trial in 0..500 {
        let n = rng.random_range(0..=6);
        let m = rng.random_range(0..=6);
        let scores = if trial % 2 == 0 {
            // Tracker scores: box IoU minus a class-mismatch penalty.
            let objects = |rng: &mut ChaCha8Rng, k: usize| -> Vec<(BBox, u32)> {
                (0..k).map(|_| (random_box(rng, 60.0, 10.0, 50.0), rng.random_range(0..2))).collect()
            };
            let curr = objects(&mut rng, n);
            let prev = objects(&mut rng, m);
            score_boxes(&curr, &prev)
        } else {
            DMatrix::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0))
        };
        let got = solve_assignment(&scores).total(&scores);
        if got != exhaustive_best(&scores) {
            mismatches += 1;
        }
    }
    let t = started.elapsed();
    outcome(
        mismatches == 0 && t < Duration::from_secs(10),
        format!("500 matrices, {mismatches} mismatches, {:.2} s (limit 10 s)", secs(t)),
    )
}

// ---------------------------------------------------------------- 2

fn bucket(area: f64) -> Split {
    if area < 32.0 * 32.0 {
        Split::Small
    } else if area < 96.0 * 96.0 {
        Split::Medium
    } else {
        Split::Large
    }
}

/// Greedy matching then AP from an explicit walk over every ranked prefix.
fn brute_force_ap(preds: &[Detection], gts: &[GroundTruthObject], class: u32, split: Split) -> f64 {
    let in_split = |area: f64| split == Split::All || bucket(area) == split;
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].score.partial_cmp(&preds[a].score).unwrap().then(a.cmp(&b)));
    let mut taken = vec![false; gts.len()];
    let mut scored: Vec<(usize, bool)> = Vec::new();
    for &i in &order {
        let p = &preds[i];
        if p.class_id != class {
            continue;
        }
        let mut best: Option<(usize, f64)> = None;
        for (j, g) in gts.iter().enumerate() {
            if taken[j] || g.class_id != class || g.frame_id != p.frame_id || g.clip_id != p.clip_id {
                continue;
            }
            let iou = iou(&p.bbox, &g.bbox);
            if best.is_none_or(|(_, b)| iou > b) {
                best = Some((j, iou));
            }
        }
        match best {
            Some((j, v)) if v >= 0.5 => {
                taken[j] = true;
                if in_split(gts[j].bbox.area()) {
                    scored.push((i, true));
                }
            }
            _ => {
                if in_split(p.bbox.area()) {
                    scored.push((i, false));
                }
            }
        }
    }
    let n_gt = gts.iter().filter(|g| g.class_id == class && in_split(g.bbox.area())).count();
    if n_gt == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    for level in 0..=100 {
        let level = level as f64 / 100.0;
        let mut best: f64 = 0.0;
        for k in 1..=scored.len() {
            let tp = scored[..k].iter().filter(|s| s.1).count();
            if tp as f64 / n_gt as f64 >= level {
                best = best.max(tp as f64 / k as f64);
            }
        }
        total += best;
    }
    total / 101.0
}

/// Box IoU written out independently of the library.
fn iou(a: &BBox, b: &BBox) -> f64 {
    let [ax0, ay0, ax1, ay1]: [f64; 4] = (*a).into();
    let [bx0, by0, bx1, by1]: [f64; 4] = (*b).into();
    let iw = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
    let ih = (ay1.min(by1) - ay0.max(by0)).max(0.0);
    let inter = iw * ih;
    inter / ((ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter)
}

fn c2_average_precision() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let splits = vec![Split::All, Split::Small, Split::Medium, Split::Large];
    let mut worst: f64 = 0.0;
    let mut cells = 0;
    for _ in 0..200 {
        let n_gt = rng.random_range(1..=10);
        let n_pred = rng.random_range(0..=20);
        let n_cat = rng.random_range(1..=3);
        let gts: Vec<GroundTruthObject> = (0..n_gt)
            .map(|k| GroundTruthObject {
                frame_id: rng.random_range(0..3),
                clip_id: "c".into(),
                instance_id: k as u64,
                class_id: rng.random_range(0..n_cat),
                bbox: random_box(&mut rng, 200.0, 10.0, 140.0),
                mask: None,
                mesh: None,
                occlusion: 0.0,
            })
            .collect();
        let preds: Vec<Detection> = (0..n_pred)
            .map(|_| {
                // Coarse scores produce ties.
                let score = rng.random_range(0..=10) as f64 / 10.0;
                let (frame, class, bbox) = if rng.random_bool(0.7) {
                    let g = &gts[rng.random_range(0..gts.len())];
                    let j = rng.random_range(0.0..0.3) * g.bbox.width();
                    let class = if rng.random_bool(0.85) { g.class_id } else { rng.random_range(0..n_cat + 1) };
                    (g.frame_id, class, g.bbox.translated(j, -0.5 * j))
                } else {
                    (rng.random_range(0..3), rng.random_range(0..n_cat), random_box(&mut rng, 200.0, 10.0, 140.0))
                };
                let mut d = Detection::new(frame, class, bbox, score).unwrap();
                d.clip_id = "c".into();
                d
            })
            .collect();
        let cfg = EvalConfig {
            splits: splits.clone(),
            ..Default::default()
        };
        let report = evaluate(&preds, &gts, &cfg).unwrap();
        let classes: BTreeSet<u32> = gts.iter().map(|g| g.class_id).collect();
        for &split in &splits {
            let sr = report.split(split).unwrap();
            let mut per: Vec<f64> = Vec::new();
            for &c in &classes {
                let n = gts.iter().filter(|g| g.class_id == c && (split == Split::All || bucket(g.bbox.area()) == split)).count();
                let oracle = brute_force_ap(&preds, &gts, c, split);
                let got = sr.categories.iter().find(|r| r.class_id == c).unwrap().ap.box_ap;
                let has_preds_in_split = preds.iter().any(|p| p.class_id == c);
                match got {
                    Some(v) => {
                        worst = worst.max((v - oracle).abs());
                        per.push(v);
                    }
                    // Nothing to score: no ground truth here and no predictions in the split.
                    None => assert!(n == 0 && (oracle == 0.0 || !has_preds_in_split)),
                }
                cells += 1;
            }
            if let (Some(mean), false) = (sr.mean.box_ap, per.is_empty()) {
                worst = worst.max((mean - per.iter().sum::<f64>() / per.len() as f64).abs());
            }
        }
    }
    let t = started.elapsed();
    outcome(
        worst <= 1e-9 && t < Duration::from_secs(30),
        format!("200 sets, {cells} category/split cells, max |diff| {worst:.1e}, {:.2} s (limit 30 s)", secs(t)),
    )
}

// ---------------------------------------------------------------- 3

fn test_camera() -> CameraRig {
    CameraRig::new(
        Translation3::new(0.1, -0.05, 4.0).to_homogeneous(),
        Matrix4::identity(),
        CameraRig::perspective(0.7, 1.0, 0.1, 50.0),
        [0.0, 0.0, 128.0, 128.0],
    )
    .unwrap()
}

/// Low-frequency sinusoids per channel.
fn smooth_feature(rng: &mut ChaCha8Rng, channels: usize) -> RoiFeature {
    let (h, w) = (12, 12);
    let mut data = Vec::with_capacity(channels * h * w);
    for _ in 0..channels {
        let p: [f64; 4] = [
            rng.random_range(0.5..2.0),
            rng.random_range(0.5..2.0),
            rng.random_range(0.0..6.0),
            rng.random_range(0.3..1.0),
        ];
        for y in 0..h {
            for x in 0..w {
                let (u, v) = ((x as f64 + 0.5) / w as f64, (y as f64 + 0.5) / h as f64);
                data.push(p[3] * (p[0] * 3.0 * u + p[1] * 2.0 * v + p[2]).sin());
            }
        }
    }
    RoiFeature::new(channels, h, w, data, BBox::new(40.0, 38.0, 90.0, 92.0).unwrap()).unwrap()
}

fn rel_err(a: f64, fd: f64) -> f64 {
    (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6)
}

#[derive(Default)]
struct GradStats {
    worst: f64,
    checked: usize,
    skipped: usize,
}

impl GradStats {
    fn add(&mut self, analytic: f64, fd: Option<f64>) {
        match fd {
            Some(fd) => {
                self.checked += 1;
                self.worst = self.worst.max(rel_err(analytic, fd));
            }
            None => self.skipped += 1,
        }
    }
}

/// Nearest-neighbor partners and normal-cosine signs between replayed
/// samples and the target; the loss is smooth while these stay fixed.
fn point_branches(pred: &Mesh, draws: &meshtrace_core::mesh::SurfaceSamples, target: &meshtrace_core::PointSet) -> Vec<(usize, bool)> {
    let s = draws.replay(pred).unwrap().points;
    let pairing = Pairing::new(s.points(), target.points()).unwrap();
    let (pn, qn) = (s.normals(), target.normals());
    let mut out: Vec<(usize, bool)> =
        pairing.p_to_q.iter().enumerate().map(|(i, &(j, _))| (j, pn[i].dot(&qn[j]) > 0.0)).collect();
    out.extend(pairing.q_to_p.iter().enumerate().map(|(j, &(i, _))| (i, pn[i].dot(&qn[j]) > 0.0)));
    out
}

fn c3_gradients() -> Outcome {
    let started = Instant::now();
    let h = 1e-4;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let terms = [("chamfer", [1.0, 0.0, 0.0]), ("normal", [0.0, 1.0, 0.0]), ("edge", [0.0, 0.0, 1.0])];
    let mut stats: BTreeMap<&str, GradStats> = BTreeMap::new();
    let dims = ModelDims {
        channels: 3,
        embed: 4,
        hidden: 5,
        rot_hidden: 4,
        stages: 3,
    };
    for trial in 0..50 {
        let base = primitives::uv_sphere(0.45, 4, 6);
        assert_eq!(base.num_vertices(), 20);
        let verts: Vec<Vec3> = base
            .vertices()
            .iter()
            .map(|v| v + Vec3::new(rng.random_range(-0.04..0.04), rng.random_range(-0.04..0.04), rng.random_range(-0.04..0.04)))
            .collect();
        let mesh = base.with_vertices(verts.clone()).unwrap();
        let size = Vec3::new(rng.random_range(0.6..1.2), rng.random_range(0.6..1.2), rng.random_range(0.6..1.2));
        let target = sample_points(&primitives::box_mesh(size, 2), 300, trial).unwrap();
        let draws = sample_surface(&mesh, 200, 1000 + trial).unwrap();

        for (name, w) in terms {
            let weights = LossWeights::new(w[0], w[1], w[2]).unwrap();
            let analytic = mesh_loss_replay(&mesh, &draws, &target, &weights).unwrap().grad;
            let branches = point_branches(&mesh, &draws, &target);
            let entry = stats.entry(name).or_default();
            for vi in 0..verts.len() {
                for ax in 0..3 {
                    let eval = |d: f64| {
                        let mut v = verts.clone();
                        v[vi][ax] += d;
                        let m = base.with_vertices(v).unwrap();
                        let l = mesh_loss_replay(&m, &draws, &target, &weights).unwrap().breakdown.total;
                        (l, point_branches(&m, &draws, &target))
                    };
                    let (lp, bp) = eval(h);
                    let (lm, bm) = eval(-h);
                    let smooth = name == "edge" || (bp == branches && bm == branches);
                    entry.add(analytic[vi][ax], smooth.then(|| (lp - lm) / (2.0 * h)));
                }
            }
        }

        // Whole pipeline: rotation head, VertAlign, graph convolutions and losses.
        let mut model = Model::new(dims, trial).unwrap();
        for v in model.params_mut() {
            *v += rng.random_range(-0.2..0.2);
        }
        let feat = smooth_feature(&mut rng, 3);
        let cam = test_camera();
        let weights = LossWeights::default();
        let reference = if trial % 2 == 0 { Reference::Given(&mesh) } else { Reference::MeanShape(&mesh) };
        let input = LossInput {
            feature: &feat,
            camera: &cam,
            reference,
            target: &target,
        };
        let draws = model.loss_draws(&input, &weights, 200, trial).unwrap();
        let mut grad = vec![0.0; model.params().len()];
        model.loss_replay(&input, &weights, &draws, Some(&mut grad)).unwrap();
        let branches = model.loss_branches(&input, &weights, &draws).unwrap().1;
        let entry = stats.entry("pipeline").or_default();
        let stride = 5;
        for k in ((trial as usize % stride)..grad.len()).step_by(stride) {
            let orig = model.params()[k];
            let mut eval = |x: f64| {
                model.params_mut()[k] = x;
                let (l, b) = model.loss_branches(&input, &weights, &draws).unwrap();
                (l.total, b)
            };
            let (lp, bp) = eval(orig + h);
            let (lm, bm) = eval(orig - h);
            model.params_mut()[k] = orig;
            let smooth = bp == branches && bm == branches;
            entry.add(grad[k], smooth.then(|| (lp - lm) / (2.0 * h)));
        }
    }
    let t = started.elapsed();
    let worst = stats.values().map(|s| s.worst).fold(0.0, f64::max);
    let enough = stats.values().all(|s| s.checked * 2 > s.checked + s.skipped);
    let parts: Vec<String> = stats
        .iter()
        .map(|(k, s)| format!("{k} {:.1e} ({} checked, {} on branch switches)", s.worst, s.checked, s.skipped))
        .collect();
    outcome(
        worst < 1e-3 && enough && t < Duration::from_secs(60),
        format!("50 trials, max rel err: {}; {:.1} s (limit 60 s)", parts.join(", "), secs(t)),
    )
}

// ---------------------------------------------------------------- 4

fn c4_f1() -> Outcome {
    let cube = primitives::cube(4);
    let same = f1_at(&cube, &cube, 0.3, 10_000, 4).unwrap();
    // Two unit cubes far apart; the prediction is one of them, so it covers
    // half of the ground-truth surface.
    let far = cube.translated(&Vec3::new(4.0, 0.0, 0.0));
    let (mut v, mut f) = cube.clone().into_parts();
    let off = v.len();
    let (fv, ff) = far.into_parts();
    v.extend(fv);
    f.extend(ff.into_iter().map(|[a, b, c]| [a + off, b + off, c + off]));
    let both = Mesh::new(v, f).unwrap();
    let half = f1_at(&cube, &both, 0.3, 10_000, 4).unwrap();
    let pass = same.f1 == 1.0 && same.precision == 1.0 && same.recall == 1.0 && (half.recall - 0.5).abs() <= 0.03;
    outcome(
        pass,
        format!(
            "identical F1 {}; half surface P {:.4} R {:.4} F1 {:.4} (need R = 0.5 +- 0.03)",
            same.f1, half.precision, half.recall, half.f1
        ),
    )
}

// ---------------------------------------------------------------- 5

fn c5_mean_shape() -> Outcome {
    let started = Instant::now();
    let base = primitives::cube(3);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let copies: Vec<Mesh> = (0..10)
        .map(|_| {
            let s = Vec3::new(rng.random_range(0.95..1.05), rng.random_range(0.95..1.05), rng.random_range(0.95..1.05));
            let t = Vec3::new(rng.random_range(-0.03..0.03), rng.random_range(-0.03..0.03), rng.random_range(-0.03..0.03));
            let v = base
                .vertices()
                .iter()
                .map(|p| {
                    let n = Vec3::new(rng.random_range(-0.01..0.01), rng.random_range(-0.01..0.01), rng.random_range(-0.01..0.01));
                    p.component_mul(&s) + t + n
                })
                .collect();
            base.with_vertices(v).unwrap()
        })
        .collect();
    let cfg = MeanShapeConfig::default();
    let mean = mean_shape(&copies, &cfg).unwrap();
    let t = started.elapsed();
    let spec = shared_spec(&[&mean, &base], 64, 1).unwrap();
    let iou = voxelize_in(&mean, &spec).0.iou(&voxelize_in(&base, &spec).0).unwrap();
    outcome(
        iou >= 0.9 && mean.num_faces() <= 4000 && t < Duration::from_secs(30),
        format!(
            "volumetric IoU {iou:.4} (need >= 0.9), {} faces (limit 4000), {:.2} s at {}^3 (limit 30 s)",
            mean.num_faces(),
            secs(t),
            cfg.resolution
        ),
    )
}

// ---------------------------------------------------------------- 6

/// Mean-shape face budget for the training criteria; keeps 2000 steps
/// within the runtime limit on one core.
const TRAIN_FACES: usize = 2000;

fn fixture(specs: &[meshtrace_core::dataset::FixtureSpec], dir: &Path) -> Vec<Clip> {
    generate_dataset(specs, dir).unwrap();
    open_clips(dir).unwrap()
}

struct FitStats {
    /// Mesh loss with the normal term shifted to be non-negative.
    loss: f64,
    chamfer: f64,
}

/// Final-stage prediction from each sample's mean shape, scored with the
/// training loss terms against the sample's target points.
fn fit_stats(model: &Model, samples: &[TrainSample], means: &BTreeMap<u32, Mesh>, w: &LossWeights) -> FitStats {
    let (mut loss, mut cham) = (0.0, 0.0);
    for (i, s) in samples.iter().enumerate() {
        let pred = model.predict(&s.feature, &s.camera, Reference::MeanShape(&means[&s.class_id])).unwrap();
        let b = mesh_loss_against(&pred, &s.target, DEFAULT_LOSS_SAMPLES, w, 7000 + i as u64).unwrap().breakdown;
        loss += b.total + 2.0 * w.normal;
        cham += b.chamfer;
    }
    let n = samples.len() as f64;
    FitStats {
        loss: loss / n,
        chamfer: cham / n,
    }
}

fn c6_training() -> Outcome {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    pool.install(|| {
        let started = Instant::now();
        let dir = tempfile::tempdir().unwrap();
        let clips = fixture(&suites::rotating_primitives(10, 12, 0), dir.path());
        let mean_cfg = MeanShapeConfig {
            target_faces: TRAIN_FACES,
            ..Default::default()
        };
        let means = mean_shapes(&clips, &mean_cfg).unwrap();
        let samples = training_samples(&clips, DEFAULT_LOSS_SAMPLES, 0).unwrap();
        let cfg = TrainConfig {
            stage1_steps: 2000,
            stage2_steps: 0,
            ..Default::default()
        };
        let mut model = Model::new(cfg.dims, cfg.seed).unwrap();
        let before = fit_stats(&model, &samples, &means, &cfg.weights);
        let train_started = Instant::now();
        train_stage(&mut model, &samples, &means, TrainStage::MeanShape, cfg.stage1_steps, &cfg, 0, &mut |_| {}).unwrap();
        let train_time = train_started.elapsed();
        let after = fit_stats(&model, &samples, &means, &cfg.weights);
        let ratio = after.loss / before.loss;
        // The same loss with each sample's ground-truth mesh as the prediction.
        let floor: f64 = samples
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let b = mesh_loss_against(&s.gt, &s.target, DEFAULT_LOSS_SAMPLES, &cfg.weights, 7000 + i as u64)
                    .unwrap()
                    .breakdown;
                b.total + 2.0 * cfg.weights.normal
            })
            .sum::<f64>()
            / samples.len() as f64;
        outcome(
            ratio < 0.25 && train_time < Duration::from_secs(600),
            format!(
                "{} samples, mesh loss {:.5} -> {:.5} = {:.1}% of init (need < 25%), Chamfer {:.5} -> {:.5} = {:.1}%, ground truth as prediction {:.1}%, 2000 steps in {:.0} s (limit 600 s), {:.0} s in total",
                samples.len(),
                before.loss,
                after.loss,
                100.0 * ratio,
                before.chamfer,
                after.chamfer,
                100.0 * after.chamfer / before.chamfer,
                100.0 * floor / before.loss,
                secs(train_time),
                secs(started.elapsed())
            ),
        )
    })
}

// ---------------------------------------------------------------- 7

fn c7_temporal() -> Outcome {
    let train_dir = tempfile::tempdir().unwrap();
    let test_dir = tempfile::tempdir().unwrap();
    let train_clips = fixture(&suites::rotating_primitives(40, 12, 0), train_dir.path());
    let test_clips = fixture(&suites::rotating_primitives(6, 12, 1), test_dir.path());
    let means = mean_shapes(
        &train_clips,
        &MeanShapeConfig {
            target_faces: TRAIN_FACES,
            ..Default::default()
        },
    )
    .unwrap();
    let samples = training_samples(&train_clips, DEFAULT_LOSS_SAMPLES, 0).unwrap();
    let cfg = TrainConfig {
        stage1_steps: 1000,
        stage2_steps: 500,
        ..Default::default()
    };
    let model = train(&samples, &means, &cfg, &mut |_| {}).unwrap();

    let params = MatchParams::default();
    let score = |mode: ReferenceMode| {
        let opts = InferOptions {
            mode,
            ..Default::default()
        };
        let (mut cham, mut f1, mut n) = (0.0, 0.0, 0.0);
        for clip in &test_clips {
            for o in infer_clip(&model, clip, &means, &opts).unwrap() {
                if o.frame_index == 0 {
                    continue;
                }
                let inst = &clip.manifest.frames[o.frame_index].instances[o.instance_index];
                let gt = clip.load_mesh(inst).unwrap();
                let p = sample_points(&o.mesh, 5000, 1).unwrap();
                let q = sample_points(&gt, 5000, 2).unwrap();
                cham += chamfer(&p, &q).unwrap();
                f1 += mesh_f1(&o.mesh, &gt, &params).unwrap().f1;
                n += 1.0;
            }
        }
        (cham / n, 100.0 * f1 / n)
    };
    let (cham_t, f1_t) = score(ReferenceMode::Temporal);
    let (cham_m, f1_m) = score(ReferenceMode::MeanShape);
    outcome(
        cham_t < cham_m && f1_t - f1_m >= 2.0,
        format!(
            "frames 2..12 of 6 held-out clips: Chamfer temporal {cham_t:.5} vs mean-shape {cham_m:.5}; F1@0.3 {f1_t:.2} vs {f1_m:.2} (need Chamfer lower and F1 +2 points)"
        ),
    )
}

// ---------------------------------------------------------------- 8

fn c8_tracker() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cut = 16;
    let clip = &fixture(&[suites::crossing_objects(20, cut)], dir.path())[0];
    let frames: Vec<Vec<(BBox, u32)>> = clip
        .manifest
        .frames
        .iter()
        .map(|f| f.instances.iter().map(|i| (i.bbox, i.class_id)).collect())
        .collect();
    let instance_ids: Vec<Vec<u64>> =
        clip.manifest.frames.iter().map(|f| f.instances.iter().map(|i| i.instance_id).collect()).collect();

    // The gate condition: within a shot each object overlaps itself enough.
    let mut min_self_iou = f64::INFINITY;
    for t in 1..frames.len() {
        if t == cut {
            continue;
        }
        for (k, id) in instance_ids[t].iter().enumerate() {
            let prev = instance_ids[t - 1].iter().position(|p| p == id).unwrap();
            min_self_iou = min_self_iou.min(iou(&frames[t][k].0, &frames[t - 1][prev].0));
        }
    }
    // The two boxes overlap at some frame, so the objects really cross.
    let max_cross_iou = frames.iter().filter(|f| f.len() == 2).map(|f| iou(&f[0].0, &f[1].0)).fold(0.0, f64::max);

    let ids = track_clip(&frames, &[cut], DEFAULT_IOU_GATE);
    let mut switches = 0;
    let mut shots: Vec<BTreeMap<u64, BTreeSet<u64>>> = vec![BTreeMap::new(), BTreeMap::new()];
    for t in 0..frames.len() {
        let shot = usize::from(t >= cut);
        for (k, &inst) in instance_ids[t].iter().enumerate() {
            shots[shot].entry(inst).or_default().insert(ids[t][k]);
        }
    }
    for shot in &shots {
        let mut seen = BTreeSet::new();
        for tracks in shot.values() {
            switches += tracks.len() - 1;
            for &t in tracks {
                if !seen.insert(t) {
                    switches += 1;
                }
            }
        }
    }
    let before: BTreeSet<u64> = shots[0].values().flatten().copied().collect();
    let after: BTreeSet<u64> = shots[1].values().flatten().copied().collect();
    let reset = before.is_disjoint(&after) && !after.is_empty();
    outcome(
        min_self_iou > 0.5 && max_cross_iou > 0.0 && switches == 0 && reset,
        format!(
            "20 frames, cut at {cut}: min self-IoU {min_self_iou:.3}, max cross IoU {max_cross_iou:.3}, {switches} id switches, ids before cut {before:?}, after {after:?}"
        ),
    )
}

// ---------------------------------------------------------------- 9

/// Every file under `root` with its bytes, keyed by relative path.
fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

/// Runs every subcommand into `root`; returns the stdout of each.
fn cli_session(root: &Path, threads: usize) -> Vec<(String, Vec<u8>)> {
    let r = |p: &str| root.join(p).to_string_lossy().into_owned();
    let steps: Vec<(&str, Vec<String>)> = vec![
        ("gen", vec!["gen".into(), "--suite".into(), "rotating".into(), "--clips".into(), "3".into(), "--frames".into(), "4".into(), "--out".into(), r("data")]),
        ("gen crossing", vec!["gen".into(), "--suite".into(), "crossing".into(), "--frames".into(), "8".into(), "--cut".into(), "5".into(), "--out".into(), r("cross")]),
        ("track", vec!["track".into(), "--data".into(), r("cross"), "--out".into(), r("tracks.jsonl")]),
        ("meanshape", vec!["meanshape".into(), "--data".into(), r("data"), "--class".into(), "1".into(), "--resolution".into(), "16".into(), "--out".into(), r("mean.obj")]),
        (
            "train",
            [
                "train", "--data", &r("data"), "--out", &r("model.ckpt"), "--log", &r("train.csv"), "--stage1-steps", "12",
                "--stage2-steps", "6", "--batch", "2", "--embed", "8", "--hidden", "8", "--rot-hidden", "8",
                "--loss-samples", "400", "--mean-resolution", "16", "--mean-faces", "400",
            ]
            .map(String::from)
            .to_vec(),
        ),
        ("infer", vec!["infer".into(), "--data".into(), r("data"), "--checkpoint".into(), r("model.ckpt"), "--out".into(), r("preds")]),
        ("eval", vec!["eval".into(), "--preds".into(), r("preds"), "--gts".into(), r("data"), "--f1-samples".into(), "2000".into(), "--out".into(), r("report.json")]),
    ];
    let mut out = Vec::new();
    for (name, args) in steps {
        let o = Command::new(env!("CARGO_BIN_EXE_meshtrace"))
            .args(["--seed", "11", "--threads", &threads.to_string()])
            .args(&args)
            .output()
            .unwrap();
        assert!(o.status.success(), "{name} failed: {}", String::from_utf8_lossy(&o.stderr));
        // Printed paths name the run directory.
        let stdout = String::from_utf8(o.stdout).unwrap().replace(root.to_str().unwrap(), "<root>");
        out.push((name.to_string(), stdout.into_bytes()));
    }
    out
}

fn c9_determinism() -> Outcome {
    let runs: Vec<(usize, tempfile::TempDir)> =
        [1, 1, 4].into_iter().map(|t| (t, tempfile::tempdir().unwrap())).collect();
    let results: Vec<_> = runs
        .iter()
        .map(|(threads, dir)| (cli_session(dir.path(), *threads), snapshot(dir.path())))
        .collect();
    let (ref_out, ref_files) = &results[0];
    let mut diffs = Vec::new();
    for (k, (out, files)) in results.iter().enumerate().skip(1) {
        for ((name, a), (_, b)) in ref_out.iter().zip(out) {
            if a != b {
                diffs.push(format!("run {k}: stdout of {name}"));
            }
        }
        let keys: BTreeSet<&PathBuf> = ref_files.keys().chain(files.keys()).collect();
        for key in keys {
            if ref_files.get(key) != files.get(key) {
                diffs.push(format!("run {k}: {}", key.display()));
            }
        }
    }
    outcome(
        diffs.is_empty(),
        format!(
            "gen, track, meanshape, train, infer, eval run 3 times (threads 1, 1, 4): {} files compared, {} differences{}",
            ref_files.len(),
            diffs.len(),
            if diffs.is_empty() { String::new() } else { format!(": {}", diffs.join("; ")) }
        ),
    )
}
