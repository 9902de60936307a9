// SPDX-License-Identifier: Apache-2.0

//! Detection-style evaluation: IoUs, F1@tau between meshes, greedy matching,
//! 101-point interpolated AP and the size / occlusion / clip-length splits.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detection::{BBox, Detection, GroundTruthObject, Mask};
use crate::error::{Error, Result};
use crate::mesh::{rescale_to_gt, sample_points, Mesh, Vec3};
use crate::spatial::KdTree;

pub const DEFAULT_TAU: f64 = 0.3;
pub const DEFAULT_RESCALE_TARGET: f64 = 5.0;
pub const DEFAULT_F1_SAMPLES: usize = 10_000;
pub const DEFAULT_MATCH_THRESHOLD: f64 = 0.5;
pub const DEFAULT_EVAL_SEED: u64 = 0x5eed;

pub const SMALL_AREA: f64 = 32.0 * 32.0;
pub const LARGE_AREA: f64 = 96.0 * 96.0;
pub const HEAVY_OCCLUSION: f64 = 0.25;
pub const LONG_CLIP_FRAMES: usize = 30;

/// Recall levels 0, 0.01, ..., 1.
pub const RECALL_LEVELS: usize = 101;

pub fn box_iou(a: &BBox, b: &BBox) -> f64 {
    a.iou(b)
}

/// `|a & b| / |a | b|`; two empty masks have IoU 1.
pub fn mask_iou(a: &Mask, b: &Mask) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::arg(format!(
            "mask sizes differ: {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.bits().iter().zip(b.bits()) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct F1Score {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Samples `n_samples` points from each mesh (same seed) and scores them
/// with [`f1_points`]. Meshes are expected to be rescaled already.
pub fn f1_at(pred: &Mesh, gt: &Mesh, tau: f64, n_samples: usize, seed: u64) -> Result<F1Score> {
    let p = sample_points(pred, n_samples, seed)?;
    let q = sample_points(gt, n_samples, seed)?;
    Ok(f1_points(p.points(), q.points(), tau))
}

/// Precision: share of `pred` points within `tau` of some `gt` point.
/// Recall: the same with roles swapped. F1 is 0 when both are 0.
pub fn f1_points(pred: &[Vec3], gt: &[Vec3], tau: f64) -> F1Score {
    let hit_rate = |from: &[Vec3], to: &[Vec3]| {
        if from.is_empty() || to.is_empty() {
            return 0.0;
        }
        let tree = KdTree::new(to);
        let hits = from
            .par_iter()
            .filter(|p| tree.nearest(p).is_some_and(|(_, d2)| d2 <= tau * tau))
            .count();
        hits as f64 / from.len() as f64
    };
    let precision = hit_rate(pred, gt);
    let recall = hit_rate(gt, pred);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    F1Score { precision, recall, f1 }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchKind {
    Box,
    Mask,
    Mesh,
}

impl MatchKind {
    pub const ALL: [MatchKind; 3] = [MatchKind::Box, MatchKind::Mask, MatchKind::Mesh];
}

/// Thresholds and sampling settings for the matching criteria.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchParams {
    /// Box IoU, mask IoU or mesh F1 must reach this for a true positive.
    pub threshold: f64,
    pub tau: f64,
    pub rescale_target: f64,
    pub f1_samples: usize,
    pub seed: u64,
}

impl Default for MatchParams {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_MATCH_THRESHOLD,
            tau: DEFAULT_TAU,
            rescale_target: DEFAULT_RESCALE_TARGET,
            f1_samples: DEFAULT_F1_SAMPLES,
            seed: DEFAULT_EVAL_SEED,
        }
    }
}

/// Outcome for one prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MatchResult {
    pub gt: Option<usize>,
    pub is_tp: bool,
}

/// Mesh F1@tau after rescaling both meshes so that the ground truth's
/// longest bounding-box edge equals `rescale_target`.
pub fn mesh_f1(pred: &Mesh, gt: &Mesh, p: &MatchParams) -> Result<F1Score> {
    let (pred, gt) = rescale_to_gt(pred, gt, p.rescale_target)?;
    f1_at(&pred, &gt, p.tau, p.f1_samples, p.seed)
}

fn criterion(kind: MatchKind, pred: &Detection, gt: &GroundTruthObject, p: &MatchParams) -> Result<f64> {
    Ok(match kind {
        MatchKind::Box => box_iou(&pred.bbox, &gt.bbox),
        MatchKind::Mask => match (&pred.mask, &gt.mask) {
            (Some(a), Some(b)) => mask_iou(a, b)?,
            _ => 0.0,
        },
        MatchKind::Mesh => match (&pred.mesh, &gt.mesh) {
            (Some(a), Some(b)) => mesh_f1(a, b, p)?.f1,
            _ => 0.0,
        },
    })
}

type GroupKey<'a> = (&'a str, u64, u32);

/// Greedy matching within each (clip, frame, category): predictions in
/// descending score order (ties by input order) take the unmatched ground
/// truth with the highest criterion, and are true positives when it reaches
/// `params.threshold`. Returns one result per prediction, in input order.
pub fn match_predictions(
    preds: &[Detection],
    gts: &[GroundTruthObject],
    kind: MatchKind,
    params: &MatchParams,
) -> Result<Vec<MatchResult>> {
    let mut groups: BTreeMap<GroupKey, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
    for (i, d) in preds.iter().enumerate() {
        groups.entry((&d.clip_id, d.frame_id, d.class_id)).or_default().0.push(i);
    }
    for (j, g) in gts.iter().enumerate() {
        if let Some(e) = groups.get_mut(&(g.clip_id.as_str(), g.frame_id, g.class_id)) {
            e.1.push(j);
        }
    }
    let groups: Vec<_> = groups.into_values().collect();
    let matched: Vec<Vec<(usize, MatchResult)>> = groups
        .par_iter()
        .map(|(pi, gi)| match_group(preds, gts, pi, gi, kind, params))
        .collect::<Result<_>>()?;
    let mut out = vec![MatchResult { gt: None, is_tp: false }; preds.len()];
    for (i, r) in matched.into_iter().flatten() {
        out[i] = r;
    }
    Ok(out)
}

fn match_group(
    preds: &[Detection],
    gts: &[GroundTruthObject],
    pred_idx: &[usize],
    gt_idx: &[usize],
    kind: MatchKind,
    params: &MatchParams,
) -> Result<Vec<(usize, MatchResult)>> {
    let mut order = pred_idx.to_vec();
    order.sort_by(|&a, &b| preds[b].score.total_cmp(&preds[a].score).then(a.cmp(&b)));
    let mut taken = vec![false; gt_idx.len()];
    let mut out = Vec::with_capacity(order.len());
    for i in order {
        let mut best: Option<(usize, f64)> = None;
        for (slot, &j) in gt_idx.iter().enumerate() {
            if taken[slot] {
                continue;
            }
            let c = criterion(kind, &preds[i], &gts[j], params)?;
            if best.is_none_or(|(_, b)| c > b) {
                best = Some((slot, c));
            }
        }
        let result = match best {
            Some((slot, c)) if c >= params.threshold => {
                taken[slot] = true;
                MatchResult {
                    gt: Some(gt_idx[slot]),
                    is_tp: true,
                }
            }
            _ => MatchResult { gt: None, is_tp: false },
        };
        out.push((i, result));
    }
    Ok(out)
}

/// 101-point interpolated AP and the interpolated precision at each recall
/// level. `None` when there is nothing to score (no ground truth and no
/// predictions); predictions without any ground truth score 0.
pub fn average_precision(matches: &[(f64, bool)], n_gt: usize) -> Option<(f64, Vec<f64>)> {
    if n_gt == 0 {
        return (!matches.is_empty()).then(|| (0.0, vec![0.0; RECALL_LEVELS]));
    }
    let mut order: Vec<usize> = (0..matches.len()).collect();
    order.sort_by(|&a, &b| matches[b].0.total_cmp(&matches[a].0).then(a.cmp(&b)));
    let mut recall = Vec::with_capacity(order.len());
    let mut precision = Vec::with_capacity(order.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for &k in &order {
        if matches[k].1 {
            tp += 1;
        } else {
            fp += 1;
        }
        recall.push(tp as f64 / n_gt as f64);
        precision.push(tp as f64 / (tp + fp) as f64);
    }
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    let curve: Vec<f64> = (0..RECALL_LEVELS)
        .map(|i| {
            let level = i as f64 / (RECALL_LEVELS - 1) as f64;
            let k = recall.partition_point(|&r| r < level);
            precision.get(k).copied().unwrap_or(0.0)
        })
        .collect();
    let ap = curve.iter().sum::<f64>() / RECALL_LEVELS as f64;
    Some((ap, curve))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    All,
    Small,
    Medium,
    Large,
    SlightlyOccluded,
    HeavilyOccluded,
    ShortClips,
    LongClips,
}

impl Split {
    pub const ALL: [Split; 8] = [
        Split::All,
        Split::Small,
        Split::Medium,
        Split::Large,
        Split::SlightlyOccluded,
        Split::HeavilyOccluded,
        Split::ShortClips,
        Split::LongClips,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Split::All => "all",
            Split::Small => "small",
            Split::Medium => "medium",
            Split::Large => "large",
            Split::SlightlyOccluded => "slightly_occluded",
            Split::HeavilyOccluded => "heavily_occluded",
            Split::ShortClips => "short_clips",
            Split::LongClips => "long_clips",
        }
    }

    fn size_bucket(area: f64) -> Split {
        if area < SMALL_AREA {
            Split::Small
        } else if area < LARGE_AREA {
            Split::Medium
        } else {
            Split::Large
        }
    }

    fn contains_gt(&self, gt: &GroundTruthObject, clip_len: usize) -> bool {
        match self {
            Split::All => true,
            Split::Small | Split::Medium | Split::Large => Split::size_bucket(gt.bbox.area()) == *self,
            Split::SlightlyOccluded => gt.occlusion <= HEAVY_OCCLUSION,
            Split::HeavilyOccluded => gt.occlusion > HEAVY_OCCLUSION,
            Split::ShortClips => clip_len <= LONG_CLIP_FRAMES,
            Split::LongClips => clip_len > LONG_CLIP_FRAMES,
        }
    }

    /// Whether an unmatched prediction counts as a false positive here.
    /// Occlusion is a ground-truth attribute, so such predictions count in
    /// both occlusion splits.
    fn contains_unmatched(&self, pred: &Detection, clip_len: usize) -> bool {
        match self {
            Split::All | Split::SlightlyOccluded | Split::HeavilyOccluded => true,
            Split::Small | Split::Medium | Split::Large => Split::size_bucket(pred.bbox.area()) == *self,
            Split::ShortClips => clip_len <= LONG_CLIP_FRAMES,
            Split::LongClips => clip_len > LONG_CLIP_FRAMES,
        }
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|sp| sp.name() == s)
            .ok_or_else(|| Error::arg(format!("unknown split `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub matching: MatchParams,
    pub splits: Vec<Split>,
    /// Frames per clip; clips not listed use the number of distinct
    /// annotated frames.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub clip_lengths: BTreeMap<String, usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            matching: MatchParams::default(),
            splits: Split::ALL.to_vec(),
            clip_lengths: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ApTriple {
    #[serde(rename = "box")]
    pub box_ap: Option<f64>,
    #[serde(rename = "mask")]
    pub mask_ap: Option<f64>,
    #[serde(rename = "mesh")]
    pub mesh_ap: Option<f64>,
}

impl ApTriple {
    pub fn get(&self, kind: MatchKind) -> Option<f64> {
        match kind {
            MatchKind::Box => self.box_ap,
            MatchKind::Mask => self.mask_ap,
            MatchKind::Mesh => self.mesh_ap,
        }
    }

    fn set(&mut self, kind: MatchKind, v: Option<f64>) {
        match kind {
            MatchKind::Box => self.box_ap = v,
            MatchKind::Mask => self.mask_ap = v,
            MatchKind::Mesh => self.mesh_ap = v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryReport {
    pub class_id: u32,
    pub n_gt: usize,
    pub ap: ApTriple,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub split: Split,
    /// Mean over categories that have an AP value.
    pub mean: ApTriple,
    pub categories: Vec<CategoryReport>,
}

/// Interpolated precision at the 101 recall levels, for the `all` split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub class_id: u32,
    pub kind: MatchKind,
    pub precision: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub splits: Vec<SplitReport>,
    pub pr_curves: Vec<PrCurve>,
    /// Predictions whose category has no ground truth; all are false positives.
    pub unknown_predictions: usize,
}

impl EvalReport {
    pub fn split(&self, split: Split) -> Option<&SplitReport> {
        self.splits.iter().find(|s| s.split == split)
    }

    /// Aligned text table: one row per split, one column per AP kind.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{:<18} {:>8} {:>8} {:>8}", "split", "AP^box", "AP^mask", "AP^mesh").unwrap();
        let cell = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.3}"));
        for s in &self.splits {
            writeln!(
                out,
                "{:<18} {:>8} {:>8} {:>8}",
                s.split.name(),
                cell(s.mean.box_ap),
                cell(s.mean.mask_ap),
                cell(s.mean.mesh_ap)
            )
            .unwrap();
        }
        out
    }
}

/// AP^box, AP^mask and AP^mesh per category and split. Matching runs once
/// per kind over all objects; a split then keeps true positives whose ground
/// truth it contains and false positives it contains by the prediction's own
/// attributes. A kind is scored only when every ground-truth object carries
/// the corresponding annotation.
pub fn evaluate(preds: &[Detection], gts: &[GroundTruthObject], cfg: &EvalConfig) -> Result<EvalReport> {
    let categories: BTreeSet<u32> = gts.iter().map(|g| g.class_id).collect();
    let unknown = preds.iter().filter(|p| !categories.contains(&p.class_id)).count();
    if unknown > 0 {
        log::warn!("{unknown} predictions have categories without ground truth; counted as false positives");
    }

    let mut frames: BTreeMap<&str, BTreeSet<u64>> = BTreeMap::new();
    for g in gts {
        frames.entry(&g.clip_id).or_default().insert(g.frame_id);
    }
    let clip_len = |clip: &str| {
        cfg.clip_lengths
            .get(clip)
            .copied()
            .unwrap_or_else(|| frames.get(clip).map_or(0, |f| f.len()))
    };

    let kinds: Vec<MatchKind> = MatchKind::ALL
        .into_iter()
        .filter(|k| match k {
            MatchKind::Box => true,
            MatchKind::Mask => gts.iter().all(|g| g.mask.is_some()),
            MatchKind::Mesh => gts.iter().all(|g| g.mesh.is_some()),
        })
        .collect();
    let mut results = BTreeMap::new();
    for &kind in &kinds {
        results.insert(kind, match_predictions(preds, gts, kind, &cfg.matching)?);
    }

    let mut splits = Vec::new();
    let mut pr_curves = Vec::new();
    for &split in &cfg.splits {
        let mut per_cat = Vec::new();
        for &c in &categories {
            let n_gt = gts
                .iter()
                .filter(|g| g.class_id == c && split.contains_gt(g, clip_len(&g.clip_id)))
                .count();
            let mut ap = ApTriple::default();
            for &kind in &kinds {
                let scored: Vec<(f64, bool)> = preds
                    .iter()
                    .zip(&results[&kind])
                    .filter(|(p, _)| p.class_id == c)
                    .filter_map(|(p, r)| match r.gt {
                        Some(j) => split
                            .contains_gt(&gts[j], clip_len(&gts[j].clip_id))
                            .then_some((p.score, true)),
                        None => split
                            .contains_unmatched(p, clip_len(&p.clip_id))
                            .then_some((p.score, false)),
                    })
                    .collect();
                let value = average_precision(&scored, n_gt);
                if split == Split::All {
                    if let Some((_, curve)) = &value {
                        pr_curves.push(PrCurve {
                            class_id: c,
                            kind,
                            precision: curve.clone(),
                        });
                    }
                }
                ap.set(kind, value.map(|v| v.0));
            }
            per_cat.push(CategoryReport { class_id: c, n_gt, ap });
        }
        let mut mean = ApTriple::default();
        for &kind in &kinds {
            let vals: Vec<f64> = per_cat.iter().filter_map(|c| c.ap.get(kind)).collect();
            mean.set(kind, (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64));
        }
        splits.push(SplitReport {
            split,
            mean,
            categories: per_cat,
        });
    }
    Ok(EvalReport {
        splits,
        pr_curves,
        unknown_predictions: unknown,
    })
}
