// SPDX-License-Identifier: Apache-2.0

//! Frame-to-frame association: IoU-minus-class-loss scores, an exact
//! assignment with a no-match option per current object, IoU gating, and
//! track-id propagation through a clip.

use nalgebra::DMatrix;

use crate::detection::{BBox, Detection};
use crate::mesh::Mesh;

/// Default IoU gate a matched pair must exceed to stay linked.
pub const DEFAULT_IOU_GATE: f64 = 0.5;

/// `scores[(i, j)] = IoU(curr_i, prev_j) - [class_i != class_j]`.
pub fn score_matrix(curr: &[Detection], prev: &[Detection]) -> DMatrix<f64> {
    let boxes = |d: &[Detection]| d.iter().map(|d| (d.bbox, d.class_id)).collect::<Vec<_>>();
    score_boxes(&boxes(curr), &boxes(prev))
}

pub fn score_boxes(curr: &[(BBox, u32)], prev: &[(BBox, u32)]) -> DMatrix<f64> {
    DMatrix::from_fn(curr.len(), prev.len(), |i, j| {
        let (bi, ci) = curr[i];
        let (bj, cj) = prev[j];
        bi.iou(&bj) - if ci != cj { 1.0 } else { 0.0 }
    })
}

/// Row `i` is matched to previous object `rows[i]`, or to a no-match column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    pub rows: Vec<Option<usize>>,
    pub n_prev: usize,
}

impl Assignment {
    /// Sum of the chosen scores in row order; no-match columns score 0.
    pub fn total(&self, scores: &DMatrix<f64>) -> f64 {
        self.total_with_dummy(scores, 0.0)
    }

    fn total_with_dummy(&self, scores: &DMatrix<f64>, dummy: f64) -> f64 {
        self.rows
            .iter()
            .enumerate()
            .map(|(i, c)| c.map_or(dummy, |j| scores[(i, j)]))
            .sum()
    }

    /// Binary `n_t x n_{t-1}` matrix over the real columns.
    pub fn to_matrix(&self) -> DMatrix<u8> {
        DMatrix::from_fn(self.rows.len(), self.n_prev, |i, j| (self.rows[i] == Some(j)) as u8)
    }
}

/// Maximum-score assignment of every current object (row) to at most one
/// previous object (column), each column used at most once, with a zero-score
/// no-match column available to every row. Among optimal assignments the one
/// that is lexicographically smallest by (row, column) is returned, real
/// columns ordering before the no-match option.
pub fn solve_assignment(scores: &DMatrix<f64>) -> Assignment {
    solve_augmented(scores, 0.0)
}

fn solve_augmented(scores: &DMatrix<f64>, dummy: f64) -> Assignment {
    let (n, m) = scores.shape();
    let all_cols: Vec<usize> = (0..m).collect();
    let best = optimum(scores, dummy, 0, &all_cols, n);
    let tol = 1e-12 * (1.0 + best.abs());

    let mut rows = Vec::with_capacity(n);
    let mut free_cols = all_cols;
    let mut dummies = n;
    let mut fixed = 0.0;
    for i in 0..n {
        let mut choices: Vec<Option<usize>> = free_cols.iter().copied().map(Some).collect();
        choices.push(None);
        let mut chosen = None;
        for choice in choices {
            let (value, cols, d) = match choice {
                Some(j) => {
                    let cols: Vec<usize> = free_cols.iter().copied().filter(|&c| c != j).collect();
                    (scores[(i, j)], cols, dummies)
                }
                None => (dummy, free_cols.clone(), dummies - 1),
            };
            let rest = optimum(scores, dummy, i + 1, &cols, d);
            if fixed + value + rest >= best - tol {
                chosen = Some((choice, value, cols, d));
                break;
            }
        }
        // Some choice always attains the optimum of the remaining problem.
        let (choice, value, cols, d) = chosen.expect("optimal completion exists");
        rows.push(choice);
        fixed += value;
        free_cols = cols;
        dummies = d;
    }
    Assignment { rows, n_prev: m }
}

/// Best total for rows `first..` over the given real columns plus `dummies`
/// no-match columns.
fn optimum(scores: &DMatrix<f64>, dummy: f64, first: usize, cols: &[usize], dummies: usize) -> f64 {
    let n = scores.nrows() - first;
    if n == 0 {
        return 0.0;
    }
    let m = cols.len() + dummies;
    let cost: Vec<Vec<f64>> = (first..scores.nrows())
        .map(|i| {
            let mut row: Vec<f64> = cols.iter().map(|&j| -scores[(i, j)]).collect();
            row.resize(m, -dummy);
            row
        })
        .collect();
    hungarian(&cost)
        .iter()
        .enumerate()
        .map(|(r, &c)| -cost[r][c])
        .sum()
}

/// Minimum-cost assignment of `n` rows to distinct columns of an `n x m`
/// matrix with `n <= m` (shortest augmenting paths with potentials).
fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    let m = cost[0].len();
    debug_assert!(n <= m);
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0; n];
    for j in 1..=m {
        if p[j] != 0 {
            row_to_col[p[j] - 1] = j - 1;
        }
    }
    row_to_col
}

/// For each current object, the previous object it continues, or `None`
/// (the no-match token) when unassigned or when IoU does not exceed `gate`.
pub fn gate_and_align(
    assignment: &Assignment,
    curr: &[BBox],
    prev: &[BBox],
    gate: f64,
) -> Vec<Option<usize>> {
    assignment
        .rows
        .iter()
        .enumerate()
        .map(|(i, m)| m.filter(|&j| curr[i].iou(&prev[j]) > gate))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: u64,
    pub bbox: BBox,
    pub class_id: u32,
    /// Prediction made for this track in its latest frame, if any.
    pub mesh: Option<Mesh>,
    /// Frames since the track started.
    pub age: usize,
}

/// Result of associating one current object.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Association {
    pub track_id: u64,
    /// False when the object started a new track in this frame.
    pub tracked: bool,
}

/// One-frame-deep tracker state for a single clip.
#[derive(Debug, Clone)]
pub struct Tracker {
    gate: f64,
    tracks: Vec<Track>,
    next_id: u64,
}

impl Tracker {
    pub fn new(gate: f64) -> Self {
        Self {
            gate,
            tracks: Vec::new(),
            next_id: 0,
        }
    }

    /// Drops all live tracks; ids issued afterwards stay unique.
    pub fn reset(&mut self) {
        self.tracks.clear();
    }

    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    pub fn track(&self, id: u64) -> Option<&Track> {
        self.tracks.iter().find(|t| t.id == id)
    }

    pub fn set_mesh(&mut self, id: u64, mesh: Mesh) {
        if let Some(t) = self.tracks.iter_mut().find(|t| t.id == id) {
            t.mesh = Some(mesh);
        }
    }

    /// Associates the objects of the next frame. After the call, `tracks()`
    /// lists the current objects in input order; a continued track keeps the
    /// mesh stored for it in the previous frame.
    pub fn step(&mut self, objects: &[(BBox, u32)]) -> Vec<Association> {
        let prev: Vec<(BBox, u32)> = self.tracks.iter().map(|t| (t.bbox, t.class_id)).collect();
        let scores = score_boxes(objects, &prev);
        let assignment = solve_assignment(&scores);
        let curr_boxes: Vec<BBox> = objects.iter().map(|o| o.0).collect();
        let prev_boxes: Vec<BBox> = prev.iter().map(|o| o.0).collect();
        let links = gate_and_align(&assignment, &curr_boxes, &prev_boxes, self.gate);

        let mut old: Vec<Option<Track>> = std::mem::take(&mut self.tracks).into_iter().map(Some).collect();
        let mut out = Vec::with_capacity(objects.len());
        for (&(bbox, class_id), link) in objects.iter().zip(links) {
            let track = match link.and_then(|j| old[j].take()) {
                Some(t) => Track {
                    id: t.id,
                    bbox,
                    class_id,
                    mesh: t.mesh,
                    age: t.age + 1,
                },
                None => {
                    self.next_id += 1;
                    Track {
                        id: self.next_id - 1,
                        bbox,
                        class_id,
                        mesh: None,
                        age: 0,
                    }
                }
            };
            out.push(Association {
                track_id: track.id,
                tracked: track.age > 0,
            });
            self.tracks.push(track);
        }
        out
    }
}

/// Track ids for every object of every frame. `shot_transitions` lists the
/// frame indices at which a new shot starts; all tracks end there.
pub fn track_clip(frames: &[Vec<(BBox, u32)>], shot_transitions: &[usize], gate: f64) -> Vec<Vec<u64>> {
    let mut tracker = Tracker::new(gate);
    frames
        .iter()
        .enumerate()
        .map(|(t, objects)| {
            if shot_transitions.contains(&t) {
                tracker.reset();
            }
            tracker.step(objects).iter().map(|a| a.track_id).collect()
        })
        .collect()
}
