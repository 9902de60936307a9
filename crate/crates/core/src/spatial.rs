// SPDX-License-Identifier: Apache-2.0

//! Exact nearest-neighbor queries over a static point set.

use crate::mesh::Vec3;

const LEAF: usize = 12;

/// Static k-d tree. Queries return the nearest point with ties resolved to
/// the lowest index, i.e. exactly what a brute-force scan would return.
#[derive(Debug, Clone)]
pub struct KdTree {
    /// Points in tree order.
    points: Vec<Vec3>,
    /// Original index of each entry of `points`.
    index: Vec<usize>,
    axis: Vec<u8>,
}

impl KdTree {
    pub fn new(points: &[Vec3]) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut axis = vec![0u8; points.len()];
        build(points, &mut order, &mut axis);
        Self {
            points: order.iter().map(|&i| points[i]).collect(),
            index: order,
            axis,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// `(index, squared distance)` of the nearest point, `None` for an empty tree.
    pub fn nearest(&self, q: &Vec3) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(q, 0, self.points.len(), &mut best);
        Some(best)
    }

    fn search(&self, q: &Vec3, lo: usize, hi: usize, best: &mut (usize, f64)) {
        // Pending far subtrees with the squared distance to their splitting plane.
        let mut stack: Vec<(usize, usize, f64)> = Vec::with_capacity(64);
        stack.push((lo, hi, 0.0));
        while let Some((mut lo, mut hi, bound)) = stack.pop() {
            // `<=` keeps equal-distance points with lower indices reachable.
            if bound > best.1 {
                continue;
            }
            while hi - lo > LEAF {
                let mid = lo + (hi - lo) / 2;
                let ax = self.axis[mid] as usize;
                let diff = q[ax] - self.points[mid][ax];
                consider(best, self.index[mid], (self.points[mid] - q).norm_squared());
                let d2 = diff * diff;
                if diff < 0.0 {
                    if d2 <= best.1 {
                        stack.push((mid + 1, hi, d2));
                    }
                    hi = mid;
                } else {
                    if d2 <= best.1 {
                        stack.push((lo, mid, d2));
                    }
                    lo = mid + 1;
                }
            }
            for k in lo..hi {
                consider(best, self.index[k], (self.points[k] - q).norm_squared());
            }
        }
    }
}

fn consider(best: &mut (usize, f64), i: usize, d2: f64) {
    if d2 < best.1 || (d2 == best.1 && i < best.0) {
        *best = (i, d2);
    }
}

fn build(points: &[Vec3], order: &mut [usize], axis: &mut [u8]) {
    if order.len() <= LEAF {
        return;
    }
    let mut lo = points[order[0]];
    let mut hi = lo;
    for &i in order.iter() {
        lo = lo.inf(&points[i]);
        hi = hi.sup(&points[i]);
    }
    let ext = hi - lo;
    let ax = if ext.x >= ext.y && ext.x >= ext.z {
        0
    } else if ext.y >= ext.z {
        1
    } else {
        2
    };
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| {
        points[a][ax].total_cmp(&points[b][ax]).then(a.cmp(&b))
    });
    axis[mid] = ax as u8;
    let (left, right) = order.split_at_mut(mid);
    let (laxis, raxis) = axis.split_at_mut(mid);
    build(points, left, laxis);
    build(points, &mut right[1..], &mut raxis[1..]);
}
