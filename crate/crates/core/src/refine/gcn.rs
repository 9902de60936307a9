// SPDX-License-Identifier: Apache-2.0

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Row `i` of the result is the sum of rows `j` over the neighbors of `i`.
pub fn neighbor_sum(x: &DMatrix<f64>, adjacency: &[Vec<usize>]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(x.nrows(), x.ncols());
    for (i, nbrs) in adjacency.iter().enumerate() {
        for &j in nbrs {
            for c in 0..x.ncols() {
                out[(i, c)] += x[(j, c)];
            }
        }
    }
    out
}

/// `out_i = W0 f_i + W1 sum_{j in N(i)} f_j + b`, one row per vertex.
pub fn graph_conv(
    features: &DMatrix<f64>,
    adjacency: &[Vec<usize>],
    w0: &DMatrix<f64>,
    w1: &DMatrix<f64>,
    bias: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    let d = features.ncols();
    if adjacency.len() != features.nrows() {
        return Err(Error::arg("adjacency and feature rows differ"));
    }
    if w0.ncols() != d || w1.ncols() != d || w0.shape() != w1.shape() || bias.len() != w0.nrows() {
        return Err(Error::arg(format!(
            "graph conv dimensions: features {d}, W0 {:?}, W1 {:?}, bias {}",
            w0.shape(),
            w1.shape(),
            bias.len()
        )));
    }
    Ok(affine(features, &neighbor_sum(features, adjacency), w0, w1, bias))
}

pub(crate) fn affine<'a>(
    x: &DMatrix<f64>,
    ax: &DMatrix<f64>,
    w0: impl Into<nalgebra::DMatrixView<'a, f64>>,
    w1: impl Into<nalgebra::DMatrixView<'a, f64>>,
    bias: &DVector<f64>,
) -> DMatrix<f64> {
    let (w0, w1) = (w0.into(), w1.into());
    let mut z = x * w0.transpose() + ax * w1.transpose();
    for mut row in z.row_iter_mut() {
        row += bias.transpose();
    }
    z
}
