// SPDX-License-Identifier: Apache-2.0

use nalgebra::{DMatrix, DVector};

use crate::detection::BBox;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"MTRF";
const VERSION: u32 = 1;

/// Channel-major `C x H x W` feature grid extracted over an ROI box. Cell
/// `(y, x)` covers `[x/W, (x+1)/W) x [y/H, (y+1)/H)` of the normalized box.
#[derive(Debug, Clone, PartialEq)]
pub struct RoiFeature {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
    roi: BBox,
}

impl RoiFeature {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>, roi: BBox) -> Result<Self> {
        if channels == 0 || height < 2 || width < 2 {
            return Err(Error::arg(format!("feature grid {channels}x{height}x{width} too small")));
        }
        if data.len() != channels * height * width {
            return Err(Error::arg(format!(
                "feature data has {} values, expected {}",
                data.len(),
                channels * height * width
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::arg("feature values must be finite"));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
            roi,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn roi(&self) -> &BBox {
        &self.roi
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    /// Bilinear sample of every channel at normalized `(u, v)`, plus the
    /// derivatives with respect to `u` and `v`. Samples at cell centers are
    /// exact; outside the outermost centers the grid is clamped.
    pub fn sample(&self, u: f64, v: f64) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        let (x0, tx, dx) = axis(u, self.width);
        let (y0, ty, dy) = axis(v, self.height);
        let mut val = DVector::zeros(self.channels);
        let mut du = DVector::zeros(self.channels);
        let mut dv = DVector::zeros(self.channels);
        for c in 0..self.channels {
            let f00 = self.get(c, y0, x0);
            let f01 = self.get(c, y0, x0 + 1);
            let f10 = self.get(c, y0 + 1, x0);
            let f11 = self.get(c, y0 + 1, x0 + 1);
            let top = f00 + (f01 - f00) * tx;
            let bottom = f10 + (f11 - f10) * tx;
            val[c] = top + (bottom - top) * ty;
            du[c] = dx * ((f01 - f00) * (1.0 - ty) + (f11 - f10) * ty);
            dv[c] = dy * (bottom - top);
        }
        (val, du, dv)
    }

    /// Interpolation cell of `(u, v)` per axis, with clamped axes marked:
    /// `sample` is smooth in `(u, v)` while this stays constant.
    pub(crate) fn cell(&self, u: f64, v: f64) -> [u64; 2] {
        let key = |(i, _, d): (usize, f64, f64)| 2 * i as u64 + u64::from(d == 0.0);
        [key(axis(u, self.width)), key(axis(v, self.height))]
    }

    /// Mean of each channel over an `n x n` grid of cells (cell edges at
    /// `floor(i * size / n)`), cell-major in row order.
    pub fn grid_pool(&self, n: usize) -> DVector<f64> {
        let edges = |size: usize| (0..=n).map(|i| i * size / n).collect::<Vec<_>>();
        let (ey, ex) = (edges(self.height), edges(self.width));
        let mut out = DVector::zeros(n * n * self.channels);
        for cy in 0..n {
            for cx in 0..n {
                let (ry, rx) = (ey[cy]..ey[cy + 1], ex[cx]..ex[cx + 1]);
                let count = (ry.len() * rx.len()).max(1) as f64;
                for c in 0..self.channels {
                    let mut s = 0.0;
                    for y in ry.clone() {
                        for x in rx.clone() {
                            s += self.get(c, y, x);
                        }
                    }
                    out[(cy * n + cx) * self.channels + c] = s / count;
                }
            }
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 32 + 8 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for d in [self.channels, self.height, self.width] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in <[f64; 4]>::from(self.roi) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| Error::Parse {
            line: 0,
            msg: format!("roi feature: {msg}"),
        };
        if bytes.len() < 52 || &bytes[..4] != MAGIC {
            return Err(bad("bad header"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
        let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        if u32_at(4) != VERSION as usize {
            return Err(bad("unsupported version"));
        }
        let (c, h, w) = (u32_at(8), u32_at(12), u32_at(16));
        let roi = BBox::new(f64_at(20), f64_at(28), f64_at(36), f64_at(44))?;
        let n = c * h * w;
        if bytes.len() != 52 + 8 * n {
            return Err(bad("payload size"));
        }
        let data = (0..n).map(|i| f64_at(52 + 8 * i)).collect();
        RoiFeature::new(c, h, w, data, roi)
    }
}

/// Lower cell index, interpolation weight and d(grid)/d(normalized).
fn axis(t: f64, n: usize) -> (usize, f64, f64) {
    let g = t * n as f64 - 0.5;
    let max = (n - 1) as f64;
    let (g, d) = if g <= 0.0 {
        (0.0, 0.0)
    } else if g >= max {
        (max, 0.0)
    } else {
        (g, n as f64)
    };
    let i = (g.floor() as usize).min(n - 2);
    (i, g - i as f64, d)
}

/// Bilinear features for every `(u, v)` coordinate, one row per vertex.
pub fn vert_align(feat: &RoiFeature, coords: &[[f64; 2]]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(coords.len(), feat.channels());
    for (i, &[u, v]) in coords.iter().enumerate() {
        out.set_row(i, &feat.sample(u, v).0.transpose());
    }
    out
}
