// SPDX-License-Identifier: Apache-2.0

//! Boxes, binary masks and per-frame object records shared by the tracker,
//! the metrics and the dataset code.

use std::io::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::Mesh;

/// Axis-aligned pixel box `(x0, y0, x1, y1)` with `x0 < x1`, `y0 < y1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl BBox {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        let b = Self { x0, y0, x1, y1 };
        if ![x0, y0, x1, y1].iter().all(|v| v.is_finite()) || x0 >= x1 || y0 >= y1 {
            return Err(Error::arg(format!("invalid box ({x0}, {y0}, {x1}, {y1})")));
        }
        Ok(b)
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1))
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self {
            x0: self.x0 + dx,
            y0: self.y0 + dy,
            x1: self.x1 + dx,
            y1: self.y1 + dy,
        }
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let w = (self.x1.min(other.x1) - self.x0.max(other.x0)).max(0.0);
        let h = (self.y1.min(other.y1) - self.y0.max(other.y0)).max(0.0);
        let inter = w * h;
        if inter == 0.0 {
            return 0.0;
        }
        inter / (self.area() + other.area() - inter)
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = Error;
    fn try_from(v: [f64; 4]) -> Result<Self> {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x0, b.y0, b.x1, b.y1]
    }
}

/// Frame-sized binary raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::arg(format!(
                "mask has {} pixels, expected {width}x{height}",
                bits.len()
            )));
        }
        Ok(Self { width, height, bits })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn same_shape(&self, other: &Mask) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Tight pixel box `[x0, x1) x [y0, y1)`, `None` when empty.
    pub fn bbox(&self) -> Option<BBox> {
        let mut lo = (usize::MAX, usize::MAX);
        let mut hi = (0, 0);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    lo = (lo.0.min(x), lo.1.min(y));
                    hi = (hi.0.max(x), hi.1.max(y));
                }
            }
        }
        (lo.0 != usize::MAX).then(|| BBox {
            x0: lo.0 as f64,
            y0: lo.1 as f64,
            x1: (hi.0 + 1) as f64,
            y1: (hi.1 + 1) as f64,
        })
    }

    /// Binary PBM (`P4`).
    pub fn to_pbm(&self) -> Vec<u8> {
        let mut out = Vec::new();
        write!(out, "P4\n{} {}\n", self.width, self.height).unwrap();
        let row_bytes = self.width.div_ceil(8);
        for y in 0..self.height {
            let mut row = vec![0u8; row_bytes];
            for x in 0..self.width {
                if self.get(x, y) {
                    row[x / 8] |= 0x80 >> (x % 8);
                }
            }
            out.extend_from_slice(&row);
        }
        out
    }

    pub fn from_pbm(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| Error::Parse {
            line: 1,
            msg: format!("pbm: {msg}"),
        };
        let mut fields = Vec::new();
        let mut pos = 0;
        while fields.len() < 3 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(bad("truncated header"));
            }
            fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header"))?);
        }
        if fields[0] != "P4" {
            return Err(bad("expected P4"));
        }
        let width: usize = fields[1].parse().map_err(|_| bad("width"))?;
        let height: usize = fields[2].parse().map_err(|_| bad("height"))?;
        pos += 1; // single whitespace before the raster
        let row_bytes = width.div_ceil(8);
        let data = bytes.get(pos..pos + row_bytes * height).ok_or_else(|| bad("short raster"))?;
        let mut bits = vec![false; width * height];
        for y in 0..height {
            for x in 0..width {
                bits[y * width + x] = data[y * row_bytes + x / 8] & (0x80 >> (x % 8)) != 0;
            }
        }
        Ok(Self { width, height, bits })
    }
}

/// A detector output (or ground-truth object used as one) in one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub clip_id: String,
    pub frame_id: u64,
    pub class_id: u32,
    pub bbox: BBox,
    pub score: f64,
    pub mask: Option<Mask>,
    pub mesh: Option<Mesh>,
    pub instance_id: Option<u64>,
}

impl Detection {
    pub fn new(frame_id: u64, class_id: u32, bbox: BBox, score: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::arg(format!("score {score} outside [0, 1]")));
        }
        Ok(Self {
            clip_id: String::new(),
            frame_id,
            class_id,
            bbox,
            score,
            mask: None,
            mesh: None,
            instance_id: None,
        })
    }
}

/// Annotated object in one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthObject {
    pub frame_id: u64,
    pub clip_id: String,
    pub instance_id: u64,
    pub class_id: u32,
    pub bbox: BBox,
    pub mask: Option<Mask>,
    pub mesh: Option<Mesh>,
    pub occlusion: f64,
}
