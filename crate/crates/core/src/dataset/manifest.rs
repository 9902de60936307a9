// SPDX-License-Identifier: Apache-2.0

use std::path::Path;

use nalgebra::{Matrix3, Matrix4};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::write_atomic;
use crate::detection::BBox;
use crate::error::{Error, Result};
use crate::refine::CameraRig;

pub const MANIFEST_SCHEMA: &str = "meshtrace-manifest";
pub const MANIFEST_VERSION: u32 = 1;

/// First line of a manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub schema: String,
    pub version: u32,
    pub clip_id: String,
    /// `(width, height)` of the rendered frames in pixels.
    pub image_size: [usize; 2],
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

/// One annotated object in one frame. Asset paths are relative to the
/// manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub instance_id: u64,
    pub class_id: u32,
    /// Tight box around the amodal mask.
    pub bbox: BBox,
    /// Model -> world transform of the object.
    pub world: Matrix4<f64>,
    /// Model-space mesh, posed but centered at the object origin.
    pub mesh: String,
    /// Rotation taking the object's canonical shape to `mesh`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub orientation: Option<Matrix3<f64>>,
    pub amodal_mask: String,
    pub modal_mask: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature: Option<String>,
    /// `1 - modal area / amodal area`.
    pub occlusion: f64,
    /// Any pixel of the object is unoccluded.
    pub visible: bool,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame_id: u64,
    /// A shot cut happens immediately before this frame.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub shot_transition: bool,
    /// View, projection and viewport; `world` is per instance.
    pub camera: CameraRig,
    pub instances: Vec<InstanceRecord>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClipManifest {
    pub header: ManifestHeader,
    pub frames: Vec<FrameRecord>,
}

fn parse_line<T: DeserializeOwned>(line: &str, line_no: usize) -> Result<T> {
    let mut de = serde_json::Deserializer::from_str(line);
    serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let field = e.path().to_string();
        Error::Schema {
            line: line_no,
            field: if field == "." { "<record>".into() } else { field },
            msg: e.into_inner().to_string(),
        }
    })
}

impl ClipManifest {
    pub fn new(clip_id: impl Into<String>, image_size: [usize; 2], frames: Vec<FrameRecord>) -> Result<Self> {
        let m = Self {
            header: ManifestHeader {
                schema: MANIFEST_SCHEMA.into(),
                version: MANIFEST_VERSION,
                clip_id: clip_id.into(),
                image_size,
                extra: Map::new(),
            },
            frames,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn clip_id(&self) -> &str {
        &self.header.clip_id
    }

    /// Indices into `frames` of frames that start a new shot.
    pub fn shot_transitions(&self) -> Vec<usize> {
        (0..self.frames.len()).filter(|&i| self.frames[i].shot_transition).collect()
    }

    /// Invariants that serde cannot express; line numbers are 1-based with
    /// the header on line 1.
    pub fn validate(&self) -> Result<()> {
        let schema = |line: usize, field: String, msg: String| Error::Schema { line, field, msg };
        if self.header.schema != MANIFEST_SCHEMA {
            return Err(schema(1, "schema".into(), format!("expected `{MANIFEST_SCHEMA}`")));
        }
        if self.header.version != MANIFEST_VERSION {
            return Err(schema(1, "version".into(), format!("unsupported version {}", self.header.version)));
        }
        if self.header.clip_id.is_empty() || self.header.clip_id.contains(['/', '\\']) {
            return Err(schema(1, "clip_id".into(), "must be a nonempty path component".into()));
        }
        for (i, f) in self.frames.iter().enumerate() {
            let line = i + 2;
            if i > 0 && f.frame_id <= self.frames[i - 1].frame_id {
                return Err(schema(line, "frame_id".into(), "frames must be strictly increasing".into()));
            }
            let mut seen = std::collections::BTreeSet::new();
            for (k, inst) in f.instances.iter().enumerate() {
                if !(0.0..=1.0).contains(&inst.occlusion) {
                    return Err(schema(
                        line,
                        format!("instances[{k}].occlusion"),
                        format!("{} outside [0, 1]", inst.occlusion),
                    ));
                }
                if !seen.insert(inst.instance_id) {
                    return Err(schema(line, format!("instances[{k}].instance_id"), "duplicate in frame".into()));
                }
                if inst.mesh.is_empty() {
                    return Err(schema(line, format!("instances[{k}].mesh"), "empty path".into()));
                }
            }
        }
        Ok(())
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or_else(|| Error::Schema {
            line: 1,
            field: "schema".into(),
            msg: "empty manifest".into(),
        })?;
        let header: ManifestHeader = parse_line(first, 1)?;
        let frames = lines
            .map(|(i, l)| parse_line::<FrameRecord>(l, i + 1))
            .collect::<Result<Vec<_>>>()?;
        let m = Self { header, frames };
        m.validate()?;
        Ok(m)
    }

    /// Canonical form: one compact JSON object per line, known fields in
    /// declaration order followed by unknown fields in key order.
    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&self.header).expect("header serializes");
        out.push('\n');
        for f in &self.frames {
            out.push_str(&serde_json::to_string(f).expect("frame serializes"));
            out.push('\n');
        }
        out
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_jsonl(&text)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_jsonl().as_bytes())
    }
}
