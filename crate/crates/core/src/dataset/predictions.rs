// SPDX-License-Identifier: Apache-2.0

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::manifest::ClipManifest;
use super::write_atomic;
use crate::detection::{BBox, Detection, Mask};
use crate::error::{Error, Result};
use crate::mesh::load_obj;

pub const PREDICTIONS_SCHEMA: &str = "meshtrace-predictions";
const PREDICTIONS_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionHeader {
    pub schema: String,
    pub version: u32,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

/// One predicted object. Asset paths are relative to the predictions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub clip_id: String,
    pub frame_id: u64,
    pub class_id: u32,
    pub bbox: BBox,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub track_id: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mesh: Option<String>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

/// A predictions file: a header line, then one record per line.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub header: PredictionHeader,
    pub records: Vec<PredictionRecord>,
    /// Directory asset paths resolve against.
    pub dir: PathBuf,
}

impl Predictions {
    pub fn new(records: Vec<PredictionRecord>, dir: PathBuf) -> Self {
        Self {
            header: PredictionHeader {
                schema: PREDICTIONS_SCHEMA.into(),
                version: PREDICTIONS_VERSION,
                extra: Map::new(),
            },
            records,
            dir,
        }
    }

    pub fn from_jsonl(text: &str, dir: PathBuf) -> Result<Self> {
        let schema = |line: usize, field: &str, msg: String| Error::Schema {
            line,
            field: field.into(),
            msg,
        };
        let parse = |line: &str, no: usize| -> Result<serde_json::Value> {
            serde_json::from_str(line).map_err(|e| schema(no, "<record>", e.to_string()))
        };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or_else(|| schema(1, "schema", "empty file".into()))?;
        let header: PredictionHeader = typed(parse(first, 1)?, 1)?;
        if header.schema != PREDICTIONS_SCHEMA {
            return Err(schema(1, "schema", format!("expected `{PREDICTIONS_SCHEMA}`")));
        }
        if header.version != PREDICTIONS_VERSION {
            return Err(schema(1, "version", format!("unsupported version {}", header.version)));
        }
        let mut records = Vec::new();
        for (i, l) in lines {
            let r: PredictionRecord = typed(parse(l, i + 1)?, i + 1)?;
            if !(0.0..=1.0).contains(&r.score) {
                return Err(schema(i + 1, "score", format!("{} outside [0, 1]", r.score)));
            }
            records.push(r);
        }
        Ok(Self { header, records, dir })
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&self.header).expect("header serializes");
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_jsonl(&text, path.parent().map(Path::to_path_buf).unwrap_or_default())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_jsonl().as_bytes())
    }

    /// Ground truth used as predictions with score 1 (amodal masks, meshes).
    pub fn from_manifest(manifest: &ClipManifest, dir: &Path) -> Self {
        let mut records = Vec::new();
        for f in &manifest.frames {
            for i in &f.instances {
                records.push(PredictionRecord {
                    clip_id: manifest.clip_id().to_string(),
                    frame_id: f.frame_id,
                    class_id: i.class_id,
                    bbox: i.bbox,
                    score: 1.0,
                    track_id: Some(i.instance_id),
                    mask: Some(i.amodal_mask.clone()),
                    mesh: Some(i.mesh.clone()),
                    extra: Map::new(),
                });
            }
        }
        Self::new(records, dir.to_path_buf())
    }

    /// Records as detections with their masks and meshes loaded.
    pub fn load_detections(&self) -> Result<Vec<Detection>> {
        let read = |rel: &str| {
            let p = self.dir.join(rel);
            std::fs::read(&p).map_err(|e| Error::io(&p, e))
        };
        self.records
            .iter()
            .map(|r| {
                let mut d = Detection::new(r.frame_id, r.class_id, r.bbox, r.score)?;
                d.clip_id = r.clip_id.clone();
                d.instance_id = r.track_id;
                d.mask = r.mask.as_deref().map(|m| Mask::from_pbm(&read(m)?)).transpose()?;
                d.mesh = r.mesh.as_deref().map(|m| load_obj(&read(m)?)).transpose()?;
                Ok(d)
            })
            .collect()
    }
}

fn typed<T: serde::de::DeserializeOwned>(v: Value, line: usize) -> Result<T> {
    serde_path_to_error::deserialize(v).map_err(|e| Error::Schema {
        line,
        field: e.path().to_string(),
        msg: e.into_inner().to_string(),
    })
}
