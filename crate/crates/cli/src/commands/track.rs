// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;
use std::path::Path;

use meshtrace_core::dataset::{open_clips, write_atomic};
use meshtrace_core::tracker::Tracker;
use meshtrace_core::{BBox, Error};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{positive, require};
use crate::args::TrackArgs;
use crate::error::CliError;
use crate::table::Table;

/// One detection line. Unknown fields are carried through untouched.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct TrackRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    clip_id: Option<String>,
    frame_id: u64,
    #[serde(alias = "box")]
    bbox: BBox,
    #[serde(alias = "class")]
    class_id: u32,
    score: f64,
    /// A shot cut happens immediately before this record's frame.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    shot_transition: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    track_id: Option<u64>,
    #[serde(flatten)]
    extra: Map<String, Value>,
}

enum Line {
    /// A header line (it has a `schema` field); copied verbatim.
    Header(String),
    Record(TrackRecord),
}

pub fn track(a: TrackArgs) -> Result<(), CliError> {
    positive("iou-gate", a.iou_gate)?;
    let mut lines = match (&a.detections, &a.data) {
        (Some(path), _) => read_detections(path)?,
        (None, Some(data)) => {
            require(data)?;
            dataset_detections(data)?
        }
        (None, None) => return Err(CliError::usage("one of --detections or --data is required")),
    };

    // Clips in order of first appearance; frames by id within a clip.
    let mut clips: Vec<(String, BTreeMap<u64, Vec<usize>>)> = Vec::new();
    for (i, l) in lines.iter().enumerate() {
        if let Line::Record(r) = l {
            let clip = r.clip_id.clone().unwrap_or_default();
            let k = match clips.iter().position(|(c, _)| *c == clip) {
                Some(k) => k,
                None => {
                    clips.push((clip, BTreeMap::new()));
                    clips.len() - 1
                }
            };
            clips[k].1.entry(r.frame_id).or_default().push(i);
        }
    }

    let records: Vec<Option<&TrackRecord>> = lines
        .iter()
        .map(|l| match l {
            Line::Record(r) => Some(r),
            Line::Header(_) => None,
        })
        .collect();
    let assigned: Vec<Vec<(usize, u64)>> = clips
        .par_iter()
        .map(|(_, frames)| {
            let mut tracker = Tracker::new(a.iou_gate);
            let mut out = Vec::new();
            for idx in frames.values() {
                let recs: Vec<&TrackRecord> = idx.iter().map(|&i| records[i].expect("record line")).collect();
                if recs.iter().any(|r| r.shot_transition == Some(true)) {
                    tracker.reset();
                }
                let objects: Vec<(BBox, u32)> = recs.iter().map(|r| (r.bbox, r.class_id)).collect();
                for (&i, assoc) in idx.iter().zip(tracker.step(&objects)) {
                    out.push((i, assoc.track_id));
                }
            }
            out
        })
        .collect();

    let mut t = Table::new(&["clip", "frames", "detections", "tracks", "shot cuts"]);
    for ((clip, frames), ids) in clips.iter().zip(&assigned) {
        let cuts = frames
            .values()
            .filter(|idx| idx.iter().any(|&i| records[i].is_some_and(|r| r.shot_transition == Some(true))))
            .count();
        let mut distinct: Vec<u64> = ids.iter().map(|&(_, id)| id).collect();
        distinct.sort_unstable();
        distinct.dedup();
        let name = if clip.is_empty() { "-" } else { clip.as_str() };
        t.row(vec![
            name.to_string(),
            frames.len().to_string(),
            ids.len().to_string(),
            distinct.len().to_string(),
            cuts.to_string(),
        ]);
    }
    for (i, id) in assigned.into_iter().flatten() {
        if let Line::Record(r) = &mut lines[i] {
            r.track_id = Some(id);
        }
    }

    let mut text = String::new();
    for l in &lines {
        match l {
            Line::Header(h) => text.push_str(h),
            Line::Record(r) => text.push_str(&serde_json::to_string(r).expect("record serializes")),
        }
        text.push('\n');
    }
    write_atomic(&a.out, text.as_bytes())?;
    print!("{}", t.render());
    Ok(())
}

fn read_detections(path: &Path) -> Result<Vec<Line>, CliError> {
    require(path)?;
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let line = i + 1;
        let schema = |field: String, msg: String| CliError::from(Error::Schema { line, field, msg });
        let v: Value = serde_json::from_str(raw).map_err(|e| schema("<record>".into(), e.to_string()))?;
        if v.get("schema").is_some() {
            out.push(Line::Header(raw.trim().to_string()));
            continue;
        }
        let r: TrackRecord =
            serde_path_to_error::deserialize(v).map_err(|e| schema(e.path().to_string(), e.into_inner().to_string()))?;
        if !(0.0..=1.0).contains(&r.score) {
            return Err(schema("score".into(), format!("{} outside [0, 1]", r.score)));
        }
        out.push(Line::Record(r));
    }
    Ok(out)
}

/// Annotated boxes of every clip as score-1 detections.
fn dataset_detections(path: &Path) -> Result<Vec<Line>, CliError> {
    let mut out = Vec::new();
    for clip in open_clips(path)? {
        for f in &clip.manifest.frames {
            for inst in &f.instances {
                let mut extra = Map::new();
                extra.insert("instance_id".into(), inst.instance_id.into());
                out.push(Line::Record(TrackRecord {
                    clip_id: Some(clip.id().to_string()),
                    frame_id: f.frame_id,
                    bbox: inst.bbox,
                    class_id: inst.class_id,
                    score: 1.0,
                    shot_transition: f.shot_transition.then_some(true),
                    track_id: None,
                    extra,
                }));
            }
        }
    }
    Ok(out)
}
