// SPDX-License-Identifier: Apache-2.0

//! On-disk dataset layout, fixture generation and loaders.
//!
//! A dataset root holds `clips/<id>/manifest.jsonl`; asset paths inside a
//! manifest are relative to its clip directory (`meshes/*.obj`,
//! `masks/*.pbm`, `features/*.bin`).

mod fixture;
mod manifest;
mod predictions;
pub mod render;

use std::path::{Path, PathBuf};

pub use fixture::{
    generate_clip, generate_dataset, object_mesh, object_orientation, suites, CameraPath, FixtureSpec, GeneratedClip, ObjectSpec,
    OccluderSpec, Primitive,
};
pub use manifest::{ClipManifest, FrameRecord, InstanceRecord, ManifestHeader, MANIFEST_SCHEMA, MANIFEST_VERSION};
pub use predictions::{PredictionHeader, PredictionRecord, Predictions, PREDICTIONS_SCHEMA};

use crate::detection::{GroundTruthObject, Mask};
use crate::error::{Error, Result};
use crate::mesh::{load_obj, sample_points, Mesh};
use crate::refine::{CameraRig, RoiFeature, TrainSample};

pub const MANIFEST_FILE: &str = "manifest.jsonl";

/// Writes to a sibling temporary file, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let name = path.file_name().ok_or_else(|| Error::arg(format!("not a file path: {}", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub(crate) struct AssetPaths {
    pub mesh: String,
    pub amodal_mask: String,
    pub modal_mask: String,
    pub feature: String,
}

pub(crate) fn asset_paths(frame: u64, instance: u64) -> AssetPaths {
    let stem = format!("f{frame:05}_i{instance}");
    AssetPaths {
        mesh: format!("meshes/{stem}.obj"),
        amodal_mask: format!("masks/{stem}_amodal.pbm"),
        modal_mask: format!("masks/{stem}_modal.pbm"),
        feature: format!("features/{stem}.bin"),
    }
}

/// A manifest together with the directory its asset paths resolve against.
#[derive(Debug, Clone)]
pub struct Clip {
    pub manifest: ClipManifest,
    pub dir: PathBuf,
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

impl Clip {
    pub fn open(manifest_path: &Path) -> Result<Self> {
        let manifest = ClipManifest::read(manifest_path)?;
        let dir = manifest_path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { manifest, dir })
    }

    pub fn id(&self) -> &str {
        self.manifest.clip_id()
    }

    pub fn load_mesh(&self, inst: &InstanceRecord) -> Result<Mesh> {
        load_obj(&read(&self.dir.join(&inst.mesh))?)
    }

    pub fn load_amodal_mask(&self, inst: &InstanceRecord) -> Result<Mask> {
        Mask::from_pbm(&read(&self.dir.join(&inst.amodal_mask))?)
    }

    pub fn load_modal_mask(&self, inst: &InstanceRecord) -> Result<Mask> {
        Mask::from_pbm(&read(&self.dir.join(&inst.modal_mask))?)
    }

    pub fn load_feature(&self, inst: &InstanceRecord) -> Result<RoiFeature> {
        let rel = inst
            .feature
            .as_ref()
            .ok_or_else(|| Error::Config(format!("clip `{}`: instance {} has no ROI feature", self.id(), inst.instance_id)))?;
        RoiFeature::from_bytes(&read(&self.dir.join(rel))?)
    }

    /// The frame camera placed at the instance's world transform.
    pub fn camera(&self, frame: &FrameRecord, inst: &InstanceRecord) -> CameraRig {
        frame.camera.with_world(inst.world)
    }

    /// Every annotated object, with amodal masks and meshes loaded.
    pub fn ground_truth(&self) -> Result<Vec<GroundTruthObject>> {
        let mut out = Vec::new();
        for f in &self.manifest.frames {
            for inst in &f.instances {
                out.push(GroundTruthObject {
                    frame_id: f.frame_id,
                    clip_id: self.id().to_string(),
                    instance_id: inst.instance_id,
                    class_id: inst.class_id,
                    bbox: inst.bbox,
                    mask: Some(self.load_amodal_mask(inst)?),
                    mesh: Some(self.load_mesh(inst)?),
                    occlusion: inst.occlusion,
                });
            }
        }
        Ok(out)
    }

    /// One training sample per annotated object. An object is first in its
    /// track when it was absent from the previous frame or a shot cut
    /// precedes the frame.
    pub fn training_samples(&self, target_samples: usize, seed: u64) -> Result<Vec<TrainSample>> {
        let mut out = Vec::new();
        let mut prev_ids: Vec<u64> = Vec::new();
        for (fi, f) in self.manifest.frames.iter().enumerate() {
            for (k, inst) in f.instances.iter().enumerate() {
                let gt = self.load_mesh(inst)?;
                let s = crate::refine::mix(seed, ((fi as u64) << 20) | k as u64);
                out.push(TrainSample {
                    class_id: inst.class_id,
                    feature: self.load_feature(inst)?,
                    camera: self.camera(f, inst),
                    target: sample_points(&gt, target_samples, s)?,
                    gt,
                    first_in_track: f.shot_transition || !prev_ids.contains(&inst.instance_id),
                });
            }
            prev_ids = f.instances.iter().map(|i| i.instance_id).collect();
        }
        Ok(out)
    }
}

/// Clips under a dataset root (sorted by directory name), or the single clip
/// when `path` is a manifest file or a clip directory.
pub fn open_clips(path: &Path) -> Result<Vec<Clip>> {
    if path.is_file() {
        return Ok(vec![Clip::open(path)?]);
    }
    if path.join(MANIFEST_FILE).is_file() {
        return Ok(vec![Clip::open(&path.join(MANIFEST_FILE))?]);
    }
    let clips_dir = path.join("clips");
    let entries = std::fs::read_dir(&clips_dir).map_err(|e| Error::io(&clips_dir, e))?;
    let mut dirs = Vec::new();
    for e in entries {
        let e = e.map_err(|e| Error::io(&clips_dir, e))?;
        if e.path().join(MANIFEST_FILE).is_file() {
            dirs.push(e.path());
        }
    }
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::Config(format!("no clips under {}", clips_dir.display())));
    }
    dirs.iter().map(|d| Clip::open(&d.join(MANIFEST_FILE))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn written_dataset_reopens() {
        let dir = tempfile::tempdir().unwrap();
        let specs = vec![suites::drifting_cube(3), suites::crossing_objects(4, 2)];
        let manifests = generate_dataset(&specs, dir.path()).unwrap();
        let clips = open_clips(dir.path()).unwrap();
        assert_eq!(clips.len(), 2);
        assert_eq!(clips[0].id(), "cross");
        assert_eq!(clips[1].manifest, manifests[0]);
        let gt = clips[1].ground_truth().unwrap();
        assert_eq!(gt.len(), 3);
        let samples = clips[0].training_samples(100, 1).unwrap();
        let first: Vec<bool> = samples.iter().map(|s| s.first_in_track).collect();
        assert_eq!(first, vec![true, true, false, false, true, true, false, false]);
        assert_eq!(samples[0].feature.roi(), &clips[0].manifest.frames[0].instances[0].bbox);
        let single = open_clips(&dir.path().join("clips/drift")).unwrap();
        assert_eq!(single[0].id(), "drift");
        // No stray temporary files.
        let stray = walk(dir.path()).into_iter().filter(|p| p.to_string_lossy().ends_with(".tmp")).count();
        assert_eq!(stray, 0);
    }

    fn walk(p: &Path) -> Vec<PathBuf> {
        let mut out = Vec::new();
        for e in std::fs::read_dir(p).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                out.extend(walk(&path));
            } else {
                out.push(path);
            }
        }
        out
    }
}
