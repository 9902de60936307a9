// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{Matrix3, Matrix4, Translation3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Map;

use super::manifest::{ClipManifest, FrameRecord, InstanceRecord};
use super::render::{render, roi_feature, Layer, ProjectedMesh};
use super::{asset_paths, write_atomic, MANIFEST_FILE};
use crate::error::{Error, Result};
use crate::mesh::{primitives, save_obj, Mesh, Vec3};
use crate::refine::{euler_zyx, mix, CameraRig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Primitive {
    Cube,
    Sphere,
    Cylinder,
}

impl Primitive {
    pub const ALL: [Primitive; 3] = [Primitive::Cube, Primitive::Sphere, Primitive::Cylinder];

    /// Unit-extent mesh centered at the origin.
    pub fn mesh(&self) -> Mesh {
        match self {
            Primitive::Cube => primitives::cube(3),
            Primitive::Sphere => primitives::uv_sphere(0.5, 8, 12),
            Primitive::Cylinder => primitives::cylinder(0.5, 1.0, 12, 2),
        }
    }

    pub fn class_id(&self) -> u32 {
        *self as u32
    }
}

fn ones() -> [f64; 3] {
    [1.0; 3]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub instance_id: u64,
    pub class_id: u32,
    pub primitive: Primitive,
    /// Extent along each model axis.
    #[serde(default = "ones")]
    pub size: [f64; 3],
    /// World position at frame 0.
    pub position: [f64; 3],
    /// World displacement per frame.
    #[serde(default)]
    pub velocity: [f64; 3],
    /// Z-Y-X Euler angles (radians) at frame 0.
    #[serde(default)]
    pub rotation: [f64; 3],
    /// Euler angle change per frame (radians).
    #[serde(default)]
    pub angular_velocity: [f64; 3],
}

/// Opaque camera-facing rectangle in world space; drawn but not annotated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccluderSpec {
    pub center: [f64; 3],
    pub size: [f64; 2],
}

fn default_fov() -> f64 {
    50.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraPath {
    #[serde(default = "default_fov")]
    pub fov_y_deg: f64,
    #[serde(default)]
    pub position: [f64; 3],
    #[serde(default)]
    pub velocity: [f64; 3],
    /// Camera displacement added at every shot transition.
    #[serde(default)]
    pub cut_offset: [f64; 3],
}

impl Default for CameraPath {
    fn default() -> Self {
        Self {
            fov_y_deg: default_fov(),
            position: [0.0; 3],
            velocity: [0.0; 3],
            cut_offset: [0.0; 3],
        }
    }
}

fn default_image_size() -> usize {
    128
}

/// One procedurally generated clip. The camera looks down +z.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureSpec {
    pub clip_id: String,
    pub frames: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_image_size")]
    pub image_size: usize,
    #[serde(default)]
    pub camera: CameraPath,
    pub objects: Vec<ObjectSpec>,
    #[serde(default)]
    pub occluders: Vec<OccluderSpec>,
    /// Frame indices that start a new shot.
    #[serde(default)]
    pub shot_transitions: Vec<usize>,
    /// Std of seeded Gaussian noise added to object positions each frame.
    #[serde(default)]
    pub jitter: f64,
}

impl FixtureSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("fixture `{}`: {m}", self.clip_id)));
        if self.frames == 0 {
            return bad("clip length must be at least 1".into());
        }
        if self.image_size < 8 {
            return bad("image size must be at least 8".into());
        }
        if self.clip_id.is_empty() || self.clip_id.contains(['/', '\\']) {
            return bad("clip id must be a nonempty path component".into());
        }
        if !(self.camera.fov_y_deg > 0.0 && self.camera.fov_y_deg < 180.0) {
            return bad("field of view must be in (0, 180) degrees".into());
        }
        let finite = |a: &[f64]| a.iter().all(|v| v.is_finite());
        let cam = &self.camera;
        if !finite(&cam.position) || !finite(&cam.velocity) || !finite(&cam.cut_offset) || !(self.jitter >= 0.0) {
            return bad("camera path and jitter must be finite".into());
        }
        let mut ids = std::collections::BTreeSet::new();
        for o in &self.objects {
            if !ids.insert(o.instance_id) {
                return bad(format!("duplicate instance id {}", o.instance_id));
            }
            let all = [o.size, o.position, o.velocity, o.rotation, o.angular_velocity];
            if !all.iter().all(|a| finite(a)) || o.size.iter().any(|&s| s <= 0.0) {
                return bad(format!("object {} motion must be finite with positive size", o.instance_id));
            }
        }
        if self.shot_transitions.iter().any(|&t| t == 0 || t >= self.frames) {
            return bad("shot transitions must lie in 1..frames".into());
        }
        Ok(())
    }
}

/// A generated clip held in memory: the manifest plus asset bytes keyed by
/// path relative to the clip directory.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedClip {
    pub manifest: ClipManifest,
    pub assets: BTreeMap<String, Vec<u8>>,
}

impl GeneratedClip {
    /// Writes `clips/<id>/...` under `root`; every file is written atomically.
    pub fn write(&self, root: &Path) -> Result<()> {
        let dir = root.join("clips").join(self.manifest.clip_id());
        for (rel, bytes) in &self.assets {
            write_atomic(&dir.join(rel), bytes)?;
        }
        write_atomic(&dir.join(MANIFEST_FILE), self.manifest.to_jsonl().as_bytes())
    }
}

/// Shape of object `o` at frame `t` in its model frame (rotated, centered).
pub fn object_mesh(o: &ObjectSpec, t: usize) -> Mesh {
    let base = o.primitive.mesh();
    let s = Vec3::from(o.size);
    let scaled: Vec<Vec3> = base.vertices().iter().map(|v| v.component_mul(&s)).collect();
    let r = object_orientation(o, t);
    base.with_vertices(scaled.iter().map(|v| r * v).collect())
        .expect("primitive meshes are valid")
}

/// Rotation of the object at frame `t`.
pub fn object_orientation(o: &ObjectSpec, t: usize) -> Matrix3<f64> {
    let a = |k: usize| o.rotation[k] + o.angular_velocity[k] * t as f64;
    euler_zyx([a(0), a(1), a(2)])
}

fn occluder_mesh(o: &OccluderSpec) -> Mesh {
    let [w, h] = o.size;
    let (hw, hh) = (0.5 * w, 0.5 * h);
    Mesh::new(
        vec![
            Vec3::new(-hw, -hh, 0.0),
            Vec3::new(hw, -hh, 0.0),
            Vec3::new(hw, hh, 0.0),
            Vec3::new(-hw, hh, 0.0),
        ],
        vec![[0, 1, 2], [0, 2, 3]],
    )
    .expect("quad is valid")
}

fn translation(p: Vec3) -> Matrix4<f64> {
    Translation3::from(p).to_homogeneous()
}

pub fn generate_clip(spec: &FixtureSpec) -> Result<GeneratedClip> {
    spec.validate()?;
    let size = spec.image_size;
    let projection = CameraRig::perspective(spec.camera.fov_y_deg.to_radians(), 1.0, 0.1, 100.0);
    let noise = Normal::new(0.0, spec.jitter).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut assets = BTreeMap::new();
    let mut frames = Vec::with_capacity(spec.frames);
    let mut cut = Vec3::zeros();
    let mut ever_drawn = vec![false; spec.objects.len()];
    for t in 0..spec.frames {
        let shot_transition = spec.shot_transitions.contains(&t);
        if shot_transition {
            cut += Vec3::from(spec.camera.cut_offset);
        }
        let cam_pos = Vec3::from(spec.camera.position) + Vec3::from(spec.camera.velocity) * t as f64 + cut;
        let view = translation(-cam_pos);
        let rig = CameraRig::new(Matrix4::identity(), view, projection, [0.0, 0.0, size as f64, size as f64])?;

        let mut layers = Vec::new();
        let mut placed = Vec::new();
        for o in &spec.objects {
            let mut pos = Vec3::from(o.position) + Vec3::from(o.velocity) * t as f64;
            if spec.jitter > 0.0 {
                pos += Vec3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng));
            }
            let mesh = object_mesh(o, t);
            let world = translation(pos);
            let cam = rig.with_world(world);
            layers.push(Layer {
                projected: ProjectedMesh::new(&mesh, &cam),
                depth: (pos - cam_pos).z,
                is_object: true,
            });
            placed.push((mesh, world, (pos - cam_pos).z));
        }
        for oc in &spec.occluders {
            let c = Vec3::from(oc.center);
            let cam = rig.with_world(translation(c));
            layers.push(Layer {
                projected: ProjectedMesh::new(&occluder_mesh(oc), &cam),
                depth: (c - cam_pos).z,
                is_object: false,
            });
        }
        let rendered = render(&layers, size, size);

        let mut instances = Vec::new();
        for (k, o) in spec.objects.iter().enumerate() {
            let amodal = &rendered.amodal[k];
            let Some(bbox) = amodal.bbox() else { continue };
            ever_drawn[k] = true;
            let modal = &rendered.modal[k];
            let (mesh, world, z_c) = &placed[k];
            let paths = asset_paths(t as u64, o.instance_id);
            let feature = roi_feature(&layers, &rendered, k, &bbox, *z_c, rig.focal_px());
            assets.insert(paths.mesh.clone(), save_obj(mesh));
            assets.insert(paths.amodal_mask.clone(), amodal.to_pbm());
            assets.insert(paths.modal_mask.clone(), modal.to_pbm());
            assets.insert(paths.feature.clone(), feature.to_bytes());
            instances.push(InstanceRecord {
                instance_id: o.instance_id,
                class_id: o.class_id,
                bbox,
                world: *world,
                mesh: paths.mesh,
                orientation: Some(object_orientation(o, t)),
                amodal_mask: paths.amodal_mask,
                modal_mask: paths.modal_mask,
                feature: Some(paths.feature),
                occlusion: 1.0 - modal.count() as f64 / amodal.count() as f64,
                visible: modal.count() > 0,
                extra: Map::new(),
            });
        }
        frames.push(FrameRecord {
            frame_id: t as u64,
            shot_transition,
            camera: rig,
            instances,
            extra: Map::new(),
        });
    }
    if let Some(k) = ever_drawn.iter().position(|d| !d) {
        return Err(Error::Generation(format!(
            "clip `{}`: object {} is never in view",
            spec.clip_id, spec.objects[k].instance_id
        )));
    }
    let manifest = ClipManifest::new(spec.clip_id.clone(), [size, size], frames)?;
    Ok(GeneratedClip { manifest, assets })
}

/// Generates clips in parallel and writes them under `root`. The output
/// does not depend on the thread count.
pub fn generate_dataset(specs: &[FixtureSpec], root: &Path) -> Result<Vec<ClipManifest>> {
    let mut ids = std::collections::BTreeSet::new();
    if let Some(s) = specs.iter().find(|s| !ids.insert(s.clip_id.as_str())) {
        return Err(Error::Config(format!("duplicate clip id `{}`", s.clip_id)));
    }
    let clips = specs.par_iter().map(generate_clip).collect::<Result<Vec<_>>>()?;
    for c in &clips {
        c.write(root)?;
    }
    Ok(clips.into_iter().map(|c| c.manifest).collect())
}

/// Standard fixture suites.
pub mod suites {
    use super::*;

    /// `n` clips of one slowly rotating primitive each, cycling through the
    /// primitive kinds (class id = primitive index), with seeded sizes,
    /// placements and spin.
    pub fn rotating_primitives(n: usize, frames: usize, seed: u64) -> Vec<FixtureSpec> {
        (0..n)
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, i as u64));
                let u = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| Uniform::new(lo, hi).unwrap().sample(rng);
                let primitive = Primitive::ALL[i % Primitive::ALL.len()];
                let size = [u(&mut rng, 0.8, 1.2), u(&mut rng, 0.8, 1.2), u(&mut rng, 0.8, 1.2)];
                let position = [u(&mut rng, -0.3, 0.3), u(&mut rng, -0.3, 0.3), u(&mut rng, 3.6, 4.4)];
                let rotation = [u(&mut rng, -0.6, 0.6), u(&mut rng, -0.6, 0.6), u(&mut rng, -0.6, 0.6)];
                let spin = 3f64.to_radians();
                let angular_velocity = [u(&mut rng, -spin, spin), u(&mut rng, -spin, spin), u(&mut rng, -spin, spin)];
                FixtureSpec {
                    clip_id: format!("rot{i:03}"),
                    frames,
                    seed: mix(seed, 1000 + i as u64),
                    image_size: default_image_size(),
                    camera: CameraPath::default(),
                    objects: vec![ObjectSpec {
                        instance_id: 1,
                        class_id: primitive.class_id(),
                        primitive,
                        size,
                        position,
                        velocity: [0.0; 3],
                        rotation,
                        angular_velocity,
                    }],
                    occluders: Vec::new(),
                    shot_transitions: Vec::new(),
                    jitter: 0.0,
                }
            })
            .collect()
    }

    /// One cube drifting slowly across the frame.
    pub fn drifting_cube(frames: usize) -> FixtureSpec {
        FixtureSpec {
            clip_id: "drift".into(),
            frames,
            seed: 0,
            image_size: default_image_size(),
            camera: CameraPath::default(),
            objects: vec![ObjectSpec {
                instance_id: 1,
                class_id: Primitive::Cube.class_id(),
                primitive: Primitive::Cube,
                size: ones(),
                position: [-0.8, 0.0, 5.0],
                velocity: [0.08, 0.01, 0.0],
                rotation: [0.3, 0.2, 0.0],
                angular_velocity: [0.02, 0.0, 0.0],
            }],
            occluders: Vec::new(),
            shot_transitions: Vec::new(),
            jitter: 0.0,
        }
    }

    /// Two cubes at different depths crossing paths horizontally, with a
    /// shot transition (and camera jump) at `cut` when `cut > 0`.
    pub fn crossing_objects(frames: usize, cut: usize) -> FixtureSpec {
        let cube = |id: u64, x: f64, z: f64, vx: f64| ObjectSpec {
            instance_id: id,
            class_id: Primitive::Cube.class_id(),
            primitive: Primitive::Cube,
            size: ones(),
            position: [x, 0.05 * id as f64, z],
            velocity: [vx, 0.0, 0.0],
            rotation: [0.2, 0.3, 0.1],
            angular_velocity: [0.0, 0.03, 0.0],
        };
        FixtureSpec {
            clip_id: "cross".into(),
            frames,
            seed: 0,
            image_size: default_image_size(),
            camera: CameraPath {
                cut_offset: [0.3, 0.0, 0.0],
                ..Default::default()
            },
            objects: vec![cube(1, -1.2, 5.0, 0.1), cube(2, 1.2, 6.0, -0.1)],
            occluders: Vec::new(),
            shot_transitions: if cut > 0 { vec![cut] } else { Vec::new() },
            jitter: 0.0,
        }
    }

    /// A static cube whose left half is behind an occluder.
    pub fn half_occluded_cube(frames: usize) -> FixtureSpec {
        FixtureSpec {
            clip_id: "occl".into(),
            frames,
            seed: 0,
            image_size: default_image_size(),
            camera: CameraPath::default(),
            objects: vec![ObjectSpec {
                instance_id: 1,
                class_id: Primitive::Cube.class_id(),
                primitive: Primitive::Cube,
                size: ones(),
                position: [0.0, 0.0, 5.0],
                velocity: [0.0; 3],
                rotation: [0.0; 3],
                angular_velocity: [0.0; 3],
            }],
            occluders: vec![OccluderSpec {
                center: [-1.0, 0.0, 3.0],
                size: [2.0, 4.0],
            }],
            shot_transitions: Vec::new(),
            jitter: 0.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detection::Mask;

    fn static_cube(frames: usize) -> FixtureSpec {
        let mut s = suites::drifting_cube(frames);
        s.objects[0].velocity = [0.0; 3];
        s.objects[0].angular_velocity = [0.0; 3];
        s
    }

    #[test]
    fn static_cube_is_identical_every_frame() {
        let clip = generate_clip(&static_cube(5)).unwrap();
        let frames = &clip.manifest.frames;
        assert_eq!(frames.len(), 5);
        for f in frames {
            let i = &f.instances[0];
            assert_eq!(i.bbox, frames[0].instances[0].bbox);
            assert_eq!(i.occlusion, 0.0);
            assert_eq!(clip.assets[&i.mesh], clip.assets[&frames[0].instances[0].mesh]);
        }
    }

    #[test]
    fn half_occluded_cube_occlusion_rate() {
        let clip = generate_clip(&suites::half_occluded_cube(1)).unwrap();
        let i = &clip.manifest.frames[0].instances[0];
        assert!((i.occlusion - 0.5).abs() < 0.05, "{}", i.occlusion);
        // Raster-count oracle: amodal pixels with x below the occluder's right edge.
        let amodal = Mask::from_pbm(&clip.assets[&i.amodal_mask]).unwrap();
        let modal = Mask::from_pbm(&clip.assets[&i.modal_mask]).unwrap();
        let cam = &clip.manifest.frames[0].camera;
        let oc = &suites::half_occluded_cube(1).occluders[0];
        let right = Vec3::new(oc.center[0] + 0.5 * oc.size[0], 0.0, oc.center[2]);
        let (edge_x, _) = cam.project_point(&right).unwrap();
        let hidden = (0..amodal.height())
            .flat_map(|y| (0..amodal.width()).map(move |x| (x, y)))
            .filter(|&(x, y)| amodal.get(x, y) && (x as f64 + 0.5) < edge_x)
            .count();
        assert_eq!(modal.count(), amodal.count() - hidden);
    }

    #[test]
    fn rotating_cube_meshes_are_isometric() {
        let mut s = static_cube(30);
        s.objects[0].angular_velocity = [0.05, 0.02, 0.01];
        let clip = generate_clip(&s).unwrap();
        let lengths = |m: &Mesh| -> Vec<f64> {
            m.edges().iter().map(|&[a, b]| (m.vertices()[a] - m.vertices()[b]).norm()).collect()
        };
        let meshes: Vec<Mesh> = clip
            .manifest
            .frames
            .iter()
            .map(|f| crate::mesh::load_obj(&clip.assets[&f.instances[0].mesh]).unwrap())
            .collect();
        let l0 = lengths(&meshes[0]);
        for (t, m) in meshes.iter().enumerate() {
            for (a, b) in lengths(m).iter().zip(&l0) {
                assert!((a - b).abs() < 1e-5);
            }
            let want = object_mesh(&s.objects[0], t);
            for (a, b) in m.vertices().iter().zip(want.vertices()) {
                assert!((a - b).norm() < 1e-5);
            }
        }
    }

    #[test]
    fn masks_and_boxes_are_consistent() {
        let clip = generate_clip(&suites::crossing_objects(24, 12)).unwrap();
        for f in &clip.manifest.frames {
            for i in &f.instances {
                let amodal = Mask::from_pbm(&clip.assets[&i.amodal_mask]).unwrap();
                let modal = Mask::from_pbm(&clip.assets[&i.modal_mask]).unwrap();
                assert!(modal.bits().iter().zip(amodal.bits()).all(|(m, a)| !m || *a));
                assert_eq!(amodal.bbox().unwrap(), i.bbox);
            }
        }
        assert_eq!(clip.manifest.shot_transitions(), vec![12]);
    }

    #[test]
    fn deterministic_per_seed() {
        let mut s = suites::rotating_primitives(1, 4, 9).remove(0);
        s.jitter = 0.02;
        assert_eq!(generate_clip(&s).unwrap(), generate_clip(&s).unwrap());
        let mut other = s.clone();
        other.seed += 1;
        assert_ne!(generate_clip(&s).unwrap(), generate_clip(&other).unwrap());
    }

    #[test]
    fn object_behind_camera_is_an_error() {
        let mut s = static_cube(3);
        s.objects[0].position = [0.0, 0.0, -5.0];
        assert!(matches!(generate_clip(&s), Err(Error::Generation(_))));
    }
}
