// SPDX-License-Identifier: Apache-2.0

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use meshtrace_core::metrics::{Split, DEFAULT_F1_SAMPLES, DEFAULT_RESCALE_TARGET, DEFAULT_TAU};
use meshtrace_core::tracker::DEFAULT_IOU_GATE;

/// Temporal mesh reconstruction on procedurally generated video clips.
///
/// Errors are printed to stderr as one JSON line; the exit status is 2 for
/// usage, missing-file and schema errors and 1 for runtime failures. Set
/// MESHTRACE_LOG (error, warn, info, debug, trace) for diagnostics on stderr.
#[derive(Debug, Parser)]
#[command(name = "meshtrace", version)]
pub struct Cli {
    /// Seed for every random choice the subcommand makes.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Worker threads for data-parallel sections. Outputs do not depend on it.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a fixture dataset (clips, meshes, masks, ROI features).
    Gen(GenArgs),
    /// Assign track ids to per-frame detections.
    Track(TrackArgs),
    /// Build a class mean shape from a dataset and write it as OBJ.
    Meanshape(MeanshapeArgs),
    /// Train the refinement model and write a checkpoint.
    Train(TrainArgs),
    /// Predict a mesh for every annotated object of a dataset.
    Infer(InferArgs),
    /// Score predictions against a dataset: AP^box, AP^mask, AP^mesh.
    Eval(EvalArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    /// Single rotating primitives cycling through cube, sphere and cylinder.
    Rotating,
    /// One cube drifting across the frame.
    Drifting,
    /// Two cubes crossing paths, optionally with a shot cut.
    Crossing,
    /// A static cube half hidden behind an occluder.
    Occluded,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// JSON fixture spec (one object or an array of them).
    #[arg(long, conflicts_with = "suite", required_unless_present = "suite")]
    pub spec: Option<PathBuf>,

    /// Built-in fixture suite to generate.
    #[arg(long, value_enum)]
    pub suite: Option<Suite>,

    /// Number of clips (rotating suite).
    #[arg(long, default_value_t = 10)]
    pub clips: usize,

    /// Frames per clip (built-in suites).
    #[arg(long, default_value_t = 12)]
    pub frames: usize,

    /// Frame index of the shot cut (crossing suite; 0 for none).
    #[arg(long, default_value_t = 0)]
    pub cut: usize,

    /// Dataset root to write `clips/<id>/...` under.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrackArgs {
    /// Detections as JSON lines with `frame_id`, `bbox`, `class_id` and
    /// `score`; optional `clip_id` and `shot_transition`. Other fields are
    /// passed through.
    #[arg(long, conflicts_with = "data", required_unless_present = "data")]
    pub detections: Option<PathBuf>,

    /// Use the annotated boxes of a dataset as detections instead.
    #[arg(long)]
    pub data: Option<PathBuf>,

    /// Minimum box IoU for continuing a track.
    #[arg(long, default_value_t = DEFAULT_IOU_GATE)]
    pub iou_gate: f64,

    /// Output JSON lines: the input records with `track_id` set.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MeanshapeArgs {
    /// Dataset root, clip directory or manifest.
    #[arg(long)]
    pub data: PathBuf,

    /// Class id whose instances are averaged.
    #[arg(long = "class")]
    pub class_id: u32,

    /// Grid cells per axis.
    #[arg(long, default_value_t = 32)]
    pub resolution: usize,

    /// Occupancy level of the surface.
    #[arg(long, default_value_t = 0.5)]
    pub iso: f64,

    /// Face budget after simplification.
    #[arg(long, default_value_t = 4000)]
    pub faces: usize,

    /// Output OBJ file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training dataset root.
    #[arg(long)]
    pub data: PathBuf,

    /// Output checkpoint (model plus class mean shapes).
    #[arg(long)]
    pub out: PathBuf,

    /// Per-step loss CSV (step, stage, L_cham, L_norm, L_edge, total).
    #[arg(long)]
    pub log: Option<PathBuf>,

    /// SGD steps with mean-shape references.
    #[arg(long, default_value_t = 2000)]
    pub stage1_steps: usize,

    /// SGD steps with augmented ground-truth references.
    #[arg(long, default_value_t = 1000)]
    pub stage2_steps: usize,

    /// Learning rate.
    #[arg(long, default_value_t = 0.02)]
    pub lr: f64,

    /// Momentum.
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,

    /// Objects averaged per step.
    #[arg(long, default_value_t = 1)]
    pub batch: usize,

    /// Points sampled per mesh for the loss.
    #[arg(long, default_value_t = 5000)]
    pub loss_samples: usize,

    /// Loss weights for Chamfer, normal and edge terms.
    #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [1.0, 0.1, 0.1])]
    pub weights: Vec<f64>,

    /// Per-vertex image feature width.
    #[arg(long, default_value_t = 64)]
    pub embed: usize,

    /// Graph-convolution hidden width.
    #[arg(long, default_value_t = 64)]
    pub hidden: usize,

    /// Rotation-head hidden width.
    #[arg(long, default_value_t = 64)]
    pub rot_hidden: usize,

    /// Refinement stages.
    #[arg(long, default_value_t = 3)]
    pub stages: usize,

    /// Augmentation rotation range in degrees.
    #[arg(long, default_value_t = 15.0)]
    pub rot_range: f64,

    /// Augmentation noise as a fraction of the box diagonal.
    #[arg(long, default_value_t = 0.02)]
    pub sigma: f64,

    /// Mean-shape grid cells per axis.
    #[arg(long, default_value_t = 32)]
    pub mean_resolution: usize,

    /// Mean-shape face budget.
    #[arg(long, default_value_t = 4000)]
    pub mean_faces: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReferenceArg {
    /// Tracked objects refine their previous prediction.
    Temporal,
    /// Every object starts from its class mean shape.
    MeanShape,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    /// Dataset root, clip directory or manifest.
    #[arg(long)]
    pub data: PathBuf,

    /// Checkpoint written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,

    /// Minimum box IoU for continuing a track.
    #[arg(long, default_value_t = DEFAULT_IOU_GATE)]
    pub iou_gate: f64,

    /// Reference mesh rule.
    #[arg(long, value_enum, default_value_t = ReferenceArg::Temporal)]
    pub reference: ReferenceArg,

    /// Output directory for predictions.jsonl, meshes and masks.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Predictions file, `infer` output directory, or a dataset (its
    /// annotations are scored as predictions with score 1).
    #[arg(long)]
    pub preds: PathBuf,

    /// Ground-truth dataset root, clip directory or manifest.
    #[arg(long)]
    pub gts: PathBuf,

    /// F1 distance threshold, in rescaled units.
    #[arg(long, default_value_t = DEFAULT_TAU)]
    pub tau: f64,

    /// Longest ground-truth box edge after rescaling both meshes.
    #[arg(long, default_value_t = DEFAULT_RESCALE_TARGET)]
    pub rescale_target: f64,

    /// Box IoU, mask IoU or mesh F1 needed for a true positive.
    #[arg(long, default_value_t = 0.5)]
    pub match_threshold: f64,

    /// Points sampled per mesh for F1.
    #[arg(long, default_value_t = DEFAULT_F1_SAMPLES)]
    pub f1_samples: usize,

    /// Comma-separated splits to report.
    #[arg(long, value_delimiter = ',', value_parser = parse_split,
          default_value = "all,small,medium,large,slightly_occluded,heavily_occluded,short_clips,long_clips")]
    pub splits: Vec<Split>,

    /// Write the full report (per-category APs, PR curves) as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_split(s: &str) -> Result<Split, String> {
    s.parse().map_err(|e: meshtrace_core::Error| e.to_string())
}
