// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;
use std::path::Path;

use meshtrace_core::dataset::{open_clips, write_atomic, Predictions};
use meshtrace_core::metrics::{evaluate, EvalConfig, MatchParams};
use meshtrace_core::pipeline::PREDICTIONS_FILE;
use meshtrace_core::Detection;

use super::{positive, require};
use crate::args::EvalArgs;
use crate::error::CliError;

pub fn eval(a: EvalArgs, seed: u64) -> Result<(), CliError> {
    require(&a.preds)?;
    require(&a.gts)?;
    positive("tau", a.tau)?;
    positive("rescale-target", a.rescale_target)?;
    if !(a.match_threshold > 0.0 && a.match_threshold <= 1.0) {
        return Err(CliError::usage("--match-threshold must lie in (0, 1]"));
    }
    if a.f1_samples == 0 {
        return Err(CliError::usage("--f1-samples must be positive"));
    }
    if a.splits.is_empty() {
        return Err(CliError::usage("--splits must name at least one split"));
    }

    let preds = load_predictions(&a.preds)?;
    let mut gts = Vec::new();
    let mut clip_lengths = BTreeMap::new();
    for clip in open_clips(&a.gts)? {
        gts.extend(clip.ground_truth()?);
        clip_lengths.insert(clip.id().to_string(), clip.manifest.frames.len());
    }
    let cfg = EvalConfig {
        matching: MatchParams {
            threshold: a.match_threshold,
            tau: a.tau,
            rescale_target: a.rescale_target,
            f1_samples: a.f1_samples,
            seed,
        },
        splits: a.splits.clone(),
        clip_lengths,
    };
    let report = evaluate(&preds, &gts, &cfg)?;
    if let Some(out) = &a.out {
        let mut json = serde_json::to_string_pretty(&report).expect("report serializes");
        json.push('\n');
        write_atomic(out, json.as_bytes())?;
    }
    print!("{}", report.to_table());
    println!(
        "{} predictions, {} ground-truth objects, {} with unknown category",
        preds.len(),
        gts.len(),
        report.unknown_predictions
    );
    Ok(())
}

/// A predictions file, a directory holding one, or a dataset whose
/// annotations stand in for predictions.
fn load_predictions(path: &Path) -> Result<Vec<Detection>, CliError> {
    if path.is_file() {
        return Ok(Predictions::read(path)?.load_detections()?);
    }
    let file = path.join(PREDICTIONS_FILE);
    if file.is_file() {
        return Ok(Predictions::read(&file)?.load_detections()?);
    }
    let mut out = Vec::new();
    for clip in open_clips(path)? {
        out.extend(Predictions::from_manifest(&clip.manifest, &clip.dir).load_detections()?);
    }
    Ok(out)
}
