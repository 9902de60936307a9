// SPDX-License-Identifier: Apache-2.0

use meshtrace_core::dataset::open_clips;
use meshtrace_core::pipeline::{infer_clips, write_predictions, InferOptions, ReferenceMode, PREDICTIONS_FILE};
use meshtrace_core::refine::Checkpoint;
use meshtrace_core::Error;

use super::{positive, require};
use crate::args::{InferArgs, ReferenceArg};
use crate::error::CliError;
use crate::table::Table;

pub fn infer(a: InferArgs) -> Result<(), CliError> {
    require(&a.data)?;
    require(&a.checkpoint)?;
    positive("iou-gate", a.iou_gate)?;
    let bytes = std::fs::read(&a.checkpoint).map_err(|e| Error::Io {
        path: a.checkpoint.clone(),
        source: e,
    })?;
    let ck = Checkpoint::from_bytes(&bytes)?;
    let clips = open_clips(&a.data)?;
    let opts = InferOptions {
        iou_gate: a.iou_gate,
        mode: match a.reference {
            ReferenceArg::Temporal => ReferenceMode::Temporal,
            ReferenceArg::MeanShape => ReferenceMode::MeanShape,
        },
    };
    let inferred = infer_clips(&ck.model, &clips, &ck.mean_shapes, &opts)?;
    write_predictions(&clips, &inferred, &a.out)?;

    let mut t = Table::new(&["clip", "frames", "objects", "tracks", "from previous"]);
    for (clip, objects) in clips.iter().zip(&inferred) {
        let mut tracks: Vec<u64> = objects.iter().map(|o| o.track_id).collect();
        tracks.sort_unstable();
        tracks.dedup();
        t.row(vec![
            clip.id().to_string(),
            clip.manifest.frames.len().to_string(),
            objects.len().to_string(),
            tracks.len().to_string(),
            objects.iter().filter(|o| o.from_previous).count().to_string(),
        ]);
    }
    print!("{}", t.render());
    println!("wrote {}", a.out.join(PREDICTIONS_FILE).display());
    Ok(())
}
