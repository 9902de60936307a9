// SPDX-License-Identifier: Apache-2.0

use std::time::Instant;

use meshtrace_core::dataset::{open_clips, write_atomic};
use meshtrace_core::losses::{LossBreakdown, LossWeights};
use meshtrace_core::mesh::MeanShapeConfig;
use meshtrace_core::pipeline::{mean_shapes, training_samples};
use meshtrace_core::refine::{self, Checkpoint, ModelDims, TrainConfig, TrainLogRow, TrainStage};

use super::require;
use crate::args::TrainArgs;
use crate::error::CliError;
use crate::table::Table;

/// Rows averaged for the per-stage summary.
const SUMMARY_WINDOW: usize = 50;

pub fn train(a: TrainArgs, seed: u64) -> Result<(), CliError> {
    require(&a.data)?;
    let weights = LossWeights::new(a.weights[0], a.weights[1], a.weights[2])?;
    if a.embed == 0 || a.hidden == 0 || a.rot_hidden == 0 || a.stages == 0 {
        return Err(CliError::usage("model widths and --stages must be positive"));
    }
    let clips = open_clips(&a.data)?;

    let started = Instant::now();
    let mean_cfg = MeanShapeConfig {
        resolution: a.mean_resolution,
        target_faces: a.mean_faces,
        ..Default::default()
    };
    let means = mean_shapes(&clips, &mean_cfg)?;
    let samples = training_samples(&clips, a.loss_samples, seed)?;
    let channels = samples
        .first()
        .map(|s| s.feature.channels())
        .ok_or_else(|| CliError::usage("the dataset has no annotated objects"))?;
    log::info!(
        "{} samples, {} classes, data ready in {:.1?}",
        samples.len(),
        means.len(),
        started.elapsed()
    );

    let cfg = TrainConfig {
        dims: ModelDims {
            channels,
            embed: a.embed,
            hidden: a.hidden,
            rot_hidden: a.rot_hidden,
            stages: a.stages,
        },
        stage1_steps: a.stage1_steps,
        stage2_steps: a.stage2_steps,
        lr: a.lr,
        momentum: a.momentum,
        weights,
        n_samples: a.loss_samples,
        batch_size: a.batch,
        seed,
        rot_range_deg: a.rot_range,
        sigma_frac: a.sigma,
    };
    cfg.validate()?;

    let mut rows: Vec<TrainLogRow> = Vec::with_capacity(a.stage1_steps + a.stage2_steps);
    let model = refine::train(&samples, &means, &cfg, &mut |r| {
        if r.step % 100 == 0 {
            log::info!("step {} stage {} loss {:.6}", r.step, r.stage.number(), r.loss.total);
        }
        rows.push(*r);
    })?;
    log::info!("trained in {:.1?}", started.elapsed());

    let ck = Checkpoint {
        model,
        mean_shapes: means,
        seed,
        steps: [a.stage1_steps, a.stage2_steps],
    };
    write_atomic(&a.out, &ck.to_bytes())?;
    if let Some(path) = &a.log {
        let mut csv = String::from(TrainLogRow::CSV_HEADER);
        csv.push('\n');
        for r in &rows {
            csv.push_str(&r.to_csv());
            csv.push('\n');
        }
        write_atomic(path, csv.as_bytes())?;
    }

    let mut t = Table::new(&["stage", "steps", "first total", "last L_cham", "last L_norm", "last L_edge", "last total"]);
    for stage in [TrainStage::MeanShape, TrainStage::Temporal] {
        let of_stage: Vec<&TrainLogRow> = rows.iter().filter(|r| r.stage == stage).collect();
        let Some(first) = of_stage.first() else {
            continue;
        };
        let tail = &of_stage[of_stage.len().saturating_sub(SUMMARY_WINDOW)..];
        let mut mean = LossBreakdown::default();
        for r in tail {
            mean += r.loss;
        }
        let n = tail.len() as f64;
        t.row(vec![
            stage.number().to_string(),
            of_stage.len().to_string(),
            format!("{:.6}", first.loss.total),
            format!("{:.6}", mean.chamfer / n),
            format!("{:.6}", mean.normal / n),
            format!("{:.6}", mean.edge / n),
            format!("{:.6}", mean.total / n),
        ]);
    }
    print!("{}", t.render());
    println!("(last = mean of the final {SUMMARY_WINDOW} steps of each stage, or all of them if fewer)");
    Ok(())
}
