//! Training loops: gaze-supervised teacher pre-training and student
//! training, both with seeded batching, an exponentially decayed learning
//! rate, early stopping on validation loss, and JSON-lines epoch logs.

use std::io::Write;

use anyhow::{bail, Context, Result};

use crate::data::Dataset;
use crate::losses::{cross_entropy, giou_loss_graph, keypoint_mse_graph, val_loss_graph};
use crate::optim::{Adam, LrSchedule};
use crate::param::Fwd;
use crate::rng::Rng;
use crate::system::{Batch, StudentTeacher};

#[derive(Clone, Copy, Debug)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub schedule: LrSchedule,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug)]
pub struct TrainSummary {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub final_train_loss: f64,
}

/// Which loop to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Teacher,
    Student,
}

fn aug_seed(seed: u64, epoch: u64, batch_idx: u64) -> u64 {
    Rng::new(seed).split(epoch).split(batch_idx).next_u64()
}

/// Mean validation loss in eval mode (no augmentation, no state updates).
pub fn validation_loss(
    system: &mut StudentTeacher<f32>,
    stage: Stage,
    val: &Dataset,
    batch_size: usize,
) -> Result<f64> {
    if val.is_empty() {
        bail!("validation set is empty");
    }
    let indices: Vec<usize> = (0..val.len()).collect();
    let mut total = 0.0;
    let mut count = 0usize;
    for chunk in indices.chunks(batch_size.max(1)) {
        let batch = val.gather_batch(chunk);
        let loss = eval_batch_loss(system, stage, &batch)?;
        total += loss * chunk.len() as f64;
        count += chunk.len();
    }
    Ok(total / count as f64)
}

fn eval_batch_loss(system: &mut StudentTeacher<f32>, stage: Stage, batch: &Batch<f32>) -> Result<f64> {
    let fwd = Fwd::eval();
    let images = batch.raw_tensor();
    match stage {
        Stage::Teacher => {
            let target = batch
                .region_tensor()
                .context("teacher validation batch is missing gaze attention regions")?;
            let out = system.teacher_pass(&fwd, &images, &images)?;
            let ce = cross_entropy(&out.logits, &batch.labels)?;
            let giou = giou_loss_graph(&out.region, &target)?;
            let mse = keypoint_mse_graph(&out.region, &target)?;
            let (w1, w2) = system.cfg.hvat_weights;
            Ok((ce.item() + w1 as f32 * giou.item() + w2 as f32 * mse.item()) as f64)
        }
        Stage::Student => {
            let t_out = system.teacher_pass(&fwd, &images, &images)?;
            let (logits, region) =
                system.student_pass(&fwd, &images, &images, &t_out.z_in, &t_out.z_out)?;
            let ce = cross_entropy(&logits, &batch.labels)?;
            let (l1, l2) = system.cfg.val_weights;
            let val = val_loss_graph(&region, &t_out.region, l1, l2)?;
            Ok((ce.item() + val.item()) as f64)
        }
    }
}

/// Run one full training loop with early stopping; the best-validation
/// system state is restored before returning. Writes one JSON line per
/// epoch to `log` when given.
pub fn train(
    system: &mut StudentTeacher<f32>,
    stage: Stage,
    train_set: &Dataset,
    val_set: &Dataset,
    opts: &TrainOptions,
    mut log: Option<&mut dyn Write>,
) -> Result<TrainSummary> {
    if train_set.is_empty() {
        bail!("training set is empty");
    }
    let mut adam = Adam::new();
    let mut global_step = 0u64;
    let mut best: Option<(usize, f64, StudentTeacher<f32>)> = None;
    let mut stale_epochs = 0usize;
    let mut epochs_run = 0usize;
    let mut final_train_loss = f64::NAN;

    for epoch in 0..opts.epochs {
        let mut epoch_loss = 0.0;
        let mut samples = 0usize;
        for (bi, batch) in train_set.batches(opts.seed, epoch as u64, opts.batch_size).iter().enumerate() {
            let lr = opts.schedule.lr_at(global_step);
            let seed = aug_seed(opts.seed, epoch as u64, bi as u64);
            let loss = match stage {
                Stage::Teacher => system.hvat_train_step(batch, &mut adam, lr, seed)?.total,
                Stage::Student => system.student_train_step(batch, &mut adam, lr, seed)?.total,
            };
            epoch_loss += loss * batch.len() as f64;
            samples += batch.len();
            global_step += 1;
        }
        let train_loss = epoch_loss / samples as f64;
        let val_loss = validation_loss(system, stage, val_set, opts.batch_size)?;
        epochs_run = epoch + 1;
        final_train_loss = train_loss;

        if let Some(log) = log.as_deref_mut() {
            let line = serde_json::json!({
                "epoch": epoch,
                "train_loss": train_loss,
                "val_loss": val_loss,
                "lr": opts.schedule.lr_at(global_step),
                "stage": match stage { Stage::Teacher => "teacher", Stage::Student => "student" },
            });
            writeln!(log, "{line}").context("writing training log")?;
        }

        let improved = best.as_ref().is_none_or(|(_, b, _)| val_loss < *b);
        if improved {
            best = Some((epoch, val_loss, system.clone()));
            stale_epochs = 0;
        } else {
            stale_epochs += 1;
            if stale_epochs >= opts.patience {
                break;
            }
        }
    }

    let (best_epoch, best_val_loss, best_state) =
        best.expect("at least one epoch ran");
    *system = best_state;
    Ok(TrainSummary { epochs_run, best_epoch, best_val_loss, final_train_loss })
}
