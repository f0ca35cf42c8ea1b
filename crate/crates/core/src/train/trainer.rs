//! The L1/ADAM training loop.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::data::{PairedSample, PatchSampler};
use crate::error::{FmsrError, Result};
use crate::model::Model;
use crate::nn::l1_loss;
use crate::param::Module;
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::train::checkpoint;
use crate::train::optim::{adam_step, lr_schedule, param_grads, Adam, OptimState, TrainConfig};

pub const LOSS_CSV: &str = "loss.csv";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
}

pub fn epoch_checkpoint(epoch: usize) -> String {
    format!("epoch_{epoch:04}.ckpt")
}

/// Seed of the patch sampler used at `step`, so a resumed run draws the
/// same batches as an uninterrupted one.
pub fn step_seed(seed: u64, step: usize) -> u64 {
    seed ^ (step as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// One forward/backward/update on a batch. Returns the loss before the
/// update; a non-finite loss aborts without touching the weights.
pub fn train_step<T: Scalar>(
    model: &mut Model<T>,
    state: &mut OptimState<T>,
    lr_batch: &Tensor<T>,
    hr_batch: &Tensor<T>,
    lr: f64,
    adam: &Adam,
) -> Result<f64> {
    let tape = Tape::new(model.num_params());
    let pred = model.forward(&tape, &Var::constant(lr_batch.clone()))?;
    let loss = l1_loss(&tape, &pred, &Var::constant(hr_batch.clone()))?;
    let value = loss.value().data()[0].to_f64().unwrap_or(f64::NAN);
    if !value.is_finite() {
        return Err(FmsrError::NonFinite {
            name: "loss".into(),
            step: Some(state.t as usize),
        });
    }
    let grads = param_grads(model, tape.backward(&loss)?);
    adam_step(model, &grads, state, lr, adam)?;
    Ok(value)
}

/// Trains until `cfg.total_steps()` optimizer steps have been taken,
/// continuing from `state.t`. With an output directory, appends to
/// `loss.csv`, writes `epoch_NNNN.ckpt` every `checkpoint_every` epochs and
/// `final.ckpt` at the end. Returns the records of the steps taken here.
pub fn train_loop<T: Scalar>(
    model: &mut Model<T>,
    state: &mut OptimState<T>,
    pairs: &[PairedSample<T>],
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<Vec<LossRecord>> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(FmsrError::Argument("training needs at least one pair".into()));
    }
    if let Some(bad) = pairs.iter().find(|p| p.scale() != model.scale()) {
        return Err(FmsrError::Argument(format!(
            "pair {} has scale {}, model expects {}",
            bad.source,
            bad.scale(),
            model.scale()
        )));
    }
    let mut csv = match out_dir {
        Some(dir) => Some(open_log(dir, state.t == 0)?),
        None => None,
    };
    let adam = cfg.adam();
    let mut history = Vec::new();
    let total = cfg.total_steps();
    while (state.t as usize) < total {
        let step = state.t as usize;
        let epoch = step / cfg.steps_per_epoch;
        let lr = lr_schedule(epoch, cfg);
        let mut sampler = PatchSampler::new(cfg.patch, cfg.batch, step_seed(cfg.seed, step));
        sampler.augment = cfg.augment;
        let (lr_batch, hr_batch) = sampler.sample(pairs)?;
        let loss = train_step(model, state, &lr_batch, &hr_batch, lr, &adam)?;
        let rec = LossRecord { step, epoch, lr, loss };
        log::debug!("step {step} epoch {epoch} lr {lr:e} loss {loss:.6}");
        if let Some((path, f)) = csv.as_mut() {
            writeln!(f, "{},{},{},{}", rec.step, rec.epoch, rec.lr, rec.loss).map_err(|e| FmsrError::io(&*path, e))?;
        }
        history.push(rec);
        let finished_epoch = (step + 1) % cfg.steps_per_epoch == 0;
        if let (Some(dir), true) = (out_dir, finished_epoch && cfg.checkpoint_every > 0) {
            if (epoch + 1) % cfg.checkpoint_every == 0 {
                checkpoint::save(dir.join(epoch_checkpoint(epoch + 1)), model, cfg, Some(state))?;
            }
        }
    }
    if let Some(dir) = out_dir {
        checkpoint::save(dir.join(FINAL_CHECKPOINT), model, cfg, Some(state))?;
    }
    Ok(history)
}

fn open_log(dir: &Path, fresh: bool) -> Result<(PathBuf, File)> {
    std::fs::create_dir_all(dir).map_err(|e| FmsrError::io(dir, e))?;
    let path = dir.join(LOSS_CSV);
    let exists = path.exists();
    let mut f = OpenOptions::new()
        .create(true)
        .write(true)
        .append(!fresh)
        .truncate(fresh)
        .open(&path)
        .map_err(|e| FmsrError::io(&path, e))?;
    if fresh || !exists {
        writeln!(f, "step,epoch,lr,loss").map_err(|e| FmsrError::io(&path, e))?;
    }
    Ok((path, f))
}

/// Reads a loss CSV written by [`train_loop`].
pub fn read_loss_csv(path: impl AsRef<Path>) -> Result<Vec<LossRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| FmsrError::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some("step,epoch,lr,loss") {
        return Err(FmsrError::Argument(format!("{}: not a loss log", path.display())));
    }
    lines
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            let parse_err = || FmsrError::Argument(format!("{}: bad row {line:?}", path.display()));
            if f.len() != 4 {
                return Err(parse_err());
            }
            Ok(LossRecord {
                step: f[0].parse().map_err(|_| parse_err())?,
                epoch: f[1].parse().map_err(|_| parse_err())?,
                lr: f[2].parse().map_err(|_| parse_err())?,
                loss: f[3].parse().map_err(|_| parse_err())?,
            })
        })
        .collect()
}
