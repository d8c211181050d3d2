//! Training orchestration: split, train, evaluate held-out IoU, save.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::Config;
use super::dataset::{split_sequences, PairSampler};
use crate::dtrd::{mean_iou, train::train_with_progress, DtrdModel, TrainingPair};
use crate::error::{Error, Result};
use crate::sim::record::Sequence;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub train_sequences: Vec<usize>,
    pub eval_sequences: Vec<usize>,
    pub epoch_losses: Vec<f64>,
    pub eval_iou_before: f64,
    pub eval_iou_after: f64,
}

/// Held-out pairs drawn with a fixed seed so every evaluation sees the
/// same crops.
pub fn eval_pairs(sequences: &[Sequence], eval: &[usize], cfg: &Config) -> Result<Vec<TrainingPair>> {
    let sampler = PairSampler::new(eval.iter().map(|&i| &sequences[i]).collect(), cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    rng.set_stream(0xE7);
    sampler.sample_n(cfg.data.eval_pairs, &mut rng)
}

/// Splits `sequences`, trains a fresh model on the training part and
/// measures mean IoU on the held-out part before and after.
pub fn train_model(
    cfg: &Config,
    sequences: &[Sequence],
    progress: &mut dyn FnMut(usize, f64),
) -> Result<(DtrdModel, TrainOutcome)> {
    if sequences.is_empty() {
        return Err(Error::Config("training needs at least one recorded sequence".into()));
    }
    let (train_idx, eval_idx) = split_sequences(sequences.len(), cfg.data.train_fraction, cfg.experiment.seed);
    let held_out = if eval_idx.is_empty() { &train_idx } else { &eval_idx };
    let eval = eval_pairs(sequences, held_out, cfg)?;
    let mut model = DtrdModel::new(cfg.tracker.clone())?;
    let eval_iou_before = mean_iou(&model, &eval)?;
    let sampler = PairSampler::new(train_idx.iter().map(|&i| &sequences[i]).collect(), cfg)?;
    let epoch_losses = train_with_progress(&mut model, &sampler, &cfg.train, progress)?;
    let eval_iou_after = mean_iou(&model, &eval)?;
    Ok((
        model,
        TrainOutcome {
            train_sequences: train_idx,
            eval_sequences: eval_idx,
            epoch_losses,
            eval_iou_before,
            eval_iou_after,
        },
    ))
}

/// `epoch,mean_loss` lines, epochs counted from 1.
pub fn write_loss_csv(path: &Path, losses: &[f64]) -> Result<()> {
    let mut s = String::from("epoch,mean_loss\n");
    for (i, l) in losses.iter().enumerate() {
        writeln!(s, "{},{l:.9}", i + 1).unwrap();
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn write_metrics_csv(path: &Path, o: &TrainOutcome) -> Result<()> {
    let s = format!(
        "metric,value\ntrain_sequences,{}\neval_sequences,{}\neval_iou_before,{:.6}\neval_iou_after,{:.6}\n",
        o.train_sequences.len(),
        o.eval_sequences.len(),
        o.eval_iou_before,
        o.eval_iou_after
    );
    fs::write(path, s).map_err(|e| Error::io(path, e))
}
