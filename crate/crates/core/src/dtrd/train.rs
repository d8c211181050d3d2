//! Supervised training on (template, search) pairs.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::crop::{sample_window, search_window, template_crop};
use super::loss::{box_loss, LossWeights};
use super::config::TrackerConfig;
use super::model::{DtrdModel, GROUP_BACKBONE, GROUP_MODEL};
use crate::error::{Error, Result};
use crate::frame::{fuse_rgbd, Raster4, RgbdFrame};
use crate::geometry::{iou, BoundingBox};
use crate::tensor::{AdamW, AdamWConfig, Tape};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr_model: f64,
    pub lr_backbone: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub adamw: AdamWConfig,
    pub loss: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            lr_model: 1e-4,
            lr_backbone: 1e-5,
            batch_size: 2,
            seed: 0,
            adamw: AdamWConfig::default(),
            loss: LossWeights::default(),
        }
    }
}

/// One supervised example: fused template crop, fused search crop and the
/// target box in search-crop coordinates.
#[derive(Debug, Clone)]
pub struct TrainingPair {
    pub template: Raster4,
    pub search: Raster4,
    pub target: BoundingBox,
}

impl TrainingPair {
    /// Crops a pair the way the tracker would see it: the template from
    /// `z_box` on `z_frame`, the search window around `prev_box` on
    /// `x_frame`, with `x_box` as the label.
    pub fn from_frames(
        cfg: &TrackerConfig,
        z_frame: &RgbdFrame,
        z_box: &BoundingBox,
        x_frame: &RgbdFrame,
        x_box: &BoundingBox,
        prev_box: &BoundingBox,
    ) -> Result<Self> {
        let template = template_crop(&fuse_rgbd(z_frame), z_box, cfg.template_size)?;
        let window = search_window(prev_box, x_frame.width(), x_frame.height(), cfg.search_area_factor);
        let search = sample_window(&fuse_rgbd(x_frame), &window, cfg.search_size);
        let target = window
            .to_crop(x_box)?
            .clip_unit()
            .ok_or_else(|| Error::contract("target box lies outside the search window"))?;
        Ok(TrainingPair {
            template,
            search,
            target,
        })
    }
}

/// Supplies the training pairs of each epoch.
pub trait PairSource {
    fn epoch_pairs(&self, epoch: usize, rng: &mut ChaCha8Rng) -> Result<Vec<TrainingPair>>;
}

/// A fixed pair list, reshuffled every epoch.
impl PairSource for Vec<TrainingPair> {
    fn epoch_pairs(&self, _epoch: usize, rng: &mut ChaCha8Rng) -> Result<Vec<TrainingPair>> {
        let mut pairs = self.clone();
        pairs.shuffle(rng);
        Ok(pairs)
    }
}

/// Runs one optimizer step on `batch`; returns the batch mean loss.
pub fn train_step(model: &mut DtrdModel, opt: &mut AdamW, batch: &[TrainingPair], weights: LossWeights) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::contract("empty training batch"));
    }
    model.params_mut().zero_grad();
    let mut total = 0.0;
    for pair in batch {
        let grads;
        let bound;
        {
            let mut tape = Tape::new();
            let b = model.bind(&mut tape);
            let pred = model.forward(&mut tape, &b, &pair.template, &pair.search)?;
            let loss = box_loss(&mut tape, pred, &pair.target, weights)?;
            total += tape.value(loss)[0];
            grads = tape.backward(loss)?;
            bound = b;
        }
        model.params_mut().accumulate(&grads, &bound)?;
    }
    model.params_mut().scale_grads(1.0 / batch.len() as f64);
    opt.step(model.params_mut())?;
    Ok(total / batch.len() as f64)
}

/// Trains `model` in place and returns the mean loss of every epoch.
pub fn train(model: &mut DtrdModel, source: &dyn PairSource, config: &TrainConfig) -> Result<Vec<f64>> {
    train_with_progress(model, source, config, &mut |_, _| {})
}

/// [`train`] with a callback receiving `(epoch, mean_loss)` after each epoch.
pub fn train_with_progress(
    model: &mut DtrdModel,
    source: &dyn PairSource,
    config: &TrainConfig,
    progress: &mut dyn FnMut(usize, f64),
) -> Result<Vec<f64>> {
    if config.batch_size == 0 || config.epochs == 0 {
        return Err(Error::Config("epochs and batch_size must be positive".into()));
    }
    let mut lrs = vec![0.0; 2];
    lrs[GROUP_MODEL] = config.lr_model;
    lrs[GROUP_BACKBONE] = config.lr_backbone;
    let mut opt = AdamW::new(config.adamw, lrs, model.params())?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let pairs = source.epoch_pairs(epoch, &mut rng)?;
        if pairs.is_empty() {
            return Err(Error::contract("training dataset is empty"));
        }
        let mut sum = 0.0;
        for batch in pairs.chunks(config.batch_size) {
            sum += train_step(model, &mut opt, batch, config.loss)? * batch.len() as f64;
        }
        let mean = sum / pairs.len() as f64;
        progress(epoch, mean);
        history.push(mean);
    }
    Ok(history)
}

/// Mean IoU between predictions and labels over `pairs`.
pub fn mean_iou(model: &DtrdModel, pairs: &[TrainingPair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::contract("no evaluation pairs"));
    }
    let mut sum = 0.0;
    for p in pairs {
        sum += iou(&model.predict(&p.template, &p.search)?, &p.target);
    }
    Ok(sum / pairs.len() as f64)
}

/// Loss of the current model on a single pair, without recording gradients.
pub fn pair_loss(model: &DtrdModel, pair: &TrainingPair, weights: LossWeights) -> Result<f64> {
    let pred = model.predict(&pair.template, &pair.search)?;
    Ok(super::loss::box_loss_value(&pred, &pair.target, weights))
}
