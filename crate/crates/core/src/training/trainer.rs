use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    adamw_step, fit, AdamState, EpochModel, EpochRecord, Metrics, TrainConfig, TrainHistory,
    ValSummary,
};
use crate::model::{model_forward, normalize_images, ModelConfig};
use crate::preprocess::{augment, images_to_tensor, oversample, Dataset, RasterImage};
use crate::tensor::{Mode, Scalar, Tape, Tensor};
use crate::{Error, Params, Result};

/// `−ln(max(probs[label], 1e-12))` for one probability vector.
pub fn cross_entropy<T: Scalar>(probs: &Tensor<T>, label: usize) -> Result<T> {
    if probs.rank() != 1 {
        return Err(Error::invalid(format!(
            "expected a [K] probability vector, got {:?}",
            probs.shape()
        )));
    }
    Ok(Tape::new().cross_entropy(&probs.detach(), &[label])?.item())
}

/// Scales a batch to `[0, 1]` and applies the model's input normalization.
pub fn batch_tensor(config: &ModelConfig, images: &[&RasterImage]) -> Result<Tensor<f32>> {
    normalize_images(&images_to_tensor::<f32>(images)?, config.input_norm)
}

/// Class probabilities for every image, in order, computed in eval mode.
pub fn predict(
    config: &ModelConfig,
    params: &Params<f32>,
    images: &[RasterImage],
    batch_size: usize,
) -> Result<Vec<Vec<f32>>> {
    if batch_size == 0 {
        return Err(Error::invalid("batch_size must be positive"));
    }
    let k = config.num_classes;
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(batch_size) {
        let refs: Vec<&RasterImage> = chunk.iter().collect();
        let x = batch_tensor(config, &refs)?;
        let probs = model_forward(&Tape::new(), &x, config, params, &mut Mode::Eval)?;
        out.extend(probs.data().chunks_exact(k).map(<[f32]>::to_vec));
    }
    Ok(out)
}

pub fn argmax(row: &[f32]) -> usize {
    // first maximum wins
    row.iter()
        .enumerate()
        .fold((0, f32::NEG_INFINITY), |(bi, bv), (i, &v)| {
            if v > bv {
                (i, v)
            } else {
                (bi, bv)
            }
        })
        .0
}

/// Metrics plus mean cross-entropy over a split.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub metrics: Metrics,
    pub loss: f64,
}

pub fn evaluate_with_loss(
    config: &ModelConfig,
    params: &Params<f32>,
    data: &Dataset,
    batch_size: usize,
) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::invalid("cannot evaluate an empty split"));
    }
    let probs = predict(config, params, &data.images, batch_size)?;
    let mut loss = 0.0;
    let mut preds = Vec::with_capacity(probs.len());
    for (row, &label) in probs.iter().zip(&data.labels) {
        let p = row
            .get(label)
            .copied()
            .ok_or_else(|| Error::invalid(format!("label {label} out of range")))?;
        loss -= f64::from(p).max(1e-12).ln();
        preds.push(argmax(row));
    }
    Ok(Evaluation {
        metrics: Metrics::from_predictions(&data.labels, &preds, config.num_classes)?,
        loss: loss / data.len() as f64,
    })
}

/// Argmax predictions scored against the split's grades.
pub fn evaluate(config: &ModelConfig, params: &Params<f32>, data: &Dataset) -> Result<Metrics> {
    Ok(evaluate_with_loss(config, params, data, 64)?.metrics)
}

/// Mini-batch AdamW over a prepared training split.
pub struct SwinTrainer<'a> {
    model: &'a ModelConfig,
    cfg: &'a TrainConfig,
    train: &'a Dataset,
    val: &'a Dataset,
    params: Params<f32>,
    state: AdamState<f32>,
    plan: Vec<(usize, bool)>,
    rng: ChaCha8Rng,
    mode: Mode,
}

impl<'a> SwinTrainer<'a> {
    pub fn new(
        model: &'a ModelConfig,
        params: Params<f32>,
        train: &'a Dataset,
        val: &'a Dataset,
        cfg: &'a TrainConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        model.validate()?;
        if train.is_empty() || val.is_empty() {
            return Err(Error::invalid(
                "training needs non-empty train and val splits",
            ));
        }
        crate::model::check_schema(model, &params)?;
        let plan = if cfg.oversample {
            oversample(&train.labels, cfg.seed)
        } else {
            (0..train.len()).map(|i| (i, false)).collect()
        };
        Ok(SwinTrainer {
            model,
            cfg,
            train,
            val,
            state: AdamState::new(&params),
            params,
            plan,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            mode: Mode::Train(ChaCha8Rng::seed_from_u64(
                cfg.seed.wrapping_add(0x9E37_79B9_7F4A_7C15),
            )),
        })
    }

    pub fn params(&self) -> &Params<f32> {
        &self.params
    }

    /// Samples drawn per epoch, after oversampling.
    pub fn epoch_size(&self) -> usize {
        self.plan.len()
    }

    fn step(&mut self, epoch: usize, batch: usize, members: &[(usize, bool)]) -> Result<f64> {
        let mut images = Vec::with_capacity(members.len());
        for &(i, _) in members {
            let img = &self.train.images[i];
            images.push(if self.cfg.augment {
                augment(img, &mut self.rng, &self.cfg.augment_policy)?
            } else {
                img.clone()
            });
        }
        let labels: Vec<usize> = members.iter().map(|&(i, _)| self.train.labels[i]).collect();
        let refs: Vec<&RasterImage> = images.iter().collect();
        let x = batch_tensor(self.model, &refs)?;
        let tape = Tape::new();
        let tracked = self.params.track(&tape);
        let probs = model_forward(&tape, &x, self.model, &tracked, &mut self.mode)?;
        let loss = tape.cross_entropy(&probs, &labels)?;
        let value = f64::from(loss.item());
        if !value.is_finite() {
            return Err(Error::NonFinite(format!(
                "training loss at epoch {epoch}, batch index {batch}"
            )));
        }
        let grads = tape.backward(&loss)?;
        let g = tracked.map_tensors(|_, t| {
            grads
                .wrt(t)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(t.shape().to_vec()))
        });
        adamw_step(&mut self.params, &g, &mut self.state, &self.cfg.optimizer())?;
        if !self.params.all_finite() {
            return Err(Error::NonFinite(format!(
                "parameters after epoch {epoch}, batch index {batch}"
            )));
        }
        Ok(value)
    }
}

impl EpochModel for SwinTrainer<'_> {
    type Snapshot = Params<f32>;

    fn train_epoch(&mut self, epoch: usize) -> Result<f64> {
        let mut order = self.plan.clone();
        order.shuffle(&mut self.rng);
        let mut total = 0.0;
        for (b, members) in order.chunks(self.cfg.batch_size).enumerate() {
            total += self.step(epoch, b, members)? * members.len() as f64;
        }
        Ok(total / order.len() as f64)
    }

    fn validate(&mut self) -> Result<ValSummary> {
        let e = evaluate_with_loss(self.model, &self.params, self.val, self.cfg.eval_batch_size)?;
        Ok(ValSummary {
            loss: e.loss,
            accuracy: e.metrics.accuracy,
        })
    }

    fn snapshot(&self) -> Params<f32> {
        self.params.clone()
    }
}

/// Best-validation-loss parameters and the per-epoch history.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: Params<f32>,
    pub history: TrainHistory,
}

pub fn train(
    model: &ModelConfig,
    params: Params<f32>,
    train_set: &Dataset,
    val_set: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train_with_progress(model, params, train_set, val_set, cfg, |_| {})
}

pub fn train_with_progress(
    model: &ModelConfig,
    params: Params<f32>,
    train_set: &Dataset,
    val_set: &Dataset,
    cfg: &TrainConfig,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    let mut trainer = SwinTrainer::new(model, params, train_set, val_set, cfg)?;
    let (params, history) = fit(
        &mut trainer,
        cfg.max_epochs,
        cfg.early_stop_patience,
        on_epoch,
    )?;
    Ok(TrainOutcome { params, history })
}
