use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Validation loss and accuracy after one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValSummary {
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    EarlyStopping,
    MaxEpochs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stop_reason: StopReason,
}

impl TrainHistory {
    pub fn save_json(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        super::metrics::write_json(path, self)
    }
}

/// Something that can be trained one epoch at a time.
pub trait EpochModel {
    type Snapshot;

    /// Runs one pass over the training data and returns its mean loss.
    fn train_epoch(&mut self, epoch: usize) -> Result<f64>;
    fn validate(&mut self) -> Result<ValSummary>;
    fn snapshot(&self) -> Self::Snapshot;
}

/// Epoch loop with early stopping on validation loss.
///
/// An epoch improves only if its loss is strictly below the best so far, so
/// ties keep the earlier epoch. Training stops after epoch `e` once
/// `e − best_epoch > patience`; with patience 1 and losses rising after
/// epoch 1, that is after epoch 3.
pub fn fit<M: EpochModel>(
    model: &mut M,
    max_epochs: usize,
    patience: usize,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(M::Snapshot, TrainHistory)> {
    if max_epochs == 0 {
        return Err(Error::invalid("max_epochs must be positive"));
    }
    let mut epochs = Vec::new();
    let mut best: Option<(usize, f64, M::Snapshot)> = None;
    let mut stop_reason = StopReason::MaxEpochs;
    for epoch in 1..=max_epochs {
        let train_loss = model.train_epoch(epoch)?;
        let val = model.validate()?;
        if !val.loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "validation loss after epoch {epoch}"
            )));
        }
        let record = EpochRecord {
            epoch,
            train_loss,
            val_loss: val.loss,
            val_accuracy: val.accuracy,
        };
        on_epoch(&record);
        epochs.push(record);
        if best.as_ref().is_none_or(|(_, l, _)| val.loss < *l) {
            best = Some((epoch, val.loss, model.snapshot()));
        }
        let best_epoch = best.as_ref().map_or(epoch, |b| b.0);
        if epoch - best_epoch > patience {
            stop_reason = StopReason::EarlyStopping;
            break;
        }
    }
    let (best_epoch, best_val_loss, snapshot) = best.expect("at least one epoch ran");
    Ok((
        snapshot,
        TrainHistory {
            epochs,
            best_epoch,
            best_val_loss,
            stop_reason,
        },
    ))
}
