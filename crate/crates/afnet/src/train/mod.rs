//! Training: the loss family (cross entropy, entropy, top-k entropy,
//! confidence weight, weighted cross entropy), the single-stage trainer
//! with early stopping, per-instance weight computation, and the
//! two-stage pipeline that chains them.

mod loss;
mod pipeline;
mod stage;
mod weights;

pub use loss::{
    ce_loss, ce_loss_label, confidence_weight, cw_loss, entropy_full, one_hot, topk_entropy,
    topk_indices, PROB_FLOOR,
};
pub use pipeline::{
    two_stage_train, ProgressFn, TwoStageOutcome, STAGE1_CHECKPOINT, STAGE1_HISTORY,
    STAGE2_CHECKPOINT, STAGE2_HISTORY, WEIGHTS_FILE,
};
pub use stage::{batch_backward, class_labels, train_stage, StageResult, GRAD_CHUNK};
pub use weights::{compute_instance_weights, read_weight_table, write_weight_table, WeightTable};

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Optimization hyperparameters and seeds for one or both stages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epoch cap for the second stage; `None` reuses `max_epochs`.
    /// Confidence weights shrink the average gradient scale, so the
    /// second stage converges in more epochs than the first and can
    /// need a larger allowance under a fixed runtime budget.
    pub stage2_max_epochs: Option<usize>,
    /// Early stopping: abort after this many epochs without a new best
    /// validation loss.
    pub patience: usize,
    /// Fraction of the training split carved off (stratified) as the
    /// early-stop monitor set. 0 monitors on the training set itself
    /// (useful for overfit smoke tests only).
    pub val_fraction: f64,
    /// k of the top-k entropy behind the confidence weights.
    pub topk: usize,
    pub init_seed: u64,
    pub shuffle_seed: u64,
    /// Second stage restarts from a fresh initialization (this seed).
    /// Set `stage2_reinit` false to fine-tune the first-stage weights
    /// instead.
    pub stage2_init_seed: u64,
    pub stage2_reinit: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            batch_size: 512,
            max_epochs: 100,
            stage2_max_epochs: None,
            patience: 15,
            val_fraction: 0.1,
            topk: 3,
            init_seed: 1,
            shuffle_seed: 2,
            stage2_init_seed: 3,
            stage2_reinit: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be >= 1"));
        }
        if self.patience == 0 {
            return Err(Error::invalid("patience must be >= 1"));
        }
        if self.max_epochs == 0 {
            return Err(Error::invalid("max_epochs must be >= 1"));
        }
        if self.stage2_max_epochs == Some(0) {
            return Err(Error::invalid("stage2_max_epochs must be >= 1 when set"));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::invalid(format!(
                "val_fraction must be in [0, 1), got {}",
                self.val_fraction
            )));
        }
        if self.topk < 2 {
            return Err(Error::invalid(format!(
                "top-k needs k >= 2, got {}",
                self.topk
            )));
        }
        Ok(())
    }
}

/// One epoch of the training record.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

/// Per-epoch curves plus the index of the epoch whose parameters were
/// kept (minimum validation loss).
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
}

impl TrainHistory {
    /// CSV layout: `epoch,train_loss,val_loss,val_acc`, one row per epoch.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,val_acc\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{:.9},{:.9},{:.9}\n",
                e.epoch, e.train_loss, e.val_loss, e.val_acc
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv())
            .map_err(|e| Error::io(format!("writing history {}", path.display()), e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading history {}", path.display()), e))?;
        let ctx = || format!("history {}", path.display());
        let mut lines = text.lines();
        match lines.next() {
            Some("epoch,train_loss,val_loss,val_acc") => {}
            other => {
                return Err(Error::parse(
                    ctx(),
                    format!("bad header line {:?}", other.unwrap_or("")),
                ))
            }
        }
        let mut epochs = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 4 {
                return Err(Error::parse(
                    ctx(),
                    format!(
                        "line {}: expected 4 fields, got {}",
                        lineno + 2,
                        fields.len()
                    ),
                ));
            }
            let num = |s: &str| -> Result<f64> {
                s.parse()
                    .map_err(|_| Error::parse(ctx(), format!("bad number {s:?}")))
            };
            epochs.push(EpochStats {
                epoch: fields[0]
                    .parse()
                    .map_err(|_| Error::parse(ctx(), format!("bad epoch {:?}", fields[0])))?,
                train_loss: num(fields[1])?,
                val_loss: num(fields[2])?,
                val_acc: num(fields[3])?,
            });
        }
        let best_epoch = epochs
            .iter()
            .min_by(|a, b| a.val_loss.total_cmp(&b.val_loss))
            .map(|e| e.epoch)
            .unwrap_or(0);
        Ok(TrainHistory { epochs, best_epoch })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        TrainConfig::default().validate().unwrap();
        let bad = TrainConfig {
            topk: 1,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            val_fraction: 1.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            patience: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn history_csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("history.csv");
        let h = TrainHistory {
            epochs: vec![
                EpochStats {
                    epoch: 1,
                    train_loss: 2.5,
                    val_loss: 2.25,
                    val_acc: 0.125,
                },
                EpochStats {
                    epoch: 2,
                    train_loss: 1.75,
                    val_loss: 1.5,
                    val_acc: 0.5,
                },
            ],
            best_epoch: 2,
        };
        h.write_csv(&path).unwrap();
        let h2 = TrainHistory::read_csv(&path).unwrap();
        assert_eq!(h, h2);
    }
}
