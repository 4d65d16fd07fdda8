//! The classifier network: a (2,5) input convolution over the I/Q frame,
//! a stack of adaptive-fusion units with two max-pool stages, global
//! average pooling, and a dense softmax head.
//!
//! Each adaptive-fusion unit runs two grouped (1,3) branch convolutions,
//! one dilated to widen its receptive field to 5, and merges them with
//! channel-attention fusion twice: branch-vs-branch with lambda = 1, then
//! input-vs-fused with lambda = 2 (the residual-style combination).

mod checkpoint;
mod forward;
mod params;

pub use checkpoint::{
    checkpoint_bytes, checkpoint_hash, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC,
};
pub use forward::{
    backward_from_logits, forward, forward_cached, frame_to_input, fusion_backward, fusion_forward,
    fusion_forward_cached, lambda_softmax, lambda_softmax_backward, net_kink_margin, predict,
    unit_backward, unit_forward, unit_forward_cached, unit_kink_margin, FusionCache, NetCache,
    UnitCache,
};
pub use params::{FusionParams, NetParams, UnitParams};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// First-conv kernel height/width; fixed by the architecture.
pub const CONV1_KH: usize = 2;
pub const CONV1_KW: usize = 5;
/// Branch kernel width inside each unit.
pub const BRANCH_KW: usize = 3;
/// Width dilation of the large-scale branch (receptive field 5).
pub const LARGE_BRANCH_DILATION: usize = 2;

/// Structural hyperparameters. The defaults are the benchmark shape:
/// 48 channels, compression 16, nine units with pools after the third and
/// sixth, two groups, 11 classes, 128-sample frames.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub channels: usize,
    pub compression: usize,
    pub units: usize,
    /// 1-based unit indices after which a (1,2) max pool runs.
    pub pool_after: Vec<usize>,
    pub groups: usize,
    pub classes: usize,
    pub frame_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            channels: 48,
            compression: 16,
            units: 9,
            pool_after: vec![3, 6],
            groups: 2,
            classes: 11,
            frame_len: 128,
        }
    }
}

impl ModelConfig {
    /// Squeeze dimension d = C/r of the fusion modules.
    pub fn squeeze_dim(&self) -> usize {
        self.channels / self.compression
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.units == 0 || self.classes < 2 {
            return Err(Error::invalid(format!(
                "need channels >= 1, units >= 1, classes >= 2; got C={}, units={}, M={}",
                self.channels, self.units, self.classes
            )));
        }
        if self.compression == 0 || !self.channels.is_multiple_of(self.compression) {
            return Err(Error::invalid(format!(
                "compression r={} must divide channels C={}",
                self.compression, self.channels
            )));
        }
        if self.groups == 0 || !self.channels.is_multiple_of(self.groups) {
            return Err(Error::invalid(format!(
                "groups g={} must divide channels C={}",
                self.groups, self.channels
            )));
        }
        let mut prev = 0;
        for &p in &self.pool_after {
            if p <= prev || p > self.units {
                return Err(Error::invalid(format!(
                    "pool positions must be strictly increasing unit indices in 1..={}, got {:?}",
                    self.units, self.pool_after
                )));
            }
            prev = p;
        }
        let divisor = 1usize << self.pool_after.len();
        if self.frame_len == 0 || !self.frame_len.is_multiple_of(divisor) {
            return Err(Error::invalid(format!(
                "frame_len {} must be divisible by {divisor} for {} pooling stage(s)",
                self.frame_len,
                self.pool_after.len()
            )));
        }
        if self.frame_len < CONV1_KW {
            return Err(Error::invalid(format!(
                "frame_len {} shorter than the first conv kernel width {CONV1_KW}",
                self.frame_len
            )));
        }
        Ok(())
    }
}

/// Trainable value count of one fusion module: 3*C*d = 3*C^2/r.
pub fn count_fusion_params(channels: usize, compression: usize) -> Result<usize> {
    if compression == 0 || !channels.is_multiple_of(compression) {
        return Err(Error::invalid(format!(
            "compression r={compression} must divide channels C={channels}"
        )));
    }
    let d = channels / compression;
    Ok(3 * channels * d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        let cfg = ModelConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.squeeze_dim(), 3);
    }

    #[test]
    fn fusion_count_formula() {
        assert_eq!(count_fusion_params(48, 16).unwrap(), 432);
        assert_eq!(count_fusion_params(48, 8).unwrap(), 864);
        assert!(count_fusion_params(48, 5).is_err());
    }

    #[test]
    fn config_validation_catches_inconsistencies() {
        let mut cfg = ModelConfig {
            compression: 7,
            ..ModelConfig::default()
        };
        assert!(cfg.validate().is_err());

        cfg = ModelConfig::default();
        cfg.pool_after = vec![3, 3];
        assert!(cfg.validate().is_err());
        cfg.pool_after = vec![10];
        assert!(cfg.validate().is_err());

        cfg = ModelConfig::default();
        cfg.frame_len = 130; // not divisible by 4
        assert!(cfg.validate().is_err());
    }
}
