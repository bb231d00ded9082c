//! Minimal deterministic CPU network engine and the two classifier streams.
//!
//! Class index 0 is "valid", index 1 is "invalid" everywhere in this module.

mod adam;
mod checkpoint;
mod cloud;
mod depth;
pub mod gradcheck;
mod layers;
mod tensor;
mod train;

pub use adam::{adam_step, AdamConfig};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, StreamArch};
pub use cloud::{CloudArch, CloudNet};
pub use depth::{DepthArch, DepthNet};
pub use layers::{
    he_normal, softmax, softmax_cross_entropy, Conv3x3, Ctx, Dense, Dropout, Layer, MaxPool2, Param, Relu,
    Sequential,
};
pub use tensor::{Scalar, Tensor};
pub use train::{
    augment_pair, learning_rate, predict_cloud, predict_depth, train_cloud, train_depth, CloudSample, DepthSample, EpochStats, History,
    TrainConfig,
};

use serde::{Deserialize, Serialize};

use crate::geometry::Label;

pub const VALID: usize = 0;
pub const INVALID: usize = 1;

/// Two-class probability vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prob2 {
    pub p_valid: f64,
    pub p_invalid: f64,
}

impl Prob2 {
    pub fn new(p_valid: f64) -> Self {
        Self {
            p_valid,
            p_invalid: 1.0 - p_valid,
        }
    }

    pub fn from_row<T: Scalar>(row: &[T]) -> Self {
        let p_valid = row[VALID].to_f64().unwrap_or(0.0);
        let p_invalid = row[INVALID].to_f64().unwrap_or(0.0);
        let total = p_valid + p_invalid;
        Self {
            p_valid: p_valid / total,
            p_invalid: p_invalid / total,
        }
    }

    /// Valid iff `p_valid > 0.5`; an exact tie is invalid.
    pub fn label(&self) -> Label {
        if self.p_valid > 0.5 {
            Label::Valid
        } else {
            Label::Invalid
        }
    }
}

/// Score-average fusion of the two streams.
pub fn fuse(a: Prob2, b: Prob2) -> (Prob2, Label) {
    let fused = Prob2 {
        p_valid: (a.p_valid + b.p_valid) / 2.0,
        p_invalid: (a.p_invalid + b.p_invalid) / 2.0,
    };
    (fused, fused.label())
}
