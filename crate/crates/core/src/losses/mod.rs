//! Training objective for trajectory refinement: corresponding-point
//! reconstruction, joint-angle reconstruction, direction-reversal smoothness
//! and mesh penetration, with masks and analytic gradients.

mod scene;
mod terms;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use scene::{FrameClouds, Scene};
pub use terms::{
    batch_loss, ja_loss, pc_loss, pene_loss, rec_loss, smooth_loss, smooth_loss_normalized, total_loss,
    trajectory_loss, FrameGrad, PoseGrad, TrajectoryLoss,
};

use crate::handmodel::HandModelError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("no valid frames to average over")]
    NoValidFrames,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid loss weights: {0}")]
    InvalidWeights(String),
    #[error(transparent)]
    Model(#[from] HandModelError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub object_pc: f64,
    pub hand_pc: f64,
    pub joint_angle: f64,
    pub rec: f64,
    pub smooth: f64,
    pub pene: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { object_pc: 1.0, hand_pc: 1.0, joint_angle: 0.5, rec: 1.0, smooth: 0.1, pene: 10.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), LossError> {
        let all = [self.object_pc, self.hand_pc, self.joint_angle, self.rec, self.smooth, self.pene];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(LossError::InvalidWeights("weights must be finite and non-negative".into()));
        }
        Ok(())
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { rec: self.rec * c, smooth: self.smooth * c, pene: self.pene * c, ..*self }
    }
}

/// Which pose tracks the smoothness term covers, and the cloud sizes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub weights: LossWeights,
    pub hand_points: usize,
    pub object_points: usize,
    pub smooth_wrist: bool,
    pub smooth_object: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { weights: LossWeights::default(), hand_points: 256, object_points: 512, smooth_wrist: true, smooth_object: true }
    }
}

/// Per-term values of one evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub pc_object: f64,
    pub pc_hand: f64,
    pub joint_angle: f64,
    pub rec: f64,
    pub smooth: f64,
    pub pene: f64,
    pub total: f64,
}

impl LossReport {
    /// Combines component values with the weights.
    pub fn from_terms(pc_object: f64, pc_hand: f64, joint_angle: f64, smooth: f64, pene: f64, w: &LossWeights) -> Self {
        let rec = w.object_pc * pc_object + w.hand_pc * pc_hand + w.joint_angle * joint_angle;
        let total = w.rec * rec + w.smooth * smooth + w.pene * pene;
        Self { pc_object, pc_hand, joint_angle, rec, smooth, pene, total }
    }

    pub fn add(&mut self, o: &LossReport) {
        self.pc_object += o.pc_object;
        self.pc_hand += o.pc_hand;
        self.joint_angle += o.joint_angle;
        self.rec += o.rec;
        self.smooth += o.smooth;
        self.pene += o.pene;
        self.total += o.total;
    }

    /// Flat (name, value) pairs for report files.
    pub fn fields(&self) -> [(&'static str, f64); 7] {
        [
            ("L_PC_O", self.pc_object),
            ("L_PC_H", self.pc_hand),
            ("L_JA", self.joint_angle),
            ("L_rec", self.rec),
            ("L_smooth", self.smooth),
            ("L_pene", self.pene),
            ("L_total", self.total),
        ]
    }
}

#[cfg(test)]
mod tests;
