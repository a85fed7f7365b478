use serde::{Deserialize, Serialize};

use crate::PiomError;

/// Architecture and input-sampling settings of the network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PiomConfig {
    /// Hidden width d.
    pub d: usize,
    /// Tokens per hand cloud (farthest-point centers).
    pub hand_tokens: usize,
    /// Tokens per object cloud.
    pub object_tokens: usize,
    pub heads: usize,
    pub pgca_layers: usize,
    pub temporal_layers: usize,
    /// Longest clip accepted; also the positional-encoding range.
    pub t_max: usize,
    /// Width of the per-frame pose feature: 6 + 3 + J + 6 + 3.
    pub pose_width: usize,
    /// Hidden width of the per-point MLP.
    pub point_hidden: usize,
    /// Points gathered per token neighborhood.
    pub neighbors: usize,
    /// Neighborhood radius, meters.
    pub ball_radius: f64,
    /// Surface samples per cloud fed to the encoder.
    pub hand_points: usize,
    pub object_points: usize,
    /// Feed-forward width as a multiple of d.
    pub ffn_mult: usize,
    /// Input coordinates are multiplied by this (meters → network units).
    pub coord_scale: f64,
    /// Output units: rotation (rad), translation (m), joints (rad) per unit.
    pub rot_scale: f64,
    pub trans_scale: f64,
    pub joint_scale: f64,
    pub seed: u64,
}

impl Default for PiomConfig {
    fn default() -> Self {
        Self {
            d: 64,
            hand_tokens: 16,
            object_tokens: 16,
            heads: 4,
            pgca_layers: 2,
            temporal_layers: 2,
            t_max: 120,
            pose_width: 38,
            point_hidden: 32,
            neighbors: 8,
            ball_radius: 0.03,
            hand_points: 128,
            object_points: 128,
            ffn_mult: 2,
            coord_scale: 10.0,
            rot_scale: 0.2,
            trans_scale: 0.02,
            joint_scale: 0.2,
            seed: 0,
        }
    }
}

impl PiomConfig {
    pub fn validate(&self) -> Result<(), PiomError> {
        let bad = |m: &str| Err(PiomError::Config(m.to_string()));
        if self.d == 0 || self.heads == 0 || self.d % self.heads != 0 {
            return bad("d must be a positive multiple of heads");
        }
        if self.hand_tokens == 0 || self.object_tokens == 0 || self.t_max == 0 || self.neighbors == 0 || self.point_hidden == 0 || self.ffn_mult == 0 {
            return bad("token counts, t_max, neighbors and widths must be ≥ 1");
        }
        if self.hand_points < self.hand_tokens || self.object_points < self.object_tokens {
            return bad("clouds need at least as many points as tokens");
        }
        if self.pose_width < 18 {
            return bad("pose_width must be 18 + joint count");
        }
        let pos = [self.ball_radius, self.coord_scale, self.rot_scale, self.trans_scale, self.joint_scale];
        if pos.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return bad("radius and scales must be positive");
        }
        Ok(())
    }

    pub fn dof(&self) -> usize {
        self.pose_width - 18
    }

    /// Per-frame output width: wrist (3 + 3), joints, object (3 + 3).
    pub fn out_width(&self) -> usize {
        12 + self.dof()
    }
}
