//! Trajectory evaluation: joint-position error, symmetric object-pose error,
//! discrete Fréchet distance, jerk, and the final-frame grasp-success test.
//! Distances are reported in millimeters.

mod report;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use report::{evaluate, MetricRecord, MetricReport, METRIC_COLUMNS};

use crate::geom::{rotation_distance, RigidPose};
use crate::handmodel::{HandModel, HandModelError, InteractionFrame, Trajectory};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("sequence lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("no frames valid in both trajectories")]
    NoValidFrames,
    #[error("empty model point set")]
    EmptyPoints,
    #[error("model mismatch: {0}")]
    ModelMismatch(String),
    #[error(transparent)]
    Model(#[from] HandModelError),
}

const MM: f64 = 1000.0;

fn joint_mask(pred: &Trajectory, gt: &Trajectory) -> Result<Vec<bool>, MetricError> {
    if pred.len() != gt.len() {
        return Err(MetricError::LengthMismatch(pred.len(), gt.len()));
    }
    let mask: Vec<bool> = pred.frames.iter().zip(&gt.frames).map(|(a, b)| a.valid && b.valid).collect();
    if !mask.iter().any(|m| *m) {
        return Err(MetricError::NoValidFrames);
    }
    Ok(mask)
}

/// Mean per-joint position error over frames valid in both clips, using the
/// model's joint-frame origins.
pub fn mpjpe(pred: &Trajectory, gt: &Trajectory, model: &HandModel) -> Result<f64, MetricError> {
    let mask = joint_mask(pred, gt)?;
    let (mut sum, mut count) = (0.0, 0usize);
    for ((a, b), _) in pred.frames.iter().zip(&gt.frames).zip(&mask).filter(|(_, m)| **m) {
        let pa = model.fk(&a.wrist, &a.joints)?.joint_positions();
        let pb = model.fk(&b.wrist, &b.joints)?.joint_positions();
        sum += pa.iter().zip(&pb).map(|(x, y)| (x - y).norm()).sum::<f64>();
        count += pa.len();
    }
    Ok(MM * sum / count as f64)
}

fn pose_sequences<'a>(pred: &'a [RigidPose], gt: &'a [RigidPose], mask: Option<&[bool]>) -> Result<Vec<(&'a RigidPose, &'a RigidPose)>, MetricError> {
    if pred.len() != gt.len() {
        return Err(MetricError::LengthMismatch(pred.len(), gt.len()));
    }
    let pairs: Vec<_> = pred.iter().zip(gt).enumerate().filter(|(t, _)| mask.is_none_or(|m| m[*t])).map(|(_, p)| p).collect();
    if pairs.is_empty() {
        return Err(MetricError::NoValidFrames);
    }
    Ok(pairs)
}

/// Symmetric average distance: per frame, mean over model points of the
/// distance to the nearest ground-truth-posed model point.
pub fn add_s(pred: &[RigidPose], gt: &[RigidPose], points: &[Vector3<f64>], mask: Option<&[bool]>) -> Result<f64, MetricError> {
    if points.is_empty() {
        return Err(MetricError::EmptyPoints);
    }
    let pairs = pose_sequences(pred, gt, mask)?;
    let mut total = 0.0;
    for (p, g) in &pairs {
        let target: Vec<Vector3<f64>> = points.iter().map(|x| g.transform_point(x)).collect();
        let mut frame = 0.0;
        for x in points {
            let y = p.transform_point(x);
            frame += target.iter().map(|z| (y - z).norm_squared()).fold(f64::INFINITY, f64::min).sqrt();
        }
        total += frame / points.len() as f64;
    }
    Ok(MM * total / pairs.len() as f64)
}

/// Average distance of corresponding model points (the non-symmetric variant).
pub fn add(pred: &[RigidPose], gt: &[RigidPose], points: &[Vector3<f64>], mask: Option<&[bool]>) -> Result<f64, MetricError> {
    if points.is_empty() {
        return Err(MetricError::EmptyPoints);
    }
    let pairs = pose_sequences(pred, gt, mask)?;
    let total: f64 = pairs
        .iter()
        .map(|(p, g)| points.iter().map(|x| (p.transform_point(x) - g.transform_point(x)).norm()).sum::<f64>() / points.len() as f64)
        .sum();
    Ok(MM * total / pairs.len() as f64)
}

/// Discrete Fréchet distance in meters; 0 when either sequence is empty.
pub fn frechet_m(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let m = b.len();
    let mut prev = vec![0.0f64; m];
    let mut cur = vec![0.0f64; m];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            let d = (x - y).norm();
            cur[j] = match (i, j) {
                (0, 0) => d,
                (0, _) => cur[j - 1].max(d),
                (_, 0) => prev[0].max(d),
                _ => prev[j].min(prev[j - 1]).min(cur[j - 1]).max(d),
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[m - 1]
}

/// Discrete Fréchet distance, millimeters.
pub fn frechet(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> f64 {
    MM * frechet_m(a, b)
}

/// Mean third-difference magnitude of a position track.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Jerk {
    /// Raw ‖x_{t+3} − 3x_{t+2} + 3x_{t+1} − x_t‖, mean over windows, mm.
    pub mm: f64,
    /// Same divided by dt³, mm/s³.
    pub mm_per_s3: f64,
    /// Set when fewer than 4 samples were given (values are then 0).
    pub too_short: bool,
}

pub fn jerk(x: &[Vector3<f64>], dt: f64) -> Jerk {
    if x.len() < 4 {
        return Jerk { mm: 0.0, mm_per_s3: 0.0, too_short: true };
    }
    let windows = x.len() - 3;
    let sum: f64 = (0..windows).map(|t| (x[t + 3] - 3.0 * x[t + 2] + 3.0 * x[t + 1] - x[t]).norm()).sum();
    let mm = MM * sum / windows as f64;
    Jerk { mm, mm_per_s3: mm / (dt * dt * dt), too_short: false }
}

/// Success thresholds for the final frame of a rollout.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SuccessCriteria {
    pub rot_thresh_deg: f64,
    pub trans_thresh_m: f64,
    pub joint_pos_thresh_m: f64,
    pub fingertip_thresh_m: f64,
}

impl Default for SuccessCriteria {
    fn default() -> Self {
        Self { rot_thresh_deg: 30.0, trans_thresh_m: 0.03, joint_pos_thresh_m: 0.08, fingertip_thresh_m: 0.06 }
    }
}

/// Error breakdown of a success check; `violated` names failed criteria.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuccessReport {
    pub success: bool,
    pub rot_err_deg: f64,
    pub trans_err_m: f64,
    pub joint_err_m: f64,
    pub fingertip_err_m: f64,
    pub violated: Vec<String>,
}

/// All four strict-inequality criteria on the final frames.
pub fn grasp_success(
    pred: &InteractionFrame,
    gt: &InteractionFrame,
    criteria: &SuccessCriteria,
    model: &HandModel,
) -> Result<SuccessReport, MetricError> {
    let rot_err_deg = rotation_distance(&pred.object, &gt.object).to_degrees();
    let trans_err_m = (pred.object.translation() - gt.object.translation()).norm();
    let a = model.fk(&pred.wrist, &pred.joints)?;
    let b = model.fk(&gt.wrist, &gt.joints)?;
    let mean = |x: &[Vector3<f64>], y: &[Vector3<f64>]| x.iter().zip(y).map(|(p, q)| (p - q).norm()).sum::<f64>() / x.len().max(1) as f64;
    let joint_err_m = mean(&a.joint_positions(), &b.joint_positions());
    let fingertip_err_m = mean(&a.fingertips, &b.fingertips);
    let mut violated = Vec::new();
    if !(rot_err_deg < criteria.rot_thresh_deg) {
        violated.push("rotation".to_string());
    }
    if !(trans_err_m < criteria.trans_thresh_m) {
        violated.push("translation".to_string());
    }
    if !(joint_err_m < criteria.joint_pos_thresh_m) {
        violated.push("joint_position".to_string());
    }
    if !(fingertip_err_m < criteria.fingertip_thresh_m) {
        violated.push("fingertip".to_string());
    }
    Ok(SuccessReport { success: violated.is_empty(), rot_err_deg, trans_err_m, joint_err_m, fingertip_err_m, violated })
}

#[cfg(test)]
mod tests;
