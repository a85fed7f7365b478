//! Residual-policy support: state assembly, tracking rewards, anchor plus
//! residual action composition, and a kinematic contact environment used
//! for deterministic rollouts.

mod env;

use nalgebra::{Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{pose_diff, PoseDelta, RigidPose, TriangleMesh};
use crate::handmodel::{HandModel, HandModelError, InteractionFrame, Trajectory};
use crate::metrics::MetricError;

pub use env::{env_step, rollout, Rollout, RolloutStep, StepOutcome, ROLLOUT_COLUMNS};

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("expected {expected} entries, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("frame index {index} out of range for {len} frames")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("residual contains non-finite values")]
    NonFiniteResidual,
    #[error("invalid policy config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] HandModelError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("rollout log: {0}")]
    Log(String),
}

/// Weights of the four reward terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardWeights {
    pub object: f64,
    pub wrist: f64,
    pub finger: f64,
    pub contact: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self { object: 1.0, wrist: 1.0, finger: 1.0, contact: 1.0 }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<(), PolicyError> {
        let all = [self.object, self.wrist, self.finger, self.contact];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(PolicyError::InvalidConfig("reward weights must be finite and non-negative".into()));
        }
        Ok(())
    }

    pub fn sum(&self) -> f64 {
        self.object + self.wrist + self.finger + self.contact
    }
}

/// Per-axis bounds on the residual correction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ResidualBounds {
    /// Per-joint bound, radians.
    pub joint: f64,
    /// Bound on the norm of the wrist rotation correction, radians.
    pub rotation: f64,
    /// Bound on the norm of the wrist translation correction, meters.
    pub translation: f64,
}

impl Default for ResidualBounds {
    fn default() -> Self {
        Self { joint: 0.3, rotation: 0.3, translation: 0.05 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    /// Contact radius ε: fingertips closer than this to the surface count.
    pub contact_radius: f64,
    /// Gain on pose and joint-angle errors.
    pub pose_gain: f64,
    /// Gain on velocity errors.
    pub velocity_gain: f64,
    pub bounds: ResidualBounds,
    pub weights: RewardWeights,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            contact_radius: 0.005,
            pose_gain: 10.0,
            velocity_gain: 1.0,
            bounds: ResidualBounds::default(),
            weights: RewardWeights::default(),
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<(), PolicyError> {
        self.weights.validate()?;
        let b = self.bounds;
        let positive = [self.contact_radius, self.pose_gain, self.velocity_gain];
        let bounds = [b.joint, b.rotation, b.translation];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) || bounds.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(PolicyError::InvalidConfig("gains and radius must be positive, bounds non-negative".into()));
        }
        if b.rotation >= std::f64::consts::PI {
            return Err(PolicyError::InvalidConfig("rotation bound must stay below π".into()));
        }
        Ok(())
    }
}

/// Signed distance of a fingertip sphere to the posed object surface.
fn tip_clearance(center: &Vector3<f64>, radius: f64, mesh: &TriangleMesh, object: &RigidPose) -> f64 {
    mesh.signed_distance(&object.inverse().transform_point(center)) - radius
}

/// Per-fingertip force proxy `max(0, ε − d)`, where `d` is the signed
/// distance of the fingertip sphere to the posed mesh.
pub fn contact_vector(
    frame: &InteractionFrame,
    mesh: &TriangleMesh,
    model: &HandModel,
    radius: f64,
) -> Result<Vec<f64>, PolicyError> {
    let pose = model.fk(&frame.wrist, &frame.joints)?;
    Ok(pose
        .fingertips
        .iter()
        .zip(&model.tips)
        .map(|(c, tip)| (radius - tip_clearance(c, tip.radius, mesh, &frame.object)).max(0.0))
        .collect())
}

pub fn contact_count(contacts: &[f64]) -> usize {
    contacts.iter().filter(|&&c| c > 0.0).count()
}

/// Body twist `(ω, v)` from `prev` to `cur` by backward difference.
pub fn twist(cur: &RigidPose, prev: &RigidPose, dt: f64) -> Vector6<f64> {
    let d = pose_diff(cur, prev);
    let mut v = Vector6::zeros();
    v.fixed_rows_mut::<3>(0).copy_from(&(d.rotational / dt));
    v.fixed_rows_mut::<3>(3).copy_from(&(d.translational / dt));
    v
}

/// Kinematic environment state.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvLiteState {
    pub frame: InteractionFrame,
    /// Previous frame, for finite-difference velocities; `None` at t = 0.
    pub previous: Option<InteractionFrame>,
    pub contacts: Vec<f64>,
    /// True iff the current frame has at least two fingertip contacts, so
    /// the object follows the wrist on the next step.
    pub attached: bool,
    pub index: usize,
    pub dt: f64,
}

impl EnvLiteState {
    /// Starts an episode at `frame` (frame index 0).
    pub fn reset(frame: InteractionFrame, dt: f64, mesh: &TriangleMesh, model: &HandModel, cfg: &PolicyConfig) -> Result<Self, PolicyError> {
        let contacts = contact_vector(&frame, mesh, model, cfg.contact_radius)?;
        let attached = contact_count(&contacts) >= 2;
        Ok(Self { frame, previous: None, contacts, attached, index: 0, dt })
    }
}

/// Robot wrist and joint targets for one step.
#[derive(Clone, Debug, PartialEq)]
pub struct Action {
    pub wrist: RigidPose,
    pub joints: Vec<f64>,
}

impl Action {
    pub fn from_frame(frame: &InteractionFrame) -> Self {
        Self { wrist: frame.wrist, joints: frame.joints.clone() }
    }
}

/// Residual correction on top of an anchor action.
#[derive(Clone, Debug, PartialEq)]
pub struct Residual {
    pub wrist: PoseDelta,
    pub joints: Vec<f64>,
}

impl Residual {
    pub fn zero(dof: usize) -> Self {
        Self { wrist: PoseDelta::zero(), joints: vec![0.0; dof] }
    }
}

fn clip_norm(v: &Vector3<f64>, bound: f64) -> Vector3<f64> {
    let n = v.norm();
    if n > bound {
        v * (bound / n)
    } else {
        *v
    }
}

/// Clips the residual to `bounds` (per joint, and by norm for the wrist
/// rotation and translation).
pub fn clip_residual(residual: &Residual, bounds: &ResidualBounds) -> Residual {
    Residual {
        wrist: PoseDelta::new(
            clip_norm(&residual.wrist.rotational, bounds.rotation),
            clip_norm(&residual.wrist.translational, bounds.translation),
        ),
        joints: residual.joints.iter().map(|d| d.clamp(-bounds.joint, bounds.joint)).collect(),
    }
}

/// Anchor plus clipped residual. Joints are then clamped to the model's
/// limits; the wrist delta composes on the right, so
/// `pose_diff(result.wrist, anchor.wrist)` recovers the clipped delta.
pub fn compose_action(anchor: &Action, residual: &Residual, bounds: &ResidualBounds, model: &HandModel) -> Result<Action, PolicyError> {
    if residual.joints.len() != anchor.joints.len() {
        return Err(PolicyError::LengthMismatch { expected: anchor.joints.len(), got: residual.joints.len() });
    }
    let finite = residual.joints.iter().all(|v| v.is_finite())
        && residual.wrist.rotational.iter().chain(residual.wrist.translational.iter()).all(|v| v.is_finite());
    if !finite {
        return Err(PolicyError::NonFiniteResidual);
    }
    let c = clip_residual(residual, bounds);
    let joints: Vec<f64> = anchor.joints.iter().zip(&c.joints).map(|(a, d)| a + d).collect();
    let joints = model.clamp(&joints);
    Ok(Action { wrist: anchor.wrist.apply_delta(&c.wrist), joints })
}

/// Joint-only residual within `bounds` that pushes the fingertips away from
/// the object at `frame`: coordinate search over {−b, 0, +b} per joint,
/// minimizing the summed contact proxy at a widened radius (so the search
/// still sees tips just outside the real one). Used to construct
/// contact-breaking stress cases.
pub fn contact_breaking_residual(
    frame: &InteractionFrame,
    mesh: &TriangleMesh,
    model: &HandModel,
    cfg: &PolicyConfig,
) -> Result<Residual, PolicyError> {
    let b = cfg.bounds.joint;
    let wide = 4.0 * cfg.contact_radius;
    let score = |d: &[f64]| -> Result<(usize, f64), PolicyError> {
        let joints: Vec<f64> = frame.joints.iter().zip(d).map(|(j, x)| j + x).collect();
        let f = InteractionFrame { joints: model.clamp(&joints), ..frame.clone() };
        let real = contact_count(&contact_vector(&f, mesh, model, cfg.contact_radius)?);
        Ok((real, contact_vector(&f, mesh, model, wide)?.iter().sum()))
    };
    let mut d = vec![0.0; model.dof()];
    let mut best = score(&d)?;
    for _ in 0..3 {
        let mut improved = false;
        for k in 0..d.len() {
            for cand in [-b, 0.0, b] {
                let mut trial = d.clone();
                trial[k] = cand;
                let s = score(&trial)?;
                if s.0 < best.0 || (s.0 == best.0 && s.1 < best.1) {
                    best = s;
                    d = trial;
                    improved = true;
                }
            }
        }
        if !improved {
            break;
        }
    }
    Ok(Residual { wrist: PoseDelta::zero(), joints: d })
}

/// Reference slice at one step: the anchor (robot) frame including its
/// object pose, plus reference velocities.
#[derive(Clone, Debug, PartialEq)]
pub struct Reference {
    pub wrist: RigidPose,
    pub joints: Vec<f64>,
    pub object: RigidPose,
    pub wrist_twist: Vector6<f64>,
    pub object_twist: Vector6<f64>,
    pub joint_velocity: Vec<f64>,
}

impl Reference {
    /// Reference at `t`; velocities by backward difference, zero at t = 0.
    pub fn at(anchor: &Trajectory, t: usize) -> Result<Self, PolicyError> {
        let f = anchor.frames.get(t).ok_or(PolicyError::IndexOutOfRange { index: t, len: anchor.len() })?;
        let (wrist_twist, object_twist, joint_velocity) = match t.checked_sub(1).map(|p| &anchor.frames[p]) {
            Some(p) => (
                twist(&f.wrist, &p.wrist, anchor.dt),
                twist(&f.object, &p.object, anchor.dt),
                f.joints.iter().zip(&p.joints).map(|(a, b)| (a - b) / anchor.dt).collect(),
            ),
            None => (Vector6::zeros(), Vector6::zeros(), vec![0.0; f.joints.len()]),
        };
        Ok(Self { wrist: f.wrist, joints: f.joints.clone(), object: f.object, wrist_twist, object_twist, joint_velocity })
    }
}

/// Policy observation. Flattened layout (length `2·J + 14 + 12 + F + (7 + J) + 7`):
///
/// | slice | contents |
/// |---|---|
/// | `j` (J) | joint angles |
/// | `j̇` (J) | joint velocities |
/// | `w` (7) | wrist quaternion wxyz, translation xyz |
/// | `ẇ` (6) | wrist body twist ω, v |
/// | `p` (7) | object quaternion wxyz, translation xyz |
/// | `ṗ` (6) | object body twist ω, v |
/// | `C` (F) | fingertip contact values |
/// | anchor (7 + J) | anchor wrist pose, anchor joints |
/// | reference object (7) | reference object pose |
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyState {
    pub joints: Vec<f64>,
    pub joint_velocity: Vec<f64>,
    pub wrist: RigidPose,
    pub wrist_twist: Vector6<f64>,
    pub object: RigidPose,
    pub object_twist: Vector6<f64>,
    pub contacts: Vec<f64>,
    pub anchor_wrist: RigidPose,
    pub anchor_joints: Vec<f64>,
    pub reference_object: RigidPose,
}

pub const STATE_LAYOUT_VERSION: u32 = 1;

pub fn state_len(dof: usize, fingers: usize) -> usize {
    2 * dof + 2 * 7 + 2 * 6 + fingers + (7 + dof) + 7
}

fn push_pose(out: &mut Vec<f64>, p: &RigidPose) {
    out.extend_from_slice(&p.wxyz());
    out.extend(p.translation().iter());
}

impl PolicyState {
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(state_len(self.joints.len(), self.contacts.len()));
        out.extend_from_slice(&self.joints);
        out.extend_from_slice(&self.joint_velocity);
        push_pose(&mut out, &self.wrist);
        out.extend(self.wrist_twist.iter());
        push_pose(&mut out, &self.object);
        out.extend(self.object_twist.iter());
        out.extend_from_slice(&self.contacts);
        push_pose(&mut out, &self.anchor_wrist);
        out.extend_from_slice(&self.anchor_joints);
        push_pose(&mut out, &self.reference_object);
        out
    }
}

/// Builds the observation at the environment's current index; velocities
/// are backward differences against the previous frame (zero at t = 0).
pub fn assemble_state(env: &EnvLiteState, anchor: &Trajectory) -> Result<PolicyState, PolicyError> {
    let a = anchor.frames.get(env.index).ok_or(PolicyError::IndexOutOfRange { index: env.index, len: anchor.len() })?;
    let f = &env.frame;
    let (joint_velocity, wrist_twist, object_twist) = match &env.previous {
        Some(p) => (
            f.joints.iter().zip(&p.joints).map(|(a, b)| (a - b) / env.dt).collect(),
            twist(&f.wrist, &p.wrist, env.dt),
            twist(&f.object, &p.object, env.dt),
        ),
        None => (vec![0.0; f.joints.len()], Vector6::zeros(), Vector6::zeros()),
    };
    Ok(PolicyState {
        joints: f.joints.clone(),
        joint_velocity,
        wrist: f.wrist,
        wrist_twist,
        object: f.object,
        object_twist,
        contacts: env.contacts.clone(),
        anchor_wrist: a.wrist,
        anchor_joints: a.joints.clone(),
        reference_object: a.object,
    })
}

/// Reward terms, each in [0, 1], and their weighted sum.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardTerms {
    pub object: f64,
    pub wrist: f64,
    pub finger: f64,
    pub contact: f64,
    pub total: f64,
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Tracking reward: `exp(−k_p·pose error − k_v·velocity error)` for the
/// object, wrist and joints, plus the fraction of fingertips in contact.
pub fn reward(state: &PolicyState, reference: &Reference, cfg: &PolicyConfig) -> RewardTerms {
    let (kp, kv) = (cfg.pose_gain, cfg.velocity_gain);
    let object = (-kp * pose_diff(&state.object, &reference.object).norm() - kv * (state.object_twist - reference.object_twist).norm()).exp();
    let wrist = (-kp * pose_diff(&state.wrist, &reference.wrist).norm() - kv * (state.wrist_twist - reference.wrist_twist).norm()).exp();
    let finger = (-kp * l2(&state.joints, &reference.joints) - kv * l2(&state.joint_velocity, &reference.joint_velocity)).exp();
    let contact = if state.contacts.is_empty() { 0.0 } else { contact_count(&state.contacts) as f64 / state.contacts.len() as f64 };
    let w = cfg.weights;
    let total = w.object * object + w.wrist * wrist + w.finger * finger + w.contact * contact;
    RewardTerms { object, wrist, finger, contact, total }
}

#[cfg(test)]
mod tests;
