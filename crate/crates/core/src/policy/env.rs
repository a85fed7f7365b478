use std::io::Write;

use serde::Serialize;

use super::{
    assemble_state, compose_action, contact_count, contact_vector, reward, Action, EnvLiteState, PolicyConfig,
    PolicyError, Reference, Residual, RewardTerms,
};
use crate::geom::TriangleMesh;
use crate::handmodel::{HandModel, InteractionFrame, Trajectory};
use crate::metrics::{grasp_success, SuccessCriteria, SuccessReport};

/// Next state of one environment step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub state: EnvLiteState,
    /// Whether the object followed the wrist during this step.
    pub moved_object: bool,
}

/// Kinematic step: the hand is set to the (limit-clamped) action. If the
/// previous frame had at least two contacts, the object follows the wrist's
/// frame-to-frame rigid motion; otherwise it stays put. Contacts are then
/// recomputed at the new frame.
pub fn env_step(
    env: &EnvLiteState,
    action: &Action,
    mesh: &TriangleMesh,
    model: &HandModel,
    cfg: &PolicyConfig,
) -> Result<StepOutcome, PolicyError> {
    if action.joints.len() != model.dof() {
        return Err(PolicyError::LengthMismatch { expected: model.dof(), got: action.joints.len() });
    }
    let object = if env.attached {
        action.wrist.compose(&env.frame.wrist.inverse()).compose(&env.frame.object)
    } else {
        env.frame.object
    };
    let frame = InteractionFrame { wrist: action.wrist, joints: model.clamp(&action.joints), object, valid: true };
    let contacts = contact_vector(&frame, mesh, model, cfg.contact_radius)?;
    let attached = contact_count(&contacts) >= 2;
    let state = EnvLiteState { frame, previous: Some(env.frame.clone()), contacts, attached, index: env.index + 1, dt: env.dt };
    Ok(StepOutcome { state, moved_object: env.attached })
}

/// Columns of the per-step rollout log.
pub const ROLLOUT_COLUMNS: [&str; 15] = [
    "t", "r_object", "r_wrist", "r_finger", "r_contact", "reward", "contacts", "attached", "obj_qw", "obj_qx", "obj_qy",
    "obj_qz", "obj_x", "obj_y", "obj_z",
];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RolloutStep {
    pub t: usize,
    pub terms: RewardTerms,
    pub contacts: usize,
    pub attached: bool,
}

#[derive(Clone, Debug)]
pub struct Rollout {
    pub cumulative_reward: f64,
    pub steps: Vec<RolloutStep>,
    /// Executed robot trajectory, object poses included.
    pub trajectory: Trajectory,
    /// Final frame against the anchor's final frame.
    pub success: SuccessReport,
}

impl Rollout {
    /// Per-step CSV: t, the reward terms, contact count, attachment and the
    /// object pose (quaternion wxyz, translation xyz).
    pub fn write_log<W: Write>(&self, out: W) -> Result<(), PolicyError> {
        let err = |e: csv::Error| PolicyError::Log(e.to_string());
        let mut w = csv::Writer::from_writer(out);
        w.write_record(ROLLOUT_COLUMNS).map_err(err)?;
        for (s, f) in self.steps.iter().zip(&self.trajectory.frames) {
            let mut row = vec![
                s.t.to_string(),
                format!("{:.17e}", s.terms.object),
                format!("{:.17e}", s.terms.wrist),
                format!("{:.17e}", s.terms.finger),
                format!("{:.17e}", s.terms.contact),
                format!("{:.17e}", s.terms.total),
                s.contacts.to_string(),
                (s.attached as u8).to_string(),
            ];
            row.extend(f.object.wxyz().iter().chain(f.object.translation().iter()).map(|v| format!("{v:.17e}")));
            w.write_record(&row).map_err(err)?;
        }
        w.flush().map_err(|e| PolicyError::Log(e.to_string()))
    }
}

/// Replays `anchor + residual` through the kinematic environment. Step 0
/// places the hand at the composed first action with the object at the
/// anchor's first object pose; each later step applies the next action.
/// Rewards compare every resulting state with the anchor at the same index.
pub fn rollout(
    anchor: &Trajectory,
    residuals: &[Residual],
    mesh: &TriangleMesh,
    model: &HandModel,
    cfg: &PolicyConfig,
    criteria: &SuccessCriteria,
) -> Result<Rollout, PolicyError> {
    cfg.validate()?;
    if residuals.len() != anchor.len() {
        return Err(PolicyError::LengthMismatch { expected: anchor.len(), got: residuals.len() });
    }
    if anchor.is_empty() {
        return Err(PolicyError::LengthMismatch { expected: 1, got: 0 });
    }
    let action = |t: usize| compose_action(&Action::from_frame(&anchor.frames[t]), &residuals[t], &cfg.bounds, model);
    let a0 = action(0)?;
    let first = InteractionFrame { wrist: a0.wrist, joints: model.clamp(&a0.joints), object: anchor.frames[0].object, valid: true };
    let mut env = EnvLiteState::reset(first, anchor.dt, mesh, model, cfg)?;
    let mut steps = Vec::with_capacity(anchor.len());
    let mut frames = Vec::with_capacity(anchor.len());
    let mut cumulative = 0.0;
    for t in 0..anchor.len() {
        if t > 0 {
            env = env_step(&env, &action(t)?, mesh, model, cfg)?.state;
        }
        let state = assemble_state(&env, anchor)?;
        let terms = reward(&state, &Reference::at(anchor, t)?, cfg);
        cumulative += terms.total;
        steps.push(RolloutStep { t, terms, contacts: contact_count(&env.contacts), attached: env.attached });
        frames.push(env.frame.clone());
    }
    let last = frames.last().cloned().expect("non-empty rollout");
    let success = grasp_success(&last, anchor.frames.last().expect("non-empty anchor"), criteria, model)?;
    let mut trajectory = Trajectory::new(anchor.dt, model.id.clone(), anchor.mesh_hash.clone(), frames);
    trajectory.scale = anchor.scale;
    Ok(Rollout { cumulative_reward: cumulative, steps, trajectory, success })
}
