//! Kinematic retargeting of a human hand trajectory onto a robot hand:
//! per-frame damped least squares over the robot wrist pose and joints,
//! warm-started frame to frame.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{so3, RigidPose};
use crate::handmodel::{Frame, HandModel, HandModelError, InteractionFrame, Trajectory};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RetargetError {
    #[error("trajectory has no frames")]
    EmptyTrajectory,
    #[error("finger count differs: human {human}, robot {robot}")]
    FingerMismatch { human: usize, robot: usize },
    #[error("objective is not finite at the initial guess")]
    NonFiniteInit,
    #[error("invalid retarget weights: {0}")]
    InvalidWeights(String),
    #[error(transparent)]
    Model(#[from] HandModelError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetargetWeights {
    /// Wrist-orientation term λ_o.
    pub orientation: f64,
    /// Joint-similarity term λ_a.
    pub joints: f64,
}

impl Default for RetargetWeights {
    fn default() -> Self {
        Self { orientation: 0.5, joints: 0.1 }
    }
}

impl RetargetWeights {
    pub fn validate(&self) -> Result<(), RetargetError> {
        if !(self.orientation >= 0.0 && self.orientation.is_finite() && self.joints >= 0.0 && self.joints.is_finite()) {
            return Err(RetargetError::InvalidWeights("weights must be finite and non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub max_iters: usize,
    /// Stop when the projected gradient's max-norm drops below this.
    pub grad_tol: f64,
    /// Stop (without convergence) when an accepted step improves the
    /// objective by less than this fraction, or damping saturates.
    pub rel_tol: f64,
    pub initial_damping: f64,
    /// A stationary point only counts as converged when every fingertip is
    /// within this distance (m) of its target; otherwise the target is out
    /// of reach and the stop is reported as `Tolerance`.
    pub reach_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { max_iters: 100, grad_tol: 1e-8, rel_tol: 1e-14, initial_damping: 1e-4, reach_tol: 0.03 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    /// Projected gradient below tolerance: a (clamped) stationary point.
    Gradient,
    /// No further progress possible at tolerance; not a certified optimum.
    Tolerance,
    MaxIterations,
    /// Frame was invalid; the previous solution was copied.
    Skipped,
}

/// Human and robot models with the joint-coupling projection between them.
#[derive(Clone, Debug)]
pub struct RetargetModels {
    pub human: HandModel,
    pub robot: HandModel,
    /// J_R × J_H.
    pub coupling: DMatrix<f64>,
}

impl RetargetModels {
    pub fn new(human: HandModel, robot: HandModel) -> Result<Self, RetargetError> {
        if human.finger_count() != robot.finger_count() {
            return Err(RetargetError::FingerMismatch { human: human.finger_count(), robot: robot.finger_count() });
        }
        let coupling = robot.coupling_matrix(&human)?;
        Ok(Self { human, robot, coupling })
    }

    /// Robot joints from the coupling map (unclamped).
    pub fn mapped(&self, human_joints: &[f64]) -> Vec<f64> {
        (&self.coupling * DVector::from_column_slice(human_joints)).as_slice().to_vec()
    }
}

/// Human fingertip positions, wrist pose and coupled joint target of one frame.
struct Target {
    tips: Vec<Vector3<f64>>,
    wrist: RigidPose,
    joints: Vec<f64>,
}

fn target(frame: &InteractionFrame, models: &RetargetModels) -> Result<Target, RetargetError> {
    let pose = models.human.fk(&frame.wrist, &frame.joints)?;
    Ok(Target { tips: pose.fingertips, wrist: frame.wrist, joints: models.mapped(&frame.joints) })
}

fn residuals(w: &RigidPose, j: &[f64], t: &Target, weights: &RetargetWeights, robot: &HandModel, jac: bool) -> Result<(DVector<f64>, Option<DMatrix<f64>>), RetargetError> {
    let pose = robot.fk(w, j)?;
    let f = robot.finger_count();
    let dof = robot.dof();
    let n = 3 * f + 3 + dof;
    let nx = 6 + dof;
    let mut r = DVector::zeros(n);
    let mut jm = jac.then(|| DMatrix::zeros(n, nx));
    for (i, (q, qh)) in pose.fingertips.iter().zip(&t.tips).enumerate() {
        r.fixed_rows_mut::<3>(3 * i).copy_from(&(q - qh));
        if let Some(m) = jm.as_mut() {
            let rel = q - w.translation();
            m.fixed_view_mut::<3, 3>(3 * i, 0).copy_from(&(-so3::hat(&rel)));
            m.fixed_view_mut::<3, 3>(3 * i, 3).copy_from(&Matrix3::identity());
            let frame = robot.tips[i].frame;
            if let Frame::Joint(_) = frame {
                for &k in robot.chain(frame) {
                    let (axis, origin) = robot.joint_axis_world(&pose, k);
                    m.fixed_view_mut::<3, 1>(3 * i, 6 + k).copy_from(&axis.cross(&(q - origin)));
                }
            }
        }
    }
    let so = weights.orientation.sqrt();
    let phi = so3::log(&(w.rotation() * t.wrist.rotation().inverse()));
    r.fixed_rows_mut::<3>(3 * f).copy_from(&(phi * so));
    if let Some(m) = jm.as_mut() {
        m.fixed_view_mut::<3, 3>(3 * f, 0).copy_from(&(so3::left_jacobian_inv(&phi) * so));
    }
    let sa = weights.joints.sqrt();
    for k in 0..dof {
        r[3 * f + 3 + k] = sa * (j[k] - t.joints[k]);
        if let Some(m) = jm.as_mut() {
            m[(3 * f + 3 + k, 6 + k)] = sa;
        }
    }
    Ok((r, jm))
}

/// Fingertip alignment + λ_o·‖log(R R̂ᵀ)‖² + λ_a·‖j − C ĵ‖².
pub fn objective(
    wrist: &RigidPose,
    joints: &[f64],
    human: &InteractionFrame,
    weights: &RetargetWeights,
    models: &RetargetModels,
) -> Result<f64, RetargetError> {
    if joints.len() != models.robot.dof() {
        return Err(HandModelError::DimensionMismatch { expected: models.robot.dof(), got: joints.len() }.into());
    }
    let t = target(human, models)?;
    Ok(residuals(wrist, joints, &t, weights, &models.robot, false)?.0.norm_squared())
}

/// Result of one frame's solve.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameSolution {
    pub wrist: RigidPose,
    pub joints: Vec<f64>,
    pub objective: f64,
    pub initial_objective: f64,
    pub iterations: usize,
    pub reason: StopReason,
    pub converged: bool,
    /// Objective after every accepted step, starting with the initial value.
    pub history: Vec<f64>,
}

fn projected_grad_norm(g: &DVector<f64>, j: &[f64], robot: &HandModel) -> f64 {
    let mut worst: f64 = 0.0;
    for (i, gi) in g.iter().enumerate() {
        if i >= 6 {
            let joint = &robot.joints[i - 6];
            let q = j[i - 6];
            // descent would leave the box: that component is inactive
            if (q <= joint.lower && *gi > 0.0) || (q >= joint.upper && *gi < 0.0) {
                continue;
            }
        }
        worst = worst.max(gi.abs());
    }
    worst
}

/// Levenberg–Marquardt on the stacked residual, joints clamped after each
/// step, only objective-decreasing steps accepted.
pub fn solve_frame(
    human: &InteractionFrame,
    init: (&RigidPose, &[f64]),
    weights: &RetargetWeights,
    models: &RetargetModels,
    cfg: &SolverConfig,
) -> Result<FrameSolution, RetargetError> {
    weights.validate()?;
    let robot = &models.robot;
    let t = target(human, models)?;
    let mut w = *init.0;
    let mut j = robot.clamp(init.1);
    if j.len() != robot.dof() {
        return Err(HandModelError::DimensionMismatch { expected: robot.dof(), got: init.1.len() }.into());
    }
    let (mut r, mut jm) = residuals(&w, &j, &t, weights, robot, true)?;
    let mut f = r.norm_squared();
    if !f.is_finite() {
        return Err(RetargetError::NonFiniteInit);
    }
    let initial = f;
    let mut history = vec![f];
    let mut mu = cfg.initial_damping;
    let mut reason = StopReason::MaxIterations;
    let mut iterations = 0;
    while iterations < cfg.max_iters {
        let jac = jm.as_ref().expect("jacobian requested");
        let g = jac.transpose() * &r;
        if projected_grad_norm(&g, &j, robot) < cfg.grad_tol {
            reason = StopReason::Gradient;
            break;
        }
        iterations += 1;
        let h = jac.transpose() * jac;
        let mut accepted = false;
        while mu < 1e12 {
            let mut a = h.clone();
            for d in 0..a.nrows() {
                a[(d, d)] += mu;
            }
            let Some(chol) = a.cholesky() else {
                mu *= 4.0;
                continue;
            };
            let step = chol.solve(&(-&g));
            let w_new = w.perturbed_left(&step.fixed_rows::<3>(0).into_owned(), &step.fixed_rows::<3>(3).into_owned());
            let j_new: Vec<f64> = robot.clamp(&j.iter().enumerate().map(|(k, q)| q + step[6 + k]).collect::<Vec<_>>());
            let (r_new, jm_new) = residuals(&w_new, &j_new, &t, weights, robot, true)?;
            let f_new = r_new.norm_squared();
            if f_new < f {
                let improvement = f - f_new;
                w = w_new;
                j = j_new;
                r = r_new;
                jm = jm_new;
                f = f_new;
                history.push(f);
                mu = (mu / 3.0).max(1e-12);
                accepted = true;
                if improvement <= cfg.rel_tol * f.max(f64::MIN_POSITIVE) {
                    reason = StopReason::Tolerance;
                }
                break;
            }
            mu *= 4.0;
        }
        if !accepted {
            reason = StopReason::Tolerance;
            break;
        }
        if reason == StopReason::Tolerance {
            break;
        }
    }
    if reason == StopReason::MaxIterations {
        let g = jm.as_ref().expect("jacobian requested").transpose() * &r;
        if projected_grad_norm(&g, &j, robot) < cfg.grad_tol {
            reason = StopReason::Gradient;
        }
    }
    if reason == StopReason::Gradient {
        let worst = r.rows(0, 3 * robot.finger_count()).as_slice().chunks(3).map(|d| (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()).fold(0.0, f64::max);
        if worst > cfg.reach_tol {
            reason = StopReason::Tolerance;
        }
    }
    Ok(FrameSolution {
        wrist: w,
        joints: j,
        objective: f,
        initial_objective: initial,
        iterations,
        reason,
        converged: reason == StopReason::Gradient,
        history,
    })
}

/// Retargeted robot clip plus per-frame solver records.
#[derive(Clone, Debug)]
pub struct RetargetSolution {
    pub trajectory: Trajectory,
    pub frames: Vec<FrameSolution>,
}

/// Solves every frame; the first from the coupling-map guess (human wrist,
/// mapped joints), later ones warm-started from their predecessor. Invalid
/// frames copy the previous solution.
pub fn solve_trajectory(
    human: &Trajectory,
    weights: &RetargetWeights,
    models: &RetargetModels,
    cfg: &SolverConfig,
) -> Result<RetargetSolution, RetargetError> {
    if human.is_empty() {
        return Err(RetargetError::EmptyTrajectory);
    }
    let robot = &models.robot;
    let mut frames: Vec<FrameSolution> = Vec::with_capacity(human.len());
    let mut out = Vec::with_capacity(human.len());
    for f in &human.frames {
        let (w0, j0) = match frames.last() {
            Some(prev) => (prev.wrist, prev.joints.clone()),
            None => (f.wrist, robot.clamp(&models.mapped(&f.joints))),
        };
        let sol = if f.valid {
            solve_frame(f, (&w0, &j0), weights, models, cfg)?
        } else {
            FrameSolution {
                wrist: w0,
                joints: j0.clone(),
                objective: f64::NAN,
                initial_objective: f64::NAN,
                iterations: 0,
                reason: StopReason::Skipped,
                converged: false,
                history: Vec::new(),
            }
        };
        out.push(InteractionFrame { wrist: sol.wrist, joints: sol.joints.clone(), object: f.object, valid: f.valid });
        frames.push(sol);
    }
    let mut trajectory = Trajectory::new(human.dt, robot.id.clone(), human.mesh_hash.clone(), out);
    trajectory.scale = human.scale;
    Ok(RetargetSolution { trajectory, frames })
}
