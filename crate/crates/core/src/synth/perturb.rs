use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::geom::so3;
use crate::handmodel::Trajectory;

/// Error-pattern perturbation of a clip: per-frame pose noise, a common
/// translational drift, a hand↔object offset with jitter, joint noise, and
/// (for the harsher profile) dropped frames.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerturbConfig {
    /// Per-frame rotation noise, radians per tangent axis.
    pub sigma_rot: f64,
    /// Per-frame translation noise, meters per axis.
    pub sigma_trans: f64,
    /// Random-walk step, meters per axis per frame.
    pub sigma_drift: f64,
    /// Norm of the fixed hand offset relative to the object, meters.
    pub bias_magnitude: f64,
    /// Per-frame jitter on top of the fixed offset, meters per axis.
    pub sigma_jitter: f64,
    /// Joint-angle noise, radians.
    pub sigma_joint: f64,
    /// Probability that a frame starts a dropout burst.
    pub dropout_rate: f64,
    /// Longest dropout burst, frames.
    pub dropout_burst: usize,
    pub seed: u64,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        Self {
            sigma_rot: 0.05,
            sigma_trans: 0.01,
            sigma_drift: 0.002,
            bias_magnitude: 0.005,
            sigma_jitter: 0.005,
            sigma_joint: 0.05,
            dropout_rate: 0.0,
            dropout_burst: 0,
            seed: 0,
        }
    }
}

impl PerturbConfig {
    /// All rules disabled.
    pub fn zero() -> Self {
        Self {
            sigma_rot: 0.0,
            sigma_trans: 0.0,
            sigma_drift: 0.0,
            bias_magnitude: 0.0,
            sigma_jitter: 0.0,
            sigma_joint: 0.0,
            dropout_rate: 0.0,
            dropout_burst: 0,
            seed: 0,
        }
    }

    /// Harsher, structured profile standing in for perception-parsed inputs:
    /// larger drift and offsets, plus short bursts of invalid frames.
    pub fn parsing_surrogate() -> Self {
        Self {
            sigma_rot: 0.06,
            sigma_trans: 0.012,
            sigma_drift: 0.004,
            bias_magnitude: 0.01,
            sigma_jitter: 0.006,
            sigma_joint: 0.08,
            dropout_rate: 0.04,
            dropout_burst: 4,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        let s = [self.sigma_rot, self.sigma_trans, self.sigma_drift, self.bias_magnitude, self.sigma_jitter, self.sigma_joint];
        if s.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err("perturbation scales must be finite and non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.dropout_rate) {
            return Err("dropout rate must lie in [0, 1]".into());
        }
        Ok(())
    }
}

/// Sampled realizations of every perturbation rule, enough to undo it.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PerturbRecord {
    pub wrist_rot: Vec<Vector3<f64>>,
    pub wrist_trans: Vec<Vector3<f64>>,
    pub object_rot: Vec<Vector3<f64>>,
    pub object_trans: Vec<Vector3<f64>>,
    pub drift: Vec<Vector3<f64>>,
    pub bias: Vector3<f64>,
    pub jitter: Vec<Vector3<f64>>,
    pub joint_noise: Vec<Vec<f64>>,
    /// Original validity flags.
    pub valid: Vec<bool>,
}

// each rule draws from its own stream so switching one off leaves the others unchanged
const STREAM_POSE: u64 = 1;
const STREAM_DRIFT: u64 = 2;
const STREAM_BIAS: u64 = 3;
const STREAM_JOINT: u64 = 4;
const STREAM_DROPOUT: u64 = 5;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn normal3(rng: &mut ChaCha8Rng, sigma: f64) -> Vector3<f64> {
    let mut v = Vector3::zeros();
    for k in 0..3 {
        let z: f64 = StandardNormal.sample(rng);
        v[k] = sigma * z;
    }
    v
}

pub fn perturb(traj: &Trajectory, cfg: &PerturbConfig) -> Trajectory {
    perturb_recorded(traj, cfg).0
}

/// Applies, in order: per-frame pose noise, common drift, hand offset with
/// jitter, joint noise, dropouts. Returns the realizations alongside.
pub fn perturb_recorded(traj: &Trajectory, cfg: &PerturbConfig) -> (Trajectory, PerturbRecord) {
    let n = traj.len();
    let mut out = traj.clone();
    let mut rec = PerturbRecord { valid: traj.mask(), ..Default::default() };

    let mut rng = stream(cfg.seed, STREAM_POSE);
    for f in &mut out.frames {
        let (wr, wt) = (normal3(&mut rng, cfg.sigma_rot), normal3(&mut rng, cfg.sigma_trans));
        let (or, ot) = (normal3(&mut rng, cfg.sigma_rot), normal3(&mut rng, cfg.sigma_trans));
        if cfg.sigma_rot > 0.0 || cfg.sigma_trans > 0.0 {
            f.wrist = f.wrist.perturbed_left(&wr, &wt);
            f.object = f.object.perturbed_left(&or, &ot);
        }
        rec.wrist_rot.push(wr);
        rec.wrist_trans.push(wt);
        rec.object_rot.push(or);
        rec.object_trans.push(ot);
    }

    let mut rng = stream(cfg.seed, STREAM_DRIFT);
    let mut d = Vector3::zeros();
    for (t, f) in out.frames.iter_mut().enumerate() {
        if t > 0 {
            d += normal3(&mut rng, cfg.sigma_drift);
        }
        if cfg.sigma_drift > 0.0 {
            f.wrist = f.wrist.with_translation(f.wrist.translation() + d);
            f.object = f.object.with_translation(f.object.translation() + d);
        }
        rec.drift.push(d);
    }

    let mut rng = stream(cfg.seed, STREAM_BIAS);
    let dir = normal3(&mut rng, 1.0);
    rec.bias = if dir.norm() > 0.0 { dir.normalize() * cfg.bias_magnitude } else { Vector3::zeros() };
    for f in &mut out.frames {
        let j = normal3(&mut rng, cfg.sigma_jitter);
        if cfg.bias_magnitude > 0.0 || cfg.sigma_jitter > 0.0 {
            f.wrist = f.wrist.with_translation(f.wrist.translation() + rec.bias + j);
        }
        rec.jitter.push(j);
    }

    let mut rng = stream(cfg.seed, STREAM_JOINT);
    for f in &mut out.frames {
        let noise: Vec<f64> = f
            .joints
            .iter()
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                cfg.sigma_joint * z
            })
            .collect();
        if cfg.sigma_joint > 0.0 {
            for (q, e) in f.joints.iter_mut().zip(&noise) {
                *q += e;
            }
        }
        rec.joint_noise.push(noise);
    }

    if cfg.dropout_rate > 0.0 && cfg.dropout_burst > 0 {
        let mut rng = stream(cfg.seed, STREAM_DROPOUT);
        let mut t = 0;
        while t < n {
            if rng.random::<f64>() < cfg.dropout_rate {
                let len = rng.random_range(1..=cfg.dropout_burst);
                for k in t..(t + len).min(n) {
                    out.frames[k].valid = false;
                }
                t += len;
            } else {
                t += 1;
            }
        }
        if out.valid_count() == 0 {
            // keep the clip usable: restore the first originally valid frame
            if let Some(k) = rec.valid.iter().position(|v| *v) {
                out.frames[k].valid = true;
            }
        }
    }
    (out, rec)
}

/// Removes recorded perturbations in reverse order.
pub fn undo_perturbation(traj: &Trajectory, rec: &PerturbRecord) -> Trajectory {
    let mut out = traj.clone();
    for (t, f) in out.frames.iter_mut().enumerate() {
        f.valid = rec.valid[t];
        for (q, e) in f.joints.iter_mut().zip(&rec.joint_noise[t]) {
            *q -= e;
        }
        let wt = f.wrist.translation() - rec.bias - rec.jitter[t] - rec.drift[t] - rec.wrist_trans[t];
        let ot = f.object.translation() - rec.drift[t] - rec.object_trans[t];
        f.wrist = crate::geom::RigidPose::new(so3::exp(&(-rec.wrist_rot[t])) * f.wrist.rotation(), wt);
        f.object = crate::geom::RigidPose::new(so3::exp(&(-rec.object_rot[t])) * f.object.rotation(), ot);
    }
    out
}
