use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::SynthError;
use crate::geom::RigidPose;
use crate::handmodel::{InteractionFrame, Trajectory};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    /// Apply a uniformly random global rotation.
    pub rotation: bool,
    /// Global translation offset, meters per axis.
    pub translation_sigma: f64,
    /// Uniform range for the synchronized hand + object scale.
    pub scale_range: [f64; 2],
    /// Uniform range for the temporal resampling factor.
    pub resample_range: [f64; 2],
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { rotation: true, translation_sigma: 0.2, scale_range: [0.9, 1.1], resample_range: [0.7, 1.3], seed: 0 }
    }
}

/// One concrete augmentation drawn from an [`AugmentConfig`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentSample {
    pub rotation: UnitQuaternion<f64>,
    pub offset: Vector3<f64>,
    pub scale: f64,
    pub factor: f64,
}

impl AugmentSample {
    pub fn identity() -> Self {
        Self { rotation: UnitQuaternion::identity(), offset: Vector3::zeros(), scale: 1.0, factor: 1.0 }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let [s0, s1] = self.scale_range;
        let [f0, f1] = self.resample_range;
        if !(s0 > 0.0 && s0 <= s1 && s1.is_finite()) {
            return Err(SynthError::InvalidAugment("scale range must be positive and ordered".into()));
        }
        if !(f0 > 0.0 && f0 <= f1 && f1.is_finite()) {
            return Err(SynthError::InvalidAugment("resample range must be positive and ordered".into()));
        }
        if !(self.translation_sigma >= 0.0 && self.translation_sigma.is_finite()) {
            return Err(SynthError::InvalidAugment("translation sigma must be non-negative".into()));
        }
        Ok(())
    }

    pub fn sample(&self) -> Result<AugmentSample, SynthError> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let rotation = if self.rotation { uniform_rotation(&mut rng) } else { UnitQuaternion::identity() };
        let mut offset = Vector3::zeros();
        for k in 0..3 {
            let z: f64 = StandardNormal.sample(&mut rng);
            offset[k] = self.translation_sigma * z;
        }
        let uniform = |rng: &mut ChaCha8Rng, [a, b]: [f64; 2]| if b > a { rng.random_range(a..=b) } else { a };
        let scale = uniform(&mut rng, self.scale_range);
        let factor = uniform(&mut rng, self.resample_range);
        Ok(AugmentSample { rotation, offset, scale, factor })
    }
}

/// Uniform (Haar) rotation from a normalized 4D Gaussian.
fn uniform_rotation(rng: &mut ChaCha8Rng) -> UnitQuaternion<f64> {
    loop {
        let q: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
        if let Some(p) = RigidPose::from_wxyz(q, [0.0; 3]) {
            return *p.rotation();
        }
    }
}

pub fn augment(traj: &Trajectory, cfg: &AugmentConfig) -> Result<Trajectory, SynthError> {
    augment_with(traj, &cfg.sample()?)
}

/// Resamples to `round(factor·T)` frames, scales geometry and translations,
/// then applies the global rotation and translation offset.
pub fn augment_with(traj: &Trajectory, a: &AugmentSample) -> Result<Trajectory, SynthError> {
    if traj.is_empty() {
        return Err(SynthError::InvalidAugment("empty trajectory".into()));
    }
    let mut out = if a.factor == 1.0 { traj.clone() } else { resample(traj, a.factor)? };
    let g = RigidPose::new(a.rotation, a.offset);
    if a.scale != 1.0 {
        out.scale *= a.scale;
        for f in &mut out.frames {
            f.wrist = f.wrist.with_translation(f.wrist.translation() * a.scale);
            f.object = f.object.with_translation(f.object.translation() * a.scale);
        }
    }
    if g != RigidPose::identity() {
        out = out.transformed(&g);
    }
    Ok(out)
}

fn resample(traj: &Trajectory, factor: f64) -> Result<Trajectory, SynthError> {
    let t = traj.len();
    if t < 2 {
        return Err(SynthError::InvalidAugment("resampling needs at least two frames".into()));
    }
    let n = ((factor * t as f64).round() as usize).max(2);
    let mut frames = Vec::with_capacity(n);
    for i in 0..n {
        let u = i as f64 * (t - 1) as f64 / (n - 1) as f64;
        let k = (u.floor() as usize).min(t - 2);
        let w = u - k as f64;
        let (a, b) = (&traj.frames[k], &traj.frames[k + 1]);
        let lerp_pose = |p: &RigidPose, q: &RigidPose| {
            let rot = p.rotation().try_slerp(q.rotation(), w, 1e-12).unwrap_or(*p.rotation());
            RigidPose::new(rot, p.translation() + w * (q.translation() - p.translation()))
        };
        let nearest = if w < 0.5 { a } else { b };
        frames.push(InteractionFrame {
            wrist: lerp_pose(&a.wrist, &b.wrist),
            joints: a.joints.iter().zip(&b.joints).map(|(x, y)| x + w * (y - x)).collect(),
            object: lerp_pose(&a.object, &b.object),
            valid: nearest.valid,
        });
    }
    let mut out = traj.clone();
    out.frames = frames;
    Ok(out)
}
