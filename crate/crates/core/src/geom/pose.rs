use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use super::so3;

/// Rigid transform in SE(3): a canonical unit quaternion plus a translation in meters.
///
/// Points are mapped as `x ↦ R x + t`. The quaternion is kept canonical
/// (`w >= 0`) after every construction and composition.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidPose {
    rotation: UnitQuaternion<f64>,
    translation: Vector3<f64>,
}

/// Difference between two poses: axis-angle rotation (radians) and translation (meters).
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct PoseDelta {
    pub rotational: Vector3<f64>,
    pub translational: Vector3<f64>,
}

impl PoseDelta {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn new(rotational: Vector3<f64>, translational: Vector3<f64>) -> Self {
        Self { rotational, translational }
    }

    /// Euclidean norm of the stacked 6-vector.
    pub fn norm(&self) -> f64 {
        (self.rotational.norm_squared() + self.translational.norm_squared()).sqrt()
    }
}

impl Default for RigidPose {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidPose {
    pub fn identity() -> Self {
        Self { rotation: UnitQuaternion::identity(), translation: Vector3::zeros() }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation: so3::canonicalize(*rotation.quaternion()), translation }
    }

    /// Builds a pose from a raw `(w, x, y, z)` quaternion, normalizing it.
    /// Returns `None` for a zero or non-finite quaternion.
    pub fn from_wxyz(q: [f64; 4], t: [f64; 3]) -> Option<Self> {
        let quat = Quaternion::new(q[0], q[1], q[2], q[3]);
        let n = quat.norm();
        if !n.is_finite() || n == 0.0 || t.iter().any(|c| !c.is_finite()) {
            return None;
        }
        Some(Self {
            rotation: so3::canonicalize(quat),
            translation: Vector3::new(t[0], t[1], t[2]),
        })
    }

    /// Like [`RigidPose::from_wxyz`], but keeps an already canonical unit
    /// quaternion bit-for-bit instead of renormalizing it, so poses written
    /// with full precision read back identically.
    pub fn from_unit_wxyz(q: [f64; 4], t: [f64; 3]) -> Option<Self> {
        let quat = Quaternion::new(q[0], q[1], q[2], q[3]);
        let n2 = quat.norm_squared();
        if (n2 - 1.0).abs() <= 4.0 * f64::EPSILON && q[0] > 0.0 && t.iter().all(|c| c.is_finite()) {
            return Some(Self { rotation: UnitQuaternion::new_unchecked(quat), translation: Vector3::new(t[0], t[1], t[2]) });
        }
        Self::from_wxyz(q, t)
    }

    pub fn from_axis_angle(axis_angle: Vector3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation: so3::exp(&axis_angle), translation }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self { rotation: UnitQuaternion::identity(), translation }
    }

    pub fn rotation(&self) -> &UnitQuaternion<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    /// `(w, x, y, z)` quaternion components.
    pub fn wxyz(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn with_translation(&self, translation: Vector3<f64>) -> Self {
        Self { rotation: self.rotation, translation }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    pub fn inverse(&self) -> Self {
        let inv = self.rotation.inverse();
        Self::new(inv, -(inv * self.translation))
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &RigidPose) -> Self {
        Self::new(self.rotation * other.rotation, self.rotation * other.translation + self.translation)
    }

    /// Inverse of [`pose_diff`]: `b.apply_delta(&pose_diff(a, b)) ≈ a`.
    pub fn apply_delta(&self, delta: &PoseDelta) -> Self {
        Self::new(self.rotation * so3::exp(&delta.rotational), self.translation + delta.translational)
    }

    /// Left perturbation used for gradients and network corrections:
    /// rotation `exp(rot) R`, translation `t + trans`.
    pub fn perturbed_left(&self, rot: &Vector3<f64>, trans: &Vector3<f64>) -> Self {
        Self::new(so3::exp(rot) * self.rotation, self.translation + trans)
    }

    /// Quaternion norm deviation from one; used by invariant checks.
    pub fn quaternion_norm_error(&self) -> f64 {
        (self.rotation.quaternion().norm() - 1.0).abs()
    }
}

/// `a ∘ b` (apply `b`, then `a`).
pub fn pose_compose(a: &RigidPose, b: &RigidPose) -> RigidPose {
    a.compose(b)
}

/// The pose difference operator `a ⊖ b`: rotational part `log(R_bᵀ R_a)`
/// (principal branch), translational part `t_a − t_b`.
pub fn pose_diff(a: &RigidPose, b: &RigidPose) -> PoseDelta {
    PoseDelta {
        rotational: so3::log(&(b.rotation.inverse() * a.rotation)),
        translational: a.translation - b.translation,
    }
}

/// Geodesic rotation distance between two poses, radians.
pub fn rotation_distance(a: &RigidPose, b: &RigidPose) -> f64 {
    so3::angle_between(&a.rotation, &b.rotation)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn rot_z(angle: f64) -> RigidPose {
        RigidPose::from_axis_angle(Vector3::new(0.0, 0.0, angle), Vector3::zeros())
    }

    #[test]
    fn identity_is_neutral() {
        let p = RigidPose::from_axis_angle(Vector3::new(0.3, -0.1, 0.2), Vector3::new(1.0, 2.0, 3.0));
        let q = RigidPose::identity().compose(&p);
        assert_eq!(q, p);
    }

    #[test]
    fn compose_with_inverse_is_identity() {
        let p = RigidPose::from_axis_angle(Vector3::new(0.3, -1.1, 0.2), Vector3::new(1.0, 2.0, 3.0));
        let e = p.compose(&p.inverse());
        assert!(rotation_distance(&e, &RigidPose::identity()) < 1e-9);
        assert!(e.translation().norm() < 1e-9);
    }

    #[test]
    fn quarter_turns_about_z_make_a_half_turn() {
        // quaternion product oracle: (c,0,0,s)² = (c²−s², 0, 0, 2cs) = (0,0,0,1)
        let half = rot_z(FRAC_PI_2).compose(&rot_z(FRAC_PI_2));
        let q = half.wxyz();
        assert!(q[0].abs() < 1e-12 && q[1].abs() < 1e-12 && q[2].abs() < 1e-12);
        assert!((q[3] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn diff_examples() {
        let p = RigidPose::from_axis_angle(Vector3::new(0.1, 0.2, 0.3), Vector3::new(0.5, 0.0, 1.0));
        let d = pose_diff(&p, &p);
        assert!(d.norm() < 1e-15);

        let d = pose_diff(&rot_z(FRAC_PI_2), &RigidPose::identity());
        assert!((d.rotational - Vector3::new(0.0, 0.0, FRAC_PI_2)).norm() < 1e-12);
        assert!(d.translational.norm() == 0.0);

        let d = pose_diff(&RigidPose::from_translation(Vector3::x()), &RigidPose::identity());
        assert!(d.rotational.norm() == 0.0);
        assert_eq!(d.translational, Vector3::x());
    }

    #[test]
    fn half_turn_diff_is_deterministic() {
        let a = RigidPose::from_wxyz([0.0, 0.0, 0.0, 1.0], [0.0; 3]).unwrap();
        let b = RigidPose::from_wxyz([0.0, 0.0, 0.0, -1.0], [0.0; 3]).unwrap();
        let da = pose_diff(&a, &RigidPose::identity());
        let db = pose_diff(&b, &RigidPose::identity());
        assert_eq!(da, db);
        assert!((da.rotational.z - PI).abs() < 1e-15);
    }

    fn arb_pose(max_angle: f64) -> impl Strategy<Value = RigidPose> {
        (
            prop::array::uniform3(-1.0..1.0f64),
            0.0..max_angle,
            prop::array::uniform3(-2.0..2.0f64),
        )
            .prop_filter_map("nonzero axis", move |(axis, angle, t)| {
                let a = Vector3::from(axis);
                (a.norm() > 1e-3).then(|| RigidPose::from_axis_angle(a.normalize() * angle, Vector3::from(t)))
            })
    }

    proptest! {
        #[test]
        fn diff_recomposes(a in arb_pose(PI - 1e-3), b in arb_pose(PI - 1e-3)) {
            let d = pose_diff(&a, &b);
            prop_assume!(d.rotational.norm() < PI - 1e-3);
            let back = b.apply_delta(&d);
            prop_assert!(rotation_distance(&back, &a) < 1e-9);
            prop_assert!((back.translation() - a.translation()).norm() < 1e-9);
            prop_assert!(d.rotational.norm() <= PI);
        }

        #[test]
        fn composition_stays_unit(a in arb_pose(PI), b in arb_pose(PI)) {
            let c = a.compose(&b).compose(&a.inverse());
            prop_assert!(c.quaternion_norm_error() < 1e-9);
            prop_assert!(c.wxyz()[0] >= 0.0);
        }
    }
}
