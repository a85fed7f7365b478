//! Rotation-group helpers: exponential and logarithm maps on unit quaternions
//! and the SO(3) Jacobians used by the analytic gradients elsewhere in the crate.

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};

const SMALL_ANGLE: f64 = 1e-8;

/// Skew-symmetric matrix with `hat(a) * b == a.cross(&b)`.
pub fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Canonical unit quaternion: `w >= 0`, and when `w == 0` the first non-zero
/// vector component is positive. Every rotation has exactly one canonical form.
pub fn canonicalize(q: Quaternion<f64>) -> UnitQuaternion<f64> {
    let mut u = UnitQuaternion::new_normalize(q).into_inner();
    let flip = if u.w != 0.0 {
        u.w < 0.0
    } else {
        let v = u.vector();
        let first = [v.x, v.y, v.z].into_iter().find(|c| *c != 0.0).unwrap_or(0.0);
        first < 0.0
    };
    if flip {
        u = -u;
    }
    UnitQuaternion::new_unchecked(u)
}

/// Exponential map from an axis-angle vector (radians) to a canonical unit quaternion.
pub fn exp(v: &Vector3<f64>) -> UnitQuaternion<f64> {
    let theta = v.norm();
    let q = if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        let s = 0.5 - t2 / 48.0;
        Quaternion::new(1.0 - t2 / 8.0, s * v.x, s * v.y, s * v.z)
    } else {
        let half = 0.5 * theta;
        let s = half.sin() / theta;
        Quaternion::new(half.cos(), s * v.x, s * v.y, s * v.z)
    };
    canonicalize(q)
}

/// Principal logarithm: the returned axis-angle vector has norm in `[0, π]`.
///
/// At exactly π the quaternion has `w == 0` and the sign is fixed by
/// [`canonicalize`], so the axis is the one whose first non-zero component is positive.
pub fn log(q: &UnitQuaternion<f64>) -> Vector3<f64> {
    let c = canonicalize(*q.quaternion());
    let w = c.w;
    let v = c.vector().into_owned();
    let n = v.norm();
    if n == 0.0 {
        return Vector3::zeros();
    }
    let angle = 2.0 * n.atan2(w);
    v * (angle / n)
}

/// Geodesic angle between two rotations, in `[0, π]`.
pub fn angle_between(a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>) -> f64 {
    log(&(a.inverse() * b)).norm()
}

/// Left Jacobian: `exp(φ + δ) ≈ exp(J_l(φ) δ) exp(φ)`.
pub fn left_jacobian(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let p = hat(phi);
    let p2 = p * p;
    if theta < 1e-5 {
        return Matrix3::identity() + p * 0.5 + p2 * (1.0 / 6.0);
    }
    let t2 = theta * theta;
    Matrix3::identity() + p * ((1.0 - theta.cos()) / t2) + p2 * ((theta - theta.sin()) / (t2 * theta))
}

fn inverse_jacobian_coefficient(theta: f64) -> f64 {
    if theta < 1e-4 {
        // series of 1/θ² − (1+cosθ)/(2θ sinθ)
        1.0 / 12.0 + theta * theta / 720.0
    } else {
        1.0 / (theta * theta) - (1.0 + theta.cos()) / (2.0 * theta * theta.sin())
    }
}

/// Inverse left Jacobian: `log(exp(δ) exp(φ)) ≈ φ + J_l⁻¹(φ) δ`.
pub fn left_jacobian_inv(phi: &Vector3<f64>) -> Matrix3<f64> {
    let p = hat(phi);
    Matrix3::identity() - p * 0.5 + p * p * inverse_jacobian_coefficient(phi.norm())
}

/// Inverse right Jacobian: `log(exp(φ) exp(δ)) ≈ φ + J_r⁻¹(φ) δ`.
pub fn right_jacobian_inv(phi: &Vector3<f64>) -> Matrix3<f64> {
    let p = hat(phi);
    Matrix3::identity() + p * 0.5 + p * p * inverse_jacobian_coefficient(phi.norm())
}
