use std::f64::consts::FRAC_PI_2;

use nalgebra::{Vector3, UnitQuaternion};
use proptest::prelude::*;

use super::*;
use crate::geom::{RigidPose, TriangleMesh};

fn random_pose(ax: f64, ay: f64, az: f64, angle: f64, t: [f64; 3]) -> RigidPose {
    let axis = Vector3::new(ax, ay, az);
    let axis = if axis.norm() < 1e-6 { Vector3::z() } else { axis.normalize() };
    RigidPose::from_axis_angle(axis * angle, Vector3::from(t))
}

#[test]
fn bundled_models_load() {
    let h = HandModel::human20();
    assert_eq!(h.dof(), 20);
    assert_eq!(h.finger_count(), 5);
    let r = HandModel::robot12();
    assert_eq!(r.dof(), 12);
    assert_eq!(r.finger_count(), 5);
    assert_ne!(h.hash(), r.hash());
}

#[test]
fn rest_pose_fingertips_follow_the_model_file() {
    let h = HandModel::human20();
    let pose = h.fk(&RigidPose::identity(), &vec![0.0; 20]).unwrap();
    // index: base (0.045, 0.027, 0.005) + proximal 0.04 + middle 0.025 + tip 0.02
    let tip = pose.fingertips[1];
    assert!((tip - Vector3::new(0.13, 0.027, 0.005)).norm() < 1e-12);
    // thumb points the other way
    let tip = pose.fingertips[0];
    assert!((tip - Vector3::new(-0.05 - 0.035 - 0.028 - 0.022, 0.0, 0.005)).norm() < 1e-12);
}

#[test]
fn fk_rejects_wrong_dimension() {
    let h = HandModel::human20();
    assert_eq!(
        h.fk(&RigidPose::identity(), &[0.0; 12]).unwrap_err(),
        HandModelError::DimensionMismatch { expected: 20, got: 12 }
    );
}

#[test]
fn wrist_translation_moves_every_fingertip() {
    let h = HandModel::human20();
    let q: Vec<f64> = (0..20).map(|i| 0.05 * i as f64).collect();
    let q = h.clamp(&q);
    let a = h.fk(&RigidPose::identity(), &q).unwrap();
    let b = h.fk(&RigidPose::from_translation(Vector3::new(0.0, 0.0, 0.1)), &q).unwrap();
    for (x, y) in a.fingertips.iter().zip(&b.fingertips) {
        assert!((y - x - Vector3::new(0.0, 0.0, 0.1)).norm() < 1e-12);
    }
}

#[test]
fn flexed_index_matches_planar_two_link_chain() {
    let h = HandModel::human20();
    let mut q = vec![0.0; 20];
    let mcp = 5;
    // 90° at the knuckle: the whole finger (0.085 m) points down the palm normal.
    q[mcp] = FRAC_PI_2;
    let pose = h.fk(&RigidPose::identity(), &q).unwrap();
    let base = Vector3::new(0.045, 0.027, 0.005);
    assert!((pose.fingertips[1] - (base + Vector3::new(0.0, 0.0, -0.085))).norm() < 1e-12);

    // knuckle θ1, middle joint θ2, planar in x–(−z): tip = l1·(cos θ1, −sin θ1) + l2·(cos(θ1+θ2), −sin(θ1+θ2))
    let (t1, t2) = (0.7, 0.9);
    q[mcp] = t1;
    q[mcp + 1] = t2;
    let pose = h.fk(&RigidPose::identity(), &q).unwrap();
    let (l1, l2) = (0.04, 0.045);
    let expect = base
        + Vector3::new(l1 * t1.cos() + l2 * (t1 + t2).cos(), 0.0, -(l1 * t1.sin() + l2 * (t1 + t2).sin()));
    assert!((pose.fingertips[1] - expect).norm() < 1e-12);
}

#[test]
fn clamp_is_idempotent_and_respects_limits() {
    let h = HandModel::human20();
    let q: Vec<f64> = (0..20).map(|i| (i as f64 - 10.0) * 0.4).collect();
    let c = h.clamp(&q);
    assert!(h.within_limits(&c));
    assert_eq!(h.clamp(&c), c);
}

#[test]
fn coupling_matrix_rows_sum_to_one() {
    let h = HandModel::human20();
    let r = HandModel::robot12();
    let c = r.coupling_matrix(&h).unwrap();
    assert_eq!(c.shape(), (12, 20));
    for row in c.row_iter() {
        assert!((row.sum() - 1.0).abs() < 1e-12);
    }
    let id = h.coupling_matrix(&h).unwrap();
    assert_eq!(id, nalgebra::DMatrix::identity(20, 20));
}

#[test]
fn model_validation_rejects_bad_files() {
    let bad_limits = HUMAN20_TOML.replacen("limits = [-0.35, 0.35]", "limits = [0.35, -0.35]", 1);
    assert!(matches!(HandModel::from_toml_str(&bad_limits), Err(HandModelError::Invalid(_))));
    let bad_radius = HUMAN20_TOML.replacen("radius = 0.013", "radius = 0.0", 1);
    assert!(matches!(HandModel::from_toml_str(&bad_radius), Err(HandModelError::Invalid(_))));
    assert!(matches!(HandModel::from_toml_str("id = 3"), Err(HandModelError::Parse(_))));
}

#[test]
fn one_sample_per_link_sits_on_its_first_sphere() {
    let h = HandModel::human20();
    let q = h.clamp(&vec![0.3; 20]);
    let wrist = random_pose(0.2, -0.4, 1.0, 0.8, [0.1, 0.2, -0.3]);
    let cloud = hand_surface_points(&h, &wrist, &q, h.links.len()).unwrap();
    let pose = h.fk(&wrist, &q).unwrap();
    for (p, link) in cloud.points.iter().zip(&h.links) {
        let s = link.spheres[0];
        let c = pose.frame(link.frame).transform_point(&s.center);
        assert!(((p - c).norm() - s.radius).abs() < 1e-12);
    }
    assert!(matches!(
        hand_surface_points(&h, &wrist, &q, h.links.len() - 1),
        Err(HandModelError::TooFewSamples { .. })
    ));
}

#[test]
fn hand_surface_has_exact_count_and_is_deterministic() {
    let h = HandModel::human20();
    let q = vec![0.0; 20];
    let a = hand_surface_points(&h, &RigidPose::identity(), &q, 256).unwrap();
    let b = hand_surface_points(&h, &RigidPose::identity(), &q, 256).unwrap();
    assert_eq!(a.len(), 256);
    assert_eq!(a.points, b.points);
}

#[test]
fn object_samples_lie_on_the_mesh() {
    let mesh = TriangleMesh::cuboid(Vector3::new(0.03, 0.02, 0.05)).unwrap();
    let cloud = canonical_object_points(&mesh, 512).unwrap();
    assert_eq!(cloud.len(), 512);
    for p in &cloud.points {
        assert!(mesh.signed_distance(p).abs() < 1e-7);
    }
    let again = canonical_object_points(&mesh, 512).unwrap();
    assert_eq!(cloud.points, again.points);
    let id = object_surface_points(&mesh, &RigidPose::identity(), 512).unwrap();
    assert_eq!(id.points, cloud.points);
    let d = Vector3::new(0.1, -0.2, 0.3);
    let moved = object_surface_points(&mesh, &RigidPose::from_translation(d), 512).unwrap();
    for (a, b) in moved.points.iter().zip(&cloud.points) {
        assert!((a - b - d).norm() < 1e-15);
    }
}

proptest! {
    #[test]
    fn fk_is_left_equivariant(
        ax in -1.0..1.0f64, ay in -1.0..1.0f64, az in -1.0..1.0f64, angle in 0.0..3.0f64,
        tx in -1.0..1.0f64, ty in -1.0..1.0f64, tz in -1.0..1.0f64,
        q in proptest::collection::vec(-0.3..1.5f64, 20),
    ) {
        let h = HandModel::human20();
        let q = h.clamp(&q);
        let w = random_pose(0.3, 0.1, -0.5, 1.1, [0.05, 0.0, 0.2]);
        let g = random_pose(ax, ay, az, angle, [tx, ty, tz]);
        let a = h.fk(&g.compose(&w), &q).unwrap();
        let b = h.fk(&w, &q).unwrap();
        for (x, y) in a.fingertips.iter().zip(&b.fingertips) {
            prop_assert!((x - g.transform_point(y)).norm() < 1e-9);
        }
        for (x, y) in a.joint_positions().iter().zip(b.joint_positions()) {
            prop_assert!((x - g.transform_point(&y)).norm() < 1e-9);
        }
        let ca = hand_surface_points(&h, &g.compose(&w), &q, 64).unwrap();
        let cb = hand_surface_points(&h, &w, &q, 64).unwrap();
        for (x, y) in ca.points.iter().zip(&cb.points) {
            prop_assert!((x - g.transform_point(y)).norm() < 1e-9);
        }
    }

    #[test]
    fn clamp_idempotent(q in proptest::collection::vec(-5.0..5.0f64, 12)) {
        let r = HandModel::robot12();
        let c = r.clamp(&q);
        prop_assert_eq!(r.clamp(&c), c);
    }
}

#[test]
fn rotation_helper_is_unit() {
    let p = random_pose(1.0, 2.0, 3.0, 2.0, [0.0; 3]);
    let q: UnitQuaternion<f64> = *p.rotation();
    assert!((q.norm() - 1.0).abs() < 1e-12);
}
