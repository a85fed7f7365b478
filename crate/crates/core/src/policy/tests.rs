use nalgebra::{Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::geom::rotation_distance;
use crate::metrics::SuccessCriteria;
use crate::synth::{DatasetItem, ScriptSampler};

fn item(seed: u64) -> DatasetItem {
    ScriptSampler::default().sample(&HandModel::human20(), 1.0 / 30.0, seed).unwrap()
}

fn zero_residuals(anchor: &Trajectory) -> Vec<Residual> {
    vec![Residual::zero(anchor.frames[0].joints.len()); anchor.len()]
}

/// Frame whose index fingertip sphere sits `gap` outside the +x face of a cube.
fn frame_with_index_gap(gap: f64) -> (InteractionFrame, TriangleMesh, HandModel) {
    let model = HandModel::human20();
    let h = 0.02;
    let mesh = TriangleMesh::cuboid(Vector3::new(h, h, h)).unwrap();
    let wrist = RigidPose::identity();
    let joints = vec![0.0; model.dof()];
    let tip = model.fk(&wrist, &joints).unwrap().fingertips[1];
    let r = model.tips[1].radius;
    let object = RigidPose::from_translation(tip - Vector3::new(h + r + gap, 0.0, 0.0));
    (InteractionFrame { wrist, joints, object, valid: true }, mesh, model)
}

#[test]
fn far_fingertips_give_zero_contacts() {
    let (mut f, mesh, model) = frame_with_index_gap(0.0);
    f.object = RigidPose::from_translation(Vector3::new(5.0, 0.0, 0.0));
    assert!(contact_vector(&f, &mesh, &model, 0.005).unwrap().iter().all(|&c| c == 0.0));
}

#[test]
fn contact_at_the_radius_boundary_is_zero() {
    let (f, mesh, model) = frame_with_index_gap(0.01);
    let c = contact_vector(&f, &mesh, &model, 0.01).unwrap();
    assert!(c[1].abs() < 1e-15);
}

#[test]
fn touching_fingertip_reports_the_full_radius() {
    let (f, mesh, model) = frame_with_index_gap(0.0);
    let c = contact_vector(&f, &mesh, &model, 0.01).unwrap();
    assert!((c[1] - 0.01).abs() < 1e-12);
}

#[test]
fn flattened_state_length_matches_layout() {
    let model = HandModel::robot12();
    assert_eq!(state_len(model.dof(), model.finger_count()), 81);
    let it = item(0);
    let frames: Vec<InteractionFrame> = it
        .gt
        .frames
        .iter()
        .map(|f| InteractionFrame { joints: vec![0.5; 12], ..f.clone() })
        .collect();
    let anchor = Trajectory::new(it.gt.dt, "robot12", it.gt.mesh_hash.clone(), frames);
    let env = EnvLiteState::reset(anchor.frames[0].clone(), anchor.dt, &it.mesh, &model, &PolicyConfig::default()).unwrap();
    let s = assemble_state(&env, &anchor).unwrap();
    assert_eq!(s.flatten().len(), 81);
}

#[test]
fn velocities_vanish_at_start_and_when_static() {
    let it = item(1);
    let model = HandModel::human20();
    let cfg = PolicyConfig::default();
    let f0 = it.gt.frames[0].clone();
    let mut env = EnvLiteState::reset(f0.clone(), it.gt.dt, &it.mesh, &model, &cfg).unwrap();
    let still = Trajectory::new(it.gt.dt, "human20", "x", vec![f0.clone(); 5]);
    for t in 0..5 {
        let s = assemble_state(&env, &still).unwrap();
        assert!(s.joint_velocity.iter().all(|&v| v == 0.0), "t={t}");
        assert_eq!(s.wrist_twist, Vector6::zeros());
        assert_eq!(s.object_twist, Vector6::zeros());
        if t < 4 {
            env = env_step(&env, &Action::from_frame(&f0), &it.mesh, &model, &cfg).unwrap().state;
        }
    }
    assert!(matches!(assemble_state(&env, &Trajectory::new(it.gt.dt, "human20", "x", vec![f0; 2])), Err(PolicyError::IndexOutOfRange { .. })));
}

fn perfect_state(reference: &Reference, contacts: Vec<f64>) -> PolicyState {
    PolicyState {
        joints: reference.joints.clone(),
        joint_velocity: reference.joint_velocity.clone(),
        wrist: reference.wrist,
        wrist_twist: reference.wrist_twist,
        object: reference.object,
        object_twist: reference.object_twist,
        contacts,
        anchor_wrist: reference.wrist,
        anchor_joints: reference.joints.clone(),
        reference_object: reference.object,
    }
}

#[test]
fn perfect_tracking_with_full_contact_earns_every_weight() {
    let it = item(2);
    let r = Reference::at(&it.gt, 40).unwrap();
    let cfg = PolicyConfig { weights: RewardWeights { object: 0.7, wrist: 1.3, finger: 0.4, contact: 2.0 }, ..Default::default() };
    let terms = reward(&perfect_state(&r, vec![0.003; 5]), &r, &cfg);
    assert_eq!(terms.total, 0.7 + 1.3 + 0.4 + 2.0);
    let none = reward(&perfect_state(&r, vec![0.0; 5]), &r, &cfg);
    assert_eq!(none.contact, 0.0);
}

#[test]
fn reward_strictly_decreases_with_object_error() {
    let it = item(3);
    let r = Reference::at(&it.gt, 40).unwrap();
    let cfg = PolicyConfig::default();
    let mut prev = f64::INFINITY;
    for k in 0..20 {
        let mut s = perfect_state(&r, vec![0.001, 0.0, 0.002, 0.0, 0.0]);
        s.object = r.object.perturbed_left(&Vector3::zeros(), &Vector3::new(0.002 * k as f64, 0.0, 0.0));
        let terms = reward(&s, &r, &cfg);
        assert!(terms.total < prev);
        assert!([terms.object, terms.wrist, terms.finger, terms.contact].iter().all(|t| (0.0..=1.0).contains(t)));
        assert!(terms.total <= cfg.weights.sum());
        prev = terms.total;
    }
}

#[test]
fn zero_residual_keeps_the_anchor_action() {
    let model = HandModel::human20();
    let f = &item(4).gt.frames[30];
    let a = Action::from_frame(f);
    let out = compose_action(&a, &Residual::zero(model.dof()), &ResidualBounds::default(), &model).unwrap();
    assert_eq!(out, a);
}

#[test]
fn oversized_residuals_are_clipped_to_the_bound_surface() {
    let model = HandModel::human20();
    let f = &item(4).gt.frames[30];
    let a = Action::from_frame(f);
    let b = ResidualBounds::default();
    let d = Residual {
        wrist: PoseDelta::new(Vector3::new(1.0, -2.0, 0.5), Vector3::new(0.3, 0.1, 0.0)),
        joints: (0..model.dof()).map(|k| if k % 2 == 0 { 5.0 } else { -5.0 }).collect(),
    };
    let c = clip_residual(&d, &b);
    assert!((c.wrist.rotational.norm() - b.rotation).abs() < 1e-15);
    assert!((c.wrist.translational.norm() - b.translation).abs() < 1e-15);
    assert!(c.joints.iter().all(|v| v.abs() == b.joint));
    let out = compose_action(&a, &d, &b, &model).unwrap();
    let back = pose_diff(&out.wrist, &a.wrist);
    assert!((back.rotational - c.wrist.rotational).norm() < 1e-9);
    assert!((back.translational - c.wrist.translational).norm() < 1e-9);
    assert!(model.within_limits(&out.joints));
    let bad = Residual { joints: vec![f64::NAN; model.dof()], ..Residual::zero(model.dof()) };
    assert!(matches!(compose_action(&a, &bad, &b, &model), Err(PolicyError::NonFiniteResidual)));
}

#[test]
fn free_object_stays_put_while_the_hand_moves() {
    let (mut f, mesh, model) = frame_with_index_gap(0.0);
    f.object = RigidPose::from_translation(Vector3::new(1.0, 0.0, 0.0));
    let cfg = PolicyConfig::default();
    let mut env = EnvLiteState::reset(f.clone(), 0.1, &mesh, &model, &cfg).unwrap();
    for k in 1..5 {
        let a = Action { wrist: RigidPose::from_translation(Vector3::new(0.0, 0.01 * k as f64, 0.0)), joints: f.joints.clone() };
        env = env_step(&env, &a, &mesh, &model, &cfg).unwrap().state;
        assert_eq!(env.frame.object, f.object);
        assert!(!env.attached);
    }
}

#[test]
fn attached_object_follows_the_wrist_rigidly() {
    let it = item(5);
    let model = HandModel::human20();
    let cfg = PolicyConfig::default();
    let grasp = it.gt.frames[it.script.approach_frames + it.script.close_frames - 1].clone();
    let env0 = EnvLiteState::reset(grasp.clone(), it.gt.dt, &it.mesh, &model, &cfg).unwrap();
    assert!(env0.attached);
    let d = Vector3::new(0.01, -0.02, 0.03);
    let moved = Action { wrist: grasp.wrist.perturbed_left(&Vector3::zeros(), &d), joints: grasp.joints.clone() };
    let next = env_step(&env0, &moved, &it.mesh, &model, &cfg).unwrap();
    assert!(next.moved_object);
    assert!((next.state.frame.object.translation() - grasp.object.translation() - d).norm() < 1e-12);
    // a chain of arbitrary rigid moves keeps the wrist-to-object offset fixed
    let rel0 = grasp.wrist.inverse().compose(&grasp.object);
    let mut env = env0.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..20 {
        let rot = Vector3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1));
        let tr = Vector3::new(rng.random_range(-0.02..0.02), rng.random_range(-0.02..0.02), rng.random_range(-0.02..0.02));
        let a = Action { wrist: env.frame.wrist.perturbed_left(&rot, &tr), joints: grasp.joints.clone() };
        env = env_step(&env, &a, &it.mesh, &model, &cfg).unwrap().state;
        let rel = env.frame.wrist.inverse().compose(&env.frame.object);
        let d = pose_diff(&rel, &rel0);
        assert!(d.norm() < 1e-12, "{}", d.norm());
    }
}

#[test]
fn env_step_is_deterministic() {
    let it = item(6);
    let model = HandModel::human20();
    let cfg = PolicyConfig::default();
    let env = EnvLiteState::reset(it.gt.frames[40].clone(), it.gt.dt, &it.mesh, &model, &cfg).unwrap();
    let a = Action::from_frame(&it.gt.frames[41]);
    let x = env_step(&env, &a, &it.mesh, &model, &cfg).unwrap();
    let y = env_step(&env, &a, &it.mesh, &model, &cfg).unwrap();
    assert_eq!(x, y);
}

#[test]
fn replaying_a_gt_anchor_reproduces_the_object_motion() {
    let model = HandModel::human20();
    let cfg = PolicyConfig::default();
    for seed in 0..5 {
        let it = item(seed);
        let r = rollout(&it.gt, &zero_residuals(&it.gt), &it.mesh, &model, &cfg, &SuccessCriteria::default()).unwrap();
        let (a, b) = (r.trajectory.frames.last().unwrap(), it.gt.frames.last().unwrap());
        assert!((a.object.translation() - b.object.translation()).norm() < 1e-4, "seed {seed}");
        assert!(rotation_distance(&a.object, &b.object) < 1e-4);
        assert!(r.success.success, "seed {seed}: {:?}", r.success.violated);
    }
}

#[test]
fn breaking_contact_during_lift_drops_the_object() {
    let model = HandModel::human20();
    let cfg = PolicyConfig::default();
    for seed in 0..5 {
        let it = item(seed);
        let lift = it.script.approach_frames + it.script.close_frames;
        let open = contact_breaking_residual(&it.gt.frames[lift], &it.mesh, &model, &cfg).unwrap();
        let mut res = zero_residuals(&it.gt);
        for r in &mut res[lift..] {
            *r = open.clone();
        }
        let r = rollout(&it.gt, &res, &it.mesh, &model, &cfg, &SuccessCriteria::default()).unwrap();
        assert!(r.steps[lift..].iter().all(|s| s.contacts < 2), "seed {seed}");
        assert!(!r.success.success);
        assert!(r.success.violated.contains(&"translation".to_string()));
    }
}

#[test]
fn zero_residual_beats_single_frame_perturbations() {
    let model = HandModel::human20();
    let cfg = PolicyConfig::default();
    let criteria = SuccessCriteria::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for seed in 0..2 {
        let it = item(seed);
        let base = rollout(&it.gt, &zero_residuals(&it.gt), &it.mesh, &model, &cfg, &criteria).unwrap().cumulative_reward;
        for _ in 0..50 {
            let mut res = zero_residuals(&it.gt);
            let t = rng.random_range(0..it.gt.len());
            let dir = |rng: &mut ChaCha8Rng| Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            res[t] = Residual {
                wrist: PoseDelta::new(dir(&mut rng), dir(&mut rng)),
                joints: (0..model.dof()).map(|_| rng.random_range(-1.0..1.0)).collect(),
            };
            let r = rollout(&it.gt, &res, &it.mesh, &model, &cfg, &criteria).unwrap();
            assert!(base >= r.cumulative_reward, "seed {seed} t {t}: {base} < {}", r.cumulative_reward);
        }
    }
}

#[test]
fn rollout_log_has_one_row_per_step() {
    let model = HandModel::human20();
    let it = item(8);
    let r = rollout(&it.gt, &zero_residuals(&it.gt), &it.mesh, &model, &PolicyConfig::default(), &SuccessCriteria::default()).unwrap();
    let mut buf = Vec::new();
    r.write_log(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), it.gt.len() + 1);
    assert!(text.starts_with("t,r_object"));
    assert!(matches!(
        rollout(&it.gt, &zero_residuals(&it.gt)[1..], &it.mesh, &model, &PolicyConfig::default(), &SuccessCriteria::default()),
        Err(PolicyError::LengthMismatch { .. })
    ));
}
