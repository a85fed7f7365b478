use nalgebra::Vector3;

use super::*;
use crate::geom::{PointCloud, RigidPose, TriangleMesh};
use crate::handmodel::{HandModel, InteractionFrame, Trajectory};
use crate::synth::{perturb, PerturbConfig, ScriptSampler};

const DT: f64 = 1.0 / 30.0;

fn grasp(seed: u64) -> (Trajectory, Scene) {
    let model = HandModel::human20();
    let it = ScriptSampler::default().sample(&model, DT, seed).unwrap();
    let scene = Scene::new(&model, &it.mesh, 1.0, 256, 512).unwrap();
    (it.gt, scene)
}

fn line_clip(positions: &[Vector3<f64>], rot_step: Vector3<f64>) -> Trajectory {
    let frames = positions
        .iter()
        .enumerate()
        .map(|(t, p)| {
            let pose = RigidPose::from_axis_angle(rot_step * t as f64, *p);
            InteractionFrame { wrist: pose, joints: vec![0.0; 20], object: pose, valid: true }
        })
        .collect();
    Trajectory::new(DT, "human20", "x", frames)
}

fn cloud(points: Vec<Vector3<f64>>) -> PointCloud {
    PointCloud::new(points)
}

#[test]
fn pc_loss_examples() {
    let a = vec![cloud(vec![Vector3::new(0.0, 0.0, 0.0), Vector3::new(1.0, 2.0, 3.0)])];
    assert_eq!(pc_loss(&a, &a, &[true]).unwrap(), 0.0);
    let off = Vector3::new(0.03, 0.0, 0.0);
    let b: Vec<PointCloud> = a.iter().map(|c| cloud(c.points.iter().map(|p| p + off).collect())).collect();
    assert!((pc_loss(&b, &a, &[true]).unwrap() - 0.03).abs() < 1e-15);

    let gt = vec![a[0].clone(), a[0].clone()];
    let pred = vec![a[0].clone(), cloud(vec![Vector3::repeat(9.0); 2])];
    assert_eq!(pc_loss(&pred, &gt, &[true, false]).unwrap(), 0.0);
    assert_eq!(pc_loss(&pred, &gt, &[false, false]), Err(LossError::NoValidFrames));
}

#[test]
fn ja_loss_examples() {
    let gt = vec![vec![0.3; 20]];
    let pred = vec![vec![0.4; 20]];
    assert!((ja_loss(&pred, &gt, &[true]).unwrap() - 0.2).abs() < 1e-12);
    assert_eq!(ja_loss(&gt, &gt, &[true]).unwrap(), 0.0);
    let one = vec![vec![3.0, 4.0]];
    assert_eq!(ja_loss(&one, &[vec![0.0, 0.0]], &[true]).unwrap(), 25.0);
}

#[test]
fn pene_loss_examples() {
    let cube = TriangleMesh::cuboid(Vector3::repeat(0.5)).unwrap();
    let mut pts = vec![Vector3::new(2.0, 0.0, 0.0); 100];
    let id = [RigidPose::identity()];
    assert_eq!(pene_loss(&[cloud(pts.clone())], &cube, &id, &[true]).unwrap(), 0.0);
    pts[0] = Vector3::new(0.48, 0.0, 0.0);
    assert!((pene_loss(&[cloud(pts.clone())], &cube, &id, &[true]).unwrap() - 2e-4).abs() < 1e-12);
    pts[0] = Vector3::new(0.5, 0.1, 0.2);
    assert_eq!(pene_loss(&[cloud(pts.clone())], &cube, &id, &[true]).unwrap(), 0.0);
    // posed mesh: moving the cube onto the point puts it 0.5 deep
    let moved = [RigidPose::from_translation(Vector3::new(2.0, 0.0, 0.0))];
    let pts = vec![Vector3::new(2.0, 0.0, 0.0)];
    assert!((pene_loss(&[cloud(pts)], &cube, &moved, &[true]).unwrap() - 0.5).abs() < 1e-12);
}

#[test]
fn smooth_loss_examples() {
    let straight: Vec<_> = (0..6).map(|t| Vector3::new(0.01 * t as f64, 0.0, 0.0)).collect();
    assert_eq!(smooth_loss(&line_clip(&straight, Vector3::new(0.0, 0.0, 0.02)), true, false), 0.0);

    let reversal = [Vector3::zeros(), Vector3::new(0.01, 0.0, 0.0), Vector3::zeros()];
    assert_eq!(smooth_loss(&line_clip(&reversal, Vector3::zeros()), true, false), 1.0);
    assert_eq!(smooth_loss(&line_clip(&reversal, Vector3::zeros()), true, true), 2.0);

    assert_eq!(smooth_loss(&line_clip(&reversal[..2], Vector3::zeros()), true, true), 0.0);

    let mut masked = line_clip(&reversal, Vector3::zeros());
    masked.frames[0].valid = false;
    assert_eq!(smooth_loss(&masked, true, true), 0.0);

    // a rotation that turns back at one frame: α = −θ²
    let clip = {
        let mut c = line_clip(&straight[..3], Vector3::zeros());
        c.frames[1].wrist = RigidPose::from_axis_angle(Vector3::new(0.0, 0.0, 0.1), *c.frames[1].wrist.translation());
        c
    };
    assert!((smooth_loss(&clip, true, false) - 0.01).abs() < 1e-12);
    assert!((smooth_loss_normalized(&line_clip(&reversal, Vector3::zeros()), true, true) - 1.0).abs() < 1e-15);
}

#[test]
fn rec_and_total_combine_terms() {
    let (gt, scene) = grasp(0);
    let pred = perturb(&gt, &PerturbConfig::default().with_seed(3));
    let base = total_loss(&pred, &gt, &scene, &LossConfig::default()).unwrap();
    let zero = LossWeights { object_pc: 0.0, hand_pc: 0.0, joint_angle: 0.0, ..Default::default() };
    assert_eq!(rec_loss(&pred, &gt, &scene, &zero).unwrap(), 0.0);
    let only_obj = LossWeights { object_pc: 1.0, hand_pc: 0.0, joint_angle: 0.0, ..Default::default() };
    assert!((rec_loss(&pred, &gt, &scene, &only_obj).unwrap() - base.pc_object).abs() < 1e-15);
    let ones = LossWeights { object_pc: 1.0, hand_pc: 1.0, joint_angle: 1.0, ..Default::default() };
    let r = rec_loss(&pred, &gt, &scene, &ones).unwrap();
    assert!((r - (base.pc_object + base.pc_hand + base.joint_angle)).abs() < 1e-12);

    let w = LossWeights::default();
    let expect = w.rec * base.rec + w.smooth * base.smooth + w.pene * base.pene;
    assert!((base.total - expect).abs() < 1e-12);

    let iso = LossConfig { weights: LossWeights { smooth: 0.0, pene: 0.0, ..w }, ..Default::default() };
    let r = total_loss(&pred, &gt, &scene, &iso).unwrap();
    assert!((r.total - w.rec * r.rec).abs() < 1e-15);

    let scaled = LossConfig { weights: w.scaled(3.0), ..Default::default() };
    let r = total_loss(&pred, &gt, &scene, &scaled).unwrap();
    assert!((r.total - 3.0 * base.total).abs() < 1e-12 * base.total.max(1.0));
}

#[test]
fn ground_truth_scores_zero_smoothness_and_no_penetration() {
    for seed in 0..6 {
        let (gt, scene) = grasp(seed);
        let r = total_loss(&gt, &gt, &scene, &LossConfig::default()).unwrap();
        assert_eq!(r.smooth, 0.0);
        assert!(r.pene < 1e-4);
        assert_eq!(r.rec, 0.0);
        assert!(r.total <= LossWeights::default().pene * 1e-4);
    }
}

#[test]
fn invalid_frames_never_change_losses() {
    let (gt, scene) = grasp(1);
    let mut pred = perturb(&gt, &PerturbConfig::default().with_seed(5));
    for t in [3, 17, 40] {
        pred.frames[t].valid = false;
    }
    let cfg = LossConfig::default();
    let a = total_loss(&pred, &gt, &scene, &cfg).unwrap();
    for t in [3, 17, 40] {
        pred.frames[t].wrist = RigidPose::from_axis_angle(Vector3::new(1.0, 2.0, 0.5), Vector3::repeat(3.0));
        pred.frames[t].joints = vec![1.3; 20];
        pred.frames[t].object = RigidPose::from_translation(Vector3::repeat(-7.0));
    }
    assert_eq!(total_loss(&pred, &gt, &scene, &cfg).unwrap(), a);
}

#[test]
fn pc_loss_is_rigidly_invariant() {
    let (gt, scene) = grasp(2);
    let pred = perturb(&gt, &PerturbConfig::default().with_seed(6));
    let g = RigidPose::from_axis_angle(Vector3::new(0.3, -1.2, 0.4), Vector3::new(0.5, 0.1, -2.0));
    let cfg = LossConfig::default();
    let a = total_loss(&pred, &gt, &scene, &cfg).unwrap();
    let b = total_loss(&pred.transformed(&g), &gt.transformed(&g), &scene, &cfg).unwrap();
    assert!((a.pc_object - b.pc_object).abs() < 1e-12);
    assert!((a.pc_hand - b.pc_hand).abs() < 1e-12);
    assert!((a.joint_angle - b.joint_angle).abs() < 1e-15);
}

#[test]
fn batch_loss_shares_one_denominator() {
    let (g1, s1) = grasp(3);
    let (g2, s2) = grasp(4);
    let p1 = perturb(&g1, &PerturbConfig::default().with_seed(1));
    let p2 = perturb(&g2, &PerturbConfig::default().with_seed(2));
    let cfg = LossConfig::default();
    let b = batch_loss(&[(&p1, &g1, &s1), (&p2, &g2, &s2)], &cfg).unwrap();
    let a1 = total_loss(&p1, &g1, &s1, &cfg).unwrap();
    let a2 = total_loss(&p2, &g2, &s2, &cfg).unwrap();
    // equal lengths: batch mean terms are the average, smoothness sums
    assert!((b.pc_hand - 0.5 * (a1.pc_hand + a2.pc_hand)).abs() < 1e-12);
    assert!((b.smooth - (a1.smooth + a2.smooth)).abs() < 1e-12);
}

/// Central differences in the left-perturbation tangent of every frame.
fn fd_check(pred: &Trajectory, gt: &Trajectory, scene: &Scene, cfg: &LossConfig, frames: &[usize]) -> f64 {
    let h = 1e-5;
    let analytic = trajectory_loss(pred, gt, scene, cfg, None, true).unwrap().grad.unwrap();
    let eval = |p: &Trajectory| total_loss(p, gt, scene, cfg).unwrap().total;
    let mut worst: f64 = 0.0;
    let mut check = |a: f64, f: f64| {
        let rel = (a - f).abs() / (a.abs().max(f.abs()) + 1e-8);
        worst = worst.max(rel);
    };
    for &t in frames {
        for k in 0..3 {
            let e = Vector3::ith(k, h);
            let z = Vector3::zeros();
            let shift = |body: usize, rot: bool, sign: f64| {
                let mut p = pred.clone();
                let f = &mut p.frames[t];
                let target = if body == 0 { &mut f.wrist } else { &mut f.object };
                *target = if rot { target.perturbed_left(&(e * sign), &z) } else { target.perturbed_left(&z, &(e * sign)) };
                p
            };
            for body in 0..2 {
                for rot in [true, false] {
                    let fdv = (eval(&shift(body, rot, 1.0)) - eval(&shift(body, rot, -1.0))) / (2.0 * h);
                    let g = if body == 0 { &analytic[t].wrist } else { &analytic[t].object };
                    check(if rot { g.rot[k] } else { g.trans[k] }, fdv);
                }
            }
        }
        for j in 0..pred.frames[t].joints.len() {
            let mut a = pred.clone();
            let mut b = pred.clone();
            a.frames[t].joints[j] += h;
            b.frames[t].joints[j] -= h;
            check(analytic[t].joints[j], (eval(&a) - eval(&b)) / (2.0 * h));
        }
    }
    worst
}

#[test]
fn analytic_gradients_match_finite_differences() {
    let (gt, scene) = grasp(0);
    let pred = perturb(&gt, &PerturbConfig::default().with_seed(8));
    let r = total_loss(&pred, &gt, &scene, &LossConfig::default()).unwrap();
    assert!(r.pene > 0.0 && r.smooth > 0.0, "test needs every term active: {r:?}");
    let worst = fd_check(&pred, &gt, &scene, &LossConfig::default(), &[0, 1, 20, 35, 45, 59]);
    assert!(worst < 1e-4, "worst relative error {worst}");
}

#[test]
fn each_term_gradient_in_isolation() {
    let (gt, scene) = grasp(1);
    let pred = perturb(&gt, &PerturbConfig::default().with_seed(9));
    let zero = LossWeights { object_pc: 0.0, hand_pc: 0.0, joint_angle: 0.0, rec: 1.0, smooth: 0.0, pene: 0.0 };
    for w in [
        LossWeights { object_pc: 1.0, ..zero },
        LossWeights { hand_pc: 1.0, ..zero },
        LossWeights { joint_angle: 1.0, ..zero },
        LossWeights { smooth: 1.0, ..zero },
        LossWeights { pene: 1.0, ..zero },
    ] {
        let cfg = LossConfig { weights: w, ..Default::default() };
        let worst = fd_check(&pred, &gt, &scene, &cfg, &[2, 30, 44, 50]);
        assert!(worst < 1e-4, "{w:?}: worst relative error {worst}");
    }
}
