use nalgebra::Vector3;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::geom::{RigidPose, TriangleMesh};
use crate::handmodel::{HandModel, InteractionFrame, Trajectory};
use crate::synth::{perturb, PerturbConfig, ScriptSampler};

fn gt_clip(seed: u64) -> Trajectory {
    ScriptSampler::default().sample(&HandModel::human20(), 1.0 / 30.0, seed).unwrap().gt
}

/// Min over all monotone couplings of the max coupled distance, by recursion.
fn frechet_brute(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> f64 {
    fn walk(a: &[Vector3<f64>], b: &[Vector3<f64>], i: usize, j: usize, worst: f64, best: &mut f64) {
        let worst = worst.max((a[i] - b[j]).norm());
        if worst >= *best {
            return;
        }
        if i + 1 == a.len() && j + 1 == b.len() {
            *best = worst;
            return;
        }
        if i + 1 < a.len() {
            walk(a, b, i + 1, j, worst, best);
        }
        if j + 1 < b.len() {
            walk(a, b, i, j + 1, worst, best);
        }
        if i + 1 < a.len() && j + 1 < b.len() {
            walk(a, b, i + 1, j + 1, worst, best);
        }
    }
    let mut best = f64::INFINITY;
    walk(a, b, 0, 0, 0.0, &mut best);
    best
}

fn random_seq(rng: &mut ChaCha8Rng, max_len: usize) -> Vec<Vector3<f64>> {
    let n = rng.random_range(1..=max_len);
    (0..n).map(|_| Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect()
}

#[test]
fn mpjpe_examples() {
    let model = HandModel::human20();
    let gt = gt_clip(0);
    assert_eq!(mpjpe(&gt, &gt, &model).unwrap(), 0.0);
    let shifted = gt.transformed(&RigidPose::from_translation(Vector3::new(0.003, 0.0, 0.004)));
    assert!((mpjpe(&shifted, &gt, &model).unwrap() - 5.0).abs() < 1e-9);
    let short = Trajectory { frames: gt.frames[..10].to_vec(), ..gt.clone() };
    assert_eq!(mpjpe(&short, &gt, &model), Err(MetricError::LengthMismatch(10, 60)));
}

#[test]
fn add_s_examples() {
    let pts: Vec<_> = (0..50).map(|i| Vector3::new(i as f64 * 0.01, (i % 7) as f64 * 0.02, 0.0)).collect();
    let poses = vec![RigidPose::from_axis_angle(Vector3::new(0.1, 0.2, 0.3), Vector3::new(1.0, 0.0, 0.0)); 3];
    assert_eq!(add_s(&poses, &poses, &pts, None).unwrap(), 0.0);
    // with a sparse line of points the nearest neighbour after a small shift is the shifted point itself
    let line: Vec<_> = (0..20).map(|i| Vector3::new(i as f64, 0.0, 0.0)).collect();
    let d = Vector3::new(0.0, 0.002, 0.0);
    let moved: Vec<_> = poses.iter().map(|p| RigidPose::new(*p.rotation(), p.translation() + d)).collect();
    assert!((add_s(&moved, &poses, &line, None).unwrap() - 2.0).abs() < 1e-9);
    assert_eq!(add_s(&poses, &poses, &[], None), Err(MetricError::EmptyPoints));
}

#[test]
fn add_s_is_blind_to_symmetries() {
    // icosphere vertices map onto themselves under a 120° turn about (1,1,1)
    let sphere = TriangleMesh::icosphere(0.05, 2).unwrap();
    let pts = sphere.vertices().to_vec();
    let axis = Vector3::new(1.0, 1.0, 1.0).normalize();
    let c = Vector3::new(0.2, -0.1, 0.4);
    let gt = vec![RigidPose::from_translation(c)];
    let pred = vec![RigidPose::from_axis_angle(axis * (2.0 * std::f64::consts::PI / 3.0), c)];
    assert!(add_s(&pred, &gt, &pts, None).unwrap() < 1e-6);
    assert!(add(&pred, &gt, &pts, None).unwrap() > 10.0);
}

#[test]
fn frechet_small_cases() {
    let a = vec![Vector3::new(0.0, 0.0, 0.0), Vector3::new(1.0, 0.0, 0.0)];
    assert_eq!(frechet(&a, &a), 0.0);
    assert!((frechet(&[Vector3::zeros()], &[Vector3::new(0.0, 0.003, 0.004)]) - 5.0).abs() < 1e-12);
}

#[test]
fn frechet_matches_exhaustive_couplings() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..500 {
        let a = random_seq(&mut rng, 6);
        let b = random_seq(&mut rng, 6);
        assert_eq!(frechet_m(&a, &b), frechet_brute(&a, &b));
    }
}

#[test]
fn frechet_metric_properties() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..300 {
        let a = random_seq(&mut rng, 9);
        let b = random_seq(&mut rng, 9);
        let c = random_seq(&mut rng, 9);
        let ab = frechet_m(&a, &b);
        assert_eq!(ab, frechet_m(&b, &a));
        assert!(frechet_m(&a, &c) <= ab + frechet_m(&b, &c) + 1e-9);
        let ends = (a[0] - b[0]).norm().max((a[a.len() - 1] - b[b.len() - 1]).norm());
        assert!(ab >= ends);
        let directed = a.iter().map(|x| b.iter().map(|y| (x - y).norm()).fold(f64::INFINITY, f64::min)).fold(0.0, f64::max);
        assert!(ab >= directed);
    }
}

#[test]
fn jerk_examples() {
    let dt = 0.1;
    let linear: Vec<_> = (0..10).map(|t| Vector3::new(0.5 * t as f64, 1.0, -0.2 * t as f64)).collect();
    assert!(jerk(&linear, dt).mm < 1e-9);
    let c = 0.001;
    let cubic: Vec<_> = (0..10).map(|t| Vector3::new(c * (t as f64).powi(3), 0.0, 0.0)).collect();
    let j = jerk(&cubic, dt);
    assert!((j.mm - 6.0 * c * 1000.0).abs() < 1e-9);
    assert!((j.mm_per_s3 - j.mm / 1e-3).abs() < 1e-6);
    let eps = 0.002;
    let alt: Vec<_> = (0..12).map(|t| Vector3::new(if t % 2 == 0 { eps } else { -eps }, 0.0, 0.0)).collect();
    assert!((jerk(&alt, dt).mm - 8.0 * eps * 1000.0).abs() < 1e-9);
    let short = jerk(&linear[..3], dt);
    assert!(short.too_short && short.mm == 0.0);
}

#[test]
fn grasp_success_thresholds() {
    let model = HandModel::human20();
    let f = gt_clip(1).frames.last().unwrap().clone();
    let crit = SuccessCriteria::default();
    let r = grasp_success(&f, &f, &crit, &model).unwrap();
    assert!(r.success && r.rot_err_deg == 0.0 && r.trans_err_m == 0.0);

    let turned = |deg: f64| InteractionFrame {
        object: RigidPose::from_axis_angle(Vector3::new(0.0, 0.0, deg.to_radians()), Vector3::zeros()).compose(&f.object).with_translation(*f.object.translation()),
        ..f.clone()
    };
    assert!(grasp_success(&turned(29.0), &f, &crit, &model).unwrap().success);
    let r = grasp_success(&turned(31.0), &f, &crit, &model).unwrap();
    assert_eq!(r.violated, vec!["rotation"]);

    let moved = InteractionFrame { object: f.object.with_translation(f.object.translation() + Vector3::new(0.031, 0.0, 0.0)), ..f.clone() };
    let r = grasp_success(&moved, &f, &crit, &model).unwrap();
    assert!(!r.success);
    assert_eq!(r.violated, vec!["translation"]);
}

#[test]
fn report_rows_and_columns() {
    let model = HandModel::human20();
    let it = ScriptSampler::default().sample(&model, 1.0 / 30.0, 2).unwrap();
    let pts = crate::handmodel::canonical_object_points(&it.mesh, 128).unwrap().points;
    let same = evaluate("a", &it.gt, &it.gt, &model, &pts).unwrap();
    assert_eq!(same.fd_obj, 0.0);
    // jerk is a property of the predicted track alone
    assert!(same.jk_hand > 0.0 && same.jk_hand < 1.0);
    assert_eq!(same.mpjpe, 0.0);
    assert_eq!(same.add_s, 0.0);
    assert_eq!(same.fd_hand, 0.0);
    let noisy = perturb(&it.gt, &PerturbConfig::default().with_seed(1));
    let r = evaluate("b", &noisy, &it.gt, &model, &pts).unwrap();
    assert!(r.values().iter().all(|v| *v > 0.0 && v.is_finite()));
    let report = MetricReport::new(vec![same, r.clone()]);
    assert!((report.mean.mpjpe - r.mpjpe / 2.0).abs() < 1e-12);
    let csv = report.to_csv();
    assert!(csv.starts_with("name,MPJPE,ADD-S,FD (hand),FD (obj),JK (hand),JK (obj)\n"));
    assert_eq!(csv.lines().count(), 4);
}

proptest! {
    #[test]
    fn pose_metrics_are_rigidly_invariant(ax in -1.0..1.0f64, ay in -1.0..1.0f64, angle in 0.0..3.0f64, tx in -1.0..1.0f64, seed in 0u64..4) {
        let model = HandModel::human20();
        let gt = gt_clip(seed);
        let pred = perturb(&gt, &PerturbConfig::default().with_seed(seed + 10));
        let axis = Vector3::new(ax, ay, 0.5).normalize();
        let g = RigidPose::from_axis_angle(axis * angle, Vector3::new(tx, 0.3, -0.2));
        let a = mpjpe(&pred, &gt, &model).unwrap();
        let b = mpjpe(&pred.transformed(&g), &gt.transformed(&g), &model).unwrap();
        prop_assert!((a - b).abs() < 1e-9);
        let pts: Vec<_> = (0..30).map(|i| Vector3::new((i as f64).sin() * 0.03, (i as f64 * 1.3).cos() * 0.02, 0.001 * i as f64)).collect();
        let po: Vec<_> = pred.frames.iter().map(|f| f.object).collect();
        let go: Vec<_> = gt.frames.iter().map(|f| f.object).collect();
        let tp: Vec<_> = po.iter().map(|p| g.compose(p)).collect();
        let tg: Vec<_> = go.iter().map(|p| g.compose(p)).collect();
        let s1 = add_s(&po, &go, &pts, None).unwrap();
        prop_assert!((s1 - add_s(&tp, &tg, &pts, None).unwrap()).abs() < 1e-9);
        prop_assert!(s1 <= add(&po, &go, &pts, None).unwrap() + 1e-12);
    }
}
