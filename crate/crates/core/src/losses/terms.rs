use nalgebra::{Matrix3, Vector3};

use super::{LossConfig, LossError, LossReport, LossWeights, Scene};
use crate::geom::{so3, PointCloud, RigidPose, TriangleMesh};
use crate::handmodel::{Frame, HandModel, HandPose, Trajectory};

/// Gradient with respect to a left perturbation `exp(rot)·R, t + trans`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PoseGrad {
    pub rot: Vector3<f64>,
    pub trans: Vector3<f64>,
}

/// Loss gradient for one predicted frame.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FrameGrad {
    pub wrist: PoseGrad,
    pub joints: Vec<f64>,
    pub object: PoseGrad,
}

#[derive(Clone, Debug)]
pub struct TrajectoryLoss {
    pub report: LossReport,
    /// Present when requested; one entry per predicted frame.
    pub grad: Option<Vec<FrameGrad>>,
}

fn check_len(what: &str, a: usize, b: usize) -> Result<(), LossError> {
    if a != b {
        return Err(LossError::Shape(format!("{what}: {a} vs {b}")));
    }
    Ok(())
}

fn valid_count(mask: &[bool]) -> Result<usize, LossError> {
    match mask.iter().filter(|m| **m).count() {
        0 => Err(LossError::NoValidFrames),
        n => Ok(n),
    }
}

/// Corresponding-point reconstruction: Σ over valid frames and points of
/// ‖x̂ − x‖, divided by (valid frames · points per frame).
pub fn pc_loss(pred: &[PointCloud], gt: &[PointCloud], mask: &[bool]) -> Result<f64, LossError> {
    check_len("frames", pred.len(), gt.len())?;
    check_len("mask", pred.len(), mask.len())?;
    let n = valid_count(mask)?;
    let m = gt.iter().zip(mask).find(|(_, v)| **v).map(|(c, _)| c.len()).unwrap_or(0);
    if m == 0 {
        return Err(LossError::Shape("empty point cloud".into()));
    }
    let mut sum = 0.0;
    for ((p, g), _) in pred.iter().zip(gt).zip(mask).filter(|(_, v)| **v) {
        check_len("points", p.len(), m)?;
        check_len("points", g.len(), m)?;
        sum += p.points.iter().zip(&g.points).map(|(a, b)| (a - b).norm()).sum::<f64>();
    }
    Ok(sum / (n * m) as f64)
}

/// Joint-angle reconstruction: mean over valid frames of ‖ĵ − j‖².
pub fn ja_loss(pred: &[Vec<f64>], gt: &[Vec<f64>], mask: &[bool]) -> Result<f64, LossError> {
    check_len("frames", pred.len(), gt.len())?;
    check_len("mask", pred.len(), mask.len())?;
    let n = valid_count(mask)?;
    let mut sum = 0.0;
    for ((p, g), _) in pred.iter().zip(gt).zip(mask).filter(|(_, v)| **v) {
        check_len("joints", p.len(), g.len())?;
        sum += p.iter().zip(g).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    Ok(sum / n as f64)
}

/// Penetration: Σ over valid frames and hand points of max(0, −sd) against
/// the posed mesh, divided by (valid frames · hand points).
pub fn pene_loss(hand: &[PointCloud], mesh: &TriangleMesh, object: &[RigidPose], mask: &[bool]) -> Result<f64, LossError> {
    check_len("frames", hand.len(), object.len())?;
    check_len("mask", hand.len(), mask.len())?;
    let n = valid_count(mask)?;
    let v = hand.iter().zip(mask).find(|(_, m)| **m).map(|(c, _)| c.len()).unwrap_or(0);
    if v == 0 {
        return Err(LossError::Shape("empty hand cloud".into()));
    }
    let mut sum = 0.0;
    for ((cloud, pose), _) in hand.iter().zip(object).zip(mask).filter(|(_, m)| **m) {
        check_len("hand points", cloud.len(), v)?;
        let inv = pose.inverse();
        for x in &cloud.points {
            let q = inv.transform_point(x);
            if mesh.aabb_contains(&q) {
                sum += (-mesh.signed_distance(&q)).max(0.0);
            }
        }
    }
    Ok(sum / (n * v) as f64)
}

fn cosine(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let (na, nb) = (a.norm(), b.norm());
    if na < 1e-12 || nb < 1e-12 {
        0.0
    } else {
        a.dot(b) / (na * nb)
    }
}

struct SmoothTrack<'a> {
    poses: Vec<&'a RigidPose>,
}

/// Raw sum over valid triples of max(0, −α) + max(0, −γ) for one pose track,
/// optionally accumulating the gradient (scaled by `w`) into `grad`.
fn smooth_track(track: &SmoothTrack, mask: &[bool], w: f64, mut grad: Option<&mut [PoseGrad]>) -> (f64, usize) {
    let p = &track.poses;
    let mut sum = 0.0;
    let mut triples = 0;
    for t in 1..p.len().saturating_sub(1) {
        if !(mask[t - 1] && mask[t] && mask[t + 1]) {
            continue;
        }
        triples += 1;
        let (r0, r1, r2) = (p[t - 1].rotation(), p[t].rotation(), p[t + 1].rotation());
        let phi1 = so3::log(&(r0.inverse() * r1));
        let phi2 = so3::log(&(r1.inverse() * r2));
        let alpha = phi1.dot(&phi2);
        let v1 = p[t].translation() - p[t - 1].translation();
        let v2 = p[t + 1].translation() - p[t].translation();
        let gamma = cosine(&v1, &v2);
        sum += (-alpha).max(0.0) + (-gamma).max(0.0);
        let Some(g) = grad.as_deref_mut() else { continue };
        if alpha < 0.0 {
            let m1: Matrix3<f64> = r1.to_rotation_matrix().into_inner();
            let m2: Matrix3<f64> = r2.to_rotation_matrix().into_inner();
            let a = m1 * so3::right_jacobian_inv(&phi1).transpose() * phi2;
            let b = m2 * so3::right_jacobian_inv(&phi2).transpose() * phi1;
            // d(−α)
            g[t - 1].rot += w * a;
            g[t].rot -= w * (a - b);
            g[t + 1].rot -= w * b;
        }
        if gamma < 0.0 {
            let (n1, n2) = (v1.norm(), v2.norm());
            let d1 = -(v2 / (n1 * n2) - v1 * (gamma / (n1 * n1)));
            let d2 = -(v1 / (n1 * n2) - v2 * (gamma / (n2 * n2)));
            g[t - 1].trans -= w * d1;
            g[t].trans += w * (d1 - d2);
            g[t + 1].trans += w * d2;
        }
    }
    (sum, triples)
}

fn smooth_parts(traj: &Trajectory, wrist: bool, object: bool) -> (f64, usize) {
    let mask = traj.mask();
    let mut total = (0.0, 0);
    for (on, track) in [
        (wrist, SmoothTrack { poses: traj.frames.iter().map(|f| &f.wrist).collect() }),
        (object, SmoothTrack { poses: traj.frames.iter().map(|f| &f.object).collect() }),
    ] {
        if on {
            let (s, n) = smooth_track(&track, &mask, 1.0, None);
            total.0 += s;
            total.1 += n;
        }
    }
    total
}

/// Direction-reversal penalty summed over every valid consecutive triple of
/// the selected pose tracks (not averaged).
pub fn smooth_loss(traj: &Trajectory, wrist: bool, object: bool) -> f64 {
    smooth_parts(traj, wrist, object).0
}

/// Smoothness averaged per evaluated triple, for comparing clips of different length.
pub fn smooth_loss_normalized(traj: &Trajectory, wrist: bool, object: bool) -> f64 {
    let (s, n) = smooth_parts(traj, wrist, object);
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// λ_O·L_PC^O + λ_H·L_PC^H + λ_JA·L_JA for a predicted clip against GT.
pub fn rec_loss(pred: &Trajectory, gt: &Trajectory, scene: &Scene, w: &LossWeights) -> Result<f64, LossError> {
    let cfg = LossConfig { weights: *w, ..Default::default() };
    Ok(trajectory_loss(pred, gt, scene, &cfg, None, false)?.report.rec)
}

/// Full report for one clip.
pub fn total_loss(pred: &Trajectory, gt: &Trajectory, scene: &Scene, cfg: &LossConfig) -> Result<LossReport, LossError> {
    Ok(trajectory_loss(pred, gt, scene, cfg, None, false)?.report)
}

/// Accumulates a world-space point gradient `g` at `x` (a point rigidly
/// attached to `frame`) into wrist and joint gradients.
fn push_hand_point(model: &HandModel, pose: &HandPose, frame: Frame, x: &Vector3<f64>, g: &Vector3<f64>, out: &mut FrameGrad) {
    out.wrist.rot += (x - pose.root.translation()).cross(g);
    out.wrist.trans += g;
    for &k in model.chain(frame) {
        let (axis, origin) = model.joint_axis_world(pose, k);
        out.joints[k] += g.dot(&axis.cross(&(x - origin)));
    }
}

/// Loss of one clip, optionally with gradients.
///
/// `frames_norm` overrides the valid-frame count used as the denominator, so
/// a batch sharing one count sums to the batch-level loss. A frame counts as
/// valid when it is valid in both `pred` and `gt`.
pub fn trajectory_loss(
    pred: &Trajectory,
    gt: &Trajectory,
    scene: &Scene,
    cfg: &LossConfig,
    frames_norm: Option<usize>,
    want_grad: bool,
) -> Result<TrajectoryLoss, LossError> {
    check_len("frames", pred.len(), gt.len())?;
    let w = &cfg.weights;
    let mask: Vec<bool> = pred.frames.iter().zip(&gt.frames).map(|(a, b)| a.valid && b.valid).collect();
    let n = match frames_norm {
        Some(n) if n > 0 => n,
        Some(_) => return Err(LossError::NoValidFrames),
        None => valid_count(&mask)?,
    } as f64;
    let dof = scene.model.dof();
    let v = scene.pattern.len() as f64;
    let m = scene.object_canonical.len() as f64;
    let mut grads = want_grad.then(|| vec![FrameGrad { joints: vec![0.0; dof], ..Default::default() }; pred.len()]);

    let (mut pc_o, mut pc_h, mut ja, mut pene) = (0.0, 0.0, 0.0, 0.0);
    let c_o = w.rec * w.object_pc / (n * m);
    let c_h = w.rec * w.hand_pc / (n * v);
    let c_ja = w.rec * w.joint_angle / n;
    let c_pene = w.pene / (n * v);
    for (t, (pf, gf)) in pred.frames.iter().zip(&gt.frames).enumerate() {
        if !mask[t] {
            continue;
        }
        check_len("joints", pf.joints.len(), dof)?;
        check_len("joints", gf.joints.len(), dof)?;
        let p = scene.clouds(pf)?;
        let g = scene.clouds(gf)?;
        let mut fg = grads.as_mut().map(|gs| &mut gs[t]);

        for (y, y_gt) in p.object.iter().zip(&g.object) {
            let d = y - y_gt;
            let dist = d.norm();
            pc_o += dist;
            if let (Some(fg), true) = (fg.as_deref_mut(), dist > 0.0) {
                let gy = d * (c_o / dist);
                fg.object.rot += (y - pf.object.translation()).cross(&gy);
                fg.object.trans += gy;
            }
        }

        let inv_obj = pf.object.inverse();
        let r_obj = pf.object.rotation_matrix();
        for ((x, x_gt), s) in p.hand.iter().zip(&g.hand).zip(&scene.pattern.samples) {
            let d = x - x_gt;
            let dist = d.norm();
            pc_h += dist;
            let mut gx = if dist > 0.0 { d * (c_h / dist) } else { Vector3::zeros() };
            let q = inv_obj.transform_point(x);
            if scene.mesh.aabb_contains(&q) {
                let hit = scene.mesh.query(&q);
                if hit.signed_distance < 0.0 {
                    pene -= hit.signed_distance;
                    if let Some(fg) = fg.as_deref_mut() {
                        let r = q - hit.closest;
                        let len = r.norm();
                        if len > 0.0 {
                            // ∂(−sd)/∂q points from the surface toward the interior point
                            let g_world = r_obj * (r * (c_pene / len));
                            fg.object.rot += g_world.cross(&(x - pf.object.translation()));
                            fg.object.trans -= g_world;
                            gx += g_world;
                        }
                    }
                }
            }
            if let Some(fg) = fg.as_deref_mut() {
                push_hand_point(&scene.model, &p.pose, s.frame, x, &gx, fg);
            }
        }

        for (k, (a, b)) in pf.joints.iter().zip(&gf.joints).enumerate() {
            ja += (a - b) * (a - b);
            if let Some(fg) = fg.as_deref_mut() {
                fg.joints[k] += 2.0 * c_ja * (a - b);
            }
        }
    }
    pc_o /= n * m;
    pc_h /= n * v;
    ja /= n;
    pene /= n * v;

    let mut smooth = 0.0;
    let tracks: [(bool, Vec<&RigidPose>, bool); 2] = [
        (cfg.smooth_wrist, pred.frames.iter().map(|f| &f.wrist).collect(), true),
        (cfg.smooth_object, pred.frames.iter().map(|f| &f.object).collect(), false),
    ];
    for (on, poses, is_wrist) in tracks {
        if !on {
            continue;
        }
        let track = SmoothTrack { poses };
        match grads.as_mut() {
            Some(gs) => {
                let mut pg: Vec<PoseGrad> = vec![PoseGrad::default(); pred.len()];
                smooth += smooth_track(&track, &mask, w.smooth, Some(&mut pg)).0;
                for (f, g) in gs.iter_mut().zip(pg) {
                    let dst = if is_wrist { &mut f.wrist } else { &mut f.object };
                    dst.rot += g.rot;
                    dst.trans += g.trans;
                }
            }
            None => smooth += smooth_track(&track, &mask, w.smooth, None).0,
        }
    }

    Ok(TrajectoryLoss { report: LossReport::from_terms(pc_o, pc_h, ja, smooth, pene, w), grad: grads })
}

/// Batch-level report: every term's denominator counts valid frames across
/// the whole batch; the smoothness sum runs over every clip.
pub fn batch_loss(items: &[(&Trajectory, &Trajectory, &Scene)], cfg: &LossConfig) -> Result<LossReport, LossError> {
    let n: usize = items
        .iter()
        .map(|(p, g, _)| p.frames.iter().zip(&g.frames).filter(|(a, b)| a.valid && b.valid).count())
        .sum();
    if n == 0 {
        return Err(LossError::NoValidFrames);
    }
    let mut total = LossReport::default();
    for (p, g, s) in items {
        total.add(&trajectory_loss(p, g, s, cfg, Some(n), false)?.report);
    }
    Ok(total)
}
