use std::f64::consts::PI;

use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::SynthError;
use crate::geom::{so3, RigidPose, TriangleMesh};
use crate::handmodel::{Frame, HandModel, HandPose, InteractionFrame, Trajectory};

/// Vertical gap between the palm plane and the top of the object at grasp time.
pub const GRASP_GAP: f64 = 0.01;

/// Scripted top-down grasp: approach from an offset, close the fingers, lift.
#[derive(Clone, Debug, PartialEq)]
pub struct GraspScript {
    pub approach_frames: usize,
    pub close_frames: usize,
    pub lift_frames: usize,
    /// Start of the approach relative to the grasp wrist position (world frame).
    pub approach_offset: Vector3<f64>,
    /// Start orientation relative to the grasp orientation, axis-angle (world frame).
    pub approach_rotation: Vector3<f64>,
    /// Open hand held during the approach.
    pub preshape: Vec<f64>,
    /// Joint targets each finger closes toward until it touches the object.
    pub closing_targets: Vec<f64>,
    pub lift_height: f64,
}

impl GraspScript {
    pub fn frames(&self) -> usize {
        self.approach_frames + self.close_frames + self.lift_frames
    }

    pub fn validate(&self, model: &HandModel) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidScript(m.to_string()));
        if self.approach_frames == 0 {
            return bad("approach needs at least one frame");
        }
        if self.lift_frames > 0 && self.close_frames == 0 {
            return bad("a lift must follow a close phase");
        }
        if self.lift_frames > 0 && !(self.lift_height > 0.0) {
            return bad("lift height must be positive");
        }
        if self.preshape.len() != model.dof() || self.closing_targets.len() != model.dof() {
            return bad("joint vectors must match the hand model");
        }
        if !model.within_limits(&self.preshape) || !model.within_limits(&self.closing_targets) {
            return bad("joint vectors must lie within the model limits");
        }
        let finite = self.approach_offset.iter().chain(self.approach_rotation.iter()).all(|v| v.is_finite());
        if !finite || !self.lift_height.is_finite() {
            return bad("non-finite script value");
        }
        Ok(())
    }
}

/// C¹ easing on [0, 1] with zero end slopes.
pub fn smoothstep(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * (3.0 - 2.0 * u)
}

/// Per-item seed derived from a base seed and the item index.
pub fn item_seed(base: u64, index: u64) -> u64 {
    // splitmix64 finalizer over the pair
    let mut z = base ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x6A09_E667_F3BC_C909);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn finger_joints(model: &HandModel, finger: usize) -> Vec<usize> {
    (0..model.dof()).filter(|&j| model.joints[j].finger == Some(finger)).collect()
}

fn frame_finger(model: &HandModel, frame: Frame) -> Option<usize> {
    match frame {
        Frame::Root => None,
        Frame::Joint(j) => model.joints[j].finger,
    }
}

/// Smallest `sd(center) − radius` over the skin spheres of `finger` (or of the
/// whole hand when `finger` is `None`), with the object at the origin pose.
fn clearance(model: &HandModel, pose: &HandPose, mesh: &TriangleMesh, object: &RigidPose, finger: Option<usize>) -> f64 {
    let inv = object.inverse();
    let mut best = f64::INFINITY;
    for link in &model.links {
        if finger.is_some() && frame_finger(model, link.frame) != finger {
            continue;
        }
        let f = pose.frame(link.frame);
        for s in &link.spheres {
            let c = inv.transform_point(&f.transform_point(&s.center));
            best = best.min(mesh.signed_distance(&c) - s.radius);
        }
    }
    for tip in &model.tips {
        if finger.is_some() && Some(tip.finger) != finger {
            continue;
        }
        let c = inv.transform_point(&pose.fingertips[tip.finger]);
        best = best.min(mesh.signed_distance(&c) - tip.radius);
    }
    best
}

fn tip_gap(model: &HandModel, pose: &HandPose, mesh: &TriangleMesh, object: &RigidPose, finger: usize) -> f64 {
    let c = object.inverse().transform_point(&pose.fingertips[finger]);
    mesh.signed_distance(&c) - model.tips[finger].radius
}

/// Wrist pose in the object frame for the top-down grasp: aligned with the
/// object axes, palm `GRASP_GAP` above the top face, fingers and thumb
/// straddling the object symmetrically along x.
fn grasp_wrist_in_object(model: &HandModel, mesh: &TriangleMesh, preshape: &[f64]) -> Result<RigidPose, SynthError> {
    let pose = model.fk(&RigidPose::identity(), preshape)?;
    let thumb = 0;
    let (mut finger_inner, mut thumb_inner) = (f64::INFINITY, f64::NEG_INFINITY);
    for link in &model.links {
        let Some(f) = frame_finger(model, link.frame) else { continue };
        for s in &link.spheres {
            let c = pose.frame(link.frame).transform_point(&s.center);
            if f == thumb {
                thumb_inner = thumb_inner.max(c.x + s.radius);
            } else {
                finger_inner = finger_inner.min(c.x - s.radius);
            }
        }
    }
    let (lo, hi) = mesh.aabb();
    let center_x = 0.5 * (lo.x + hi.x);
    let x = center_x - 0.5 * (finger_inner + thumb_inner);
    let y = 0.5 * (lo.y + hi.y);
    Ok(RigidPose::from_translation(Vector3::new(x, y, hi.z + GRASP_GAP)))
}

/// Ground-truth grasp trajectory.
///
/// The seed places the object on the table plane (z = 0 under its lowest
/// vertex) at a random planar position and heading. The wrist follows a
/// straight smoothstep-timed approach while the orientation slerps along one
/// geodesic; each finger then closes toward its target and stops at the first
/// touch; during the lift the object rides rigidly with the wrist.
pub fn generate_gt(
    script: &GraspScript,
    mesh: &TriangleMesh,
    model: &HandModel,
    dt: f64,
    seed: u64,
) -> Result<Trajectory, SynthError> {
    script.validate(model)?;
    if !(dt > 0.0) {
        return Err(SynthError::InvalidScript(format!("dt must be positive, got {dt}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, _) = mesh.aabb();
    let heading = rng.random_range(-PI..PI);
    let place = Vector3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), -lo.z);
    let object = RigidPose::new(UnitQuaternion::from_axis_angle(&Vector3::z_axis(), heading), place);

    let wrist_grasp = object.compose(&grasp_wrist_in_object(model, mesh, &script.preshape)?);
    let pre_pose = model.fk(&wrist_grasp, &script.preshape)?;
    let open_clearance = clearance(model, &pre_pose, mesh, &object, None);
    if open_clearance < 0.0 {
        return Err(SynthError::Penetration { frame: script.approach_frames - 1, depth: -open_clearance });
    }

    // Close each finger independently along preshape → target, stopping at first touch.
    let mut closed = script.preshape.clone();
    for finger in 0..model.finger_count() {
        let idx = finger_joints(model, finger);
        let at = |s: f64| {
            let mut q = script.preshape.clone();
            for &j in &idx {
                q[j] = script.preshape[j] + s * (script.closing_targets[j] - script.preshape[j]);
            }
            q
        };
        let gap = |s: f64| -> Result<f64, SynthError> {
            Ok(clearance(model, &model.fk(&wrist_grasp, &at(s))?, mesh, &object, Some(finger)))
        };
        const SCAN: usize = 64;
        let mut bracket = None;
        let mut prev = 0.0;
        for k in 1..=SCAN {
            let s = k as f64 / SCAN as f64;
            if gap(s)? <= 0.0 {
                bracket = Some((prev, s));
                break;
            }
            prev = s;
        }
        let s = match bracket {
            None => 1.0,
            Some((mut a, mut b)) => {
                for _ in 0..60 {
                    let m = 0.5 * (a + b);
                    if gap(m)? <= 0.0 {
                        b = m;
                    } else {
                        a = m;
                    }
                }
                // the outer end of the bracket: touching, never inside
                a
            }
        };
        for &j in &idx {
            closed[j] = at(s)[j];
        }
    }
    let closed_pose = model.fk(&wrist_grasp, &closed)?;
    let tips = (0..model.finger_count()).filter(|&f| tip_gap(model, &closed_pose, mesh, &object, f) <= 1e-6).count();
    if tips < 2 {
        return Err(SynthError::TooFewContacts { tips });
    }

    let start_rot = so3::exp(&script.approach_rotation) * wrist_grasp.rotation();
    let start_t = wrist_grasp.translation() + script.approach_offset;
    let rot_delta = script.approach_rotation;
    let mut frames = Vec::with_capacity(script.frames());
    let na = script.approach_frames;
    for i in 0..na {
        let s = if na == 1 { 1.0 } else { smoothstep(i as f64 / (na - 1) as f64) };
        let rot = so3::exp(&(-s * rot_delta)) * start_rot;
        let t = start_t + s * (wrist_grasp.translation() - start_t);
        let wrist = if i + 1 == na { wrist_grasp } else { RigidPose::new(rot, t) };
        frames.push(InteractionFrame { wrist, joints: script.preshape.clone(), object, valid: true });
    }
    for i in 0..script.close_frames {
        let s = smoothstep((i + 1) as f64 / script.close_frames as f64);
        let joints = script.preshape.iter().zip(&closed).map(|(a, b)| a + s * (b - a)).collect();
        frames.push(InteractionFrame { wrist: wrist_grasp, joints, object, valid: true });
    }
    let grip = wrist_grasp.inverse().compose(&object);
    for i in 0..script.lift_frames {
        let s = smoothstep((i + 1) as f64 / script.lift_frames as f64);
        let wrist = wrist_grasp.with_translation(wrist_grasp.translation() + Vector3::z() * (s * script.lift_height));
        frames.push(InteractionFrame { wrist, joints: closed.clone(), object: wrist.compose(&grip), valid: true });
    }

    for (t, f) in frames.iter().enumerate() {
        let pose = model.fk(&f.wrist, &f.joints)?;
        let c = clearance(model, &pose, mesh, &f.object, None);
        if c < -1e-6 {
            return Err(SynthError::Penetration { frame: t, depth: -c });
        }
    }
    Ok(Trajectory::new(dt, model.id.clone(), mesh.content_hash(), frames))
}

/// One generated dataset item: the object mesh, its script and the GT clip.
#[derive(Clone, Debug)]
pub struct DatasetItem {
    pub mesh: TriangleMesh,
    pub script: GraspScript,
    pub gt: Trajectory,
    pub seed: u64,
}

/// Draws random box objects and grasp scripts within ranges the hand can hold.
#[derive(Clone, Debug, PartialEq)]
pub struct ScriptSampler {
    pub approach_frames: usize,
    pub close_frames: usize,
    pub lift_frames: usize,
    /// Half extents of the box objects, per axis min/max.
    pub half_extent_min: Vector3<f64>,
    pub half_extent_max: Vector3<f64>,
    pub approach_height: (f64, f64),
    pub approach_lateral: f64,
    pub approach_yaw: f64,
    pub lift_height: (f64, f64),
    pub max_attempts: usize,
}

impl Default for ScriptSampler {
    fn default() -> Self {
        Self {
            approach_frames: 30,
            close_frames: 12,
            lift_frames: 18,
            half_extent_min: Vector3::new(0.022, 0.015, 0.03),
            half_extent_max: Vector3::new(0.034, 0.035, 0.05),
            approach_height: (0.08, 0.12),
            approach_lateral: 0.008,
            approach_yaw: 0.1,
            lift_height: (0.06, 0.15),
            max_attempts: 32,
        }
    }
}

/// Open and closing hand for the claw grasp: only flexions move; the
/// knuckles start near vertical and close past it, curling the fingertips in.
fn claw_joints(model: &HandModel) -> (Vec<f64>, Vec<f64>) {
    let mut open = vec![0.0; model.dof()];
    let mut close = vec![0.0; model.dof()];
    for (i, j) in model.joints.iter().enumerate() {
        let (o, c): (f64, f64) = if j.name.ends_with("_mcp") {
            (1.35, 2.1)
        } else if j.name.ends_with("_pip") {
            (0.1, 0.5)
        } else if j.name.ends_with("_dip") {
            (0.05, 0.3)
        } else {
            (0.0, 0.0)
        };
        open[i] = o.clamp(j.lower, j.upper);
        close[i] = c.clamp(j.lower, j.upper);
    }
    (open, close)
}

impl ScriptSampler {
    pub fn frames(&self) -> usize {
        self.approach_frames + self.close_frames + self.lift_frames
    }

    /// Random object + script pair; not yet checked for graspability.
    pub fn draw(&self, model: &HandModel, rng: &mut ChaCha8Rng) -> Result<(TriangleMesh, GraspScript), SynthError> {
        let mut he = Vector3::zeros();
        for k in 0..3 {
            let (a, b) = (self.half_extent_min[k], self.half_extent_max[k]);
            he[k] = if b > a { rng.random_range(a..b) } else { a };
        }
        let mesh = TriangleMesh::cuboid(he)?;
        let phi = rng.random_range(-PI..PI);
        let r = self.approach_lateral * rng.random::<f64>().sqrt();
        let (h0, h1) = self.approach_height;
        let height = if h1 > h0 { rng.random_range(h0..h1) } else { h0 };
        let yaw = if self.approach_yaw > 0.0 { rng.random_range(-self.approach_yaw..self.approach_yaw) } else { 0.0 };
        let (l0, l1) = self.lift_height;
        let lift = if l1 > l0 { rng.random_range(l0..l1) } else { l0 };
        let (preshape, closing_targets) = claw_joints(model);
        let script = GraspScript {
            approach_frames: self.approach_frames,
            close_frames: self.close_frames,
            lift_frames: self.lift_frames,
            approach_offset: Vector3::new(r * phi.cos(), r * phi.sin(), height),
            approach_rotation: Vector3::new(0.0, 0.0, yaw),
            preshape,
            closing_targets,
            lift_height: lift,
        };
        Ok((mesh, script))
    }

    /// Draws until a script yields a valid GT clip (bounded retries).
    pub fn sample(&self, model: &HandModel, dt: f64, seed: u64) -> Result<DatasetItem, SynthError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..self.max_attempts {
            let (mesh, script) = self.draw(model, &mut rng)?;
            let gt_seed = rng.random::<u64>();
            match generate_gt(&script, &mesh, model, dt, gt_seed) {
                Ok(gt) => return Ok(DatasetItem { mesh, script, gt, seed: gt_seed }),
                Err(SynthError::TooFewContacts { .. } | SynthError::Penetration { .. }) => continue,
                Err(e) => return Err(e),
            }
        }
        Err(SynthError::SamplerExhausted { attempts: self.max_attempts })
    }
}
