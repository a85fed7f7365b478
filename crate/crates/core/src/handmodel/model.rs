use nalgebra::{DMatrix, DVector, Unit, UnitQuaternion, Vector3};
use serde::Deserialize;
use sha2::{Digest, Sha256};

use super::HandModelError;
use crate::geom::RigidPose;

/// Frame a link or fingertip hangs from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Frame {
    Root,
    Joint(usize),
}

#[derive(Clone, Debug)]
pub struct Joint {
    pub name: String,
    pub parent: Frame,
    /// Offset of the joint origin in the parent frame, meters.
    pub origin: Vector3<f64>,
    /// Unit rotation axis in the joint's own (pre-rotation) frame.
    pub axis: Vector3<f64>,
    pub lower: f64,
    pub upper: f64,
    pub finger: Option<usize>,
}

#[derive(Clone, Copy, Debug)]
pub struct Sphere {
    pub center: Vector3<f64>,
    pub radius: f64,
}

#[derive(Clone, Debug)]
pub struct Link {
    pub name: String,
    pub frame: Frame,
    pub spheres: Vec<Sphere>,
}

#[derive(Clone, Debug)]
pub struct Fingertip {
    pub finger: usize,
    pub frame: Frame,
    pub offset: Vector3<f64>,
    /// Radius of the skin sphere centered on the fingertip.
    pub radius: f64,
}

/// One robot joint's weighted sources in the human joint space.
#[derive(Clone, Debug, Deserialize)]
pub struct CouplingRow {
    pub joint: String,
    pub sources: Vec<CouplingSource>,
}

#[derive(Clone, Debug, Deserialize)]
pub struct CouplingSource {
    pub joint: String,
    pub weight: f64,
}

/// Articulated hand: a kinematic tree of revolute joints rooted at the wrist,
/// with a sphere skin per link and one fingertip frame per finger.
///
/// The same type describes human and robot hands; robot models may carry a
/// coupling table that projects human joint angles onto robot joints.
#[derive(Clone, Debug)]
pub struct HandModel {
    pub id: String,
    pub fingers: Vec<String>,
    pub joints: Vec<Joint>,
    pub links: Vec<Link>,
    pub tips: Vec<Fingertip>,
    pub coupling: Option<Vec<CouplingRow>>,
    hash: String,
    // joints from the root to (and including) each joint
    chains: Vec<Vec<usize>>,
}

pub type RobotHandModel = HandModel;

/// World-frame forward kinematics of one configuration.
#[derive(Clone, Debug)]
pub struct HandPose {
    pub root: RigidPose,
    /// Post-rotation frame of every joint.
    pub joint_frames: Vec<RigidPose>,
    pub fingertips: Vec<Vector3<f64>>,
}

impl HandPose {
    pub fn frame(&self, frame: Frame) -> &RigidPose {
        match frame {
            Frame::Root => &self.root,
            Frame::Joint(j) => &self.joint_frames[j],
        }
    }

    /// Joint-frame origins in world coordinates (one per joint).
    pub fn joint_positions(&self) -> Vec<Vector3<f64>> {
        self.joint_frames.iter().map(|f| *f.translation()).collect()
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    id: String,
    fingers: Vec<String>,
    joints: Vec<JointSpec>,
    links: Vec<LinkSpec>,
    tips: Vec<TipSpec>,
    #[serde(default)]
    coupling: Option<Vec<CouplingRow>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct JointSpec {
    name: String,
    parent: String,
    origin: [f64; 3],
    axis: [f64; 3],
    limits: [f64; 2],
    #[serde(default)]
    finger: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LinkSpec {
    name: String,
    frame: String,
    spheres: Vec<SphereSpec>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SphereSpec {
    center: [f64; 3],
    radius: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TipSpec {
    finger: String,
    frame: String,
    offset: [f64; 3],
    radius: f64,
}

pub const HUMAN20_TOML: &str = include_str!("../../models/human20.toml");
pub const ROBOT12_TOML: &str = include_str!("../../models/robot12.toml");

impl HandModel {
    /// Reference 20-DoF human hand (5 fingers × abduction + 3 flexions).
    pub fn human20() -> Self {
        Self::from_toml_str(HUMAN20_TOML).expect("bundled human20 model is valid")
    }

    /// Reference 12-DoF robot hand with a flexion-averaging coupling table.
    pub fn robot12() -> Self {
        Self::from_toml_str(ROBOT12_TOML).expect("bundled robot12 model is valid")
    }

    pub fn from_toml_str(text: &str) -> Result<Self, HandModelError> {
        let file: ModelFile = toml::from_str(text).map_err(|e| HandModelError::Parse(e.to_string()))?;
        let hash = hex::encode(&Sha256::digest(text.as_bytes())[..8]);
        Self::build(file, hash)
    }

    fn build(file: ModelFile, hash: String) -> Result<Self, HandModelError> {
        let finger_index = |name: &str| {
            file.fingers
                .iter()
                .position(|f| f == name)
                .ok_or_else(|| HandModelError::Invalid(format!("unknown finger `{name}`")))
        };
        let mut joints: Vec<Joint> = Vec::with_capacity(file.joints.len());
        let resolve = |name: &str, joints: &[Joint]| -> Result<Frame, HandModelError> {
            if name == "root" {
                return Ok(Frame::Root);
            }
            joints
                .iter()
                .position(|j| j.name == name)
                .map(Frame::Joint)
                .ok_or_else(|| HandModelError::Invalid(format!("frame `{name}` must be `root` or an earlier joint")))
        };
        for spec in &file.joints {
            if joints.iter().any(|j| j.name == spec.name) || spec.name == "root" {
                return Err(HandModelError::Invalid(format!("duplicate joint `{}`", spec.name)));
            }
            let axis = Vector3::from(spec.axis);
            if axis.norm() < 1e-12 {
                return Err(HandModelError::Invalid(format!("joint `{}` has a zero axis", spec.name)));
            }
            if !(spec.limits[0] < spec.limits[1]) {
                return Err(HandModelError::Invalid(format!("joint `{}` needs lower < upper", spec.name)));
            }
            let parent = resolve(&spec.parent, &joints)?;
            let finger = spec.finger.as_deref().map(finger_index).transpose()?;
            joints.push(Joint {
                name: spec.name.clone(),
                parent,
                origin: Vector3::from(spec.origin),
                axis: axis.normalize(),
                lower: spec.limits[0],
                upper: spec.limits[1],
                finger,
            });
        }

        let mut links = Vec::with_capacity(file.links.len());
        for spec in &file.links {
            if spec.spheres.is_empty() {
                return Err(HandModelError::Invalid(format!("link `{}` has no spheres", spec.name)));
            }
            if spec.spheres.iter().any(|s| !(s.radius > 0.0)) {
                return Err(HandModelError::Invalid(format!("link `{}` has a non-positive radius", spec.name)));
            }
            links.push(Link {
                name: spec.name.clone(),
                frame: resolve(&spec.frame, &joints)?,
                spheres: spec
                    .spheres
                    .iter()
                    .map(|s| Sphere { center: Vector3::from(s.center), radius: s.radius })
                    .collect(),
            });
        }
        if links.is_empty() {
            return Err(HandModelError::Invalid("model has no links".into()));
        }

        let mut tips = Vec::with_capacity(file.fingers.len());
        for (fi, finger) in file.fingers.iter().enumerate() {
            let matching: Vec<&TipSpec> = file.tips.iter().filter(|t| &t.finger == finger).collect();
            if matching.len() != 1 {
                return Err(HandModelError::Invalid(format!("finger `{finger}` needs exactly one fingertip")));
            }
            let t = matching[0];
            if !(t.radius > 0.0) {
                return Err(HandModelError::Invalid(format!("fingertip `{finger}` has a non-positive radius")));
            }
            tips.push(Fingertip { finger: fi, frame: resolve(&t.frame, &joints)?, offset: Vector3::from(t.offset), radius: t.radius });
        }
        if file.tips.len() != file.fingers.len() {
            return Err(HandModelError::Invalid("fingertips must match fingers one to one".into()));
        }

        if let Some(rows) = &file.coupling {
            if rows.len() != joints.len() {
                return Err(HandModelError::Invalid("coupling needs one row per joint".into()));
            }
            for (row, joint) in rows.iter().zip(&joints) {
                if row.joint != joint.name {
                    return Err(HandModelError::Invalid(format!(
                        "coupling row `{}` out of order (expected `{}`)",
                        row.joint, joint.name
                    )));
                }
                let sum: f64 = row.sources.iter().map(|s| s.weight).sum();
                if (sum - 1.0).abs() > 1e-9 || row.sources.iter().any(|s| s.weight < 0.0) {
                    return Err(HandModelError::Invalid(format!(
                        "coupling row `{}` must have non-negative weights summing to 1",
                        row.joint
                    )));
                }
            }
        }

        let mut chains: Vec<Vec<usize>> = Vec::with_capacity(joints.len());
        for (i, j) in joints.iter().enumerate() {
            let mut chain = match j.parent {
                Frame::Root => Vec::new(),
                Frame::Joint(p) => chains[p].clone(),
            };
            chain.push(i);
            chains.push(chain);
        }

        Ok(Self { id: file.id, fingers: file.fingers, joints, links, tips, coupling: file.coupling, hash, chains })
    }

    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    pub fn finger_count(&self) -> usize {
        self.fingers.len()
    }

    /// Content hash of the model file.
    pub fn hash(&self) -> &str {
        &self.hash
    }

    /// Joints whose rotation moves `frame`, root first.
    pub fn chain(&self, frame: Frame) -> &[usize] {
        match frame {
            Frame::Root => &[],
            Frame::Joint(j) => &self.chains[j],
        }
    }

    pub fn lower_limits(&self) -> Vec<f64> {
        self.joints.iter().map(|j| j.lower).collect()
    }

    pub fn upper_limits(&self) -> Vec<f64> {
        self.joints.iter().map(|j| j.upper).collect()
    }

    /// Clamps every joint to its limits. Idempotent.
    pub fn clamp(&self, joints: &[f64]) -> Vec<f64> {
        joints.iter().zip(&self.joints).map(|(q, j)| q.clamp(j.lower, j.upper)).collect()
    }

    pub fn within_limits(&self, joints: &[f64]) -> bool {
        joints.len() == self.dof() && joints.iter().zip(&self.joints).all(|(q, j)| *q >= j.lower && *q <= j.upper)
    }

    fn check_dim(&self, joints: &[f64]) -> Result<(), HandModelError> {
        if joints.len() != self.dof() {
            return Err(HandModelError::DimensionMismatch { expected: self.dof(), got: joints.len() });
        }
        Ok(())
    }

    /// Forward kinematics: chain product of joint rotations from the wrist.
    pub fn fk(&self, wrist: &RigidPose, joints: &[f64]) -> Result<HandPose, HandModelError> {
        self.check_dim(joints)?;
        let mut frames: Vec<RigidPose> = Vec::with_capacity(self.joints.len());
        for (j, q) in self.joints.iter().zip(joints) {
            let parent = match j.parent {
                Frame::Root => wrist,
                Frame::Joint(p) => &frames[p],
            };
            let local = RigidPose::new(UnitQuaternion::from_axis_angle(&Unit::new_unchecked(j.axis), *q), j.origin);
            frames.push(parent.compose(&local));
        }
        let mut pose = HandPose { root: *wrist, joint_frames: frames, fingertips: Vec::with_capacity(self.tips.len()) };
        let tips: Vec<Vector3<f64>> = self.tips.iter().map(|t| pose.frame(t.frame).transform_point(&t.offset)).collect();
        pose.fingertips = tips;
        Ok(pose)
    }

    /// J_R×J_H projection of `human` joint angles onto this model's joints.
    ///
    /// Uses the coupling table when present; otherwise joints are matched by
    /// name, which makes the map the identity when both models agree.
    pub fn coupling_matrix(&self, human: &HandModel) -> Result<DMatrix<f64>, HandModelError> {
        let mut m = DMatrix::zeros(self.dof(), human.dof());
        let index_of = |name: &str| {
            human
                .joints
                .iter()
                .position(|j| j.name == name)
                .ok_or_else(|| HandModelError::Invalid(format!("coupling source `{name}` is not a joint of `{}`", human.id)))
        };
        match &self.coupling {
            Some(rows) => {
                for (r, row) in rows.iter().enumerate() {
                    for src in &row.sources {
                        m[(r, index_of(&src.joint)?)] += src.weight;
                    }
                }
            }
            None => {
                for (r, j) in self.joints.iter().enumerate() {
                    m[(r, index_of(&j.name)?)] = 1.0;
                }
            }
        }
        Ok(m)
    }

    /// Projects human joint angles through the coupling map, clamped to limits.
    pub fn map_joints(&self, human: &HandModel, joints: &[f64]) -> Result<Vec<f64>, HandModelError> {
        human.check_dim(joints)?;
        let c = self.coupling_matrix(human)?;
        let mapped = &c * DVector::from_column_slice(joints);
        Ok(self.clamp(mapped.as_slice()))
    }

    /// World axis and origin of joint `j` in a solved pose.
    pub fn joint_axis_world(&self, pose: &HandPose, j: usize) -> (Vector3<f64>, Vector3<f64>) {
        let f = &pose.joint_frames[j];
        (f.rotate(&self.joints[j].axis), *f.translation())
    }

    /// Copy with every length (offsets, sphere centers and radii) multiplied by `s`.
    pub fn scaled(&self, s: f64) -> Self {
        let mut m = self.clone();
        for j in &mut m.joints {
            j.origin *= s;
        }
        for l in &mut m.links {
            for sp in &mut l.spheres {
                sp.center *= s;
                sp.radius *= s;
            }
        }
        for t in &mut m.tips {
            t.offset *= s;
            t.radius *= s;
        }
        if s != 1.0 {
            m.hash = format!("{}@{s}", self.hash);
        }
        m
    }
}
