use crate::geom::RigidPose;

/// One coupled sample of a hand–object interaction: wrist pose, joint angles,
/// object pose and a validity flag. Invalid frames are excluded from every
/// masked sum.
#[derive(Clone, Debug, PartialEq)]
pub struct InteractionFrame {
    pub wrist: RigidPose,
    pub joints: Vec<f64>,
    pub object: RigidPose,
    pub valid: bool,
}

/// Time-ordered interaction frames sampled every `dt` seconds.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    /// Hand model id the joint vectors refer to.
    pub model_id: String,
    /// Content hash of the object mesh.
    pub mesh_hash: String,
    /// Uniform geometry scale applied to hand and object (augmentation).
    pub scale: f64,
    pub frames: Vec<InteractionFrame>,
}

impl Trajectory {
    pub fn new(dt: f64, model_id: impl Into<String>, mesh_hash: impl Into<String>, frames: Vec<InteractionFrame>) -> Self {
        Self { dt, model_id: model_id.into(), mesh_hash: mesh_hash.into(), scale: 1.0, frames }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn mask(&self) -> Vec<bool> {
        self.frames.iter().map(|f| f.valid).collect()
    }

    pub fn valid_count(&self) -> usize {
        self.frames.iter().filter(|f| f.valid).count()
    }

    pub fn wrist_translations(&self) -> Vec<nalgebra::Vector3<f64>> {
        self.frames.iter().map(|f| *f.wrist.translation()).collect()
    }

    pub fn object_translations(&self) -> Vec<nalgebra::Vector3<f64>> {
        self.frames.iter().map(|f| *f.object.translation()).collect()
    }

    pub fn validate(&self, dof: usize) -> Result<(), super::HandModelError> {
        if self.frames.is_empty() {
            return Err(super::HandModelError::EmptyTrajectory);
        }
        if !(self.dt > 0.0) {
            return Err(super::HandModelError::Invalid(format!("dt must be positive, got {}", self.dt)));
        }
        for f in &self.frames {
            if f.joints.len() != dof {
                return Err(super::HandModelError::DimensionMismatch { expected: dof, got: f.joints.len() });
            }
        }
        Ok(())
    }

    /// Applies `g` on the left of every wrist and object pose.
    pub fn transformed(&self, g: &RigidPose) -> Self {
        let mut out = self.clone();
        for f in &mut out.frames {
            f.wrist = g.compose(&f.wrist);
            f.object = g.compose(&f.object);
        }
        out
    }
}
