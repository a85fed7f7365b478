use nalgebra::Vector3;

use super::LossError;
use crate::geom::{PointCloud, RigidPose, TriangleMesh};
use crate::handmodel::{canonical_object_points, HandModel, HandPose, InteractionFrame, SurfacePattern};

/// Hand model, object mesh and fixed sampling patterns for one clip,
/// all at the clip's geometry scale.
#[derive(Clone, Debug)]
pub struct Scene {
    pub model: HandModel,
    pub mesh: TriangleMesh,
    pub pattern: SurfacePattern,
    pub object_canonical: Vec<Vector3<f64>>,
}

/// World-frame clouds of one frame.
#[derive(Clone, Debug)]
pub struct FrameClouds {
    pub pose: HandPose,
    pub hand: Vec<Vector3<f64>>,
    pub object: Vec<Vector3<f64>>,
}

impl Scene {
    pub fn new(model: &HandModel, mesh: &TriangleMesh, scale: f64, hand_points: usize, object_points: usize) -> Result<Self, LossError> {
        let (model, mesh) = if scale == 1.0 {
            (model.clone(), mesh.clone())
        } else {
            (model.scaled(scale), mesh.scaled(scale).map_err(|e| LossError::Shape(e.to_string()))?)
        };
        let pattern = model.surface_pattern(hand_points)?;
        let object_canonical = canonical_object_points(&mesh, object_points)?.points;
        Ok(Self { model, mesh, pattern, object_canonical })
    }

    pub fn clouds(&self, frame: &InteractionFrame) -> Result<FrameClouds, LossError> {
        let pose = self.model.fk(&frame.wrist, &frame.joints)?;
        let hand = self.pattern.points(&pose);
        let object = self.object_canonical.iter().map(|c| frame.object.transform_point(c)).collect();
        Ok(FrameClouds { pose, hand, object })
    }

    pub fn hand_cloud(&self, frame: &InteractionFrame) -> Result<PointCloud, LossError> {
        Ok(PointCloud::new(self.clouds(frame)?.hand))
    }

    pub fn object_cloud(&self, pose: &RigidPose) -> PointCloud {
        PointCloud::new(self.object_canonical.iter().map(|c| pose.transform_point(c)).collect())
    }
}
