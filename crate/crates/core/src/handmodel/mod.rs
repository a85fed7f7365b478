//! Articulated hand models, sphere-skinned surfaces, object surface sampling,
//! and the interaction-trajectory types shared by every other module.

mod model;
mod surface;
mod trajectory;

use thiserror::Error;

pub use model::{
    CouplingRow, CouplingSource, Fingertip, Frame, HandModel, HandPose, Joint, Link, RobotHandModel, Sphere,
    HUMAN20_TOML, ROBOT12_TOML,
};
pub use surface::{
    canonical_object_points, hand_surface_points, mesh_seed, object_surface_points, SurfacePattern, SurfaceSample,
};
pub use trajectory::{InteractionFrame, Trajectory};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HandModelError {
    #[error("model file: {0}")]
    Parse(String),
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error("joint vector has {got} entries, model expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("{requested} samples requested, at least {minimum} needed")]
    TooFewSamples { requested: usize, minimum: usize },
    #[error("mesh has zero surface area")]
    ZeroArea,
    #[error("trajectory has no frames")]
    EmptyTrajectory,
}

#[cfg(test)]
mod tests;
