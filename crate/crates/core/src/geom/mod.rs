//! Geometric substrate: SE(3) poses, point-cloud operators, triangle meshes
//! with signed distance, and rigid ICP registration.

mod cloud;
mod icp;
mod mesh;
mod pose;
pub mod so3;

use thiserror::Error;

pub use cloud::{ball_query, fps, PointCloud};
pub use icp::{icp_rigid, kabsch, IcpResult};
pub use mesh::{signed_distance, MeshHit, TriangleMesh};
pub use pose::{pose_compose, pose_diff, rotation_distance, PoseDelta, RigidPose};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("non-finite coordinate")]
    NonFinite,
    #[error("requested {requested} samples from a cloud of {available}")]
    SampleCountOutOfRange { requested: usize, available: usize },
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("mesh has no vertices or faces")]
    EmptyMesh,
    #[error("obj line {line}: {message}")]
    ObjParse { line: usize, message: String },
    #[error("face {face} references missing vertex {index}")]
    FaceIndexOutOfRange { face: usize, index: usize },
    #[error("face {face} has zero area")]
    DegenerateFace { face: usize },
    #[error("edge ({a}, {b}) is used by more than one face in the same direction")]
    NonManifold { a: usize, b: usize },
    #[error("edge ({a}, {b}) has no opposite half-edge; mesh is not watertight")]
    NotWatertight { a: usize, b: usize },
    #[error("mesh encloses non-positive volume; faces must wind counter-clockwise seen from outside")]
    InvertedOrientation,
    #[error("degenerate covariance: points are collinear or coincident")]
    DegenerateCovariance,
}
