//! Procedural ground-truth grasps, the error-pattern perturbations that turn
//! them into training inputs, and whole-clip data augmentation.

mod augment;
mod perturb;
mod script;

use thiserror::Error;

pub use augment::{augment, augment_with, AugmentConfig, AugmentSample};
pub use perturb::{perturb, perturb_recorded, undo_perturbation, PerturbConfig, PerturbRecord};
pub use script::{
    generate_gt, item_seed, smoothstep, DatasetItem, GraspScript, ScriptSampler, GRASP_GAP,
};

use crate::geom::GeomError;
use crate::handmodel::HandModelError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid grasp script: {0}")]
    InvalidScript(String),
    #[error("grasp reached {tips} fingertip contacts, at least 2 required")]
    TooFewContacts { tips: usize },
    #[error("hand penetrates the object by {depth} m at frame {frame}")]
    Penetration { frame: usize, depth: f64 },
    #[error("no valid grasp after {attempts} attempts")]
    SamplerExhausted { attempts: usize },
    #[error("invalid augmentation: {0}")]
    InvalidAugment(String),
    #[error(transparent)]
    Model(#[from] HandModelError),
    #[error(transparent)]
    Geom(#[from] GeomError),
}
