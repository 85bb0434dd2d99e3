//! Skeletal motion: quaternion joint rotations, kinematics, the `[T, 7N]`
//! feature layout, and the synthetic quadruped corpus.

mod clip;
mod corpus;
mod crops;
mod kinematics;
mod quat;
mod skeleton;
pub mod synth;

pub use clip::{features_to_motion, motion_to_features, DecodeReport, Frame, Motion, UNIT_TOLERANCE};
pub use corpus::{Clip, Corpus, CorpusSpec, Split};
pub use crops::{clip_features, stack_crops, CropSampler};
pub use kinematics::{compute_velocities, forward_kinematics, inverse_kinematics, FK_NORM_TOLERANCE, IK_LENGTH_TOLERANCE};
pub use quat::Quat;
pub use skeleton::{quadruped, Skeleton};
pub use synth::{category_params, synth_generate, CategoryParams};
