//! Core data model for monocular skeletal motion capture.
//!
//! * [`skeleton`]: kinematic tree, forward kinematics and the mapping between
//!   joint-angle poses and per-joint quaternions.
//! * [`camera`]: pinhole projection and the capsule-body silhouette proxy.
//! * [`motion`]: motion maps, per-frame observations and their file formats.
//! * [`synth`]: seeded generator of multi-view capture scenes.

pub mod camera;
pub mod error;
pub mod motion;
pub mod skeleton;
pub mod synth;

pub use camera::{Camera, CapsuleBody};
pub use error::{Error, Result};
pub use motion::{FrameObservations, MotionMap};
pub use skeleton::{Axis, Joint, QuatPose, Region, SkeletalPose, SkeletonModel};
pub use synth::{SceneConfig, SkeletonChoice, SyntheticScene};
