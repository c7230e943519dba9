//! Motion-correcting network: a generator that maps a noisy motion map (with
//! detection confidences) to corrected joint quaternions, a discriminator
//! that scores whole sequences, and their training loop. Every layer has a
//! hand-written backward pass.

pub mod checkpoint;
pub mod discriminator;
pub mod error;
pub mod generator;
pub mod layers;
pub mod loss;
pub mod params;
pub mod toy;
pub mod train;

pub use checkpoint::{checkpoint_from_json, checkpoint_to_json, load_checkpoint, save_checkpoint, CHECKPOINT_FORMAT};
pub use discriminator::discriminator_forward;
pub use error::{NetError, Result};
pub use generator::{correct_motion, generator_forward, Mode};
pub use loss::{loss_adv, loss_disc, loss_sv, LAMBDA_QUAT};
pub use params::{Architecture, DiscriminatorParams, GeneratorParams, ParamSet};
pub use train::{separability, train, train_discriminator, History, TrainConfig, Trained, TrainingPair};
