//! Action-conditioned next-frame predictor with adapter layers.

mod config;
mod latent;
mod model;
mod params;
mod rollout;
mod train;

pub use config::{MemoryConfig, PredictMode, WorldModelConfig};
pub use latent::{frame_from_rgb8, frame_to_rgb8, patchify, unpatchify};
pub use model::{Prediction, StepInput, StepOutput, WorldModel};
pub use train::{loss_and_grads, train_step, AdamConfig, AdamState, LearningRates, TrainSample};
pub use rollout::{rollout, rollout_session, Dynamics, GroundTruthStub, Observation, Trajectory, WmSession};
pub use params::{Bound, Param, ParamGroup, ParameterSet};
