//! The full segmentation network: encoder, long memory, short attention,
//! fusion decoder, training and checkpoints.

pub mod checkpoint;
pub mod eval;
pub mod frames;
pub mod network;
pub mod params;
pub mod train;

pub use frames::{select_past_frames, FrameWindow, Strategy};
pub use network::{decode, encode, forward_encoded, lsta_forward, predict_mask, Segmenter};
pub use params::{ModelConfig, ModelParams, ParamVars};
pub use train::{batch_loss, train_step, Hyper, RunSettings, Sample, Sgd, TrainState};
pub use eval::{evaluate, score_clip};
