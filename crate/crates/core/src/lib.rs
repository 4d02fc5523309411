//! Long-short temporal attention for unsupervised video object
//! segmentation.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`], [`kernels`], [`autograd`], [`rng`], [`serialize`]: the
//!   numerical substrate (dense tensors, reverse-mode tape, seeded streams,
//!   binary tensor files).
//! * [`ltm`]: long temporal memory, a linearized global attention over
//!   past frames built on positive random features.
//! * [`sta`]: short temporal attention, sliding-window patch attention
//!   against the nearest past frame.
//! * [`model`]: encoder, fusion decoder, frame selection and training.
//! * [`loss`]: hard-example-mined and distillation cross-entropies.
//! * [`data`]: synthetic clips, image I/O, teacher labels and metrics.
//! * [`config`], [`bench`], [`commands`]: the command-line surface.

pub mod autograd;
pub mod bench;
pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod fsutil;
pub mod gradcheck;
pub mod kernels;
pub mod loss;
pub mod ltm;
pub mod model;
pub mod parallel;
pub mod rng;
pub mod serialize;
pub mod sta;
pub mod tensor;

pub use autograd::{Gradients, Tape, Var};
pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::{Real, Tensor};
