//! Synthetic moving-shape clips, image I/O, teacher soft labels and the
//! region / contour metrics.

pub mod manifest;
mod mask;
pub mod metrics;
pub mod pnm;
pub mod synth;
pub mod teacher;

pub use mask::Mask;
pub use metrics::{metric_f, metric_j, ClipScore, EvalReport};
pub use synth::{dataset_clip, generate_clip, Clip, DatasetSpec, SceneSpec, Split};
pub use teacher::teacher_soft_labels;
