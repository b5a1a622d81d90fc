//! Quantization-aware training with two learnable scalars
//! balancing the task and distillation losses.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`] and [`tape`]: dense tensors and a reverse-mode autodiff tape.
//! - [`quant`]: uniform affine fake quantization with straight-through gradients.
//! - [`losses`]: per-batch objectives, static or learnable.
//! - [`regularizer`]: the two learnable balancing scalars and their updates.
//! - [`model`] and [`checkpoint`]: MLP teachers/students and their on-disk format.
//! - [`data`]: synthetic blobs, CSV and IDX ingestion.
//! - [`train`]: the quantization-aware training loop and sweeps.
//! - [`dynamics`]: a network-free simulator of the scalar game.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod dynamics;
pub mod data;
pub mod error;
pub mod losses;
pub mod model;
pub mod quant;
pub mod regularizer;
pub mod tape;
pub mod tensor;
pub mod train;

pub use checkpoint::Checkpoint;
pub use data::{Dataset, Provenance, Split, SplitTag};
pub use model::{ModelParams, Role, TeacherEnsemble};
pub use losses::{Distance, KdConfig, LossBundle, StaticWeight};
pub use quant::{QuantConfig, QuantPlan, QuantSpec, RangeSource};
pub use regularizer::{GorState, SingleScalarState};
pub use error::{CheckpointError, DataError, Error, Result};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
pub use train::{Mode, TrainConfig, TrainError, TrainOutcome};
