//! MaxDropout and MaxDropoutV2 structured dropout on a small NCHW tensor core.
//!
//! - [`tensor`]: dense 4-D tensors, channel reduction, min-max normalization, broadcasting.
//! - [`regularizers`]: Dropout, MaxDropout, MaxDropoutV2 forward/backward.
//! - [`augment`]: Cutout, RandomErasing, random crop, horizontal flip.
//! - [`train`]: a toy CNN with SGD + Nesterov momentum used to smoke-test the layers.
//! - [`bench`]: mask-kernel micro-benchmarks with comparison accounting.
//! - [`sweep`], [`visualize`], [`cli`]: the pieces behind the `maxdropout` binary.

pub mod augment;
pub mod bench;
pub mod cli;
pub mod config;
pub mod error;
pub mod ppm;
pub mod regularizers;
pub mod rng;
pub mod sweep;
pub mod synth;
pub mod tensor;
pub mod train;
pub mod visualize;

pub use error::{Error, Result};
pub use regularizers::{DropConfig, DropMask, MaskKind, Mode, Variant};
pub use rng::Rng;
pub use tensor::{NormScope, Shape, Tensor};
