//! Pose-based hand-gesture recognition with two complementary streams.
//!
//! * [`sagcn`]: a graph-convolutional stream whose spatial aggregation mixes
//!   the partitioned hand-skeleton adjacency with a learned self-attention map.
//! * [`indrnn`]: a residual bidirectional IndRNN stream over joint coordinates
//!   and frame-to-frame displacements.
//!
//! Both streams are trained separately on the small reverse-mode engine in
//! [`tensor`] and their class probabilities are fused multiplicatively at test
//! time (see [`train::fuse_and_classify`]).

pub mod config;
pub mod data;
pub mod error;
pub mod indrnn;
pub mod model;
pub mod sagcn;
pub mod skeleton;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Graph, Tensor, Var};
