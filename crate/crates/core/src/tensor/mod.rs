//! Dense tensors with reverse-mode differentiation, the layer primitives
//! shared by both streams, Adam and a finite-difference gradient checker.

pub mod gradcheck;
mod graph;
pub mod kernels;
pub mod layers;
pub mod optim;
pub mod params;
mod value;

pub use gradcheck::{finite_diff_check, GradCheckReport};
pub use graph::{BatchStats, Gradients, Graph, Var};
pub use layers::{dropout, BatchNorm, ForwardCtx, Mode};
pub use optim::Adam;
pub use params::{Checkpoint, ParamId, ParamStore, ParamVars};
pub use value::Tensor;
