//! Dense `f64` tensors with a reverse-mode tape, an Adam optimizer and a flat
//! checkpoint format. This is the engine under every learned component.

mod base;
pub mod checkpoint;
pub mod gradcheck;
mod kernels;
mod optim;
mod params;
mod primitive;
mod tape;

pub use base::{NodeId, Tensor};
pub use kernels::ops;
pub use optim::{Adam, AdamConfig};
pub use params::{Init, ParamId, ParamStore, Params};
pub use primitive::{Primitive, IGNORE_INDEX};
pub use tape::{CustomOp, Gradients, RecordSummary, Saved, Tape};

pub(crate) use kernels::dot;
#[cfg(test)]
pub(crate) use kernels::softplus;
