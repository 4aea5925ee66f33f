//! Selective state-space (Mamba) blocks built on a small reverse-mode
//! autodiff engine, applied to two wireless problems: energy-efficient MISO
//! beamforming with hybrid graph networks, and text joint source-channel
//! coding over AWGN.

pub mod error;
pub mod experiment;
pub mod gnn;
pub mod nn;
pub mod semcom;
pub mod ssm;
pub mod tensor;
pub mod wireless;

pub use error::{Error, Result};
pub use tensor::{Tape, Tensor};
