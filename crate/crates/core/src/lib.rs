//! Goal-oriented communication simulator.
//!
//! An encoder maps a source signal to unit-power complex channel symbols,
//! a differentiable channel (AWGN or Rayleigh block fading with perfect-CSI
//! equalization) corrupts them, a demapper maps the received symbols back
//! into the source space, and a task head (classifier or Q-network) acts on
//! the demapped signal. All four stages train end to end against a blend of
//! task loss and reconstruction loss. A reconstruction-only JSCC baseline and
//! no-channel / random-policy bounds are provided for comparison.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod data;
pub mod error;
pub mod exp;
pub mod models;
pub mod objective;
pub mod rl;
pub mod supervised;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{OptRule, Optimizer, ParamSet, Tape, Tensor, Var};
