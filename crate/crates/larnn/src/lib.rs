//! Linear Attention Recurrent Neural Network (LARNN) laboratory.
//!
//! A self-contained sequence-classification stack built around one idea: an
//! LSTM-style cell whose candidate gate attends, with single-query multi-head
//! attention, over a fixed-size FIFO queue of its own past cell states. The
//! crate ships the cell (plus vanilla-LSTM and BN-LSTM baselines), a small
//! f64 tensor engine with reverse-mode autodiff, the modified sinusoidal
//! positional encoding that is concatenated onto the attention window, data
//! loaders (UCI HAR inertial signals + synthetic tasks), an Adam training
//! loop with checkpointing, and a two-round random-search sweep harness.

// Indexed loops mirror the strided math; iterator rewrites hide the layout.
#![allow(clippy::needless_range_loop)]
#![allow(clippy::manual_is_multiple_of)]

pub mod attention;
pub mod cell;
pub mod cli;
pub mod data;
pub mod encoding;
pub mod error;
pub mod gradcheck;
pub mod model;
pub mod state_queue;
pub mod tensor;
pub mod trainer;

pub use error::Error;
pub use tensor::{BatchNormParams, Tape, Tensor};

/// Result alias used across the crate.
pub type Result<T> = std::result::Result<T, Error>;
