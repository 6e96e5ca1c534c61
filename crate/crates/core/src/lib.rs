//! Convolutional networks whose stride, dilation and kernel size can be
//! changed per forward pass, with the oracle apparatus to measure what
//! per-sample choice of those settings could achieve.
//!
//! * [`dynconv`] runs one convolution under any allowed setting.
//! * [`model`] builds the mini-residual network and reads and writes the
//!   portable weight format.
//! * [`oracle`] sweeps permutations and derives bounds, greedy curves,
//!   budgets and preferences.
//! * [`rof`] trains, statically or with a random permutation per batch.
//! * [`efficiency`] finds the cheapest prediction-preserving permutation.
//! * [`cli`] drives all of it from a JSON run configuration.

pub mod autodiff;
pub mod cli;
pub mod data;
pub mod dynconv;
pub mod efficiency;
pub mod error;
pub mod model;
pub mod options;
pub mod oracle;
pub mod rof;
pub mod tensor;

pub use error::{Error, Result};
