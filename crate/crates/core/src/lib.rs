//! Tensor engine, wavelet scatter layers and the scatter-augmented residual
//! network for multilabel 12-lead ECG classification.
//!
//! The crate is `no_std` and only needs `alloc`. Everything that touches the
//! filesystem or a terminal lives in the `scatternet` companion crate.
#![no_std]
// `!(x > 0.0)` style checks are there to reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

mod error;
mod real;
mod rng;

pub mod loss;
pub mod model;
pub mod pipeline;
pub mod scatter;
pub mod tensor;
pub mod trainer;
pub mod wavelets;

pub use error::{Error, Result};
pub use real::Real;
pub use rng::{derive_seed, engine_rng, EngineRng};
pub use tensor::{Graph, Mode, Tensor, Var};
