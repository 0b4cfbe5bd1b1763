//! Dense `f64` tensors with tape-based reverse-mode differentiation.
//!
//! Values live in [`Array`]s. A [`Tape`] records operations on [`Tensor`]
//! handles; [`Tape::backward`] then accumulates gradients into every leaf
//! created with [`Tape::param`]. The primitive set is the one needed by a
//! patch-based forecasting model: batched matrix products, broadcasting
//! arithmetic, softmax, moving-average pooling, a real FFT pair, KL
//! divergence and keyed dropout. [`AdamWState`] updates plain arrays from the
//! collected gradients.

mod adamw;
mod array;
mod error;
pub mod fft;
pub mod gradcheck;
mod ops;
mod tape;

pub use adamw::{AdamWConfig, AdamWState};
pub use array::Array;
pub use error::{Result, TensorError};
pub use fft::ComplexSpectrum;
pub use ops::{matmul_arrays, DropoutKey, LOG_FLOOR};
pub use tape::{Tape, Tensor};
