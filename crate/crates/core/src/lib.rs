//! Hybrid analog/digital precoding for mmWave massive MIMO links.
//!
//! The crate is `no_std` (it needs `alloc`) and carries the numerical core:
//!
//! * [`channel`]: Saleh-Valenzuela channel realizations over uniform linear arrays.
//! * [`decomp`]: complex SVD and the geometric mean decomposition (GMD).
//! * [`precoder`]: fully digital baselines and the constant-modulus hybrid
//!   factorization trained with momentum SGD.
//! * [`dnn`]: a from-scratch multilayer perceptron that maps channels to
//!   hybrid precoders.
//! * [`simulate`]: Monte-Carlo link evaluation (BER, spectral efficiency,
//!   MSE convergence).
//!
//! File IO, configuration parsing and the command line live in the companion
//! `hybridprec` crate.
#![no_std]
// `!(x > y)` is used on purpose so NaN fails the check
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(feature = "std")]
extern crate std;

pub mod channel;
pub mod decomp;
pub mod dnn;
mod error;
pub mod precoder;
pub mod rng;
pub mod simulate;

pub use error::{Error, Result};

/// Dense complex matrix used throughout the crate.
pub type CMatrix = nalgebra::DMatrix<num_complex::Complex64>;
/// Dense complex column vector.
pub type CVector = nalgebra::DVector<num_complex::Complex64>;

pub use num_complex::Complex64;
