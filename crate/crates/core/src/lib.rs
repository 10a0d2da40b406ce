//! Joint base-station precoding and RIS phase-shift design.
//!
//! The crate is organised around the pieces of the problem:
//!
//! * [`chanmodel`] draws geometry-based Rician channels and imperfect-CSI copies.
//! * [`sysmetrics`] evaluates SINR / spectral efficiency, the cascaded channel,
//!   power regulation, precoder recovery and the closed-form Wirtinger gradients.
//! * [`neural`] holds the two small gradient-input networks, the phase regulator,
//!   Adam, and reverse-mode gradients through one unrolled outer iteration.
//! * [`gmml`] is the meta-learning optimizer itself plus its GML / ML ablations.
//! * [`baselines`] has WMMSE, Riemannian conjugate gradient, alternating
//!   optimization, random phase and the restart upper-bound proxy.
//! * [`harness`] drives paired-seed sweeps and writes CSV / JSON tables.

pub mod baselines;
pub mod chanmodel;
pub mod error;
pub mod gmml;
pub mod harness;
pub mod neural;
pub mod sysmetrics;
pub mod textfmt;

pub use error::{Error, Result};

/// Complex scalar used throughout.
pub type C64 = num_complex::Complex64;
/// Dense complex matrix.
pub type CMat = nalgebra::DMatrix<C64>;
/// Dense real matrix.
pub type RMat = nalgebra::DMatrix<f64>;
