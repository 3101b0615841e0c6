//! Channel estimation for an uplink where K single-antenna users reach an
//! M-antenna base station through an N-element reconfigurable intelligent
//! surface (RIS). Both hops are estimated jointly from L pilot blocks by
//! recovering two beamspace-sparse matrices that are coupled bilinearly:
//!
//! * `numerics`  — unitary DFT operators, FFT-backed fast transforms,
//!   Kronecker/Khatri-Rao products, sensing-matrix factorization;
//! * `channel`   — geometric mmWave channel sampling and its beamspace form;
//! * `system`    — pilot/phase schedules, received-signal simulation, and the
//!   stacking that yields the linear model `R = Psi * S + noise`;
//! * `estimator` — the three-part message-passing recovery (linear block,
//!   bilinear node, sparse blocks with automatically tuned priors);
//! * `evaluation`— scale-ambiguity-aware metrics, a genie least-squares
//!   baseline, and Monte Carlo sweep drivers;
//! * `cli`       — config parsing, sweep/single commands, CSV + SVG output.
//!
//! The numerical core is generic over the real scalar (see [`RealScalar`]);
//! the aliases below fix the shipped double-precision types.

pub mod channel;
pub mod cli;
pub mod error;
pub mod estimator;
pub mod evaluation;
pub mod numerics;
pub mod scalar;
pub mod system;

pub use error::{Error, Result};
pub use scalar::RealScalar;

use ndarray::{Array1, Array2, Array3};
use num_complex::Complex;

/// Generic matrix/vector aliases used throughout the core.
pub type CxMat<T> = Array2<Complex<T>>;
pub type CxVec<T> = Array1<Complex<T>>;
pub type CxTen<T> = Array3<Complex<T>>;
pub type ReMat<T> = Array2<T>;
pub type ReVec<T> = Array1<T>;
pub type ReTen<T> = Array3<T>;

/// Concrete double-precision aliases; all shipped interfaces use these.
pub type Real = f64;
pub type Cplx = Complex<Real>;
pub type CMat = CxMat<Real>;
pub type CVec = CxVec<Real>;
pub type RMat = ReMat<Real>;
pub type RVec = ReVec<Real>;
