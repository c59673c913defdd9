//! Decoherence of a quantum tracer particle under translation-covariant
//! Markovian master equations.
//!
//! Two complementary routes are provided:
//!
//! * [`levy`] and [`coherence`]: the pure-decoherence semigroup, whose action
//!   in the position representation multiplies `<X|rho|Y>` by the
//!   characteristic function `exp(-t Psi(X - Y))` of a Levy process with
//!   triplet (drift, diffusion, jump measure).
//! * [`qlbe`] and [`unravel`]: the quantum linear Boltzmann equation for a
//!   particle in an ideal gas, solved by a jump (Gillespie-type) unraveling in
//!   momentum space.
//!
//! [`posdec`] links the two through the recoilless limit, and [`cli`] is the
//! batch front-end used by the `decoherence` binary.

pub mod cli;
pub mod coherence;
pub mod error;
pub mod levy;
pub mod posdec;
pub mod qlbe;
pub mod specfun;
pub mod unravel;

pub use error::{Error, Result};

/// Three-vector of positions or momenta.
pub type Vec3 = nalgebra::Vector3<f64>;

pub use num_complex::Complex64;
