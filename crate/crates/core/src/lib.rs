//! Numerical laboratory for one- and two-frequency quasi-periodic
//! Schrödinger operators
//!
//! ```text
//! (A ξ)_j = v(θ + jω) ξ_j + ξ_{j-1} + ξ_{j+1}
//! ```
//!
//! The crate is organized bottom-up:
//!
//! - [`model`]: frequencies, trigonometric potentials and the signed-log
//!   arithmetic ([`LogScalar`], [`ScaledMatrix2`]) everything else uses.
//! - [`transfer`]: overflow-safe cocycle products `M_n(ω, θ, E)` and
//!   tridiagonal determinants, tied together by the determinant identity.
//! - [`lyapunov`]: finite-scale exponents `L_n(ω, E)`, subadditivity,
//!   shift averages and the uniform upper bound.
//! - [`ldt`]: empirical large-deviation measures and Fourier decay of
//!   `θ ↦ n⁻¹ log‖M_n(θ)‖`.
//! - [`greens`]: finite-box Green's functions (Cramer minors and a direct
//!   tridiagonal solve), decay fits and resolvent-identity paving.
//! - [`localization`]: box eigensystems, eigenvector decay profiles,
//!   resonance scans and window bounds.
//! - [`lowerbound`]: ε-gaps, complexified growth, sublevel exponents and
//!   the multiscale Lyapunov ladder.
//! - [`cli`]: JSON-configured batch experiments behind the `qplab` binary.
//!
//! All angles live on the torus `[0, 1)^d` with phases `e^{2πik·θ}`, so
//! `TrigPotential::cosine(λ)` is `θ ↦ λ cos(2πθ)`.

// Negated float comparisons are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod greens;
pub mod ldt;
pub mod localization;
pub mod lowerbound;
pub mod lyapunov;
pub mod model;
pub mod stats;
pub mod transfer;

pub use error::{Error, Result};
pub use model::{Frequency, LogScalar, Phase, ScaledMatrix2, TrigPotential};
