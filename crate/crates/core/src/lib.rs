//! Numerical toolkit for the Ljapunov–Schmidt reduction of the critical cubic
//! Schrödinger system `-Δu_i = Σ_j β_ij u_j² u_i + λ_i u_i` on bounded domains of ℝ⁴.
//!
//! Blow-up solutions are built from Aubin–Talenti bubbles projected onto the domain;
//! concentration points are governed by the Robin function.

pub mod bubble;
pub mod coupling;
pub mod domain;
pub mod error;
pub mod operator;
pub mod point;
pub mod quadrature;
pub mod reduction;
pub mod verification;

pub use error::{Error, Result};
pub use point::Point;

/// The bubble constant α = 2√2 in dimension four.
pub const ALPHA: f64 = 2.0 * std::f64::consts::SQRT_2;

/// Surface area of the unit 3-sphere.
pub const S3_AREA: f64 = 2.0 * std::f64::consts::PI * std::f64::consts::PI;
