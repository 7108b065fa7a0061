//! Numerical laboratory for Ricci flow, conjugate heat flows, Perelman's
//! F and λ functionals, dynamical λ-functionals and drift-Laplacian spectra
//! on periodic tori.

// `!(x > 0.0)` comparisons are deliberate: they reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod conjugate;
pub mod deriv;
pub mod eigen;
pub mod error;
pub mod estimates;
pub mod field;
pub mod flow;
pub mod functionals;
pub mod geometry;
pub mod grid;
pub mod identities;
pub mod init;
pub mod io;
pub mod spectral;

pub use deriv::{DerivativeScheme, Differentiator};
pub use error::{Error, Result};
pub use field::{MetricField, ScalarField, TensorField, Variance};
pub use geometry::Geometry;
pub use grid::Grid;
