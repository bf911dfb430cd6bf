//! Numerical toolkit for antisymmetric (bivector) operators: construction
//! and classification (Poisson / measure-preserving / Beltrami / weak
//! Beltrami), stochastic particle ensembles driven by such operators, and a
//! degenerate-diffusion Fokker-Planck grid solver with entropy diagnostics.

pub mod ad;
pub mod error;
pub mod expr;
pub mod field;
pub mod fpe;
pub mod grid;
pub mod operator;
pub mod catalog;
pub mod r3;
pub mod sampling;
pub mod sde;

pub use error::{Error, Result};
pub use field::{ScalarField, TimeDependentField};
pub use operator::{AntisymOperator, ClassificationReport, Jacobiator};
pub use r3::VectorField3;
