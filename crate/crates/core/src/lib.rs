//! Direct and inverse scattering for web-like Jacobi systems: a finite
//! symmetric central block with semi-infinite Jacobi channels whose
//! coefficients reach channel-specific limits after a finite support.

pub mod chart;
pub mod cli;
pub mod dataset;
pub mod direct;
pub mod error;
pub mod fixtures;
pub mod jost;
pub mod linalg;
pub mod marchenko;
pub mod oracle;
pub mod quad;
pub mod spectrum;
pub mod websystem;

pub use error::{Error, Result};
pub use num_complex::Complex64;
