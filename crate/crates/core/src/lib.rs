pub mod error;
pub mod fem;
pub mod fields;
pub mod geometry;
pub mod linalg;
pub mod liouville;
pub mod nehari;
pub mod spectral;
pub mod spinor;

pub use error::{Error, Result};
