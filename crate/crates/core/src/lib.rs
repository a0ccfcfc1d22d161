pub mod error;
pub mod mesh;
pub mod par;
pub mod quadrature;
pub mod scalar;
pub mod vec3;

pub use error::{BemError, Result};
pub mod sparse;
pub mod spaces;
pub mod kernels;
pub mod backend;
pub mod assembly;
pub mod hmatrix;
pub mod gmres;
pub mod scatter;
