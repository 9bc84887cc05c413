//! Numerical kernels shared by every other module.

pub mod linalg;
pub mod rng;
pub mod special;

pub use linalg::{kronecker, spectral_radius, two_norm, Matrix, Vector};
pub use rng::RngStream;
pub use special::{erf, inv_erf, inv_reg_lower_gamma, reg_lower_gamma};
