//! Numeric foundation: special functions, a deterministic generator, and a
//! small dense matrix. Everything downstream builds on these primitives and
//! inherits their determinism.

pub mod mat;
pub mod rng;
pub mod special;

pub use mat::{dot, quad_form, Mat};
pub use rng::Rng;
pub use special::{digamma, log_gaussian_diag, softmax};
