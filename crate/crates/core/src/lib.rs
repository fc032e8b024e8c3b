//! Deep generative factor analysis with a beta-Bernoulli sparsity prior.
//!
//! Observations are modeled as `x = λ · Φ ξ(z) + noise`, where `z` is a
//! binary factor-selection code drawn from per-factor Bernoulli gates with
//! Beta-distributed activation probabilities, `ξ(z)` is a neural network
//! mapping the code to mixing weights on the simplex, `Φ` is a learned
//! dictionary, and `λ` is a per-datum Gaussian scale. Everything is
//! estimated by a stochastic MAP-EM loop: conjugate posterior updates for
//! the gate probabilities and scales, greedy combinatorial search for the
//! codes, and ADAM steps for the network and dictionary.
//!
//! The crate is self-contained: dense linear algebra, the seeded PRNG,
//! special functions, and the optimizer are all implemented here, so
//! results are reproducible bit-for-bit from a seed on any platform with
//! IEEE-754 doubles.
//!
//! Layout:
//! - [`math`]: matrices, PRNG, special functions
//! - [`net`]: the code-to-simplex multiplexer network and ADAM
//! - [`model`]: hyperparameters, model state, decoding, sampling
//! - [`inference`]: conjugate updates, sparse coding, training loop
//! - [`io`]: IDX datasets, checkpoints, metrics, figure exports
//! - [`verify`]: independent numerical oracles (quadrature, dense
//!   Gaussians, finite differences, enumeration) used by tests and the
//!   CLI's verification commands

pub mod error;
pub mod inference;
pub mod io;
pub mod math;
pub mod model;
pub mod net;
pub mod verify;

pub use error::{Error, Result};
