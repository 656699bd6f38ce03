//! Arbitrage-free factor market models for European option surfaces.
//!
//! The pipeline decodes low-dimensional factors from normalized call price
//! surfaces, derives the convex polytope of statically arbitrage-free factor
//! states, calibrates a neural SDE whose paths provably stay inside that
//! polytope, and simulates joint dynamics of the underlying and the options
//! book.
//!
//! Module map:
//! - [`polytope`]: geometry of `{V y >= b}` (distances, vertices, redundancy
//!   elimination, interior anchors).
//! - [`static_arbitrage`]: the linear no-arbitrage system on an option
//!   lattice and its projection to factor space.
//! - [`surface`]: price normalization, Black-Scholes transforms, smooth
//!   interpolation with derivatives, the z-operator, VIX weights.
//! - [`factor_decode`]: factor decoding (dynamic-arbitrage, statistical and
//!   static-arbitrage factors), decorrelation, MAPE/PDA metrics.
//! - [`neural_net`]: minimal MLP with hand-rolled reverse-mode gradients,
//!   Adam, magnitude pruning and the drift/diffusion output head.
//! - [`constrained_sde`]: boundary operators, Euler-Maruyama
//!   quasi-likelihood, training loop, market price of risk.
//! - [`market_sim`]: Heston-SLV data generation, tamed-Euler simulation,
//!   VIX series, implied-vol paths, Wasserstein-1 evaluation.
//! - [`secondary`]: primary/secondary factor split with cubic links and OU
//!   residuals, arbitrage-repaired joint simulation.

pub mod constrained_sde;
pub mod error;
pub mod factor_decode;
pub mod lattice;
pub mod linalg;
pub mod lp;
pub mod market_sim;
pub mod neural_net;
pub mod pipeline;
pub mod polytope;
pub mod secondary;
pub mod static_arbitrage;
pub mod surface;

pub use error::{Error, Result};
pub use lattice::OptionLattice;
pub use linalg::Mat;
pub use polytope::{InteriorPointSet, Polytope, VertexSet};
