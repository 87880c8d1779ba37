//! Certified bounds on the limit free energy of mixed p-spin spin glasses.
//!
//! Any order-parameter measure `μ` gives the upper bound
//! `P(μ) = Φ_μ(0,h) − ½∫ t ξ''(t) μ[0,t] dt`. Simulating the optimally
//! controlled diffusion for `μ` yields a martingale whose dual payoff is a
//! lower bound, and the difference of the two is certified by the function
//! `g_μ` evaluated on the support of `μ`.

pub mod error;
pub mod model;
pub mod quadrature;
pub mod pde;
pub mod cascade;
pub mod dynamics;
pub mod bounds;
pub mod optimizer;
pub mod finite_n;
pub mod pipeline;
pub mod config;
#[cfg(feature = "cli")]
pub mod cli;

pub use error::{Error, Result};
pub use model::{Atom, AtomicMeasure, MixtureSpec};
