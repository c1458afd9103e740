//! Square-root-penalized empirical risk minimization for boundary-fragment
//! classification and edge estimation.
//!
//! The estimator minimizes `R_n(G_alpha) + lambda * sqrt(I(alpha))` over
//! coefficient vectors of a Haar multiresolution expansion, where `R_n` is
//! the misclassified fraction of the fragment below the synthesized edge and
//! `I` is a block-wise square-root nonsparsity measure. The crate provides:
//!
//! - [`basis`]: tensor Haar systems on the unit cube with certified norm,
//!   overlap and block-size constants, and exact analysis/synthesis.
//! - [`penalty`]: the nonsparsity measure, level truncation quantities and
//!   the theoretical weight and variance-term formulas.
//! - [`risk`]: empirical and exact population risks, symmetric-difference
//!   and L1 functionals.
//! - [`model`]: synthetic joint laws (binary channel, bounded-noise
//!   regression, margin profiles) with exact column integrals and seeded
//!   samplers.
//! - [`solver`]: the penalized minimizer, via exhaustive lattice search and
//!   breakpoint-exact cyclic coordinate descent.
//! - [`theory`]: executable inequality certifications, a constructive
//!   sup-norm net with its cardinality bound, and Monte Carlo probes of the
//!   empirical process and the oracle-style risk bound.
//! - [`experiments`]: seeded rate studies with log-adjusted slope fits.

pub mod basis;
pub mod dyadic;
pub mod experiments;
pub mod model;
pub mod penalty;
pub mod risk;
pub mod solver;
pub mod theory;
pub mod util;

pub use basis::{BasisSystem, CoefficientVector};
pub use dyadic::{DyadicFunction, EdgeFunction};
pub use model::{DesignDensity, ModelKind, ModelSpec, NoiseSpec};
pub use penalty::{PenaltyConfig, TheoryConstants};
pub use risk::{Dataset, Sample};
pub use solver::{FitResult, SolverConfig};
