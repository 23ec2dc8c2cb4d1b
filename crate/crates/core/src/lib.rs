//! Discrete potential theory on truncated infinite weighted graphs.
//!
//! The crate builds finite balls of two graph families (spherically
//! symmetric trees and integer lattices), applies the weighted Laplacian and
//! the Schrodinger operator `L = Delta - V` with power-law potentials,
//! verifies closed-form barrier functions pointwise, solves Dirichlet
//! problems on the balls, and runs the exhaustion experiments separating
//! the uniqueness regime (slow potential decay) from the nonuniqueness
//! regime (fast decay or unbounded branching).
//!
//! Modules:
//!
//! * [`graph`] — ball construction, sphere layering, outer/inner degrees;
//! * [`operators`] — fields, potentials, Laplacian, residual classification;
//! * [`radial`] — one-dimensional reduction for spherically symmetric trees;
//! * [`barriers`] — barrier families, verification, parameter bisection;
//! * [`dirichlet`] — SPD assembly, direct/CG solves, comparison checks;
//! * [`experiments`] — exhaustion runs, phase sweeps, growth ratios;
//! * [`cli`] — the `plgraph` command-line interface.

pub mod barriers;
pub mod cli;
pub mod dirichlet;
pub mod experiments;
pub mod graph;
pub mod operators;
pub mod radial;

pub use barriers::{BarrierFamily, BarrierSpec, VerifyReport};
pub use dirichlet::{DirichletProblem, SolveReport};
pub use experiments::{ExhaustionConfig, PhaseSweepConfig};
pub use graph::{Branching, GraphBall, GraphSpec, LatticeSpec, TreeSpec};
pub use operators::{Field, Metric, Potential};
pub use radial::RadialProfile;
