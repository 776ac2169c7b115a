//! Numerical laboratory for stochastic mean field games with a major agent
//! and a large population of minor agents.
//!
//! The crate simulates the N-agent game and its McKean-Vlasov limit, solves
//! the linear-quadratic case through Riccati equations and an affine BSDE
//! reduction, solves a nonlinear oscillator game by coupled backward-HJB /
//! forward-FPK sweeps (with a binomial lattice standing in for the major
//! agent's noise), and measures what the theory predicts: the O(1/sqrt N)
//! mean-field approximation rate, contraction of the measure-and-control
//! fixed-point map at short horizons, and the vanishing benefit of
//! unilateral deviations.

pub mod control;
pub mod error;
pub mod fit;
pub mod grid;
pub mod hjbfpk;
pub mod lqg;
pub mod measure;
pub mod model;
pub mod mvlimit;
pub mod nash;
pub mod noise;
pub mod report;
pub mod sde;

pub use error::{Error, Result};
pub use grid::TimeGrid;
