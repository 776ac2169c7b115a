//! Recombining binomial lattice for the major agent's Brownian motion.
//!
//! The horizon is cut into `epochs` equal slices; the accumulated diffusion
//! gains `+/- sigma0 sqrt(T/epochs)` at each slice boundary with probability
//! 1/2 each. Node index counts up-moves, so the node set at slice `e` has
//! `e + 1` members and the backward sweeps get exact tree dynamic
//! programming against a finite scenario set.

use crate::error::{Error, Result};
use crate::grid::TimeGrid;

#[derive(Debug, Clone)]
pub struct W0Lattice {
    /// 0 collapses the lattice to a single deterministic node.
    epochs: usize,
    sigma0: f64,
    /// Grid steps per epoch.
    spe: usize,
    dt_epoch: f64,
    steps: usize,
}

impl W0Lattice {
    /// Build a lattice over `grid`. `sigma0 = 0` collapses to a single node
    /// regardless of `epochs`, which makes the lattice solvers coincide with
    /// the deterministic ones exactly.
    pub fn new(epochs: usize, sigma0: f64, grid: &TimeGrid) -> Result<Self> {
        if sigma0 < 0.0 {
            return Err(Error::invalid("sigma0 must be non-negative"));
        }
        if sigma0 == 0.0 || epochs == 0 {
            return Ok(W0Lattice {
                epochs: 0,
                sigma0,
                spe: grid.steps(),
                dt_epoch: grid.horizon(),
                steps: grid.steps(),
            });
        }
        if grid.steps() % epochs != 0 {
            return Err(Error::invalid(format!(
                "lattice epochs ({epochs}) must divide the time steps ({})",
                grid.steps()
            )));
        }
        Ok(W0Lattice {
            epochs,
            sigma0,
            spe: grid.steps() / epochs,
            dt_epoch: grid.horizon() / epochs as f64,
            steps: grid.steps(),
        })
    }

    /// Deterministic single-node lattice.
    pub fn collapsed(grid: &TimeGrid) -> Self {
        W0Lattice::new(0, 0.0, grid).expect("collapsed lattice is always valid")
    }

    pub fn is_stochastic(&self) -> bool {
        self.epochs > 0
    }

    pub fn epochs(&self) -> usize {
        self.epochs
    }

    pub fn sigma0(&self) -> f64 {
        self.sigma0
    }

    pub fn dt_epoch(&self) -> f64 {
        self.dt_epoch
    }

    /// State jump magnitude at a branch: `sigma0 sqrt(T/epochs)`.
    pub fn increment(&self) -> f64 {
        self.sigma0 * self.dt_epoch.sqrt()
    }

    /// Number of active nodes at grid node `k`.
    pub fn node_count(&self, k: usize) -> usize {
        if self.epochs == 0 {
            1
        } else {
            (k / self.spe).min(self.epochs) + 1
        }
    }

    /// True when a branch happens between grid nodes `k` and `k + 1`.
    pub fn branches_between(&self, k: usize) -> bool {
        k < self.steps && self.node_count(k + 1) > self.node_count(k)
    }

    /// Accumulated diffusion value at `(k, node)`: `(2 i - e) * increment`.
    pub fn w0_value(&self, k: usize, node: usize) -> f64 {
        let e = self.node_count(k) - 1;
        (2.0 * node as f64 - e as f64) * self.increment()
    }

    /// Probability of node `i` at grid node `k` (binomial, exact dyadic).
    pub fn node_weight(&self, k: usize, node: usize) -> f64 {
        let e = self.node_count(k) - 1;
        let mut c = 1.0f64;
        for j in 0..node {
            c = c * (e - j) as f64 / (j + 1) as f64;
        }
        c * 0.5f64.powi(e as i32)
    }
}
