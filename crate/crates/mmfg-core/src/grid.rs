//! Uniform time grids shared by every solver and simulator in the crate.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Uniform partition of `[0, T]` into `steps` intervals.
///
/// Every array produced by the simulators is sized from a grid, and the
/// constructors assert the sizes, so length mismatches surface at
/// construction rather than deep inside a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
    dt: f64,
    nodes: Vec<f64>,
}

impl TimeGrid {
    /// Build the grid with nodes `t_k = k * T / steps`.
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::invalid(format!(
                "horizon must be positive and finite, got {horizon}"
            )));
        }
        if steps == 0 {
            return Err(Error::invalid("steps must be at least 1"));
        }
        let dt = horizon / steps as f64;
        let mut nodes: Vec<f64> = (0..=steps).map(|k| k as f64 * dt).collect();
        // Pin the endpoint so `nodes[steps] == horizon` holds exactly.
        nodes[steps] = horizon;
        Ok(TimeGrid {
            horizon,
            steps,
            dt,
            nodes,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn node(&self, k: usize) -> f64 {
        self.nodes[k]
    }

    /// Number of nodes, `steps + 1`.
    pub fn len(&self) -> usize {
        self.steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// A grid with the same horizon and `factor` times as many steps.
    pub fn refined(&self, factor: usize) -> Result<Self> {
        TimeGrid::new(self.horizon, self.steps * factor)
    }

    pub fn same_as(&self, other: &TimeGrid) -> bool {
        self.steps == other.steps && (self.horizon - other.horizon).abs() < 1e-12
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_step_unit_grid() {
        let g = TimeGrid::new(1.0, 4).unwrap();
        assert_eq!(g.nodes(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(g.dt(), 0.25);
    }

    #[test]
    fn single_step() {
        let g = TimeGrid::new(2.0, 1).unwrap();
        assert_eq!(g.nodes(), &[0.0, 2.0]);
    }

    #[test]
    fn zero_horizon_rejected() {
        assert!(TimeGrid::new(0.0, 10).is_err());
        assert!(TimeGrid::new(-1.0, 10).is_err());
        assert!(TimeGrid::new(1.0, 0).is_err());
    }

    #[test]
    fn nodes_strictly_increasing_and_pinned() {
        let g = TimeGrid::new(0.7, 13).unwrap();
        for w in g.nodes().windows(2) {
            assert!(w[1] > w[0]);
        }
        assert_eq!(g.node(0), 0.0);
        assert_eq!(g.node(13), 0.7);
    }
}
