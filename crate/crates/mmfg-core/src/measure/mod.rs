//! Random measures and the path-space metric machinery.
//!
//! The path metric is `rho_T(x, y) = sup_t |x(t) - y(t)|^2 ∧ 1` and the
//! measure distance is the order-2 Wasserstein metric built on it, computed
//! exactly by optimal assignment between equal-mass atoms.

mod assignment;
mod holder;

pub use assignment::{
    brute_force_wasserstein_path, min_cost_assignment, wasserstein_path, wasserstein_path_prefix,
    ASSIGNMENT_CAP, SPLIT_CAP,
};
pub use holder::{holder_estimate, HolderEstimate, TestFunctionFamily};

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use std::io::Write;

/// Weighted particle cloud in `R^n`.
#[derive(Debug, Clone)]
pub struct EmpiricalMeasure {
    particles: Vec<f64>,
    weights: Vec<f64>,
    count: usize,
    dim: usize,
}

impl EmpiricalMeasure {
    pub fn uniform(particles: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 || particles.is_empty() || particles.len() % dim != 0 {
            return Err(Error::invalid("particle buffer not a multiple of dim"));
        }
        let count = particles.len() / dim;
        Ok(EmpiricalMeasure {
            particles,
            weights: vec![1.0 / count as f64; count],
            count,
            dim,
        })
    }

    pub fn weighted(particles: Vec<f64>, weights: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 || particles.is_empty() || particles.len() % dim != 0 {
            return Err(Error::invalid("particle buffer not a multiple of dim"));
        }
        let count = particles.len() / dim;
        if weights.len() != count {
            return Err(Error::invalid("weight count mismatch"));
        }
        if weights.iter().any(|w| *w < 0.0) {
            return Err(Error::invalid("weights must be non-negative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!(
                "weights must sum to 1 within 1e-12 (got {total})"
            )));
        }
        Ok(EmpiricalMeasure {
            particles,
            weights,
            count,
            dim,
        })
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn particle(&self, i: usize) -> &[f64] {
        &self.particles[i * self.dim..(i + 1) * self.dim]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn is_uniform(&self) -> bool {
        let w0 = 1.0 / self.count as f64;
        self.weights.iter().all(|w| (w - w0).abs() < 1e-15)
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for i in 0..self.count {
            for (d, v) in self.particle(i).iter().enumerate() {
                m[d] += self.weights[i] * v;
            }
        }
        m
    }
}

/// Weighted set of discrete paths sharing one time grid.
#[derive(Debug, Clone)]
pub struct PathMeasure {
    paths: Vec<f64>,
    weights: Vec<f64>,
    count: usize,
    nodes: usize,
    dim: usize,
}

impl PathMeasure {
    pub fn uniform(paths: Vec<f64>, nodes: usize, dim: usize) -> Result<Self> {
        if nodes == 0 || dim == 0 || paths.is_empty() || paths.len() % (nodes * dim) != 0 {
            return Err(Error::invalid("path buffer not a multiple of nodes*dim"));
        }
        let count = paths.len() / (nodes * dim);
        Ok(PathMeasure {
            paths,
            weights: vec![1.0 / count as f64; count],
            count,
            nodes,
            dim,
        })
    }

    pub fn weighted(paths: Vec<f64>, weights: Vec<f64>, nodes: usize, dim: usize) -> Result<Self> {
        let mut pm = PathMeasure::uniform(paths, nodes, dim)?;
        if weights.len() != pm.count {
            return Err(Error::invalid("weight count mismatch"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 || weights.iter().any(|w| *w < 0.0) {
            return Err(Error::invalid("weights must be a probability vector"));
        }
        pm.weights = weights;
        Ok(pm)
    }

    /// A single Dirac path measure.
    pub fn dirac(path: Vec<f64>, nodes: usize, dim: usize) -> Result<Self> {
        if path.len() != nodes * dim {
            return Err(Error::invalid("dirac path length mismatch"));
        }
        PathMeasure::uniform(path, nodes, dim)
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn path(&self, i: usize) -> &[f64] {
        &self.paths[i * self.nodes * self.dim..(i + 1) * self.nodes * self.dim]
    }

    /// State of path `i` at node `k`.
    pub fn state(&self, i: usize, k: usize) -> &[f64] {
        let base = i * self.nodes * self.dim + k * self.dim;
        &self.paths[base..base + self.dim]
    }

    /// Marginal cloud at node `k`.
    pub fn marginal(&self, k: usize) -> EmpiricalMeasure {
        let mut particles = Vec::with_capacity(self.count * self.dim);
        for i in 0..self.count {
            particles.extend_from_slice(self.state(i, k));
        }
        EmpiricalMeasure::weighted(particles, self.weights.clone(), self.dim)
            .expect("marginal of a valid path measure is valid")
    }

    pub fn same_shape(&self, other: &PathMeasure) -> bool {
        self.nodes == other.nodes && self.dim == other.dim
    }
}

/// One particle cloud of paths per major-noise scenario.
#[derive(Debug, Clone)]
pub struct ConditionalMeasureProcess {
    scenarios: Vec<PathMeasure>,
    scenario_weights: Vec<f64>,
}

impl ConditionalMeasureProcess {
    pub fn new(scenarios: Vec<PathMeasure>, scenario_weights: Vec<f64>) -> Result<Self> {
        if scenarios.is_empty() || scenarios.len() != scenario_weights.len() {
            return Err(Error::invalid("scenario/weight count mismatch"));
        }
        let total: f64 = scenario_weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 || scenario_weights.iter().any(|w| *w < 0.0) {
            return Err(Error::invalid("scenario weights must be a probability vector"));
        }
        let first = &scenarios[0];
        if scenarios.iter().any(|s| !s.same_shape(first)) {
            return Err(Error::invalid("scenario clouds must share a grid shape"));
        }
        Ok(ConditionalMeasureProcess {
            scenarios,
            scenario_weights,
        })
    }

    pub fn equal_weights(scenarios: Vec<PathMeasure>) -> Result<Self> {
        let n = scenarios.len();
        ConditionalMeasureProcess::new(scenarios, vec![1.0 / n as f64; n])
    }

    pub fn scenarios(&self) -> &[PathMeasure] {
        &self.scenarios
    }

    pub fn scenario_weights(&self) -> &[f64] {
        &self.scenario_weights
    }

    /// Columnar CSV dump: `t,scenario,particle,weight,x0..` one row per
    /// (time, scenario, particle).
    pub fn write_csv(&self, grid: &TimeGrid, mut w: impl Write) -> std::io::Result<()> {
        let dim = self.scenarios[0].dim();
        write!(w, "t,scenario,particle,weight")?;
        for d in 0..dim {
            write!(w, ",x{d}")?;
        }
        writeln!(w)?;
        for (s, cloud) in self.scenarios.iter().enumerate() {
            for k in 0..cloud.nodes() {
                for i in 0..cloud.count() {
                    write!(w, "{},{},{},{}", grid.node(k), s, i, cloud.weights()[i])?;
                    for v in cloud.state(i, k) {
                        write!(w, ",{v}")?;
                    }
                    writeln!(w)?;
                }
            }
        }
        Ok(())
    }
}

/// `rho_T` restricted to the first `upto + 1` nodes: the truncated sup of
/// squared distances over a growing window.
pub fn rho_path_prefix(a: &[f64], b: &[f64], dim: usize, upto: usize) -> f64 {
    let mut sup: f64 = 0.0;
    for k in 0..=upto {
        let mut d2 = 0.0;
        for d in 0..dim {
            let diff = a[k * dim + d] - b[k * dim + d];
            d2 += diff * diff;
        }
        if d2 > sup {
            sup = d2;
        }
    }
    sup.min(1.0)
}

/// Truncated sup-square path metric `sup_t |x - y|^2 ∧ 1`.
pub fn rho_path(a: &[f64], b: &[f64], dim: usize) -> Result<f64> {
    if a.len() != b.len() || a.len() % dim != 0 {
        return Err(Error::invalid("paths must share the grid"));
    }
    Ok(rho_path_prefix(a, b, dim, a.len() / dim - 1))
}

/// Order-2 Wasserstein distance between 1-D clouds with equal counts and
/// uniform weights, by sorted-sample pairing.
pub fn wasserstein_marginal(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<f64> {
    if mu.dim() != 1 || nu.dim() != 1 {
        return Err(Error::UnsupportedDimension(
            "sorted-pairing marginal distance is 1-D only".into(),
        ));
    }
    if mu.count() != nu.count() {
        return Err(Error::invalid("marginal clouds must have equal counts"));
    }
    if !mu.is_uniform() || !nu.is_uniform() {
        return Err(Error::invalid("marginal distance requires uniform weights"));
    }
    let mut a: Vec<f64> = (0..mu.count()).map(|i| mu.particle(i)[0]).collect();
    let mut b: Vec<f64> = (0..nu.count()).map(|i| nu.particle(i)[0]).collect();
    a.sort_by(|x, y| x.partial_cmp(y).unwrap());
    b.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let sq: f64 = a
        .iter()
        .zip(&b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.len() as f64;
    Ok(sq.sqrt())
}
