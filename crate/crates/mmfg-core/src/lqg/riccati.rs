//! Backward matrix Riccati integration.

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use nalgebra::DMatrix;

/// `Pi(t)` stored at half-step resolution so downstream RK4 sweeps can read
/// exact stage values without interpolation.
#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    /// `half[j] = Pi(j * dt/2)`, `j = 0..=2*steps`.
    half: Vec<DMatrix<f64>>,
    steps: usize,
}

impl RiccatiSolution {
    /// Value at grid node `k`.
    pub fn node(&self, k: usize) -> &DMatrix<f64> {
        &self.half[2 * k]
    }

    /// Value at half-step index `j` (time `j * dt/2`).
    pub fn half(&self, j: usize) -> &DMatrix<f64> {
        &self.half[j]
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Closed-loop matrix `A - M Pi(t_k)` with `M = B R^{-1} B^T`.
    pub fn closed_loop(&self, k: usize, a: &DMatrix<f64>, m: &DMatrix<f64>) -> DMatrix<f64> {
        a - m * self.node(k)
    }

    /// Largest symmetry deviation over all stored values.
    pub fn symmetry_defect(&self) -> f64 {
        self.half
            .iter()
            .map(|p| (p - p.transpose()).abs().max())
            .fold(0.0, f64::max)
    }

    /// Smallest eigenvalue over all stored values.
    pub fn min_eigenvalue(&self) -> f64 {
        self.half
            .iter()
            .map(|p| {
                p.clone()
                    .symmetric_eigen()
                    .eigenvalues
                    .iter()
                    .copied()
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(f64::INFINITY, f64::min)
    }
}

/// Integrate `dPi/dt + Pi A + A^T Pi - Pi B R^{-1} B^T Pi + Q = 0` backward
/// from `Pi(T) = 0` with classical RK4 on half steps, symmetrizing after
/// every stage update.
pub fn solve_riccati(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    grid: &TimeGrid,
) -> Result<RiccatiSolution> {
    let n = a.nrows();
    let r_inv = r
        .clone()
        .cholesky()
        .ok_or_else(|| Error::invalid("R must be positive definite"))?
        .inverse();
    let m = b * r_inv * b.transpose();

    // Backward derivative: dPi/dt = -(Pi A + A^T Pi - Pi M Pi + Q).
    let rhs = |p: &DMatrix<f64>| -> DMatrix<f64> {
        -(p * a + a.transpose() * p - p * &m * p + q)
    };

    let steps = grid.steps();
    let h = grid.dt() / 2.0;
    let mut half = vec![DMatrix::zeros(n, n); 2 * steps + 1];
    let mut p = DMatrix::zeros(n, n);
    for j in (0..2 * steps).rev() {
        // One RK4 step of size -h from t_{j+1} to t_j.
        let k1 = rhs(&p);
        let k2 = rhs(&(&p - &k1 * (h / 2.0)));
        let k3 = rhs(&(&p - &k2 * (h / 2.0)));
        let k4 = rhs(&(&p - &k3 * h));
        p -= (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        p = (&p + p.transpose()) * 0.5;
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalBlowup {
                time: j as f64 * h,
                state: vec![],
                detail: "Riccati integration diverged".into(),
            });
        }
        half[j] = p.clone();
    }

    let sol = RiccatiSolution { half, steps };
    let min_eig = sol.min_eigenvalue();
    if min_eig < -1e-10 {
        return Err(Error::Inconsistency(format!(
            "Riccati solution lost positive semidefiniteness (min eigenvalue {min_eig:e})"
        )));
    }
    Ok(sol)
}
