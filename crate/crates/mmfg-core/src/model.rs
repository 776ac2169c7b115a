//! Game model specification: pairwise coefficient functions and control sets.
//!
//! The dynamics and costs are pairwise kernels; population couplings are the
//! empirical averages `(1/N) sum_j g[t, x, u, (z0,) z_j]`, evaluated by
//! direct summation over whatever particle set stands in for the measure.

use crate::control::ControlBounds;
use crate::error::{Error, Result};
use std::sync::Arc;

/// Major drift `f0(t, x, u, y) -> out[n]`, where `y` is one coupling particle.
pub type MajorDrift = Arc<dyn Fn(f64, &[f64], &[f64], &[f64], &mut [f64]) + Send + Sync>;
/// Major diffusion `sigma0(t, x, y) -> out[n*m]` (row-major n x m).
pub type MajorDiffusion = Arc<dyn Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync>;
/// Minor drift `f(t, x, u, z0, y) -> out[n]`.
pub type MinorDrift = Arc<dyn Fn(f64, &[f64], &[f64], &[f64], &[f64], &mut [f64]) + Send + Sync>;
/// Minor diffusion `sigma(t, x, z0, y) -> out[n*m]`.
pub type MinorDiffusion = Arc<dyn Fn(f64, &[f64], &[f64], &[f64], &mut [f64]) + Send + Sync>;
/// Major running cost `L0(t, x, u, y)`.
pub type MajorCost = Arc<dyn Fn(f64, &[f64], &[f64], &[f64]) -> f64 + Send + Sync>;
/// Minor running cost `L(t, x, u, z0, y)`.
pub type MinorCost = Arc<dyn Fn(f64, &[f64], &[f64], &[f64], &[f64]) -> f64 + Send + Sync>;
/// Optional closed-form Hamiltonian minimizer `argmin_u <f, p> + L` at
/// `(t, x, p)` with the coupling already folded in by the builder.
pub type HamiltonianMinimizer = Arc<dyn Fn(f64, &[f64], &[f64]) -> Vec<f64> + Send + Sync>;

/// Which agent's coefficient set to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgentRole {
    Major,
    Minor,
}

/// The full coefficient specification of one major-minor game.
#[derive(Clone)]
pub struct ModelSpec {
    pub state_dim: usize,
    pub noise_dim: usize,
    pub drift_major: MajorDrift,
    pub diffusion_major: MajorDiffusion,
    pub drift_minor: MinorDrift,
    pub diffusion_minor: MinorDiffusion,
    pub cost_major: MajorCost,
    pub cost_minor: MinorCost,
    pub bounds_major: ControlBounds,
    pub bounds_minor: ControlBounds,
    pub minimizer_major: Option<HamiltonianMinimizer>,
    pub minimizer_minor: Option<HamiltonianMinimizer>,
    /// True when the drift and diffusion kernels ignore both the coupling
    /// particle and (for minors) the major state, i.e. the dynamics are
    /// fully decoupled and only the costs couple the population. Lets the
    /// population simulator skip the O(N^2) coupling sums.
    pub decoupled_dynamics: bool,
}

impl std::fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelSpec")
            .field("state_dim", &self.state_dim)
            .field("noise_dim", &self.noise_dim)
            .field("decoupled_dynamics", &self.decoupled_dynamics)
            .finish()
    }
}

impl ModelSpec {
    /// Numerically check that the minor drift and diffusion ignore the major
    /// state, the structural restriction under which the epsilon-Nash
    /// theorem's major-deviation case applies.
    pub fn check_minor_ignores_major(&self) -> Result<()> {
        let n = self.state_dim;
        let m = self.noise_dim;
        let mut out_a = vec![0.0; n];
        let mut out_b = vec![0.0; n];
        let mut dif_a = vec![0.0; n * m];
        let mut dif_b = vec![0.0; n * m];
        let xs = [-0.7, 0.0, 1.3];
        let z0s = [-2.0, 0.0, 3.0];
        let u = vec![0.1; self.bounds_minor.dim()];
        for &x in &xs {
            let xv = vec![x; n];
            let yv = vec![0.4; n];
            let z0_base = vec![z0s[0]; n];
            (self.drift_minor)(0.3, &xv, &u, &z0_base, &yv, &mut out_a);
            (self.diffusion_minor)(0.3, &xv, &z0_base, &yv, &mut dif_a);
            for &z0 in &z0s[1..] {
                let z0v = vec![z0; n];
                (self.drift_minor)(0.3, &xv, &u, &z0v, &yv, &mut out_b);
                (self.diffusion_minor)(0.3, &xv, &z0v, &yv, &mut dif_b);
                let drift_dev: f64 = out_a
                    .iter()
                    .zip(&out_b)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                let diff_dev: f64 = dif_a
                    .iter()
                    .zip(&dif_b)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                if drift_dev > 1e-12 || diff_dev > 1e-12 {
                    return Err(Error::Structural(
                        "minor dynamics depend on the major state; the major-deviation \
                         epsilon-Nash case requires cost-only coupling"
                            .into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::ControlBounds;

    fn toy(depends_on_major: bool) -> ModelSpec {
        let g = if depends_on_major { 1.0 } else { 0.0 };
        ModelSpec {
            state_dim: 1,
            noise_dim: 1,
            drift_major: Arc::new(|_, x, u, y, out| out[0] = -x[0] + u[0] + 0.1 * y[0]),
            diffusion_major: Arc::new(|_, _, _, out| out[0] = 0.3),
            drift_minor: Arc::new(move |_, x, u, z0, _, out| {
                out[0] = -x[0] + u[0] + g * z0[0]
            }),
            diffusion_minor: Arc::new(|_, _, _, _, out| out[0] = 0.2),
            cost_major: Arc::new(|_, x, u, _| x[0] * x[0] + u[0] * u[0]),
            cost_minor: Arc::new(|_, x, u, z0, _| (x[0] - z0[0]).powi(2) + u[0] * u[0]),
            bounds_major: ControlBounds::wide(1),
            bounds_minor: ControlBounds::wide(1),
            minimizer_major: None,
            minimizer_minor: None,
            decoupled_dynamics: false,
        }
    }

    #[test]
    fn structural_check_detects_major_coupling() {
        assert!(toy(false).check_minor_ignores_major().is_ok());
        assert!(toy(true).check_minor_ignores_major().is_err());
    }
}
