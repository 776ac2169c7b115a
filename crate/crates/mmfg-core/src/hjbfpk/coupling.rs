//! Infinite-population cost couplings of the oscillator game.
//!
//! The major agent feels `m0(x) = integral of sin^2(x - theta)` against the
//! minor density. The minor agents feel a blend that pulls toward both the
//! major's phase and the population: `m(x) = lambda * integral sin^2(x -
//! theta0) d p0 + (1 - lambda) * integral sin^2(x - theta) d p`. The blend
//! acts on the costs, which keeps the coupling 2pi-periodic in each phase
//! argument for every lambda and makes the uniform distribution neutral
//! (`m` constant) whenever both inputs are uniform.

use super::pgrid::PeriodicGrid;

/// Precomputed circulant kernel `sin^2(d * h)` so coupling slices cost a
/// plain O(cells^2) multiply-add instead of trigonometric evaluations.
#[derive(Debug, Clone)]
pub struct CouplingKernel {
    kernel: Vec<f64>,
    h: f64,
}

impl CouplingKernel {
    pub fn new(grid: &PeriodicGrid) -> Self {
        let n = grid.cells();
        let kernel = (0..n).map(|d| (d as f64 * grid.h()).sin().powi(2)).collect();
        CouplingKernel {
            kernel,
            h: grid.h(),
        }
    }

    /// `m(x_i) = sum_j sin^2(x_i - theta_j) p_j h` by trapezoidal quadrature
    /// on the periodic grid (where the trapezoid rule is the plain cell sum).
    pub fn apply(&self, p: &[f64], out: &mut [f64]) {
        let n = self.kernel.len();
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..n {
                acc += self.kernel[(i + n - j) % n] * p[j];
            }
            out[i] = acc * self.h;
        }
    }
}

/// Major cost coupling `m0` from the minor density slice.
pub fn coupling_major(grid: &PeriodicGrid, p_minor: &[f64]) -> Vec<f64> {
    let kernel = CouplingKernel::new(grid);
    let mut out = vec![0.0; grid.cells()];
    kernel.apply(p_minor, &mut out);
    out
}

/// Minor cost coupling `m` from the major and minor density slices.
pub fn coupling_minor(
    grid: &PeriodicGrid,
    p_major: &[f64],
    p_minor: &[f64],
    lambda: f64,
) -> Vec<f64> {
    let kernel = CouplingKernel::new(grid);
    let n = grid.cells();
    let mut a = vec![0.0; n];
    let mut b = vec![0.0; n];
    kernel.apply(p_major, &mut a);
    kernel.apply(p_minor, &mut b);
    (0..n)
        .map(|i| lambda * a[i] + (1.0 - lambda) * b[i])
        .collect()
}

/// Minor coupling when the major state is a known point (Dirac): the
/// major integral evaluates exactly.
pub fn coupling_minor_dirac(
    grid: &PeriodicGrid,
    theta0: f64,
    p_minor: &[f64],
    lambda: f64,
) -> Vec<f64> {
    let kernel = CouplingKernel::new(grid);
    let n = grid.cells();
    let mut b = vec![0.0; n];
    kernel.apply(p_minor, &mut b);
    (0..n)
        .map(|i| lambda * (grid.node(i) - theta0).sin().powi(2) + (1.0 - lambda) * b[i])
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform(grid: &PeriodicGrid) -> Vec<f64> {
        vec![1.0 / std::f64::consts::TAU; grid.cells()]
    }

    #[test]
    fn uniform_density_gives_half() {
        let grid = PeriodicGrid::new(128).unwrap();
        let m0 = coupling_major(&grid, &uniform(&grid));
        for v in &m0 {
            assert!((v - 0.5).abs() < 1e-12, "m0 = {v}");
        }
    }

    #[test]
    fn dirac_density_evaluates_kernel() {
        let grid = PeriodicGrid::new(128).unwrap();
        let theta_star = grid.node(40);
        let mut p = vec![0.0; 128];
        p[40] = 1.0 / grid.h(); // single-cell mass
        let m0 = coupling_major(&grid, &p);
        for i in (0..128).step_by(17) {
            let want = (grid.node(i) - theta_star).sin().powi(2);
            assert!((m0[i] - want).abs() < 1e-10, "{} vs {}", m0[i], want);
        }
    }

    #[test]
    fn range_bounds() {
        let grid = PeriodicGrid::new(64).unwrap();
        let p = grid.dirac_density(2.7);
        let m0 = coupling_major(&grid, &p);
        for v in &m0 {
            assert!((-1e-12..=1.0 + 1e-12).contains(v));
        }
    }

    #[test]
    fn both_uniform_constant_for_every_lambda() {
        let grid = PeriodicGrid::new(128).unwrap();
        let u = uniform(&grid);
        for lambda in [0.1, 0.5, 0.9] {
            let m = coupling_minor(&grid, &u, &u, lambda);
            for v in &m {
                assert!((v - 0.5).abs() < 1e-12, "lambda {lambda}: m = {v}");
            }
        }
    }

    #[test]
    fn lambda_zero_recovers_major_coupling() {
        let grid = PeriodicGrid::new(64).unwrap();
        let p0 = grid.dirac_density(1.0);
        let p = grid.dirac_density(4.0);
        let m = coupling_minor(&grid, &p0, &p, 0.0);
        let m0 = coupling_major(&grid, &p);
        for (a, b) in m.iter().zip(&m0) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn both_diracs_blend_the_kernels() {
        let grid = PeriodicGrid::new(128).unwrap();
        let t0 = grid.node(10);
        let t1 = grid.node(70);
        let mut p0 = vec![0.0; 128];
        p0[10] = 1.0 / grid.h();
        let mut p = vec![0.0; 128];
        p[70] = 1.0 / grid.h();
        let lambda = 0.3;
        let m = coupling_minor(&grid, &p0, &p, lambda);
        for i in (0..128).step_by(13) {
            let x = grid.node(i);
            let want =
                lambda * (x - t0).sin().powi(2) + (1.0 - lambda) * (x - t1).sin().powi(2);
            assert!((m[i] - want).abs() < 1e-10);
        }
    }

    #[test]
    fn dirac_fast_path_matches_deposited() {
        let grid = PeriodicGrid::new(128).unwrap();
        let theta0 = grid.node(25); // on-grid so the deposit is exact
        let p0 = grid.dirac_density(theta0);
        let p = uniform(&grid);
        let a = coupling_minor(&grid, &p0, &p, 0.4);
        let b = coupling_minor_dirac(&grid, theta0, &p, 0.4);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-10);
        }
    }
}
