//! Least-squares Monte-Carlo verification oracle for the offset BSDEs.
//!
//! Independently of the coefficient-matching reduction, this solves the
//! forward-backward system by Picard sweeps: simulate the closed-loop flow
//! under the current backward estimates, then recurse backward taking the
//! conditional expectation by linear regression on `[1, z0, zbar]` (the
//! exact family for this linear problem), with the noise loadings recovered
//! from the covariation of the regression residuals against the `w0`
//! increments.

use super::riccati::RiccatiSolution;
use super::LqgParams;
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::noise::{stream_rng, NS_ORACLE};
use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

/// Per-node affine estimates of the backward processes, plus a subsample of
/// the forward paths they were estimated on.
#[derive(Debug, Clone)]
pub struct BsdeOracle {
    pub p00: Vec<DMatrix<f64>>,
    pub p01: Vec<DMatrix<f64>>,
    pub p0: Vec<DVector<f64>>,
    pub p10: Vec<DMatrix<f64>>,
    pub p11: Vec<DMatrix<f64>>,
    pub p1: Vec<DVector<f64>>,
    pub q0: Vec<DMatrix<f64>>,
    pub q: Vec<DMatrix<f64>>,
    /// `[sample][node]` forward states retained for comparisons.
    pub sample_z0: Vec<Vec<DVector<f64>>>,
    pub sample_zbar: Vec<Vec<DVector<f64>>>,
    /// Worst regression condition number seen.
    pub max_condition: f64,
    pub sweeps: usize,
    pub n_paths: usize,
}

struct Paths {
    z0: Vec<Vec<DVector<f64>>>,
    zbar: Vec<Vec<DVector<f64>>>,
    dw0: Vec<Vec<DVector<f64>>>,
}

/// Affine map estimates used as feedback during forward sweeps.
#[derive(Clone)]
struct AffineEstimates {
    p00: Vec<DMatrix<f64>>,
    p01: Vec<DMatrix<f64>>,
    p0: Vec<DVector<f64>>,
    p10: Vec<DMatrix<f64>>,
    p11: Vec<DMatrix<f64>>,
    p1: Vec<DVector<f64>>,
}

impl AffineEstimates {
    fn zeros(n: usize, nodes: usize) -> Self {
        AffineEstimates {
            p00: vec![DMatrix::zeros(n, n); nodes],
            p01: vec![DMatrix::zeros(n, n); nodes],
            p0: vec![DVector::zeros(n); nodes],
            p10: vec![DMatrix::zeros(n, n); nodes],
            p11: vec![DMatrix::zeros(n, n); nodes],
            p1: vec![DVector::zeros(n); nodes],
        }
    }

    fn s0(&self, k: usize, z0: &DVector<f64>, zbar: &DVector<f64>) -> DVector<f64> {
        &self.p00[k] * z0 + &self.p01[k] * zbar + &self.p0[k]
    }

    fn s(&self, k: usize, z0: &DVector<f64>, zbar: &DVector<f64>) -> DVector<f64> {
        &self.p10[k] * z0 + &self.p11[k] * zbar + &self.p1[k]
    }
}

fn simulate_forward(
    params: &LqgParams,
    ric0: &RiccatiSolution,
    ric: &RiccatiSolution,
    est: &AffineEstimates,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Paths {
    let n = params.state_dim();
    let mdim = params.noise_dim();
    let steps = grid.steps();
    let dt = grid.dt();
    let sqrt_dt = dt.sqrt();
    let m0 = params.m0();
    let m = params.m_minor();

    let mut z0 = Vec::with_capacity(n_paths);
    let mut zbar = Vec::with_capacity(n_paths);
    let mut dw0 = Vec::with_capacity(n_paths);
    for i in 0..n_paths {
        let mut rng = stream_rng(seed, NS_ORACLE, i as u64);
        let z0_init = DVector::from_iterator(
            n,
            params
                .z0_init_mean
                .iter()
                .zip(params.z0_init_std.iter())
                .map(|(mu, sd)| mu + sd * Distribution::<f64>::sample(&StandardNormal, &mut rng)),
        );
        let incr: Vec<DVector<f64>> = (0..steps)
            .map(|_| {
                DVector::from_iterator(
                    mdim,
                    (0..mdim).map(|_| sqrt_dt * Distribution::<f64>::sample(&StandardNormal, &mut rng)),
                )
            })
            .collect();
        let mut pz0 = vec![z0_init];
        let mut pzb = vec![params.z_init_mean.clone()];
        for k in 0..steps {
            let a0cl = ric0.closed_loop(k, &params.a0, &m0);
            let acl = ric.closed_loop(k, &params.a, &m);
            let s0k = est.s0(k, &pz0[k], &pzb[k]);
            let sk = est.s(k, &pz0[k], &pzb[k]);
            let dz0 =
                (&a0cl * &pz0[k] + &params.f0 * &pzb[k] - &m0 * s0k) * dt + &params.s0_diff * &incr[k];
            let dzb = ((&acl + &params.f) * &pzb[k] + &params.g * &pz0[k] - &m * sk) * dt;
            let nz0 = &pz0[k] + dz0;
            let nzb = &pzb[k] + dzb;
            pz0.push(nz0);
            pzb.push(nzb);
        }
        z0.push(pz0);
        zbar.push(pzb);
        dw0.push(incr);
    }
    Paths { z0, zbar, dw0 }
}

struct Regression {
    beta_const: DVector<f64>,
    beta_z0: DMatrix<f64>,
    beta_zbar: DMatrix<f64>,
    condition: f64,
}

/// Regress targets on `[1, z0, zbar]` by standardized normal equations.
///
/// Columns that are (numerically) constant across the paths -- `zbar` at
/// `t = 0` is by construction -- are dropped and their contribution folded
/// into the intercept, which leaves predictions on the sampled flow exact
/// and keeps the Gram matrix well conditioned.
fn affine_regression(
    z0: &[&DVector<f64>],
    zbar: &[&DVector<f64>],
    targets: &[DVector<f64>],
) -> Result<Regression> {
    let n = z0[0].len();
    let count = targets.len();
    let ncols = 2 * n;
    let col = |i: usize, j: usize| -> f64 {
        if j < n {
            z0[i][j]
        } else {
            zbar[i][j - n]
        }
    };
    let mut means = vec![0.0; ncols];
    let mut stds = vec![0.0; ncols];
    for j in 0..ncols {
        let mut s = 0.0;
        for i in 0..count {
            s += col(i, j);
        }
        means[j] = s / count as f64;
        let mut v = 0.0;
        for i in 0..count {
            let d = col(i, j) - means[j];
            v += d * d;
        }
        stds[j] = (v / count as f64).sqrt();
    }
    let retained: Vec<usize> = (0..ncols)
        .filter(|&j| stds[j] > 1e-9 * (1.0 + means[j].abs()))
        .collect();
    let p = 1 + retained.len();

    let mut gram = DMatrix::<f64>::zeros(p, p);
    let mut rhs = DMatrix::<f64>::zeros(p, n);
    let mut row = DVector::<f64>::zeros(p);
    for i in 0..count {
        row[0] = 1.0;
        for (r, &j) in retained.iter().enumerate() {
            row[1 + r] = (col(i, j) - means[j]) / stds[j];
        }
        gram.syger(1.0, &row, &row, 1.0);
        for c in 0..n {
            for r in 0..p {
                rhs[(r, c)] += row[r] * targets[i][c];
            }
        }
    }
    let eig = gram.clone().symmetric_eigen().eigenvalues;
    let lo = eig.iter().copied().fold(f64::INFINITY, f64::min).max(0.0);
    let hi = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if condition > 1e12 {
        return Err(Error::Inconsistency(format!(
            "oracle regression rank-deficient (condition number {condition:.3e})"
        )));
    }
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::Inconsistency("oracle regression Gram matrix not PD".into()))?;
    let coeffs = chol.solve(&rhs); // p x n, column c = coefficients of target c

    let mut beta_const = DVector::zeros(n);
    let mut beta_z0 = DMatrix::zeros(n, n);
    let mut beta_zbar = DMatrix::zeros(n, n);
    for c in 0..n {
        let mut intercept = coeffs[(0, c)];
        for (r, &j) in retained.iter().enumerate() {
            let beta = coeffs[(1 + r, c)] / stds[j];
            intercept -= beta * means[j];
            if j < n {
                beta_z0[(c, j)] = beta;
            } else {
                beta_zbar[(c, j - n)] = beta;
            }
        }
        beta_const[c] = intercept;
    }
    Ok(Regression {
        beta_const,
        beta_z0,
        beta_zbar,
        condition,
    })
}

/// Run the Picard-regression oracle. `sweeps = 3` is enough for the desk
/// configurations; each sweep re-simulates the forward flow under the
/// previous backward estimates.
pub fn mc_bsde_oracle(
    params: &LqgParams,
    ric0: &RiccatiSolution,
    ric: &RiccatiSolution,
    n_paths: usize,
    grid: &TimeGrid,
    seed: u64,
    sweeps: usize,
) -> Result<BsdeOracle> {
    if n_paths < 1000 {
        return Err(Error::invalid("oracle needs at least 1e3 paths"));
    }
    let n = params.state_dim();
    let steps = grid.steps();
    let dt = grid.dt();
    let m0 = params.m0();
    let m = params.m_minor();
    let eye = DMatrix::<f64>::identity(n, n);

    let mut est = AffineEstimates::zeros(n, steps + 1);
    let mut q0_hat = vec![DMatrix::zeros(n, params.noise_dim()); steps + 1];
    let mut q_hat = vec![DMatrix::zeros(n, params.noise_dim()); steps + 1];
    let mut max_condition: f64 = 0.0;
    let mut last_paths = None;

    for sweep in 0..sweeps.max(1) {
        let paths = simulate_forward(params, ric0, ric, &est, grid, n_paths, seed);
        let mut next = AffineEstimates::zeros(n, steps + 1);
        // Backward values per path, initialized at the zero terminal data.
        let mut s0_val = vec![DVector::<f64>::zeros(n); n_paths];
        let mut s_val = vec![DVector::<f64>::zeros(n); n_paths];

        for k in (0..steps).rev() {
            let z0_k: Vec<&DVector<f64>> = (0..n_paths).map(|i| &paths.z0[i][k]).collect();
            let zb_k: Vec<&DVector<f64>> = (0..n_paths).map(|i| &paths.zbar[i][k]).collect();

            let a0cl_t = ric0.closed_loop(k, &params.a0, &m0).transpose();
            let acl_t = ric.closed_loop(k, &params.a, &m).transpose();
            let c0_zbar = ric0.node(k) * &params.f0 - &params.q0 * &params.h0;
            let c_zbar = ric.node(k) * &params.f - &params.q * &params.hhat;
            let c_z0 = ric.node(k) * &params.g - &params.q * &params.h;
            let f0_const = -(&params.q0 * &params.eta0);
            let f_const = -(&params.q * &params.eta);

            let lhs0_inv = (&eye - &a0cl_t * dt)
                .lu()
                .try_inverse()
                .ok_or_else(|| Error::Inconsistency("implicit BSDE step singular".into()))?;
            let lhs_inv = (&eye - &acl_t * dt)
                .lu()
                .try_inverse()
                .ok_or_else(|| Error::Inconsistency("implicit BSDE step singular".into()))?;

            let reg0 = affine_regression(&z0_k, &zb_k, &s0_val)?;
            let reg = affine_regression(&z0_k, &zb_k, &s_val)?;
            max_condition = max_condition.max(reg0.condition).max(reg.condition);

            // Noise loadings from the covariation of regression residuals
            // with the driving increments.
            let mut cov0 = DMatrix::<f64>::zeros(n, params.noise_dim());
            let mut cov = DMatrix::<f64>::zeros(n, params.noise_dim());
            for i in 0..n_paths {
                let pred0 = &reg0.beta_z0 * z0_k[i] + &reg0.beta_zbar * zb_k[i] + &reg0.beta_const;
                let pred = &reg.beta_z0 * z0_k[i] + &reg.beta_zbar * zb_k[i] + &reg.beta_const;
                let resid0 = &s0_val[i] - pred0;
                let resid = &s_val[i] - pred;
                cov0.gerc(1.0, &resid0, &paths.dw0[i][k], 1.0);
                cov.gerc(1.0, &resid, &paths.dw0[i][k], 1.0);
            }
            q0_hat[k] = cov0 / (n_paths as f64 * dt);
            q_hat[k] = cov / (n_paths as f64 * dt);

            // Affine coefficients of the implicit backward step.
            next.p00[k] = &lhs0_inv * &reg0.beta_z0;
            next.p01[k] = &lhs0_inv * (&reg0.beta_zbar + &c0_zbar * dt);
            next.p0[k] = &lhs0_inv * (&reg0.beta_const + &f0_const * dt);
            next.p10[k] = &lhs_inv * (&reg.beta_z0 + &c_z0 * dt);
            next.p11[k] = &lhs_inv * (&reg.beta_zbar + &c_zbar * dt);
            next.p1[k] = &lhs_inv * (&reg.beta_const + &f_const * dt);

            for i in 0..n_paths {
                s0_val[i] = &next.p00[k] * z0_k[i] + &next.p01[k] * zb_k[i] + &next.p0[k];
                s_val[i] = &next.p10[k] * z0_k[i] + &next.p11[k] * zb_k[i] + &next.p1[k];
            }
        }
        est = next;
        if sweep + 1 == sweeps.max(1) {
            last_paths = Some(paths);
        }
    }

    let paths = last_paths.expect("at least one sweep ran");
    let keep = n_paths.min(256);
    Ok(BsdeOracle {
        p00: est.p00,
        p01: est.p01,
        p0: est.p0,
        p10: est.p10,
        p11: est.p11,
        p1: est.p1,
        q0: q0_hat,
        q: q_hat,
        sample_z0: paths.z0[..keep].to_vec(),
        sample_zbar: paths.zbar[..keep].to_vec(),
        max_condition,
        sweeps: sweeps.max(1),
        n_paths,
    })
}

impl BsdeOracle {
    /// Sup-norm relative disagreement between the oracle estimates and a
    /// claimed set of affine coefficients, evaluated along the oracle's own
    /// sample flows. Returns `(rel_s0, rel_s)`.
    pub fn relative_error(&self, claimed: &super::AffineBsdeCoefficients) -> (f64, f64) {
        let mut err0: f64 = 0.0;
        let mut scale0: f64 = 0.0;
        let mut err: f64 = 0.0;
        let mut scale: f64 = 0.0;
        let nodes = self.p00.len();
        for i in 0..self.sample_z0.len() {
            for k in 0..nodes {
                let z0 = &self.sample_z0[i][k];
                let zb = &self.sample_zbar[i][k];
                let mine0 = &self.p00[k] * z0 + &self.p01[k] * zb + &self.p0[k];
                let theirs0 = &claimed.p00[k] * z0 + &claimed.p01[k] * zb + &claimed.p0[k];
                let mine = &self.p10[k] * z0 + &self.p11[k] * zb + &self.p1[k];
                let theirs = &claimed.p10[k] * z0 + &claimed.p11[k] * zb + &claimed.p1[k];
                err0 = err0.max((mine0 - &theirs0).abs().max());
                scale0 = scale0.max(theirs0.abs().max());
                err = err.max((mine - &theirs).abs().max());
                scale = scale.max(theirs.abs().max());
            }
        }
        (err0 / scale0.max(1e-12), err / scale.max(1e-12))
    }
}

#[cfg(test)]
mod tests {
    use super::super::reduction::reduce_bsde_to_ode;
    use super::super::riccati::solve_riccati;
    use super::*;

    fn solve_pair(params: &LqgParams, grid: &TimeGrid) -> (RiccatiSolution, RiccatiSolution) {
        let ric0 = solve_riccati(&params.a0, &params.b0, &params.q0, &params.r0, grid).unwrap();
        let ric = solve_riccati(&params.a, &params.b, &params.q, &params.r, grid).unwrap();
        (ric0, ric)
    }

    #[test]
    fn zero_forcing_gives_zero_offsets() {
        let mut p = LqgParams::default_scalar();
        p.f0 = DMatrix::zeros(1, 1);
        p.h0 = DMatrix::zeros(1, 1);
        p.eta0 = DVector::zeros(1);
        p.g = DMatrix::zeros(1, 1);
        p.h = DMatrix::zeros(1, 1);
        p.f = DMatrix::zeros(1, 1);
        p.hhat = DMatrix::zeros(1, 1);
        p.eta = DVector::zeros(1);
        let grid = TimeGrid::new(1.0, 50).unwrap();
        let (ric0, ric) = solve_pair(&p, &grid);
        let oracle = mc_bsde_oracle(&p, &ric0, &ric, 2000, &grid, 17, 2).unwrap();
        for k in 0..=50 {
            assert!(oracle.p0[k].abs().max() < 1e-10);
            assert!(oracle.p00[k].abs().max() < 1e-10);
        }
    }

    #[test]
    fn constant_driver_integrates_linearly() {
        // A0 = 0, B0 = 0, F0 = 0, H0 = 0, Q0 = 1, eta0 = -c: the s0 driver
        // is the constant c, so s0(t) = c (T - t).
        let c = 0.7;
        let mut p = LqgParams::default_scalar();
        p.a0 = DMatrix::zeros(1, 1);
        p.b0 = DMatrix::zeros(1, 1);
        p.f0 = DMatrix::zeros(1, 1);
        p.h0 = DMatrix::zeros(1, 1);
        p.eta0 = DVector::from_element(1, -c);
        let grid = TimeGrid::new(1.0, 100).unwrap();
        let (ric0, ric) = solve_pair(&p, &grid);
        let oracle = mc_bsde_oracle(&p, &ric0, &ric, 2000, &grid, 3, 2).unwrap();
        for k in [0, 25, 50, 75] {
            let t = grid.node(k);
            let want = c * (1.0 - t);
            let got = oracle.p0[k][0];
            assert!(
                (got - want).abs() < 0.02 * c,
                "s0({t}) = {got}, want {want}"
            );
            assert!(oracle.p00[k].abs().max() < 1e-6);
            assert!(oracle.p01[k].abs().max() < 1e-6);
        }
    }

    #[test]
    fn covariation_recovers_q0_loading() {
        let p = LqgParams::default_scalar();
        let grid = TimeGrid::new(1.0, 100).unwrap();
        let (ric0, ric) = solve_pair(&p, &grid);
        let coeffs = reduce_bsde_to_ode(&p, &ric0, &ric, &grid).unwrap();
        let oracle = mc_bsde_oracle(&p, &ric0, &ric, 4000, &grid, 5, 3).unwrap();
        // q0 = P00 S0; compare at a few interior nodes.
        for k in [10, 40, 70] {
            let want = &coeffs.p00[k] * &p.s0_diff;
            let got = &oracle.q0[k];
            assert!(
                (got - &want).abs().max() < 0.05 * want.abs().max().max(0.02),
                "q0({k}) = {got:?}, want {want:?}"
            );
        }
    }

    #[test]
    fn oracle_agrees_with_reduction() {
        let p = LqgParams::default_scalar();
        let grid = TimeGrid::new(1.0, 100).unwrap();
        let (ric0, ric) = solve_pair(&p, &grid);
        let coeffs = reduce_bsde_to_ode(&p, &ric0, &ric, &grid).unwrap();
        let oracle = mc_bsde_oracle(&p, &ric0, &ric, 4000, &grid, 11, 3).unwrap();
        let (e0, e) = oracle.relative_error(&coeffs);
        assert!(e0 < 0.05, "s0 relative error {e0}");
        assert!(e < 0.05, "s relative error {e}");
    }
}
