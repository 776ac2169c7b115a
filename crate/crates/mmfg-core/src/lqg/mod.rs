//! The linear-quadratic-Gaussian specialization of the major-minor game.
//!
//! The backward objects are a pair of matrix Riccati equations plus linear
//! BSDEs for the affine offset processes `(s0, q0)` and `(s, q)`. Because
//! the dynamics are linear and the costs quadratic, `s0` and `s` are exactly
//! affine in the major state `z0` and the conditional minor mean `zbar`;
//! substituting that ansatz turns the BSDEs into coupled matrix ODEs which
//! RK4 integrates backward from zero terminal data. A least-squares
//! Monte-Carlo backward recursion (the oracle) verifies the reduction along
//! simulated flows without sharing any of its code path.
//!
//! Conventions: `zbar` is the conditional mean of the minor population given
//! the major noise; the minor idiosyncratic diffusion averages out of its
//! dynamics, so the pair `(z0, zbar)` closes under the equilibrium feedback
//! and carries all the randomness that `w0` injects.

mod oracle;
mod population;
mod reduction;
mod riccati;

pub use oracle::{mc_bsde_oracle, BsdeOracle};
pub use population::{consistency_experiment, ConsistencyReport};
pub use reduction::{reduce_bsde_to_ode, AffineBsdeCoefficients};
pub use riccati::{solve_riccati, RiccatiSolution};

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::noise::{stream_rng, NS_AUX};
use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use std::io::Write;

/// Constant coefficient matrices of the LQG game.
///
/// Major: `dz0 = (A0 z0 + B0 u0 + F0 zbar) dt + S0 dw0`, running cost
/// `|z0 - (H0 zbar + eta0)|^2_Q0 + |u0|^2_R0`. Minor: `dz = (A z + B u +
/// F zbar + G z0) dt + S dw`, cost `|z - (H z0 + Hhat zbar + eta)|^2_Q +
/// |u|^2_R`.
#[derive(Debug, Clone)]
pub struct LqgParams {
    pub a0: DMatrix<f64>,
    pub b0: DMatrix<f64>,
    pub f0: DMatrix<f64>,
    pub h0: DMatrix<f64>,
    pub q0: DMatrix<f64>,
    pub r0: DMatrix<f64>,
    pub s0_diff: DMatrix<f64>,
    pub eta0: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub f: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub hhat: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub s_diff: DMatrix<f64>,
    pub eta: DVector<f64>,
    pub horizon: f64,
    /// Major agent's initial mean and standard deviation (per coordinate).
    pub z0_init_mean: DVector<f64>,
    pub z0_init_std: DVector<f64>,
    /// Minor agents' initial mean and standard deviation; `zbar(0)` is the
    /// mean by definition of the conditional expectation.
    pub z_init_mean: DVector<f64>,
    pub z_init_std: DVector<f64>,
}

const SYM_TOL: f64 = 1e-10;
const PSD_TOL: f64 = -1e-10;
const COND_WARN: f64 = 1e10;

fn check_symmetric(name: &str, m: &DMatrix<f64>) -> Result<()> {
    let dev = (m - m.transpose()).abs().max();
    if dev > SYM_TOL {
        return Err(Error::invalid(format!(
            "{name} must be symmetric within {SYM_TOL:e} (deviation {dev:e})"
        )));
    }
    Ok(())
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

impl LqgParams {
    /// Enforce the shape and definiteness invariants. Returns warnings
    /// (currently: ill-conditioned control-penalty inversions).
    pub fn validate(&self) -> Result<Vec<String>> {
        let n = self.a0.nrows();
        let k = self.b0.ncols();
        let m = self.s0_diff.ncols();
        let square_n = [
            ("A0", &self.a0),
            ("F0", &self.f0),
            ("H0", &self.h0),
            ("Q0", &self.q0),
            ("A", &self.a),
            ("F", &self.f),
            ("G", &self.g),
            ("H", &self.h),
            ("Hhat", &self.hhat),
            ("Q", &self.q),
        ];
        for (name, mat) in square_n {
            if mat.nrows() != n || mat.ncols() != n {
                return Err(Error::invalid(format!("{name} must be {n}x{n}")));
            }
        }
        for (name, mat, rows, cols) in [
            ("B0", &self.b0, n, k),
            ("B", &self.b, n, k),
            ("S0", &self.s0_diff, n, m),
            ("S", &self.s_diff, n, m),
            ("R0", &self.r0, k, k),
            ("R", &self.r, k, k),
        ] {
            if mat.nrows() != rows || mat.ncols() != cols {
                return Err(Error::invalid(format!("{name} must be {rows}x{cols}")));
            }
        }
        for (name, v) in [
            ("eta0", &self.eta0),
            ("eta", &self.eta),
            ("z0_init_mean", &self.z0_init_mean),
            ("z0_init_std", &self.z0_init_std),
            ("z_init_mean", &self.z_init_mean),
            ("z_init_std", &self.z_init_std),
        ] {
            if v.len() != n {
                return Err(Error::invalid(format!("{name} must have length {n}")));
            }
        }
        if !(self.horizon > 0.0) {
            return Err(Error::invalid("horizon must be positive"));
        }
        check_symmetric("Q0", &self.q0)?;
        check_symmetric("Q", &self.q)?;
        check_symmetric("R0", &self.r0)?;
        check_symmetric("R", &self.r)?;
        if min_eigenvalue(&self.q0) < PSD_TOL || min_eigenvalue(&self.q) < PSD_TOL {
            return Err(Error::invalid("Q0 and Q must be positive semidefinite"));
        }
        let mut warnings = Vec::new();
        for (name, r) in [("R0", &self.r0), ("R", &self.r)] {
            let eig = r.clone().symmetric_eigen().eigenvalues;
            let lo = eig.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if lo <= 0.0 {
                return Err(Error::invalid(format!("{name} must be positive definite")));
            }
            if hi / lo > COND_WARN {
                warnings.push(format!(
                    "{name} condition number {:.2e} exceeds {COND_WARN:e}",
                    hi / lo
                ));
            }
        }
        Ok(warnings)
    }

    pub fn state_dim(&self) -> usize {
        self.a0.nrows()
    }

    pub fn control_dim(&self) -> usize {
        self.b0.ncols()
    }

    pub fn noise_dim(&self) -> usize {
        self.s0_diff.ncols()
    }

    /// `B0 R0^{-1} B0^T`.
    pub fn m0(&self) -> DMatrix<f64> {
        let r0_inv = self
            .r0
            .clone()
            .cholesky()
            .expect("validated R0 is PD")
            .inverse();
        &self.b0 * r0_inv * self.b0.transpose()
    }

    /// `B R^{-1} B^T`.
    pub fn m_minor(&self) -> DMatrix<f64> {
        let r_inv = self
            .r
            .clone()
            .cholesky()
            .expect("validated R is PD")
            .inverse();
        &self.b * r_inv * self.b.transpose()
    }

    /// `R0^{-1} B0^T` (the major feedback gain shape).
    pub fn gain0(&self) -> DMatrix<f64> {
        self.r0.clone().cholesky().expect("validated R0 is PD").inverse() * self.b0.transpose()
    }

    pub fn gain_minor(&self) -> DMatrix<f64> {
        self.r.clone().cholesky().expect("validated R is PD").inverse() * self.b.transpose()
    }

    /// The scalar default configuration used by the verification suite.
    pub fn default_scalar() -> Self {
        let m1 = |v: f64| DMatrix::from_element(1, 1, v);
        LqgParams {
            a0: m1(0.2),
            b0: m1(1.0),
            f0: m1(0.3),
            h0: m1(0.4),
            q0: m1(1.0),
            r0: m1(1.0),
            s0_diff: m1(0.4),
            eta0: DVector::from_element(1, 0.5),
            a: m1(-0.1),
            b: m1(1.0),
            f: m1(0.2),
            g: m1(0.3),
            h: m1(0.5),
            hhat: m1(0.2),
            q: m1(1.0),
            r: m1(1.0),
            s_diff: m1(0.5),
            eta: DVector::from_element(1, 0.3),
            horizon: 1.0,
            z0_init_mean: DVector::from_element(1, 0.4),
            z0_init_std: DVector::from_element(1, 0.3),
            z_init_mean: DVector::from_element(1, 0.0),
            z_init_std: DVector::from_element(1, 0.5),
        }
    }
}

/// One simulated equilibrium mean-field flow: the major state and the
/// conditional minor mean along one `w0` path, plus the increments that
/// drove it.
#[derive(Debug, Clone)]
pub struct ScenarioFlow {
    pub z0: Vec<DVector<f64>>,
    pub zbar: Vec<DVector<f64>>,
    pub dw0: Vec<DVector<f64>>,
}

/// Riccati solutions, affine BSDE coefficients, and per-scenario mean-field
/// flows; evaluates the equilibrium feedback maps.
#[derive(Debug, Clone)]
pub struct LqgEquilibrium {
    pub params: LqgParams,
    pub riccati_major: RiccatiSolution,
    pub riccati_minor: RiccatiSolution,
    pub coeffs: AffineBsdeCoefficients,
    pub flows: Vec<ScenarioFlow>,
    gain0: DMatrix<f64>,
    gain: DMatrix<f64>,
}

impl LqgEquilibrium {
    /// `s0(t_k)` along scenario `s`.
    pub fn s0(&self, k: usize, scenario: usize) -> DVector<f64> {
        let flow = &self.flows[scenario];
        &self.coeffs.p00[k] * &flow.z0[k] + &self.coeffs.p01[k] * &flow.zbar[k]
            + &self.coeffs.p0[k]
    }

    /// `s(t_k)` along scenario `s`.
    pub fn s_minor(&self, k: usize, scenario: usize) -> DVector<f64> {
        let flow = &self.flows[scenario];
        &self.coeffs.p10[k] * &flow.z0[k] + &self.coeffs.p11[k] * &flow.zbar[k]
            + &self.coeffs.p1[k]
    }

    /// Major feedback `u0(t_k, x) = -R0^{-1} B0^T (Pi0 x + s0)`.
    pub fn control_major(&self, k: usize, scenario: usize, x: &DVector<f64>) -> DVector<f64> {
        -(&self.gain0 * (self.riccati_major.node(k) * x + self.s0(k, scenario)))
    }

    /// Minor feedback `u(t_k, x) = -R^{-1} B^T (Pi x + s)`.
    pub fn control_minor(&self, k: usize, scenario: usize, x: &DVector<f64>) -> DVector<f64> {
        -(&self.gain * (self.riccati_minor.node(k) * x + self.s_minor(k, scenario)))
    }

    /// `q0(t_k) = P00(t_k) S0`: the loading of `s0` on the major noise.
    pub fn q0(&self, k: usize) -> DMatrix<f64> {
        &self.coeffs.p00[k] * &self.params.s0_diff
    }

    /// `q(t_k) = P10(t_k) S0`.
    pub fn q_minor(&self, k: usize) -> DMatrix<f64> {
        &self.coeffs.p10[k] * &self.params.s0_diff
    }

    /// CSV of the feedback gain processes and offsets per grid node.
    pub fn write_gains_csv(&self, grid: &TimeGrid, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "t,pi0,pi,p00,p01,p0,p10,p11,p1")?;
        for k in 0..grid.len() {
            let flat = |m: &DMatrix<f64>| {
                m.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(";")
            };
            let flatv = |v: &DVector<f64>| {
                v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(";")
            };
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                grid.node(k),
                flat(self.riccati_major.node(k)),
                flat(self.riccati_minor.node(k)),
                flat(&self.coeffs.p00[k]),
                flat(&self.coeffs.p01[k]),
                flatv(&self.coeffs.p0[k]),
                flat(&self.coeffs.p10[k]),
                flat(&self.coeffs.p11[k]),
                flatv(&self.coeffs.p1[k]),
            )?;
        }
        Ok(())
    }
}

/// Euler advance of the closed-loop pair `(z0, zbar)` driven by given `w0`
/// increments, under feedback assembled from `coeffs`.
pub(crate) fn advance_flow(
    params: &LqgParams,
    ric0: &RiccatiSolution,
    ric: &RiccatiSolution,
    coeffs: &AffineBsdeCoefficients,
    grid: &TimeGrid,
    z0_init: DVector<f64>,
    dw0: &[DVector<f64>],
) -> ScenarioFlow {
    let m0 = params.m0();
    let m = params.m_minor();
    let dt = grid.dt();
    let mut z0 = vec![z0_init];
    let mut zbar = vec![params.z_init_mean.clone()];
    for k in 0..grid.steps() {
        let a0cl = ric0.closed_loop(k, &params.a0, &m0);
        let acl = ric.closed_loop(k, &params.a, &m);
        let z0k = &z0[k];
        let zbk = &zbar[k];
        let s0k = &coeffs.p00[k] * z0k + &coeffs.p01[k] * zbk + &coeffs.p0[k];
        let sk = &coeffs.p10[k] * z0k + &coeffs.p11[k] * zbk + &coeffs.p1[k];
        let dz0 = (&a0cl * z0k + &params.f0 * zbk - &m0 * s0k) * dt + &params.s0_diff * &dw0[k];
        let dzb = ((&acl + &params.f) * zbk + &params.g * z0k - &m * sk) * dt;
        z0.push(z0k + dz0);
        zbar.push(zbk + dzb);
    }
    ScenarioFlow {
        z0,
        zbar,
        dw0: dw0.to_vec(),
    }
}

/// Solve the Riccati equations and the BSDE reduction, then simulate the
/// equilibrium mean-field flow along `scenarios` independent `w0` paths.
pub fn lqg_equilibrium(
    params: &LqgParams,
    grid: &TimeGrid,
    scenarios: usize,
    seed: u64,
) -> Result<LqgEquilibrium> {
    params.validate()?;
    if (grid.horizon() - params.horizon).abs() > 1e-12 {
        return Err(Error::invalid("grid horizon must match the parameter horizon"));
    }
    let ric0 = solve_riccati(&params.a0, &params.b0, &params.q0, &params.r0, grid)?;
    let ric = solve_riccati(&params.a, &params.b, &params.q, &params.r, grid)?;
    let coeffs = reduce_bsde_to_ode(params, &ric0, &ric, grid)?;

    let n = params.state_dim();
    let mdim = params.noise_dim();
    let sqrt_dt = grid.dt().sqrt();
    let flows: Vec<ScenarioFlow> = (0..scenarios)
        .map(|s| {
            let mut rng = stream_rng(seed, NS_AUX, s as u64);
            let z0_init = DVector::from_iterator(
                n,
                params
                    .z0_init_mean
                    .iter()
                    .zip(params.z0_init_std.iter())
                    .map(|(m, sd)| m + sd * Distribution::<f64>::sample(&StandardNormal, &mut rng)),
            );
            let dw0: Vec<DVector<f64>> = (0..grid.steps())
                .map(|_| {
                    DVector::from_iterator(
                        mdim,
                        (0..mdim).map(|_| sqrt_dt * Distribution::<f64>::sample(&StandardNormal, &mut rng)),
                    )
                })
                .collect();
            advance_flow(params, &ric0, &ric, &coeffs, grid, z0_init, &dw0)
        })
        .collect();

    Ok(LqgEquilibrium {
        params: params.clone(),
        gain0: params.gain0(),
        gain: params.gain_minor(),
        riccati_major: ric0,
        riccati_minor: ric,
        coeffs,
        flows,
    })
}

/// Discretized BSDE residuals along the equilibrium flow.
///
/// Per scenario the per-step defects `ds + driver dt - q dw0` telescope into
/// a path residual whose RMS scales linearly in `dt`; the per-step RMS is
/// also reported.
#[derive(Debug, Clone, serde::Serialize)]
pub struct BsdeResidual {
    pub s0_path_rms: f64,
    pub s_path_rms: f64,
    pub s0_step_rms: f64,
    pub s_step_rms: f64,
}

pub fn bsde_residual(eq: &LqgEquilibrium, grid: &TimeGrid) -> BsdeResidual {
    let params = &eq.params;
    let m0 = params.m0();
    let m = params.m_minor();
    let dt = grid.dt();
    let c0_zbar = |k: usize| eq.riccati_major.node(k) * &params.f0 - &params.q0 * &params.h0;
    let c_zbar = |k: usize| eq.riccati_minor.node(k) * &params.f - &params.q * &params.hhat;
    let c_z0 = |k: usize| eq.riccati_minor.node(k) * &params.g - &params.q * &params.h;
    let f0_const = -(&params.q0 * &params.eta0);
    let f_const = -(&params.q * &params.eta);

    let mut s0_path = Vec::new();
    let mut s_path = Vec::new();
    let mut s0_steps = Vec::new();
    let mut s_steps = Vec::new();
    for (si, flow) in eq.flows.iter().enumerate() {
        let n = params.state_dim();
        let mut acc0 = DVector::zeros(n);
        let mut acc = DVector::zeros(n);
        for k in 0..grid.steps() {
            let a0cl = eq.riccati_major.closed_loop(k, &params.a0, &m0);
            let acl = eq.riccati_minor.closed_loop(k, &params.a, &m);
            let s0k = eq.s0(k, si);
            let s0k1 = eq.s0(k + 1, si);
            let sk = eq.s_minor(k, si);
            let sk1 = eq.s_minor(k + 1, si);
            let driver0 = a0cl.transpose() * &s0k + c0_zbar(k) * &flow.zbar[k] + &f0_const;
            let driver = acl.transpose() * &sk
                + c_zbar(k) * &flow.zbar[k]
                + c_z0(k) * &flow.z0[k]
                + &f_const;
            let r0 = &s0k1 - &s0k + driver0 * dt - eq.q0(k) * &flow.dw0[k];
            let r = &sk1 - &sk + driver * dt - eq.q_minor(k) * &flow.dw0[k];
            s0_steps.push(r0.norm());
            s_steps.push(r.norm());
            acc0 += r0;
            acc += r;
        }
        s0_path.push(acc0.norm());
        s_path.push(acc.norm());
    }
    let rms = |v: &[f64]| (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt();
    BsdeResidual {
        s0_path_rms: rms(&s0_path),
        s_path_rms: rms(&s_path),
        s0_step_rms: rms(&s0_steps),
        s_step_rms: rms(&s_steps),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validate_catches_asymmetry() {
        let mut p = LqgParams::default_scalar();
        p.q0 = DMatrix::from_row_slice(1, 1, &[1.0]);
        assert!(p.validate().is_ok());
        let mut p2 = LqgParams::default_scalar();
        p2.a0 = DMatrix::from_row_slice(2, 2, &[0.0, 1e-3, 0.0, 0.0]);
        assert!(p2.validate().is_err()); // shape mismatch with the rest
        let mut p3 = {
            let m2 = |vals: &[f64]| DMatrix::from_row_slice(2, 2, vals);
            let mut q = LqgParams::default_scalar();
            q.a0 = m2(&[0.0, 0.0, 0.0, 0.0]);
            q.f0 = m2(&[0.0; 4]);
            q.h0 = m2(&[0.0; 4]);
            q.q0 = m2(&[1.0, 1e-3, 0.0, 1.0]);
            q.a = m2(&[0.0; 4]);
            q.f = m2(&[0.0; 4]);
            q.g = m2(&[0.0; 4]);
            q.h = m2(&[0.0; 4]);
            q.hhat = m2(&[0.0; 4]);
            q.q = m2(&[1.0, 0.0, 0.0, 1.0]);
            q.b0 = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
            q.b = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
            q.s0_diff = DMatrix::from_row_slice(2, 1, &[0.1, 0.0]);
            q.s_diff = DMatrix::from_row_slice(2, 1, &[0.1, 0.0]);
            q.eta0 = DVector::zeros(2);
            q.eta = DVector::zeros(2);
            q.z0_init_mean = DVector::zeros(2);
            q.z0_init_std = DVector::from_element(2, 0.1);
            q.z_init_mean = DVector::zeros(2);
            q.z_init_std = DVector::from_element(2, 0.1);
            q
        };
        let err = p3.validate().unwrap_err();
        assert!(err.to_string().contains("symmetric"), "{err}");
        p3.q0 = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        assert!(p3.validate().is_ok());
    }

    #[test]
    fn zero_cost_gives_zero_controls() {
        let mut p = LqgParams::default_scalar();
        p.q0 = DMatrix::zeros(1, 1);
        p.q = DMatrix::zeros(1, 1);
        let grid = TimeGrid::new(p.horizon, 64).unwrap();
        let eq = lqg_equilibrium(&p, &grid, 2, 5).unwrap();
        for k in 0..=64 {
            for s in 0..2 {
                let u0 = eq.control_major(k, s, &DVector::from_element(1, 1.7));
                let u = eq.control_minor(k, s, &DVector::from_element(1, -0.9));
                assert!(u0.norm() < 1e-12, "u0 = {u0:?} at k={k}");
                assert!(u.norm() < 1e-12);
            }
        }
    }

    #[test]
    fn feedback_is_affine_in_state() {
        let p = LqgParams::default_scalar();
        let grid = TimeGrid::new(p.horizon, 32).unwrap();
        let eq = lqg_equilibrium(&p, &grid, 1, 11).unwrap();
        let k = 10;
        // Finite differences of the feedback map in x are constant across x.
        let at = |x: f64| eq.control_major(k, 0, &DVector::from_element(1, x))[0];
        let d1 = at(1.0) - at(0.0);
        let d2 = at(2.0) - at(1.0);
        let d3 = at(-3.0) - at(-4.0);
        assert!((d1 - d2).abs() < 1e-12 && (d2 - d3).abs() < 1e-12);
    }

    #[test]
    fn major_feedback_formula_exact() {
        let p = LqgParams::default_scalar();
        let grid = TimeGrid::new(p.horizon, 32).unwrap();
        let eq = lqg_equilibrium(&p, &grid, 1, 3).unwrap();
        let k = 7;
        let x = DVector::from_element(1, 0.83);
        let expected = -(p.gain0() * (eq.riccati_major.node(k) * &x + eq.s0(k, 0)));
        assert_eq!(eq.control_major(k, 0, &x), expected);
    }

    #[test]
    fn cost_scaling_leaves_major_control_invariant() {
        let p = LqgParams::default_scalar();
        let mut scaled = p.clone();
        scaled.q0 *= 3.0;
        scaled.r0 *= 3.0;
        let grid = TimeGrid::new(p.horizon, 128).unwrap();
        let eq_a = lqg_equilibrium(&p, &grid, 2, 9).unwrap();
        let eq_b = lqg_equilibrium(&scaled, &grid, 2, 9).unwrap();
        for k in [0, 17, 64, 128] {
            for s in 0..2 {
                let x = DVector::from_element(1, 0.4 + k as f64 * 0.01);
                let ua = eq_a.control_major(k, s, &x);
                let ub = eq_b.control_major(k, s, &x);
                assert!(
                    (ua.clone() - ub.clone()).norm() < 1e-9,
                    "k={k} s={s}: {ua:?} vs {ub:?}"
                );
            }
        }
    }

    #[test]
    fn residual_scales_down_with_dt_and_up_with_perturbation() {
        let p = LqgParams::default_scalar();
        let coarse = TimeGrid::new(p.horizon, 128).unwrap();
        let fine = TimeGrid::new(p.horizon, 256).unwrap();
        let eq_c = lqg_equilibrium(&p, &coarse, 24, 2).unwrap();
        let eq_f = lqg_equilibrium(&p, &fine, 24, 2).unwrap();
        let rc = bsde_residual(&eq_c, &coarse);
        let rf = bsde_residual(&eq_f, &fine);
        let ratio = rf.s0_path_rms / rc.s0_path_rms;
        assert!(
            (0.4..=0.6).contains(&ratio),
            "halving dt should halve the path residual, ratio {ratio}"
        );

        // Perturbing s0 by 1% must inflate the residual by at least 5x;
        // checked on the fine grid where the discretization floor is small.
        let mut perturbed = eq_f.clone();
        for k in 0..perturbed.coeffs.p00.len() {
            perturbed.coeffs.p00[k] *= 1.01;
            perturbed.coeffs.p01[k] *= 1.01;
            perturbed.coeffs.p0[k] *= 1.01;
        }
        let rp = bsde_residual(&perturbed, &fine);
        assert!(
            rp.s0_path_rms > 5.0 * rf.s0_path_rms,
            "perturbed {}; base {}",
            rp.s0_path_rms,
            rf.s0_path_rms
        );
    }
}
