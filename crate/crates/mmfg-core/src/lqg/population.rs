//! Mean-field consistency experiment: equilibrium feedback applied to a
//! finite population, measuring how fast the empirical minor mean tracks
//! the conditional mean-field flow as the population grows.

use super::{advance_flow, reduce_bsde_to_ode, solve_riccati, LqgParams};
use crate::error::Result;
use crate::fit::{ols, OlsFit};
use crate::grid::TimeGrid;
use crate::noise::{mix_seed, sample_noise, InitialLaw, InitialLaws};
use nalgebra::DVector;
use rayon::prelude::*;
use std::io::Write;

#[derive(Debug, Clone, serde::Serialize)]
pub struct ConsistencyReport {
    pub n_values: Vec<usize>,
    pub mean_errors: Vec<f64>,
    pub stderrs: Vec<f64>,
    pub fit: OlsFit,
    pub reps: usize,
}

impl ConsistencyReport {
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "n,mean_error,stderr")?;
        for ((n, e), s) in self.n_values.iter().zip(&self.mean_errors).zip(&self.stderrs) {
            writeln!(w, "{n},{e},{s}")?;
        }
        Ok(())
    }
}

/// For each population size, run the closed-loop N-agent system under the
/// equilibrium feedback with noise shared with the limit flow, and record
/// `sup_t |zbar(t) - popmean(t)|` averaged over repetitions. Because the
/// couplings are linear the population advance uses the empirical mean
/// directly, which equals the pairwise average exactly.
pub fn consistency_experiment(
    params: &LqgParams,
    grid: &TimeGrid,
    n_list: &[usize],
    reps: usize,
    seed: u64,
) -> Result<ConsistencyReport> {
    params.validate()?;
    let ric0 = solve_riccati(&params.a0, &params.b0, &params.q0, &params.r0, grid)?;
    let ric = solve_riccati(&params.a, &params.b, &params.q, &params.r, grid)?;
    let coeffs = reduce_bsde_to_ode(params, &ric0, &ric, grid)?;
    let max_n = *n_list.iter().max().expect("non-empty n_list");
    let n = params.state_dim();
    let mdim = params.noise_dim();
    let laws = InitialLaws {
        major: InitialLaw::Gaussian {
            mean: params.z0_init_mean.iter().copied().collect(),
            std: params.z0_init_std.iter().copied().collect(),
        },
        minor: InitialLaw::Gaussian {
            mean: params.z_init_mean.iter().copied().collect(),
            std: params.z_init_std.iter().copied().collect(),
        },
    };
    let m0 = params.m0();
    let m = params.m_minor();
    let gain0 = params.gain0();
    let gain = params.gain_minor();
    let dt = grid.dt();
    let steps = grid.steps();

    // errors[rep][n_index]
    let errors: Vec<Vec<f64>> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let bundle = sample_noise(grid, max_n, 1, mdim, mix_seed(seed, rep as u64), &laws)
                .expect("valid noise request");
            let dw0: Vec<DVector<f64>> = (0..steps)
                .map(|k| DVector::from_column_slice(bundle.major_increment(0, k)))
                .collect();
            let z0_init = DVector::from_column_slice(bundle.initial_state(0));
            let flow = advance_flow(params, &ric0, &ric, &coeffs, grid, z0_init, &dw0);

            n_list
                .iter()
                .map(|&pop_n| {
                    let mut minors: Vec<DVector<f64>> = (1..=pop_n)
                        .map(|i| DVector::from_column_slice(bundle.initial_state(i)))
                        .collect();
                    let mut major = flow.z0[0].clone();
                    let mut worst: f64 = {
                        let mean0 = minors.iter().sum::<DVector<f64>>() / pop_n as f64;
                        (&flow.zbar[0] - mean0).norm()
                    };
                    for k in 0..steps {
                        let popmean = minors.iter().sum::<DVector<f64>>() / pop_n as f64;
                        let s0k = &coeffs.p00[k] * &flow.z0[k]
                            + &coeffs.p01[k] * &flow.zbar[k]
                            + &coeffs.p0[k];
                        let sk = &coeffs.p10[k] * &flow.z0[k]
                            + &coeffs.p11[k] * &flow.zbar[k]
                            + &coeffs.p1[k];
                        // Major: dz0 = (A0 z0 + B0 u0 + F0 popmean) dt + S0 dw0
                        // with u0 = -R0^{-1} B0^T (Pi0 z0 + s0).
                        let dmaj = (ric0.closed_loop(k, &params.a0, &m0) * &major
                            + &params.f0 * &popmean
                            - &m0 * &s0k)
                            * dt
                            + &params.s0_diff * &dw0[k];
                        let acl = ric.closed_loop(k, &params.a, &m);
                        for (i, z) in minors.iter_mut().enumerate() {
                            let dwi =
                                DVector::from_column_slice(bundle.minor_increment(0, i, k));
                            let dz = (&acl * &*z + &params.f * &popmean + &params.g * &major
                                - &m * &sk)
                                * dt
                                + &params.s_diff * dwi;
                            *z += dz;
                        }
                        major += dmaj;
                        let mean_next = minors.iter().sum::<DVector<f64>>() / pop_n as f64;
                        worst = worst.max((&flow.zbar[k + 1] - mean_next).norm());
                    }
                    worst
                })
                .collect()
        })
        .collect();

    let mut mean_errors = Vec::with_capacity(n_list.len());
    let mut stderrs = Vec::with_capacity(n_list.len());
    for j in 0..n_list.len() {
        let vals: Vec<f64> = errors.iter().map(|per_rep| per_rep[j]).collect();
        let mean = vals.iter().sum::<f64>() / reps as f64;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / (reps.max(2) - 1) as f64;
        mean_errors.push(mean);
        stderrs.push((var / reps as f64).sqrt());
    }
    let xs: Vec<f64> = n_list.iter().map(|&n| (n as f64).ln()).collect();
    let ys: Vec<f64> = mean_errors.iter().map(|e| e.ln()).collect();
    let fit = ols(&xs, &ys);
    let _ = (n, gain0, gain); // gains folded into the closed-loop matrices
    Ok(ConsistencyReport {
        n_values: n_list.to_vec(),
        mean_errors,
        stderrs,
        fit,
        reps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn consistency_rate_near_half() {
        let p = LqgParams::default_scalar();
        let grid = TimeGrid::new(p.horizon, 64).unwrap();
        let report =
            consistency_experiment(&p, &grid, &[8, 16, 32, 64, 128, 256, 512], 10, 77).unwrap();
        assert!(
            (-0.65..=-0.35).contains(&report.fit.slope),
            "slope {} outside the sqrt-N window",
            report.fit.slope
        );
    }
}
