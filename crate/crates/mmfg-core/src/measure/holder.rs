//! Empirical Hölder-continuity estimation for random measure flows.
//!
//! A measure flow is Hölder-β when its integrals against bounded Lipschitz
//! test functions move at most like `c |t-s|^β`. The estimator computes
//! test-function integrals along each scenario, takes the sup over time of
//! increments at a set of lags, and fits `log sup-increment` against
//! `log lag` by ordinary least squares.

use super::ConditionalMeasureProcess;
use crate::error::{Error, Result};
use crate::fit::ols;
use crate::grid::TimeGrid;

/// Bounded Lipschitz(1) test-function families on `R^n` (applied
/// coordinate-wise through projections).
#[derive(Debug, Clone)]
pub enum TestFunctionFamily {
    /// `sin(k x_d)/k`, `cos(k x_d)/k` for `k = 1..=harmonics`, plus clamped
    /// ramps `clamp(x_d - c, -1, 1)` at the given centers.
    Default { harmonics: usize, ramp_centers: Vec<f64> },
}

impl Default for TestFunctionFamily {
    fn default() -> Self {
        TestFunctionFamily::Default {
            harmonics: 3,
            ramp_centers: vec![-1.0, 0.0, 1.0],
        }
    }
}

impl TestFunctionFamily {
    pub fn id(&self) -> String {
        match self {
            TestFunctionFamily::Default { harmonics, ramp_centers } => {
                format!("sin-cos-{harmonics}-ramps-{}", ramp_centers.len())
            }
        }
    }

    /// Evaluate every member at a point; `out` is overwritten.
    fn eval(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        match self {
            TestFunctionFamily::Default { harmonics, ramp_centers } => {
                for d in 0..x.len() {
                    let v = x[d];
                    for k in 1..=*harmonics {
                        let kf = k as f64;
                        out.push((kf * v).sin() / kf);
                        out.push((kf * v).cos() / kf);
                    }
                    for &c in ramp_centers {
                        out.push((v - c).clamp(-1.0, 1.0));
                    }
                }
            }
        }
    }

    fn len(&self, dim: usize) -> usize {
        match self {
            TestFunctionFamily::Default { harmonics, ramp_centers } => {
                dim * (2 * harmonics + ramp_centers.len())
            }
        }
    }
}

/// Result of a Hölder-exponent regression.
#[derive(Debug, Clone, serde::Serialize)]
pub struct HolderEstimate {
    /// Pooled exponent over all scenarios.
    pub exponent: f64,
    /// Pooled multiplicative constant `exp(intercept)`.
    pub constant: f64,
    /// R-squared of the pooled regression.
    pub r_squared: f64,
    /// Exponent per scenario.
    pub per_scenario: Vec<f64>,
    /// Smallest per-scenario exponent (the roughest sample path).
    pub worst: f64,
    /// Set when the flow had (numerically) zero increments; the exponent is
    /// then reported as 1.
    pub degenerate: bool,
    pub family: String,
}

/// Estimate the Hölder exponent of a conditional measure flow.
///
/// `lags` are node offsets; at least 4 distinct positive lags are required.
pub fn holder_estimate(
    process: &ConditionalMeasureProcess,
    grid: &TimeGrid,
    family: &TestFunctionFamily,
    lags: &[usize],
) -> Result<HolderEstimate> {
    let mut lags: Vec<usize> = lags.iter().copied().filter(|&l| l > 0).collect();
    lags.sort_unstable();
    lags.dedup();
    if lags.len() < 4 {
        return Err(Error::invalid("need at least 4 distinct positive lags"));
    }
    let nodes = process.scenarios()[0].nodes();
    if *lags.last().unwrap() >= nodes {
        return Err(Error::invalid("largest lag exceeds the grid"));
    }

    let dim = process.scenarios()[0].dim();
    let n_funcs = family.len(dim);
    let mut per_scenario = Vec::with_capacity(process.scenarios().len());
    let mut pooled_x = Vec::new();
    let mut pooled_y = Vec::new();
    let mut degenerate = true;

    for cloud in process.scenarios() {
        // g[f][k] = integral of test function f against the cloud at node k.
        let mut g = vec![vec![0.0; cloud.nodes()]; n_funcs];
        let mut vals = Vec::with_capacity(n_funcs);
        for k in 0..cloud.nodes() {
            let mut acc = vec![0.0; n_funcs];
            for i in 0..cloud.count() {
                family.eval(cloud.state(i, k), &mut vals);
                let w = cloud.weights()[i];
                for (a, v) in acc.iter_mut().zip(&vals) {
                    *a += w * v;
                }
            }
            for (f, a) in acc.iter().enumerate() {
                g[f][k] = *a;
            }
        }

        let mut xs = Vec::with_capacity(lags.len());
        let mut ys = Vec::with_capacity(lags.len());
        for &lag in &lags {
            let mut sup: f64 = 0.0;
            for gf in &g {
                for k in 0..cloud.nodes() - lag {
                    sup = sup.max((gf[k + lag] - gf[k]).abs());
                }
            }
            if sup > 1e-14 {
                degenerate = false;
                xs.push((lag as f64 * grid.dt()).ln());
                ys.push(sup.ln());
            }
        }
        if xs.len() >= 2 {
            let fit = ols(&xs, &ys);
            per_scenario.push(fit.slope);
            pooled_x.extend_from_slice(&xs);
            pooled_y.extend_from_slice(&ys);
        } else {
            per_scenario.push(1.0);
        }
    }

    if degenerate {
        return Ok(HolderEstimate {
            exponent: 1.0,
            constant: 0.0,
            r_squared: 1.0,
            per_scenario,
            worst: 1.0,
            degenerate: true,
            family: family.id(),
        });
    }

    let fit = ols(&pooled_x, &pooled_y);
    let worst = per_scenario.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(HolderEstimate {
        exponent: fit.slope,
        constant: fit.intercept.exp(),
        r_squared: fit.r_squared,
        per_scenario,
        worst,
        degenerate: false,
        family: family.id(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::PathMeasure;
    use crate::noise::{stream_rng, NS_AUX};
    use rand_distr::{Distribution, StandardNormal};

    fn dirac_process(path: Vec<f64>, nodes: usize) -> ConditionalMeasureProcess {
        let pm = PathMeasure::dirac(path, nodes, 1).unwrap();
        ConditionalMeasureProcess::equal_weights(vec![pm]).unwrap()
    }

    #[test]
    fn constant_flow_degenerate() {
        let grid = TimeGrid::new(1.0, 64).unwrap();
        let proc = dirac_process(vec![0.4; 65], 65);
        let est = holder_estimate(&proc, &grid, &TestFunctionFamily::default(), &[1, 2, 4, 8])
            .unwrap();
        assert!(est.degenerate);
        assert_eq!(est.exponent, 1.0);
    }

    #[test]
    fn straight_line_is_lipschitz() {
        let grid = TimeGrid::new(1.0, 512).unwrap();
        let path: Vec<f64> = (0..=512).map(|k| 0.8 * k as f64 / 512.0).collect();
        let proc = dirac_process(path, 513);
        let est = holder_estimate(
            &proc,
            &grid,
            &TestFunctionFamily::default(),
            &[1, 2, 4, 8, 16, 32],
        )
        .unwrap();
        assert!(
            (est.exponent - 1.0).abs() < 0.1,
            "expected ~1, got {}",
            est.exponent
        );
    }

    #[test]
    fn brownian_path_is_rough() {
        let steps = 4096;
        let grid = TimeGrid::new(1.0, steps).unwrap();
        let mut rng = stream_rng(99, NS_AUX, 1);
        let sd = grid.dt().sqrt();
        let mut path = vec![0.0f64];
        for _ in 0..steps {
            let z: f64 = StandardNormal.sample(&mut rng);
            path.push(path.last().unwrap() + sd * z);
        }
        let proc = dirac_process(path, steps + 1);
        let est = holder_estimate(
            &proc,
            &grid,
            &TestFunctionFamily::default(),
            &[1, 2, 4, 8, 16, 32, 64],
        )
        .unwrap();
        assert!(est.exponent < 0.55, "expected < 0.55, got {}", est.exponent);
        assert!(est.exponent > 0.2, "suspiciously small: {}", est.exponent);
    }
}
