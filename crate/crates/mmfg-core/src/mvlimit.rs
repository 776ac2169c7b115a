//! The N-agent closed-loop system, its McKean-Vlasov limit via Picard
//! iteration on particle clouds, and the convergence-rate experiment.

use crate::control::FeedbackControl;
use crate::error::{Error, Result};
use crate::fit::{ols, OlsFit};
use crate::grid::TimeGrid;
use crate::measure::{ConditionalMeasureProcess, PathMeasure};
use crate::model::{AgentRole, ModelSpec};
use crate::noise::{mix_seed, sample_noise, stream_rng, NoiseBundle, NS_MV_CLOUD};
use crate::sde::{integrate_sde, Coupling, MeasureFlow, Trajectory};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

/// One closed-loop simulation of the finite population.
#[derive(Debug, Clone)]
pub struct PopulationRun {
    pub major: Trajectory,
    pub minors: Vec<Trajectory>,
}

/// One solution of the McKean-Vlasov system along a major-noise scenario.
#[derive(Debug)]
pub struct LimitRun {
    /// Limit major path driven by the scenario's `w0`.
    pub major: Trajectory,
    /// Limit minor paths driven by the same `w_i` as the population run.
    pub minors: Vec<Trajectory>,
    /// Converged measure flow (the Picard cloud).
    pub flow: MeasureFlow,
    /// Cloud trajectories as a path measure (one scenario).
    pub cloud: PathMeasure,
    /// Successive sup-over-t marginal distances, one per Picard update.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

impl LimitRun {
    /// The conditional measure process carried by this scenario's cloud.
    pub fn measure_process(&self) -> ConditionalMeasureProcess {
        ConditionalMeasureProcess::equal_weights(vec![self.cloud.clone()])
            .expect("cloud is a valid path measure")
    }
}

fn check_h4(control: &FeedbackControl, grid: &TimeGrid) -> Result<()> {
    if control.lipschitz() > 0.0 {
        let times = [0.0, grid.horizon() / 2.0, grid.horizon()];
        control.probe_lipschitz(&times, -3.0, 3.0, 24)?;
    }
    Ok(())
}

/// Which agent a deviation targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Major,
    /// Index into the minor population (0-based).
    Minor(usize),
}

/// Coupled Euler-Maruyama advance of the `N + 1` agent closed loop, each
/// agent's coupling term averaging over all `N` current minor states.
pub fn simulate_population(
    model: &ModelSpec,
    u0: &FeedbackControl,
    u: &FeedbackControl,
    n: usize,
    bundle: &NoiseBundle,
    scenario: usize,
) -> Result<PopulationRun> {
    simulate_population_impl(model, u0, u, n, bundle, scenario, None, None)
}

/// Same advance with one agent's control law replaced; everything else,
/// including every noise stream, is identical to the base run.
pub fn simulate_population_deviated(
    model: &ModelSpec,
    u0: &FeedbackControl,
    u: &FeedbackControl,
    n: usize,
    bundle: &NoiseBundle,
    scenario: usize,
    target: Target,
    deviation: &FeedbackControl,
) -> Result<PopulationRun> {
    simulate_population_impl(model, u0, u, n, bundle, scenario, None, Some((target, deviation)))
}

#[allow(clippy::too_many_arguments)]
fn simulate_population_impl(
    model: &ModelSpec,
    u0: &FeedbackControl,
    u: &FeedbackControl,
    n: usize,
    bundle: &NoiseBundle,
    scenario: usize,
    stream_permutation: Option<&[usize]>,
    deviation: Option<(Target, &FeedbackControl)>,
) -> Result<PopulationRun> {
    if n == 0 || n > bundle.agents() {
        return Err(Error::invalid("population size exceeds the noise bundle"));
    }
    let grid = TimeGrid::new(bundle.dt() * bundle.steps() as f64, bundle.steps())?;
    check_h4(u0, &grid)?;
    check_h4(u, &grid)?;
    let dim = model.state_dim;
    let m = model.noise_dim;
    let steps = bundle.steps();
    let dt = grid.dt();
    let u0_dim = model.bounds_major.dim();
    let u_dim = model.bounds_minor.dim();

    let stream = |i: usize| -> usize { stream_permutation.map(|p| p[i]).unwrap_or(i) };
    let major_control = |_: ()| -> &FeedbackControl {
        match deviation {
            Some((Target::Major, dev)) => dev,
            _ => u0,
        }
    };
    let minor_control = |i: usize| -> &FeedbackControl {
        match deviation {
            Some((Target::Minor(t), dev)) if t == i => dev,
            _ => u,
        }
    };
    if let Some((Target::Minor(t), _)) = deviation {
        if t >= n {
            return Err(Error::invalid("deviation target outside the population"));
        }
    }

    let mut major = bundle.initial_state(0).to_vec();
    let mut minors: Vec<Vec<f64>> = (0..n)
        .map(|i| bundle.initial_state(1 + stream(i)).to_vec())
        .collect();
    let mut major_states = major.clone();
    let mut minor_states: Vec<Vec<f64>> = minors.clone();
    let mut major_controls = Vec::with_capacity(steps * u0_dim);
    let mut minor_controls: Vec<Vec<f64>> = vec![Vec::with_capacity(steps * u_dim); n];

    let mut u0_buf = vec![0.0; u0_dim];
    let mut u_buf = vec![0.0; u_dim];
    let mut drift = vec![0.0; dim];
    let mut drift_acc = vec![0.0; dim];
    let mut diff = vec![0.0; dim * m];
    let mut diff_acc = vec![0.0; dim * m];
    let inv_n = 1.0 / n as f64;

    for k in 0..steps {
        let t = grid.node(k);
        let mut next_minors = minors.clone();
        // Major agent.
        major_control(()).eval(t, &major, &mut u0_buf);
        major_controls.extend_from_slice(&u0_buf);
        drift_acc.fill(0.0);
        diff_acc.fill(0.0);
        if model.decoupled_dynamics {
            (model.drift_major)(t, &major, &u0_buf, &major, &mut drift_acc);
            (model.diffusion_major)(t, &major, &major, &mut diff_acc);
        } else {
            for y in &minors {
                (model.drift_major)(t, &major, &u0_buf, y, &mut drift);
                (model.diffusion_major)(t, &major, y, &mut diff);
                for d in 0..dim {
                    drift_acc[d] += drift[d] * inv_n;
                }
                for d in 0..dim * m {
                    diff_acc[d] += diff[d] * inv_n;
                }
            }
        }
        let dw0 = bundle.major_increment(scenario, k);
        let mut next_major = major.clone();
        for d in 0..dim {
            let mut dx = drift_acc[d] * dt;
            for j in 0..m {
                dx += diff_acc[d * m + j] * dw0[j];
            }
            next_major[d] += dx;
            if !next_major[d].is_finite() {
                return Err(Error::NumericalBlowup {
                    time: t,
                    state: major.clone(),
                    detail: "major state diverged in population run".into(),
                });
            }
        }
        // Minor agents (synchronous update against current states).
        for i in 0..n {
            let x = &minors[i];
            minor_control(i).eval(t, x, &mut u_buf);
            minor_controls[i].extend_from_slice(&u_buf);
            drift_acc.fill(0.0);
            diff_acc.fill(0.0);
            if model.decoupled_dynamics {
                (model.drift_minor)(t, x, &u_buf, &major, x, &mut drift_acc);
                (model.diffusion_minor)(t, x, &major, x, &mut diff_acc);
            } else {
                for y in &minors {
                    (model.drift_minor)(t, x, &u_buf, &major, y, &mut drift);
                    (model.diffusion_minor)(t, x, &major, y, &mut diff);
                    for d in 0..dim {
                        drift_acc[d] += drift[d] * inv_n;
                    }
                    for d in 0..dim * m {
                        diff_acc[d] += diff[d] * inv_n;
                    }
                }
            }
            let dw = bundle.minor_increment(scenario, stream(i), k);
            for d in 0..dim {
                let mut dx = drift_acc[d] * dt;
                for j in 0..m {
                    dx += diff_acc[d * m + j] * dw[j];
                }
                next_minors[i][d] = x[d] + dx;
                if !next_minors[i][d].is_finite() {
                    return Err(Error::NumericalBlowup {
                        time: t,
                        state: x.clone(),
                        detail: format!("minor agent {i} diverged in population run"),
                    });
                }
            }
        }
        major = next_major;
        minors = next_minors;
        major_states.extend_from_slice(&major);
        for i in 0..n {
            minor_states[i].extend_from_slice(&minors[i]);
        }
    }

    let major_traj =
        Trajectory::new(major_states, steps, dim)?.with_controls(u0_dim, major_controls)?;
    let minor_trajs = minor_states
        .into_iter()
        .zip(minor_controls)
        .map(|(states, controls)| {
            Trajectory::new(states, steps, dim).and_then(|t| t.with_controls(u_dim, controls))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PopulationRun {
        major: major_traj,
        minors: minor_trajs,
    })
}

/// Sup-over-t coordinate-wise marginal distance between two same-size
/// cloud flows (sorted pairing per coordinate, worst coordinate).
fn flow_marginal_distance(a: &MeasureFlow, b: &MeasureFlow) -> f64 {
    let count = a.count();
    let dim = a.dim();
    let mut worst: f64 = 0.0;
    let mut xs = vec![0.0; count];
    let mut ys = vec![0.0; count];
    for k in 0..a.nodes() {
        for d in 0..dim {
            for i in 0..count {
                xs[i] = a.particle(k, i)[d];
                ys[i] = b.particle(k, i)[d];
            }
            xs.sort_by(|p, q| p.partial_cmp(q).unwrap());
            ys.sort_by(|p, q| p.partial_cmp(q).unwrap());
            let sq: f64 = xs
                .iter()
                .zip(&ys)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                / count as f64;
            worst = worst.max(sq.sqrt());
        }
    }
    worst
}

/// Solve the McKean-Vlasov system along one scenario by Picard iteration on
/// an `m_particles`-strong cloud: integrate the major path and the cloud
/// against the frozen measure flow, replace the flow with the cloud's
/// empirical law, and repeat until successive flows move less than
/// `picard_tol` in sup-over-t marginal distance. The driving noises are
/// frozen across sweeps, so the iteration is a deterministic fixed-point
/// map.
pub fn simulate_mv_limit(
    model: &ModelSpec,
    u0: &FeedbackControl,
    u: &FeedbackControl,
    bundle: &NoiseBundle,
    scenario: usize,
    m_particles: usize,
    picard_tol: f64,
    picard_max: usize,
) -> Result<LimitRun> {
    if m_particles < 2 {
        return Err(Error::invalid("need at least 2 cloud particles"));
    }
    let grid = TimeGrid::new(bundle.dt() * bundle.steps() as f64, bundle.steps())?;
    check_h4(u0, &grid)?;
    check_h4(u, &grid)?;
    let dim = model.state_dim;
    let m = model.noise_dim;
    let steps = bundle.steps();
    let seed = bundle.seed();
    let laws = bundle.laws();

    // Cloud initials and increments: conditionally independent copies with
    // their own streams, frozen across Picard sweeps.
    let cloud_idx = |p: usize| (scenario as u64) << 24 | p as u64;
    let cloud_init: Vec<Vec<f64>> = (0..m_particles)
        .map(|p| {
            let mut rng = stream_rng(seed, NS_MV_CLOUD, cloud_idx(p) << 1);
            laws.minor.sample(&mut rng)
        })
        .collect();
    let sqrt_dt = grid.dt().sqrt();
    let cloud_incr: Vec<Vec<f64>> = (0..m_particles)
        .map(|p| {
            let mut rng = stream_rng(seed, NS_MV_CLOUD, (cloud_idx(p) << 1) | 1);
            (0..steps * m)
                .map(|_| sqrt_dt * Distribution::<f64>::sample(&StandardNormal, &mut rng))
                .collect()
        })
        .collect();

    // Initial guess: the cloud's initial states held constant in time.
    let init_flat: Vec<f64> = cloud_init.iter().flatten().copied().collect();
    let mut flow = MeasureFlow::constant(&init_flat, m_particles, dim, steps + 1)?;

    let mut trace: Vec<f64> = Vec::new();
    let mut major_traj: Option<Trajectory> = None;
    let mut cloud_trajs: Vec<Trajectory> = Vec::new();
    let mut converged = false;
    for sweep in 0..=picard_max {
        let major = integrate_sde(
            model,
            AgentRole::Major,
            u0,
            Coupling { major: None, measure: &flow },
            bundle.major_path_increments(scenario),
            bundle.initial_state(0),
            &grid,
        )?;
        let trajs: Vec<Trajectory> = (0..m_particles)
            .into_par_iter()
            .map(|p| {
                integrate_sde(
                    model,
                    AgentRole::Minor,
                    u,
                    Coupling { major: Some(&major), measure: &flow },
                    &cloud_incr[p],
                    &cloud_init[p],
                    &grid,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let new_flow = MeasureFlow::from_trajectories(&trajs)?;
        let dist = if sweep > 0 {
            let d = flow_marginal_distance(&new_flow, &flow);
            trace.push(d);
            d
        } else {
            f64::INFINITY
        };
        flow = new_flow;
        major_traj = Some(major);
        cloud_trajs = trajs;
        if dist < picard_tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::IterationLimit {
            iterations: picard_max,
            last_distance: trace.last().copied().unwrap_or(f64::INFINITY),
            trace,
        });
    }

    let major = major_traj.expect("at least one sweep ran");
    // Limit minor paths driven by the population's own noise streams.
    let minors: Vec<Trajectory> = (0..bundle.agents())
        .into_par_iter()
        .map(|i| {
            integrate_sde(
                model,
                AgentRole::Minor,
                u,
                Coupling { major: Some(&major), measure: &flow },
                bundle.minor_path_increments(scenario, i),
                bundle.initial_state(1 + i),
                &grid,
            )
        })
        .collect::<Result<Vec<_>>>()?;

    let cloud_paths: Vec<f64> = cloud_trajs
        .iter()
        .flat_map(|t| t.states_flat().iter().copied())
        .collect();
    let cloud = PathMeasure::uniform(cloud_paths, steps + 1, dim)?;
    let residual = trace.last().copied().unwrap_or(0.0);
    Ok(LimitRun {
        major,
        minors,
        flow,
        cloud,
        iterations: trace.len(),
        residual,
        trace,
    })
}

/// Rate-experiment output: per-N errors with the log-log fit.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ConvergenceReport {
    pub n_values: Vec<usize>,
    /// `sup_t` of the rep-averaged deviation, minors pooled by
    /// exchangeability with the major tracked separately; the reported
    /// error is the worse of the two groups.
    pub errors: Vec<f64>,
    pub stderrs: Vec<f64>,
    pub major_errors: Vec<f64>,
    /// Worst single agent (diagnostic; noisier than the pooled estimate).
    pub worst_agent_errors: Vec<f64>,
    pub fit: OlsFit,
    pub reps: usize,
    pub runtime_seconds: f64,
}

impl ConvergenceReport {
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "n,error,stderr,major_error,worst_agent_error")?;
        for i in 0..self.n_values.len() {
            writeln!(
                w,
                "{},{},{},{},{}",
                self.n_values[i],
                self.errors[i],
                self.stderrs[i],
                self.major_errors[i],
                self.worst_agent_errors[i]
            )?;
        }
        Ok(())
    }
}

/// Shared-noise convergence experiment: for every rep, couple the
/// population and the limit system through identical Brownian paths and
/// initial states, then fit `log error` against `log N`.
#[allow(clippy::too_many_arguments)]
pub fn convergence_experiment(
    model: &ModelSpec,
    u0: &FeedbackControl,
    u: &FeedbackControl,
    n_list: &[usize],
    reps: usize,
    m_particles: usize,
    picard_tol: f64,
    picard_max: usize,
    seed: u64,
    grid: &TimeGrid,
    laws: &crate::noise::InitialLaws,
) -> Result<ConvergenceReport> {
    if n_list.len() < 4 || n_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid(
            "need at least 4 strictly increasing population sizes",
        ));
    }
    let start = Instant::now();
    let max_n = *n_list.last().unwrap();
    let steps = grid.steps();

    struct RepOutcome {
        /// `[n_index][t]` mean-over-minors deviation.
        minor_mean: Vec<Vec<f64>>,
        /// `[n_index][t]` major deviation.
        major: Vec<Vec<f64>>,
        /// `[n_index][agent]` sup-t deviation per agent.
        per_agent_sup: Vec<Vec<f64>>,
    }

    let outcomes: Vec<RepOutcome> = (0..reps)
        .into_par_iter()
        .map(|rep| -> Result<RepOutcome> {
            let bundle = sample_noise(
                grid,
                max_n,
                1,
                model.noise_dim,
                mix_seed(seed, rep as u64),
                laws,
            )?;
            let limit =
                simulate_mv_limit(model, u0, u, &bundle, 0, m_particles, picard_tol, picard_max)?;
            let mut minor_mean = Vec::with_capacity(n_list.len());
            let mut major = Vec::with_capacity(n_list.len());
            let mut per_agent = Vec::with_capacity(n_list.len());
            for &n in n_list {
                let pop = simulate_population(model, u0, u, n, &bundle, 0)?;
                let mut mm = vec![0.0; steps + 1];
                let mut mj = vec![0.0; steps + 1];
                let mut agents = vec![0.0f64; n];
                for k in 0..=steps {
                    let dmaj = pop
                        .major
                        .state(k)
                        .iter()
                        .zip(limit.major.state(k))
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt();
                    mj[k] = dmaj;
                    let mut acc = 0.0;
                    for i in 0..n {
                        let d = pop.minors[i]
                            .state(k)
                            .iter()
                            .zip(limit.minors[i].state(k))
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum::<f64>()
                            .sqrt();
                        acc += d;
                        agents[i] = agents[i].max(d);
                    }
                    mm[k] = acc / n as f64;
                }
                minor_mean.push(mm);
                major.push(mj);
                per_agent.push(agents);
            }
            Ok(RepOutcome {
                minor_mean,
                major,
                per_agent_sup: per_agent,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut errors = Vec::with_capacity(n_list.len());
    let mut stderrs = Vec::with_capacity(n_list.len());
    let mut major_errors = Vec::with_capacity(n_list.len());
    let mut worst_agent_errors = Vec::with_capacity(n_list.len());
    for (j, &n) in n_list.iter().enumerate() {
        // sup_t of rep-averaged deviations.
        let mut sup_combined: f64 = 0.0;
        let mut sup_major: f64 = 0.0;
        for k in 0..=steps {
            let mean_minor: f64 =
                outcomes.iter().map(|o| o.minor_mean[j][k]).sum::<f64>() / reps as f64;
            let mean_major: f64 =
                outcomes.iter().map(|o| o.major[j][k]).sum::<f64>() / reps as f64;
            sup_combined = sup_combined.max(mean_minor.max(mean_major));
            sup_major = sup_major.max(mean_major);
        }
        // Spread over reps of each rep's sup-t pooled error, for error bars.
        let per_rep: Vec<f64> = outcomes
            .iter()
            .map(|o| {
                (0..=steps)
                    .map(|k| o.minor_mean[j][k].max(o.major[j][k]))
                    .fold(0.0f64, f64::max)
            })
            .collect();
        let mean = per_rep.iter().sum::<f64>() / reps as f64;
        let var = per_rep.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / (reps.max(2) - 1) as f64;
        stderrs.push((var / reps as f64).sqrt());
        errors.push(sup_combined);
        major_errors.push(sup_major);
        let worst = (0..n)
            .map(|i| outcomes.iter().map(|o| o.per_agent_sup[j][i]).sum::<f64>() / reps as f64)
            .fold(0.0f64, f64::max);
        worst_agent_errors.push(worst);
    }

    let xs: Vec<f64> = n_list.iter().map(|&n| (n as f64).ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let fit = ols(&xs, &ys);
    Ok(ConvergenceReport {
        n_values: n_list.to_vec(),
        errors,
        stderrs,
        major_errors,
        worst_agent_errors,
        fit,
        reps,
        runtime_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Bounded-coefficient test model with couplings in every pairwise slot:
/// tanh mean reversion toward the coupling particle, a bounded pull toward
/// the major state, and a bounded non-degenerate minor diffusion that
/// depends on the coupling particle.
pub fn bounded_rate_model() -> ModelSpec {
    ModelSpec {
        state_dim: 1,
        noise_dim: 1,
        drift_major: Arc::new(|_, x, u, y, out| {
            out[0] = 0.8 * (y[0] - x[0]).tanh() + u[0];
        }),
        diffusion_major: Arc::new(|_, _, _, out| out[0] = 0.3),
        drift_minor: Arc::new(|_, x, u, z0, y, out| {
            out[0] = 0.8 * (y[0] - x[0]).tanh() + 0.5 * (z0[0] - x[0]).sin() + u[0];
        }),
        diffusion_minor: Arc::new(|_, _, _, y, out| out[0] = 0.35 + 0.15 * y[0].cos()),
        cost_major: Arc::new(|_, x, u, y| (x[0] - y[0]).powi(2).min(4.0) + u[0] * u[0]),
        cost_minor: Arc::new(|_, x, u, z0, y| {
            (x[0] - y[0]).powi(2).min(4.0) + 0.3 * (x[0] - z0[0]).powi(2).min(4.0) + u[0] * u[0]
        }),
        bounds_major: crate::control::ControlBounds::symmetric(1, 1.0).expect("valid"),
        bounds_minor: crate::control::ControlBounds::symmetric(1, 1.0).expect("valid"),
        minimizer_major: None,
        minimizer_minor: None,
        decoupled_dynamics: false,
    }
}

/// Mild Lipschitz feedback pair used with the rate model.
pub fn mild_feedback() -> (FeedbackControl, FeedbackControl) {
    let mk = || {
        FeedbackControl::from_fn(
            1,
            0.2,
            crate::control::ControlBounds::symmetric(1, 1.0).expect("valid"),
            |_, x, out| out[0] = 0.2 * x[0].sin(),
        )
    };
    (mk(), mk())
}

pub fn rate_model_laws() -> crate::noise::InitialLaws {
    crate::noise::InitialLaws {
        major: crate::noise::InitialLaw::Gaussian {
            mean: vec![0.3],
            std: vec![0.3],
        },
        minor: crate::noise::InitialLaw::Gaussian {
            mean: vec![0.0],
            std: vec![0.5],
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::ControlBounds;
    use crate::noise::{InitialLaw, InitialLaws};

    fn zero_model() -> ModelSpec {
        ModelSpec {
            state_dim: 1,
            noise_dim: 1,
            drift_major: Arc::new(|_, _, _, _, out| out.fill(0.0)),
            diffusion_major: Arc::new(|_, _, _, out| out.fill(0.0)),
            drift_minor: Arc::new(|_, _, _, _, _, out| out.fill(0.0)),
            diffusion_minor: Arc::new(|_, _, _, _, out| out.fill(0.0)),
            cost_major: Arc::new(|_, _, _, _| 0.0),
            cost_minor: Arc::new(|_, _, _, _, _| 0.0),
            bounds_major: ControlBounds::wide(1),
            bounds_minor: ControlBounds::wide(1),
            minimizer_major: None,
            minimizer_minor: None,
            decoupled_dynamics: false,
        }
    }

    /// `f = a (y - x) + b x` pairwise, deterministic; the population mean
    /// obeys `dm/dt = b m` exactly.
    fn linear_mean_model(a: f64, b: f64) -> ModelSpec {
        let mut model = zero_model();
        model.drift_minor = Arc::new(move |_, x, _, _, y, out| {
            out[0] = a * (y[0] - x[0]) + b * x[0];
        });
        model
    }

    fn laws() -> InitialLaws {
        InitialLaws {
            major: InitialLaw::Gaussian { mean: vec![0.5], std: vec![0.2] },
            minor: InitialLaw::Gaussian { mean: vec![0.0], std: vec![0.5] },
        }
    }

    #[test]
    fn degenerate_population_constant() {
        let grid = TimeGrid::new(1.0, 16).unwrap();
        let bundle = sample_noise(&grid, 1, 1, 1, 3, &laws()).unwrap();
        let run = simulate_population(
            &zero_model(),
            &FeedbackControl::zero(1),
            &FeedbackControl::zero(1),
            1,
            &bundle,
            0,
        )
        .unwrap();
        for k in 0..=16 {
            assert_eq!(run.major.state(k)[0], run.major.state(0)[0]);
            assert_eq!(run.minors[0].state(k)[0], run.minors[0].state(0)[0]);
        }
    }

    #[test]
    fn linear_mean_coupling_preserves_population_mean() {
        // a (mean - x) drift sums to zero over the population.
        let grid = TimeGrid::new(1.0, 64).unwrap();
        let bundle = sample_noise(&grid, 16, 1, 1, 5, &laws()).unwrap();
        let run = simulate_population(
            &linear_mean_model(1.0, 0.0),
            &FeedbackControl::zero(1),
            &FeedbackControl::zero(1),
            16,
            &bundle,
            0,
        )
        .unwrap();
        let mean_at =
            |k: usize| -> f64 { run.minors.iter().map(|m| m.state(k)[0]).sum::<f64>() / 16.0 };
        let m0 = mean_at(0);
        for k in [16, 32, 64] {
            assert!((mean_at(k) - m0).abs() < 1e-12);
        }
    }

    #[test]
    fn permuting_minor_streams_permutes_minors_only() {
        let grid = TimeGrid::new(0.5, 32).unwrap();
        let bundle = sample_noise(&grid, 6, 1, 1, 11, &laws()).unwrap();
        let model = bounded_rate_model();
        let (u0, u) = mild_feedback();
        let base = simulate_population_impl(&model, &u0, &u, 6, &bundle, 0, None, None).unwrap();
        let perm = [3usize, 0, 1, 5, 4, 2];
        let permuted =
            simulate_population_impl(&model, &u0, &u, 6, &bundle, 0, Some(&perm), None).unwrap();
        // Exact up to the reordering of the coupling sums.
        for k in 0..=32 {
            assert!((base.major.state(k)[0] - permuted.major.state(k)[0]).abs() < 1e-12);
            for (i, &p) in perm.iter().enumerate() {
                assert!(
                    (permuted.minors[i].state(k)[0] - base.minors[p].state(k)[0]).abs() < 1e-12
                );
            }
        }
    }

    #[test]
    fn coupling_free_limit_converges_in_one_update() {
        let mut model = zero_model();
        model.drift_minor = Arc::new(|_, x, _, _, _, out| out[0] = -0.5 * x[0]);
        model.diffusion_minor = Arc::new(|_, _, _, _, out| out[0] = 0.3);
        let grid = TimeGrid::new(1.0, 32).unwrap();
        let bundle = sample_noise(&grid, 2, 1, 1, 9, &laws()).unwrap();
        let run = simulate_mv_limit(
            &model,
            &FeedbackControl::zero(1),
            &FeedbackControl::zero(1),
            &bundle,
            0,
            32,
            1e-9,
            10,
        )
        .unwrap();
        assert_eq!(run.iterations, 1);
        assert!(run.residual < 1e-12);
    }

    #[test]
    fn linear_mean_flow_matches_closed_form() {
        // Deterministic linear model: the cloud mean follows m' = b m from
        // the realized initial sample mean.
        let (a, b) = (0.5, -0.4);
        let model = linear_mean_model(a, b);
        let grid = TimeGrid::new(1.0, 1000).unwrap();
        let bundle = sample_noise(&grid, 2, 1, 1, 21, &laws()).unwrap();
        let run = simulate_mv_limit(
            &model,
            &FeedbackControl::zero(1),
            &FeedbackControl::zero(1),
            &bundle,
            0,
            256,
            1e-6,
            30,
        )
        .unwrap();
        let m0 = run.flow.mean(0)[0];
        let m_end = run.flow.mean(1000)[0];
        let want = m0 * (b * 1.0f64).exp();
        assert!((m_end - want).abs() < 1e-3, "{m_end} vs {want}");
    }

    #[test]
    fn doubling_cloud_size_is_statistically_stable() {
        let model = bounded_rate_model();
        let (u0, u) = mild_feedback();
        let grid = TimeGrid::new(0.5, 32).unwrap();
        let bundle = sample_noise(&grid, 2, 1, 1, 31, &rate_model_laws()).unwrap();
        let run_a = simulate_mv_limit(&model, &u0, &u, &bundle, 0, 128, 2e-3, 30).unwrap();
        let run_b = simulate_mv_limit(&model, &u0, &u, &bundle, 0, 256, 2e-3, 30).unwrap();
        let mut worst: f64 = 0.0;
        for k in [0, 16, 32] {
            worst = worst.max((run_a.flow.mean(k)[0] - run_b.flow.mean(k)[0]).abs());
        }
        // Monte-Carlo band ~ sigma / sqrt(128).
        assert!(worst < 3.0 * 0.6 / (128.0f64).sqrt(), "drift {worst}");
    }

    #[test]
    fn coupling_free_population_equals_limit() {
        // With no coupling the population and limit systems coincide path
        // by path; errors are machine level for every N.
        let mut model = zero_model();
        model.drift_minor = Arc::new(|_, x, _, _, _, out| out[0] = -0.4 * x[0]);
        model.diffusion_minor = Arc::new(|_, _, _, _, out| out[0] = 0.25);
        model.drift_major = Arc::new(|_, x, _, _, out| out[0] = -0.2 * x[0]);
        model.diffusion_major = Arc::new(|_, _, _, out| out[0] = 0.2);
        let grid = TimeGrid::new(0.5, 16).unwrap();
        let report = convergence_experiment(
            &model,
            &FeedbackControl::zero(1),
            &FeedbackControl::zero(1),
            &[2, 4, 8, 16],
            3,
            8,
            1e-7,
            10,
            13,
            &grid,
            &laws(),
        )
        .unwrap();
        for e in &report.errors {
            assert!(*e < 1e-12, "coupling-free error {e}");
        }
    }
}
