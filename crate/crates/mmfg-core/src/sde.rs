//! Euler-Maruyama integration of one agent against a frozen coupling flow,
//! and running-cost evaluation along trajectories.

use crate::control::FeedbackControl;
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::measure::PathMeasure;
use crate::model::{AgentRole, ModelSpec};

/// Time-indexed particle clouds standing in for the (random) measure flow:
/// one cloud per grid node, uniform weights.
#[derive(Debug, Clone)]
pub struct MeasureFlow {
    data: Vec<f64>,
    nodes: usize,
    count: usize,
    dim: usize,
}

impl MeasureFlow {
    /// The same cloud at every node.
    pub fn constant(cloud: &[f64], count: usize, dim: usize, nodes: usize) -> Result<Self> {
        if cloud.len() != count * dim || count == 0 {
            return Err(Error::invalid("cloud buffer size mismatch"));
        }
        let mut data = Vec::with_capacity(nodes * count * dim);
        for _ in 0..nodes {
            data.extend_from_slice(cloud);
        }
        Ok(MeasureFlow {
            data,
            nodes,
            count,
            dim,
        })
    }

    /// Per-node clouds from a set of paths (the cloud at node `k` is the set
    /// of path states at `k`).
    pub fn from_path_measure(pm: &PathMeasure) -> Self {
        let (nodes, count, dim) = (pm.nodes(), pm.count(), pm.dim());
        let mut data = Vec::with_capacity(nodes * count * dim);
        for k in 0..nodes {
            for i in 0..count {
                data.extend_from_slice(pm.state(i, k));
            }
        }
        MeasureFlow {
            data,
            nodes,
            count,
            dim,
        }
    }

    pub fn from_trajectories(trajs: &[Trajectory]) -> Result<Self> {
        if trajs.is_empty() {
            return Err(Error::invalid("no trajectories"));
        }
        let nodes = trajs[0].nodes();
        let dim = trajs[0].dim();
        if trajs.iter().any(|t| t.nodes() != nodes || t.dim() != dim) {
            return Err(Error::invalid("trajectories must share the grid"));
        }
        let count = trajs.len();
        let mut data = Vec::with_capacity(nodes * count * dim);
        for k in 0..nodes {
            for t in trajs {
                data.extend_from_slice(t.state(k));
            }
        }
        Ok(MeasureFlow {
            data,
            nodes,
            count,
            dim,
        })
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn particle(&self, node: usize, i: usize) -> &[f64] {
        let base = (node * self.count + i) * self.dim;
        &self.data[base..base + self.dim]
    }

    /// Mean of the cloud at a node.
    pub fn mean(&self, node: usize) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for i in 0..self.count {
            for (d, v) in self.particle(node, i).iter().enumerate() {
                m[d] += v;
            }
        }
        for v in &mut m {
            *v /= self.count as f64;
        }
        m
    }
}

/// Coupling inputs for one agent's integration: the measure flow, plus the
/// major state path when integrating a minor agent.
#[derive(Debug, Clone, Copy)]
pub struct Coupling<'a> {
    pub major: Option<&'a Trajectory>,
    pub measure: &'a MeasureFlow,
}

/// A discrete sample path, with the controls that produced it.
#[derive(Debug, Clone)]
pub struct Trajectory {
    steps: usize,
    dim: usize,
    states: Vec<f64>,
    controls: Option<(usize, Vec<f64>)>,
}

impl Trajectory {
    pub fn new(states: Vec<f64>, steps: usize, dim: usize) -> Result<Self> {
        if states.len() != (steps + 1) * dim {
            return Err(Error::invalid("trajectory length does not match the grid"));
        }
        Ok(Trajectory {
            steps,
            dim,
            states,
            controls: None,
        })
    }

    pub fn with_controls(mut self, udim: usize, controls: Vec<f64>) -> Result<Self> {
        if controls.len() != self.steps * udim {
            return Err(Error::invalid("control record length mismatch"));
        }
        self.controls = Some((udim, controls));
        Ok(self)
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn nodes(&self) -> usize {
        self.steps + 1
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.dim..(k + 1) * self.dim]
    }

    pub fn states_flat(&self) -> &[f64] {
        &self.states
    }

    pub fn control(&self, k: usize) -> Option<&[f64]> {
        self.controls
            .as_ref()
            .map(|(udim, c)| &c[k * udim..(k + 1) * udim])
    }

    pub fn final_state(&self) -> &[f64] {
        self.state(self.steps)
    }
}

/// Euler-Maruyama advance of one agent with coupling terms evaluated as
/// empirical averages over the supplied measure particles.
///
/// `increments` is the flattened `[steps * m]` Brownian increment buffer for
/// this agent; coupling inputs must be defined on every grid node.
pub fn integrate_sde(
    model: &ModelSpec,
    role: AgentRole,
    control: &FeedbackControl,
    coupling: Coupling<'_>,
    increments: &[f64],
    x0: &[f64],
    grid: &TimeGrid,
) -> Result<Trajectory> {
    let n = model.state_dim;
    let m = model.noise_dim;
    let steps = grid.steps();
    let dt = grid.dt();
    if increments.len() != steps * m {
        return Err(Error::invalid("increment buffer does not match the grid"));
    }
    if x0.len() != n {
        return Err(Error::invalid("initial state dimension mismatch"));
    }
    if coupling.measure.nodes() < steps + 1 || coupling.measure.dim() != n {
        return Err(Error::invalid("measure flow must cover every grid node"));
    }
    if role == AgentRole::Minor {
        match coupling.major {
            Some(tr) if tr.steps() == steps && tr.dim() == n => {}
            Some(_) => return Err(Error::invalid("major path does not match the grid")),
            None => return Err(Error::invalid("minor integration needs the major path")),
        }
    }

    let udim = match role {
        AgentRole::Major => model.bounds_major.dim(),
        AgentRole::Minor => model.bounds_minor.dim(),
    };
    let mut states = Vec::with_capacity((steps + 1) * n);
    states.extend_from_slice(x0);
    let mut controls = Vec::with_capacity(steps * udim);

    let mut x = x0.to_vec();
    let mut u = vec![0.0; udim];
    let mut drift = vec![0.0; n];
    let mut drift_acc = vec![0.0; n];
    let mut diff = vec![0.0; n * m];
    let mut diff_acc = vec![0.0; n * m];
    let count = coupling.measure.count();
    let inv_count = 1.0 / count as f64;

    for k in 0..steps {
        let t = grid.node(k);
        control.eval(t, &x, &mut u);
        drift_acc.fill(0.0);
        diff_acc.fill(0.0);
        match role {
            AgentRole::Major => {
                for i in 0..count {
                    let y = coupling.measure.particle(k, i);
                    (model.drift_major)(t, &x, &u, y, &mut drift);
                    (model.diffusion_major)(t, &x, y, &mut diff);
                    for d in 0..n {
                        drift_acc[d] += drift[d];
                    }
                    for d in 0..n * m {
                        diff_acc[d] += diff[d];
                    }
                }
            }
            AgentRole::Minor => {
                let z0 = coupling.major.unwrap().state(k);
                for i in 0..count {
                    let y = coupling.measure.particle(k, i);
                    (model.drift_minor)(t, &x, &u, z0, y, &mut drift);
                    (model.diffusion_minor)(t, &x, z0, y, &mut diff);
                    for d in 0..n {
                        drift_acc[d] += drift[d];
                    }
                    for d in 0..n * m {
                        diff_acc[d] += diff[d];
                    }
                }
            }
        }
        let dw = &increments[k * m..(k + 1) * m];
        for d in 0..n {
            let mut dx = drift_acc[d] * inv_count * dt;
            for j in 0..m {
                dx += diff_acc[d * m + j] * inv_count * dw[j];
            }
            x[d] += dx;
            if !x[d].is_finite() {
                return Err(Error::NumericalBlowup {
                    time: t,
                    state: states[k * n..(k + 1) * n].to_vec(),
                    detail: format!("non-finite state component {d} after step {k}"),
                });
            }
        }
        states.extend_from_slice(&x);
        controls.extend_from_slice(&u);
    }

    Trajectory::new(states, steps, n)?.with_controls(udim, controls)
}

/// Left-endpoint Riemann sum of the running cost along a trajectory, with
/// coupling terms averaged over the measure particles.
pub fn evaluate_cost(
    model: &ModelSpec,
    role: AgentRole,
    traj: &Trajectory,
    coupling: Coupling<'_>,
    grid: &TimeGrid,
) -> Result<f64> {
    let steps = grid.steps();
    if traj.steps() != steps || traj.dim() != model.state_dim {
        return Err(Error::invalid("trajectory does not match the grid"));
    }
    if coupling.measure.nodes() < steps + 1 {
        return Err(Error::invalid("measure flow must cover every grid node"));
    }
    if role == AgentRole::Minor && coupling.major.is_none() {
        return Err(Error::invalid("minor cost needs the major path"));
    }
    let dt = grid.dt();
    let count = coupling.measure.count();
    let inv_count = 1.0 / count as f64;
    let mut total = 0.0;
    for k in 0..steps {
        let t = grid.node(k);
        let x = traj.state(k);
        let u = traj
            .control(k)
            .ok_or_else(|| Error::invalid("trajectory carries no control record"))?;
        let mut acc = 0.0;
        match role {
            AgentRole::Major => {
                for i in 0..count {
                    acc += (model.cost_major)(t, x, u, coupling.measure.particle(k, i));
                }
            }
            AgentRole::Minor => {
                let z0 = coupling.major.unwrap().state(k);
                for i in 0..count {
                    acc += (model.cost_minor)(t, x, u, z0, coupling.measure.particle(k, i));
                }
            }
        }
        total += acc * inv_count * dt;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::ControlBounds;
    use std::sync::Arc;

    fn dummy_flow(nodes: usize) -> MeasureFlow {
        MeasureFlow::constant(&[0.0], 1, 1, nodes).unwrap()
    }

    fn model(
        drift: impl Fn(f64, &[f64], &[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
        diffusion: impl Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
        cost: impl Fn(f64, &[f64], &[f64], &[f64]) -> f64 + Send + Sync + 'static,
    ) -> ModelSpec {
        ModelSpec {
            state_dim: 1,
            noise_dim: 1,
            drift_major: Arc::new(drift),
            diffusion_major: Arc::new(diffusion),
            drift_minor: Arc::new(|_, _, _, _, _, out| out.fill(0.0)),
            diffusion_minor: Arc::new(|_, _, _, _, out| out.fill(0.0)),
            cost_major: Arc::new(cost),
            cost_minor: Arc::new(|_, _, _, _, _| 0.0),
            bounds_major: ControlBounds::wide(1),
            bounds_minor: ControlBounds::wide(1),
            minimizer_major: None,
            minimizer_minor: None,
            decoupled_dynamics: false,
        }
    }

    #[test]
    fn degenerate_dynamics_constant() {
        let grid = TimeGrid::new(1.0, 16).unwrap();
        let m = model(
            |_, _, _, _, out| out.fill(0.0),
            |_, _, _, out| out.fill(0.0),
            |_, _, _, _| 0.0,
        );
        let flow = dummy_flow(17);
        let traj = integrate_sde(
            &m,
            AgentRole::Major,
            &FeedbackControl::zero(1),
            Coupling { major: None, measure: &flow },
            &vec![0.1; 16],
            &[1.0],
            &grid,
        )
        .unwrap();
        for k in 0..=16 {
            assert_eq!(traj.state(k)[0], 1.0);
        }
    }

    #[test]
    fn exponential_decay_matches_closed_form() {
        let steps = 10_000;
        let grid = TimeGrid::new(1.0, steps).unwrap();
        let m = model(
            |_, x, _, _, out| out[0] = -x[0],
            |_, _, _, out| out.fill(0.0),
            |_, _, _, _| 0.0,
        );
        let flow = dummy_flow(steps + 1);
        let traj = integrate_sde(
            &m,
            AgentRole::Major,
            &FeedbackControl::zero(1),
            Coupling { major: None, measure: &flow },
            &vec![0.0; steps],
            &[1.0],
            &grid,
        )
        .unwrap();
        let exact = (-1.0f64).exp();
        assert!(
            (traj.final_state()[0] - exact).abs() < 1e-3,
            "{} vs {}",
            traj.final_state()[0],
            exact
        );
    }

    #[test]
    fn brownian_terminal_variance() {
        use crate::noise::{sample_noise, InitialLaw, InitialLaws};
        let steps = 64;
        let paths = 10_000;
        let grid = TimeGrid::new(1.0, steps).unwrap();
        let m = model(
            |_, _, _, _, out| out.fill(0.0),
            |_, _, _, out| out[0] = 1.0,
            |_, _, _, _| 0.0,
        );
        let laws = InitialLaws {
            major: InitialLaw::Point { value: vec![0.0] },
            minor: InitialLaw::Point { value: vec![0.0] },
        };
        let bundle = sample_noise(&grid, 1, paths, 1, 21, &laws).unwrap();
        let flow = dummy_flow(steps + 1);
        let mut sum2 = 0.0;
        for s in 0..paths {
            let incr: Vec<f64> = (0..steps)
                .map(|k| bundle.major_increment(s, k)[0])
                .collect();
            let traj = integrate_sde(
                &m,
                AgentRole::Major,
                &FeedbackControl::zero(1),
                Coupling { major: None, measure: &flow },
                &incr,
                &[0.0],
                &grid,
            )
            .unwrap();
            sum2 += traj.final_state()[0].powi(2);
        }
        let var = sum2 / paths as f64;
        // Var of x(T)^2 is 2 T^2; se of the mean over `paths` samples.
        let se = (2.0f64 / paths as f64).sqrt();
        assert!((var - 1.0).abs() < 3.0 * se, "var {var}, se {se}");
    }

    #[test]
    fn strong_order_window_for_linear_sde() {
        // dx = -x dt + 0.5 dw: strong error against a dt/64 reference drops
        // by a factor in [1.2, 2.8] per halving (order 1/2 to 1 window; the
        // additive noise makes Euler effectively first order here).
        use crate::noise::{sample_noise, InitialLaw, InitialLaws};
        let m = model(
            |_, x, _, _, out| out[0] = -x[0],
            |_, _, _, out| out[0] = 0.5,
            |_, _, _, _| 0.0,
        );
        let laws = InitialLaws {
            major: InitialLaw::Point { value: vec![1.0] },
            minor: InitialLaw::Point { value: vec![1.0] },
        };
        let coarse_steps = 64;
        let fine_factor = 64;
        let grid_fine = TimeGrid::new(1.0, coarse_steps * fine_factor).unwrap();
        let bundle = sample_noise(&grid_fine, 1, 256, 1, 77, &laws).unwrap();
        let flow_fine = dummy_flow(grid_fine.len());
        let mut err_h = 0.0f64;
        let mut err_h2 = 0.0f64;
        for s in 0..256 {
            let incr_fine: Vec<f64> = (0..grid_fine.steps())
                .map(|k| bundle.major_increment(s, k)[0])
                .collect();
            let reference = integrate_sde(
                &m,
                AgentRole::Major,
                &FeedbackControl::zero(1),
                Coupling { major: None, measure: &flow_fine },
                &incr_fine,
                &[1.0],
                &grid_fine,
            )
            .unwrap();
            // Coarsen the same Brownian path by summing increments.
            let coarsen = |factor: usize| -> Vec<f64> {
                incr_fine
                    .chunks(factor)
                    .map(|c| c.iter().sum::<f64>())
                    .collect()
            };
            for (factor, err) in [(fine_factor, &mut err_h), (fine_factor / 2, &mut err_h2)] {
                let steps = grid_fine.steps() / factor;
                let grid = TimeGrid::new(1.0, steps).unwrap();
                let flow = dummy_flow(grid.len());
                let traj = integrate_sde(
                    &m,
                    AgentRole::Major,
                    &FeedbackControl::zero(1),
                    Coupling { major: None, measure: &flow },
                    &coarsen(factor),
                    &[1.0],
                    &grid,
                )
                .unwrap();
                *err += (traj.final_state()[0] - reference.final_state()[0]).abs() / 256.0;
            }
        }
        let ratio = err_h / err_h2;
        assert!(
            (1.2..=2.8).contains(&ratio),
            "strong-error halving ratio {ratio} outside [1.2, 2.8]"
        );
    }

    #[test]
    fn blowup_reported_with_location() {
        let grid = TimeGrid::new(1.0, 8).unwrap();
        let m = model(
            |_, x, _, _, out| out[0] = x[0] * f64::NAN,
            |_, _, _, out| out.fill(0.0),
            |_, _, _, _| 0.0,
        );
        let flow = dummy_flow(9);
        let err = integrate_sde(
            &m,
            AgentRole::Major,
            &FeedbackControl::zero(1),
            Coupling { major: None, measure: &flow },
            &vec![0.0; 8],
            &[1.0],
            &grid,
        )
        .unwrap_err();
        assert!(matches!(err, Error::NumericalBlowup { .. }));
    }

    #[test]
    fn cost_zero_and_constant_integrands() {
        let grid = TimeGrid::new(2.0, 32).unwrap();
        let m = model(
            |_, _, _, _, out| out.fill(0.0),
            |_, _, _, out| out.fill(0.0),
            |_, _, _, _| 1.0,
        );
        let flow = dummy_flow(33);
        let coupling = Coupling { major: None, measure: &flow };
        let traj = integrate_sde(
            &m,
            AgentRole::Major,
            &FeedbackControl::zero(1),
            coupling,
            &vec![0.0; 32],
            &[0.0],
            &grid,
        )
        .unwrap();
        let c = evaluate_cost(&m, AgentRole::Major, &traj, coupling, &grid).unwrap();
        assert!((c - 2.0).abs() < 1e-12);
    }

    #[test]
    fn lqg_cost_hand_integration() {
        // Constant state x = 1, u = 0, Q = 1, target 0, T = 1: integral 1.
        let grid = TimeGrid::new(1.0, 128).unwrap();
        let m = model(
            |_, _, _, _, out| out.fill(0.0),
            |_, _, _, out| out.fill(0.0),
            |_, x, u, _| x[0] * x[0] + u[0] * u[0],
        );
        let flow = dummy_flow(129);
        let coupling = Coupling { major: None, measure: &flow };
        let traj = integrate_sde(
            &m,
            AgentRole::Major,
            &FeedbackControl::zero(1),
            coupling,
            &vec![0.0; 128],
            &[1.0],
            &grid,
        )
        .unwrap();
        let c = evaluate_cost(&m, AgentRole::Major, &traj, coupling, &grid).unwrap();
        assert!((c - 1.0).abs() <= grid.dt() + 1e-12);
    }

    #[test]
    fn grid_mismatch_rejected() {
        let grid = TimeGrid::new(1.0, 8).unwrap();
        let other = TimeGrid::new(1.0, 16).unwrap();
        let m = model(
            |_, _, _, _, out| out.fill(0.0),
            |_, _, _, out| out.fill(0.0),
            |_, _, _, _| 0.0,
        );
        let flow = dummy_flow(9);
        let coupling = Coupling { major: None, measure: &flow };
        let traj = integrate_sde(
            &m,
            AgentRole::Major,
            &FeedbackControl::zero(1),
            coupling,
            &vec![0.0; 8],
            &[0.0],
            &grid,
        )
        .unwrap();
        assert!(evaluate_cost(&m, AgentRole::Major, &traj, coupling, &other).is_err());
    }
}
