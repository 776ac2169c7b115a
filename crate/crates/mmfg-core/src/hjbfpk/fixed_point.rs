//! The measure-and-control consistency loop for the oscillator game.
//!
//! Each sweep closes the loop once: minor density -> major coupling ->
//! major HJB -> major state push -> minor coupling -> minor HJB -> minor
//! density, with the new minor flow blended into the old by the damping
//! factor. Distances between successive (damped) minor flows are tracked in
//! a trace; the contraction predicted at short horizons shows up as trace
//! ratios below one.
//!
//! The major agent's conditional law is a unit point mass, so its state is
//! carried either as an actual point trajectory (one value per lattice
//! node, jumping by `+/- sigma0 sqrt(dt_epoch)` at branches) or as a
//! density field pushed by the transport solver -- the latter supports
//! distribution-valued initial data such as the uniform start.

use super::coupling::CouplingKernel;
use super::fpk::{solve_fpk_forward, DensityField, FpkSetup};
use super::hjb::{solve_hjb_backward, CouplingFlow, HjbSetup, ValueField};
use super::lattice::W0Lattice;
use super::pgrid::PeriodicGrid;
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use std::f64::consts::TAU;

/// Coefficients of the oscillator game.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct OscillatorParams {
    /// Minor agents' diffusion scale.
    pub sigma: f64,
    /// Major agent's diffusion scale (the `w0` noise).
    pub sigma0: f64,
    /// Control penalty `r`.
    pub r: f64,
    /// Cost blend toward the major's phase, in (0, 1).
    pub lambda: f64,
    pub horizon: f64,
}

impl OscillatorParams {
    pub fn validate(&self) -> Result<()> {
        if self.sigma < 0.0 || self.sigma0 < 0.0 {
            return Err(Error::invalid("diffusion scales must be non-negative"));
        }
        if !(self.r > 0.0) {
            return Err(Error::invalid("control penalty r must be positive"));
        }
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return Err(Error::invalid("lambda must lie in (0, 1)"));
        }
        if !(self.horizon > 0.0) {
            return Err(Error::invalid("horizon must be positive"));
        }
        Ok(())
    }

    /// Default configuration: short horizon where the fixed-point map
    /// contracts, discretization chosen by the refinement-stability checks.
    pub fn default_config() -> Self {
        OscillatorParams {
            sigma: 0.2,
            sigma0: 0.2,
            r: 1.0,
            lambda: 0.5,
            horizon: 0.5,
        }
    }
}

/// Initial density specifications for the experiment configs.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DensityInit {
    Uniform,
    Dirac { theta: f64 },
    /// `p proportional to exp(kappa cos(theta - center))`.
    Bump { center: f64, kappa: f64 },
}

impl DensityInit {
    pub fn build(&self, pgrid: &PeriodicGrid) -> Vec<f64> {
        match self {
            DensityInit::Uniform => vec![1.0 / TAU; pgrid.cells()],
            DensityInit::Dirac { theta } => pgrid.dirac_density(*theta),
            DensityInit::Bump { center, kappa } => {
                let mut p: Vec<f64> = (0..pgrid.cells())
                    .map(|j| (kappa * (pgrid.node(j) - center).cos()).exp())
                    .collect();
                let mass = pgrid.mass(&p);
                p.iter_mut().for_each(|v| *v /= mass);
                p
            }
        }
    }
}

/// How the major agent's state is represented through the loop.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MajorInit {
    /// Point trajectory per lattice node (the conditional law is a Dirac).
    Point { theta: f64 },
    /// Distribution-valued initial data pushed by the transport solver.
    Density { init: DensityInit },
}

#[derive(Debug, Clone, Copy)]
pub struct FixedPointOptions {
    pub damping: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        FixedPointOptions {
            damping: 0.5,
            tol: 1e-6,
            max_iter: 50,
        }
    }
}

#[derive(Debug)]
pub struct FixedPointSolution {
    pub major_value: ValueField,
    pub minor_value: ValueField,
    /// Point-mode trajectories `[time][node]` when the major is a point.
    pub major_points: Option<Vec<Vec<f64>>>,
    /// Major state distribution (deposited Diracs in point mode).
    pub major_density: DensityField,
    pub minor_density: DensityField,
    /// Successive sup-over-(t, node) marginal Wasserstein distances between
    /// damped minor flows, one entry per sweep.
    pub trace: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

impl FixedPointSolution {
    /// Ratios of successive trace entries (contraction diagnostics).
    pub fn trace_ratios(&self) -> Vec<f64> {
        self.trace
            .windows(2)
            .map(|w| if w[0] > 0.0 { w[1] / w[0] } else { 0.0 })
            .collect()
    }
}

fn flow_distance(a: &[Vec<Vec<f64>>], b: &[Vec<Vec<f64>>], pgrid: &PeriodicGrid) -> f64 {
    let mut worst: f64 = 0.0;
    for (sa, sb) in a.iter().zip(b) {
        for (pa, pb) in sa.iter().zip(sb) {
            worst = worst.max(pgrid.wasserstein_circular(pa, pb));
        }
    }
    worst
}

/// Advance the major point trajectory under the face-centered controls;
/// branches jump the point by `+/- increment` and recombining nodes take
/// the probability-weighted circular mean of their incoming values.
fn advance_major_points(
    u_face: &[Vec<Vec<f64>>],
    lattice: &W0Lattice,
    pgrid: &PeriodicGrid,
    grid: &TimeGrid,
    theta_init: f64,
) -> Vec<Vec<f64>> {
    let steps = grid.steps();
    let dt = grid.dt();
    let s = lattice.increment();
    let mut points = Vec::with_capacity(steps + 1);
    points.push(vec![theta_init]);
    let eval_u = |faces: &[f64], theta: f64| -> f64 {
        // Faces sit at x_j + h/2; linear periodic interpolation.
        let n = pgrid.cells();
        let h = pgrid.h();
        let a = (theta - h / 2.0).rem_euclid(TAU) / h;
        let j = (a.floor() as usize) % n;
        let frac = a - a.floor();
        (1.0 - frac) * faces[j] + frac * faces[(j + 1) % n]
    };
    for k in 0..steps {
        let current = &points[k];
        let advanced: Vec<f64> = current
            .iter()
            .enumerate()
            .map(|(node, &theta)| theta + eval_u(&u_face[k][node], theta) * dt)
            .collect();
        if lattice.branches_between(k) {
            let children = lattice.node_count(k + 1);
            let mut next = Vec::with_capacity(children);
            for child in 0..children {
                let mut sin_acc = 0.0;
                let mut cos_acc = 0.0;
                for (parent, sign) in [(child.wrapping_sub(1), 1.0), (child, -1.0)] {
                    if parent >= current.len() {
                        continue;
                    }
                    let w = lattice.node_weight(k, parent) * 0.5;
                    let theta = advanced[parent] + sign * s;
                    sin_acc += w * theta.sin();
                    cos_acc += w * theta.cos();
                }
                next.push(sin_acc.atan2(cos_acc).rem_euclid(TAU));
            }
            points.push(next);
        } else {
            points.push(advanced.iter().map(|t| t.rem_euclid(TAU)).collect());
        }
    }
    points
}

/// Solve the oscillator mean field game by damped fixed-point iteration.
///
/// `lattice` carries the major-noise representation: a collapsed lattice is
/// the deterministic mode, where the major's own diffusion is handled by
/// the PDE operators; a stochastic lattice moves it into branch shifts
/// (densities) or branch jumps (points).
pub fn mfg_fixed_point(
    params: &OscillatorParams,
    grid: &TimeGrid,
    pgrid: &PeriodicGrid,
    lattice: &W0Lattice,
    major_init: &MajorInit,
    p0_minor: &DensityInit,
    opts: FixedPointOptions,
) -> Result<FixedPointSolution> {
    params.validate()?;
    if !(opts.damping > 0.0 && opts.damping <= 1.0) {
        return Err(Error::invalid("damping must lie in (0, 1]"));
    }
    if (grid.horizon() - params.horizon).abs() > 1e-12 {
        return Err(Error::invalid("grid horizon must match the parameter horizon"));
    }
    if matches!(major_init, MajorInit::Point { .. })
        && params.sigma0 > 0.0
        && !lattice.is_stochastic()
    {
        return Err(Error::invalid(
            "a point major with sigma0 > 0 needs the lattice mode; the deterministic \
             mode would drop its noise",
        ));
    }
    let kernel = CouplingKernel::new(pgrid);
    let n = pgrid.cells();
    let steps = grid.steps();
    let p_minor0 = p0_minor.build(pgrid);

    let major_setup = HjbSetup {
        diffusion: if lattice.is_stochastic() { 0.0 } else { params.sigma0 },
        shift: lattice.increment(),
        r: params.r,
        lattice,
    };
    let minor_setup = HjbSetup {
        diffusion: params.sigma,
        shift: 0.0,
        r: params.r,
        lattice,
    };
    let minor_fpk = FpkSetup {
        diffusion: params.sigma,
        shift: 0.0,
        lattice,
    };

    // Initial guess: the initial minor density held constant in time.
    let mut minor_flow: Vec<Vec<Vec<f64>>> = (0..=steps)
        .map(|k| vec![p_minor0.clone(); lattice.node_count(k)])
        .collect();

    let mut trace = Vec::new();
    let mut best: Option<FixedPointSolution> = None;
    for it in 0..opts.max_iter {
        // Major side against the frozen minor flow.
        let mut m0: CouplingFlow = Vec::with_capacity(steps + 1);
        for slices in &minor_flow {
            let mut per_node = Vec::with_capacity(slices.len());
            for p in slices {
                let mut out = vec![0.0; n];
                kernel.apply(p, &mut out);
                per_node.push(out);
            }
            m0.push(per_node);
        }
        let major_value = solve_hjb_backward(&m0, major_setup, grid, pgrid)?;

        // Push the major state and assemble the minor coupling.
        let (major_points, major_density) = match major_init {
            MajorInit::Point { theta } => {
                let pts = advance_major_points(&major_value.u_face, lattice, pgrid, grid, *theta);
                let density = DensityField::from_slices(
                    pts.iter()
                        .map(|nodes| {
                            nodes.iter().map(|&t| pgrid.dirac_density(t)).collect()
                        })
                        .collect(),
                    pgrid.h(),
                );
                (Some(pts), density)
            }
            MajorInit::Density { init } => {
                let p_major0 = init.build(pgrid);
                let major_fpk = FpkSetup {
                    diffusion: major_setup.diffusion,
                    shift: major_setup.shift,
                    lattice,
                };
                let density =
                    solve_fpk_forward(&major_value.u_face, major_fpk, &p_major0, grid, pgrid)?;
                (None, density)
            }
        };

        let mut m: CouplingFlow = Vec::with_capacity(steps + 1);
        for (k, slices) in minor_flow.iter().enumerate() {
            let mut per_node = Vec::with_capacity(slices.len());
            for (node, p_min) in slices.iter().enumerate() {
                let mut from_minor = vec![0.0; n];
                kernel.apply(p_min, &mut from_minor);
                let slice: Vec<f64> = match &major_points {
                    Some(pts) => {
                        let theta0 = pts[k][node];
                        (0..n)
                            .map(|j| {
                                params.lambda * (pgrid.node(j) - theta0).sin().powi(2)
                                    + (1.0 - params.lambda) * from_minor[j]
                            })
                            .collect()
                    }
                    None => {
                        let mut from_major = vec![0.0; n];
                        kernel.apply(major_density.slice(k, node), &mut from_major);
                        (0..n)
                            .map(|j| {
                                params.lambda * from_major[j]
                                    + (1.0 - params.lambda) * from_minor[j]
                            })
                            .collect()
                    }
                };
                per_node.push(slice);
            }
            m.push(per_node);
        }
        let minor_value = solve_hjb_backward(&m, minor_setup, grid, pgrid)?;
        let minor_new =
            solve_fpk_forward(&minor_value.u_face, minor_fpk, &p_minor0, grid, pgrid)?;

        // Damped update of the minor flow.
        let mut blended = minor_new.p.clone();
        for (k, slices) in blended.iter_mut().enumerate() {
            for (node, slice) in slices.iter_mut().enumerate() {
                for (j, v) in slice.iter_mut().enumerate() {
                    *v = opts.damping * *v + (1.0 - opts.damping) * minor_flow[k][node][j];
                }
            }
        }
        let dist = flow_distance(&blended, &minor_flow, pgrid);
        trace.push(dist);
        minor_flow = blended;

        let converged = dist < opts.tol;
        best = Some(FixedPointSolution {
            major_value,
            minor_value,
            major_points,
            major_density,
            minor_density: minor_new,
            trace: trace.clone(),
            converged,
            iterations: it + 1,
        });
        if converged {
            break;
        }
    }
    Ok(best.expect("max_iter >= 1"))
}
