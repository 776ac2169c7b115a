//! Backward HJB sweeps for the oscillator game, deterministic or on the
//! `w0` lattice.
//!
//! One step solves `-d(phi) = [-(1/4r)(dphi)^2 + m + (sigma^2/2) dxx phi] dt`
//! semi-implicitly: the Hamiltonian and coupling are explicit from the
//! continuation value, the diffusion implicit through a cyclic tridiagonal
//! solve. On the lattice, crossing an epoch boundary first merges the up and
//! down children; for the major agent the children are sampled at states
//! shifted by `+/- sigma0 sqrt(dt_epoch)` (its own noise is the lattice
//! noise), and the martingale integrand `psi` is read off the unshifted
//! child spread, so `psi` vanishes identically whenever the coupling does
//! not depend on the lattice node.

use super::lattice::W0Lattice;
use super::pgrid::PeriodicGrid;
use crate::error::{Error, Result};
use crate::grid::TimeGrid;

/// `[time][node][cell]` coupling values.
pub type CouplingFlow = Vec<Vec<Vec<f64>>>;

/// Build a coupling flow with the lattice's node layout from a function of
/// `(time index, node index)`.
pub fn coupling_flow_from(
    grid: &TimeGrid,
    lattice: &W0Lattice,
    mut slice_at: impl FnMut(usize, usize) -> Vec<f64>,
) -> CouplingFlow {
    (0..=grid.steps())
        .map(|k| (0..lattice.node_count(k)).map(|node| slice_at(k, node)).collect())
        .collect()
}

/// Value field `(phi, psi)` and the face-centered feedback controls.
#[derive(Debug, Clone)]
pub struct ValueField {
    /// `[time][node][cell]`.
    pub phi: Vec<Vec<Vec<f64>>>,
    /// Martingale integrand against `w0`; `None` for collapsed lattices.
    pub psi: Option<Vec<Vec<Vec<f64>>>>,
    /// `[step][node][face]`, face `j` between cells `j` and `j+1`; the
    /// advective velocity used by the forward FPK sweep.
    pub u_face: Vec<Vec<Vec<f64>>>,
    pub control_penalty: f64,
}

impl ValueField {
    /// Largest `|u|` over all steps, nodes and faces.
    pub fn max_control(&self) -> f64 {
        self.u_face
            .iter()
            .flatten()
            .flatten()
            .fold(0.0f64, |a, &v| a.max(v.abs()))
    }

    /// Largest `|psi|` over the whole field (0 when collapsed).
    pub fn max_psi(&self) -> f64 {
        self.psi
            .as_ref()
            .map(|p| p.iter().flatten().flatten().fold(0.0f64, |a, &v| a.max(v.abs())))
            .unwrap_or(0.0)
    }
}

/// Inputs of one backward solve.
#[derive(Debug, Clone, Copy)]
pub struct HjbSetup<'a> {
    /// Implicit diffusion coefficient (the agent's own-noise scale whose
    /// variance is carried by the PDE operator rather than the lattice).
    pub diffusion: f64,
    /// Branch state shift; nonzero only for the major agent on a
    /// stochastic lattice.
    pub shift: f64,
    /// Control penalty `r`.
    pub r: f64,
    pub lattice: &'a W0Lattice,
}

fn merged_continuation(
    pgrid: &PeriodicGrid,
    setup: &HjbSetup<'_>,
    phi_next: &[Vec<f64>],
    node: usize,
    branch: bool,
    buf_up: &mut Vec<f64>,
    buf_dn: &mut Vec<f64>,
) -> Vec<f64> {
    let n = pgrid.cells();
    if !branch {
        return phi_next[node].clone();
    }
    let up = &phi_next[node + 1];
    let dn = &phi_next[node];
    if setup.shift != 0.0 {
        buf_up.resize(n, 0.0);
        buf_dn.resize(n, 0.0);
        pgrid.shift_values(up, setup.shift, buf_up);
        pgrid.shift_values(dn, -setup.shift, buf_dn);
        (0..n).map(|j| 0.5 * (buf_up[j] + buf_dn[j])).collect()
    } else {
        (0..n).map(|j| 0.5 * (up[j] + dn[j])).collect()
    }
}

/// Backward solve over the whole grid. The coupling flow must match the
/// lattice's node layout; terminal data are identically zero.
pub fn solve_hjb_backward(
    coupling: &CouplingFlow,
    setup: HjbSetup<'_>,
    grid: &TimeGrid,
    pgrid: &PeriodicGrid,
) -> Result<ValueField> {
    let steps = grid.steps();
    let n = pgrid.cells();
    let dt = grid.dt();
    let h = pgrid.h();
    let lattice = setup.lattice;
    if coupling.len() != steps + 1 {
        return Err(Error::invalid("coupling flow must cover every grid node"));
    }
    for (k, slices) in coupling.iter().enumerate() {
        if slices.len() != lattice.node_count(k) || slices.iter().any(|s| s.len() != n) {
            return Err(Error::invalid(format!(
                "coupling flow shape mismatch at time node {k}"
            )));
        }
    }
    let stochastic = lattice.is_stochastic();
    let alpha = dt * setup.diffusion * setup.diffusion / 2.0;
    let psi_scale = if stochastic {
        1.0 / (2.0 * lattice.dt_epoch().sqrt() * lattice.sigma0())
    } else {
        0.0
    };

    let mut phi: Vec<Vec<Vec<f64>>> = Vec::with_capacity(steps + 1);
    let mut psi: Vec<Vec<Vec<f64>>> = Vec::with_capacity(steps + 1);
    let mut u_face: Vec<Vec<Vec<f64>>> = vec![Vec::new(); steps];
    for k in 0..=steps {
        let nodes = lattice.node_count(k);
        phi.push(vec![vec![0.0; n]; nodes]);
        psi.push(vec![vec![0.0; n]; nodes]);
    }

    let mut grad = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    let (mut buf_up, mut buf_dn) = (Vec::new(), Vec::new());
    for k in (0..steps).rev() {
        let branch = lattice.branches_between(k);
        let nodes = lattice.node_count(k);
        u_face[k] = vec![vec![0.0; n]; nodes];
        for node in 0..nodes {
            let phi_next = &phi[k + 1];
            let phi_bar = merged_continuation(
                pgrid, &setup, phi_next, node, branch, &mut buf_up, &mut buf_dn,
            );
            if branch {
                let up = &phi_next[node + 1];
                let dn = &phi_next[node];
                for j in 0..n {
                    psi[k][node][j] = (up[j] - dn[j]) * psi_scale;
                }
            } else {
                let carried = psi[k + 1][node].clone();
                psi[k][node] = carried;
            }

            pgrid.gradient(&phi_bar, &mut grad);
            let mut max_speed = 0.0f64;
            for j in 0..n {
                let u = -grad[j] / (2.0 * setup.r);
                max_speed = max_speed.max(u.abs());
                rhs[j] = phi_bar[j]
                    + dt * (coupling[k][node][j] - grad[j] * grad[j] / (4.0 * setup.r));
                u_face[k][node][j] =
                    -(phi_bar[(j + 1) % n] - phi_bar[j]) / (h * 2.0 * setup.r);
            }
            if max_speed * dt / h > 1.0 {
                return Err(Error::Stability(format!(
                    "explicit Hamiltonian violates the CFL bound at step {k} \
                     (speed {max_speed:.3}); increase the number of time steps"
                )));
            }
            pgrid.solve_implicit_diffusion(alpha, &rhs, &mut phi[k][node]);
            if phi[k][node].iter().any(|v| !v.is_finite()) {
                return Err(Error::NumericalBlowup {
                    time: grid.node(k),
                    state: vec![],
                    detail: format!("HJB value diverged at node {node}"),
                });
            }
        }
    }

    Ok(ValueField {
        phi,
        psi: if stochastic { Some(psi) } else { None },
        u_face,
        control_penalty: setup.r,
    })
}

/// Recompute the one-step dynamic-programming identity of the scheme from
/// the stored fields and report the largest violation: the continuation
/// value plus running-cost step must reproduce the implicit operator applied
/// to the stored `phi`. On an exact solve this is solver roundoff.
pub fn martingale_residual(
    coupling: &CouplingFlow,
    vf: &ValueField,
    setup: HjbSetup<'_>,
    grid: &TimeGrid,
    pgrid: &PeriodicGrid,
) -> f64 {
    let steps = grid.steps();
    let n = pgrid.cells();
    let dt = grid.dt();
    let lattice = setup.lattice;
    let alpha = dt * setup.diffusion * setup.diffusion / 2.0;
    let mut grad = vec![0.0; n];
    let mut lap = vec![0.0; n];
    let (mut buf_up, mut buf_dn) = (Vec::new(), Vec::new());
    let mut worst: f64 = 0.0;
    for k in 0..steps {
        let branch = lattice.branches_between(k);
        for node in 0..lattice.node_count(k) {
            let phi_bar = merged_continuation(
                pgrid, &setup, &vf.phi[k + 1], node, branch, &mut buf_up, &mut buf_dn,
            );
            pgrid.gradient(&phi_bar, &mut grad);
            pgrid.laplacian(&vf.phi[k][node], &mut lap);
            for j in 0..n {
                // Hamiltonian written as running cost plus transport at the
                // extracted policy: u* dphi + r u*^2 = -(dphi)^2 / 4r.
                let u_star = -grad[j] / (2.0 * setup.r);
                let running = coupling[k][node][j] + setup.r * u_star * u_star;
                let transport = u_star * grad[j];
                let resid = phi_bar[j] + dt * (running + transport)
                    - (vf.phi[k][node][j] - alpha * lap[j]);
                worst = worst.max(resid.abs());
            }
        }
    }
    worst
}
