//! Forward Fokker-Planck transport: conservative upwind advection with
//! implicit diffusion, branching across lattice epochs.

use super::lattice::W0Lattice;
use super::pgrid::PeriodicGrid;
use crate::error::{Error, Result};
use crate::grid::TimeGrid;

const MASS_TOL: f64 = 1e-10;
const NEG_TOL: f64 = -1e-12;

/// `[time][node][cell]` densities on the periodic grid.
#[derive(Debug, Clone)]
pub struct DensityField {
    pub p: Vec<Vec<Vec<f64>>>,
    h: f64,
}

impl DensityField {
    /// Assemble a field from explicit slices (used by the point-major
    /// representation to expose deposited Diracs).
    pub fn from_slices(p: Vec<Vec<Vec<f64>>>, h: f64) -> Self {
        DensityField { p, h }
    }

    pub fn slice(&self, k: usize, node: usize) -> &[f64] {
        &self.p[k][node]
    }

    pub fn times(&self) -> usize {
        self.p.len()
    }

    /// Probability-weighted average density over lattice nodes at time `k`.
    pub fn expected_density(&self, k: usize, lattice: &W0Lattice) -> Vec<f64> {
        let n = self.p[k][0].len();
        let mut out = vec![0.0; n];
        for (node, slice) in self.p[k].iter().enumerate() {
            let w = lattice.node_weight(k, node);
            for j in 0..n {
                out[j] += w * slice[j];
            }
        }
        out
    }

    /// Mass defect and most negative value over the whole field.
    pub fn worst_mass_defect(&self) -> f64 {
        self.p
            .iter()
            .flatten()
            .map(|slice| (slice.iter().sum::<f64>() * self.h - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn most_negative(&self) -> f64 {
        self.p
            .iter()
            .flatten()
            .flatten()
            .copied()
            .fold(0.0, f64::min)
    }

    pub fn write_csv(
        &self,
        grid: &TimeGrid,
        pgrid: &PeriodicGrid,
        mut w: impl std::io::Write,
    ) -> std::io::Result<()> {
        writeln!(w, "t,node,x,density")?;
        for (k, nodes) in self.p.iter().enumerate() {
            for (node, slice) in nodes.iter().enumerate() {
                for (j, v) in slice.iter().enumerate() {
                    writeln!(w, "{},{},{},{}", grid.node(k), node, pgrid.node(j), v)?;
                }
            }
        }
        Ok(())
    }
}

/// One conservative step: upwind advective fluxes at faces, then implicit
/// diffusion. Errors on CFL violation, mass loss, or negativity beyond
/// tolerance.
fn fpk_step(
    p: &[f64],
    u_face: &[f64],
    diffusion: f64,
    dt: f64,
    pgrid: &PeriodicGrid,
    step_index: usize,
    out: &mut Vec<f64>,
) -> Result<()> {
    let n = pgrid.cells();
    let h = pgrid.h();
    let mut max_speed = 0.0f64;
    for &u in u_face {
        max_speed = max_speed.max(u.abs());
    }
    if max_speed * dt / h > 1.0 {
        return Err(Error::Stability(format!(
            "advective CFL violated at step {step_index} (speed {max_speed:.3}); \
             increase the number of time steps"
        )));
    }
    // Flux through face j (between cells j and j+1).
    let flux = |j: usize| -> f64 {
        let u = u_face[j];
        if u >= 0.0 {
            u * p[j]
        } else {
            u * p[(j + 1) % n]
        }
    };
    let mut advected = vec![0.0; n];
    for j in 0..n {
        let f_right = flux(j);
        let f_left = flux((j + n - 1) % n);
        advected[j] = p[j] - dt / h * (f_right - f_left);
    }
    out.resize(n, 0.0);
    pgrid.solve_implicit_diffusion(dt * diffusion * diffusion / 2.0, &advected, out);

    let mass_before = pgrid.mass(p);
    let mass_after = pgrid.mass(out);
    if (mass_after - mass_before).abs() > MASS_TOL {
        return Err(Error::Inconsistency(format!(
            "FPK step {step_index} lost mass: {mass_before} -> {mass_after}"
        )));
    }
    if let Some((cell, &v)) = out
        .iter()
        .enumerate()
        .find(|(_, &v)| v < NEG_TOL)
    {
        return Err(Error::Inconsistency(format!(
            "FPK step {step_index} produced negative density {v:.3e} in cell {cell}"
        )));
    }
    Ok(())
}

/// Inputs of one forward transport solve.
#[derive(Debug, Clone, Copy)]
pub struct FpkSetup<'a> {
    pub diffusion: f64,
    /// Branch state shift (major agent on a stochastic lattice) else 0.
    pub shift: f64,
    pub lattice: &'a W0Lattice,
}

/// Push an initial density through the whole horizon under the face-centered
/// velocity field `u` (`[step][node][face]`, the layout produced by the HJB
/// solver). At epoch boundaries children inherit their parents' densities
/// (shifted by `+/- shift` for the major agent) and recombining nodes take
/// the probability-weighted mixture of their two incoming branches.
pub fn solve_fpk_forward(
    u: &[Vec<Vec<f64>>],
    setup: FpkSetup<'_>,
    p0: &[f64],
    grid: &TimeGrid,
    pgrid: &PeriodicGrid,
) -> Result<DensityField> {
    let steps = grid.steps();
    let n = pgrid.cells();
    let lattice = setup.lattice;
    if u.len() != steps {
        return Err(Error::invalid("velocity field must cover every step"));
    }
    if p0.len() != n {
        return Err(Error::invalid("initial density has the wrong cell count"));
    }
    let mass0 = pgrid.mass(p0);
    if (mass0 - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "initial density must be normalized (mass {mass0})"
        )));
    }

    let mut field = Vec::with_capacity(steps + 1);
    field.push(vec![p0.to_vec()]);
    let mut shifted = vec![0.0; n];
    for k in 0..steps {
        let nodes_now = lattice.node_count(k);
        if u[k].len() != nodes_now {
            return Err(Error::invalid(format!(
                "velocity field node count mismatch at step {k}"
            )));
        }
        let mut advanced: Vec<Vec<f64>> = Vec::with_capacity(nodes_now);
        for node in 0..nodes_now {
            let mut out = Vec::new();
            fpk_step(
                &field[k][node],
                &u[k][node],
                setup.diffusion,
                grid.dt(),
                pgrid,
                k,
                &mut out,
            )?;
            advanced.push(out);
        }
        if lattice.branches_between(k) {
            let children = lattice.node_count(k + 1);
            let mut next: Vec<Vec<f64>> = Vec::with_capacity(children);
            for child in 0..children {
                let mut acc = vec![0.0; n];
                let mut total_w = 0.0;
                // Up-parent `child - 1`, down-parent `child`.
                for (parent, sign) in [(child.wrapping_sub(1), 1.0), (child, -1.0)] {
                    if parent >= nodes_now {
                        continue;
                    }
                    let w = lattice.node_weight(k, parent) * 0.5;
                    if setup.shift != 0.0 {
                        pgrid.shift_density(&advanced[parent], sign * setup.shift, &mut shifted);
                        for j in 0..n {
                            acc[j] += w * shifted[j];
                        }
                    } else {
                        for j in 0..n {
                            acc[j] += w * advanced[parent][j];
                        }
                    }
                    total_w += w;
                }
                for v in &mut acc {
                    *v /= total_w;
                }
                next.push(acc);
            }
            field.push(next);
        } else {
            field.push(advanced);
        }
    }

    Ok(DensityField {
        p: field,
        h: pgrid.h(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::TAU;

    fn uniform(pgrid: &PeriodicGrid) -> Vec<f64> {
        vec![1.0 / TAU; pgrid.cells()]
    }

    fn zero_velocity(grid: &TimeGrid, lattice: &W0Lattice, cells: usize) -> Vec<Vec<Vec<f64>>> {
        (0..grid.steps())
            .map(|k| vec![vec![0.0; cells]; lattice.node_count(k)])
            .collect()
    }

    #[test]
    fn uniform_is_stationary_under_pure_diffusion() {
        let grid = TimeGrid::new(0.5, 128).unwrap();
        let pgrid = PeriodicGrid::new(64).unwrap();
        let lattice = W0Lattice::collapsed(&grid);
        let u = zero_velocity(&grid, &lattice, 64);
        let df = solve_fpk_forward(
            &u,
            FpkSetup { diffusion: 0.4, shift: 0.0, lattice: &lattice },
            &uniform(&pgrid),
            &grid,
            &pgrid,
        )
        .unwrap();
        for k in [0, 64, 128] {
            for v in df.slice(k, 0) {
                assert!((v - 1.0 / TAU).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn heat_kernel_variance_growth() {
        // Pure diffusion from a spike: circular variance grows like
        // sigma^2 t for small t.
        let sigma = 0.5;
        let grid = TimeGrid::new(0.25, 256).unwrap();
        let pgrid = PeriodicGrid::new(256).unwrap();
        let lattice = W0Lattice::collapsed(&grid);
        let u = zero_velocity(&grid, &lattice, 256);
        let center = std::f64::consts::PI;
        let p0 = pgrid.dirac_density(center);
        let df = solve_fpk_forward(
            &u,
            FpkSetup { diffusion: sigma, shift: 0.0, lattice: &lattice },
            &p0,
            &grid,
            &pgrid,
        )
        .unwrap();
        let variance = |p: &[f64]| -> f64 {
            let mut acc = 0.0;
            for (j, &v) in p.iter().enumerate() {
                let d = pgrid.node(j) - center;
                acc += d * d * v * pgrid.h();
            }
            acc
        };
        let t = 0.25;
        let v_end = variance(df.slice(256, 0));
        let want = sigma * sigma * t;
        assert!(
            (v_end - want).abs() < 0.1 * want,
            "variance {v_end}, want {want}"
        );
    }

    #[test]
    fn cfl_violation_is_a_stability_error() {
        use crate::error::Error;
        let grid = TimeGrid::new(0.5, 8).unwrap(); // huge dt
        let pgrid = PeriodicGrid::new(64).unwrap();
        let lattice = W0Lattice::collapsed(&grid);
        let u: Vec<Vec<Vec<f64>>> = (0..8).map(|_| vec![vec![50.0; 64]]).collect();
        let err = solve_fpk_forward(
            &u,
            FpkSetup { diffusion: 0.2, shift: 0.0, lattice: &lattice },
            &uniform(&pgrid),
            &grid,
            &pgrid,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Stability(_)), "{err}");
        assert!(err.to_string().contains("time steps"));
    }

    #[test]
    fn mass_conserved_every_step_with_advection() {
        let grid = TimeGrid::new(0.5, 128).unwrap();
        let pgrid = PeriodicGrid::new(64).unwrap();
        let lattice = W0Lattice::new(8, 0.3, &grid).unwrap();
        // Rotating velocity field; nontrivial but CFL-safe.
        let u: Vec<Vec<Vec<f64>>> = (0..128)
            .map(|k| {
                (0..lattice.node_count(k))
                    .map(|node| {
                        (0..64)
                            .map(|j| 0.4 * (pgrid.node(j) + 0.01 * (k + node) as f64).sin())
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let p0 = {
            let mut p = pgrid.dirac_density(2.0);
            // Smooth it slightly to avoid a pure two-cell spike.
            let mut sm = vec![0.0; 64];
            pgrid.solve_implicit_diffusion(0.01, &p, &mut sm);
            p.copy_from_slice(&sm);
            p
        };
        let df = solve_fpk_forward(
            &u,
            FpkSetup { diffusion: 0.2, shift: lattice.increment(), lattice: &lattice },
            &p0,
            &grid,
            &pgrid,
        )
        .unwrap();
        assert!(df.worst_mass_defect() < 1e-10, "defect {}", df.worst_mass_defect());
        assert!(df.most_negative() >= -1e-12);
        // Node layout follows the lattice.
        assert_eq!(df.p[128].len(), lattice.node_count(128));
    }
}
