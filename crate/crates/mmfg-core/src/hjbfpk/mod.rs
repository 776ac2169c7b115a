//! Grid-based solver for the major-minor oscillator game: backward HJB
//! sweeps (deterministic or on a recombining binomial lattice for the major
//! noise), conservative forward Fokker-Planck transport, the sin^2 cost
//! couplings, and the measure-and-control fixed-point loop.

mod coupling;
mod fixed_point;
mod fpk;
mod hjb;
mod lattice;
mod pgrid;

pub use coupling::{coupling_major, coupling_minor, coupling_minor_dirac, CouplingKernel};
pub use fixed_point::{
    mfg_fixed_point, DensityInit, FixedPointOptions, FixedPointSolution, MajorInit, OscillatorParams,
};
pub use fpk::{solve_fpk_forward, DensityField, FpkSetup};
pub use hjb::{
    coupling_flow_from, martingale_residual, solve_hjb_backward, CouplingFlow, HjbSetup,
    ValueField,
};
pub use lattice::W0Lattice;
pub use pgrid::PeriodicGrid;

use crate::grid::TimeGrid;
use std::io::Write;

/// CSV export of a value field: `t,node,x,phi,psi,u_face`.
pub fn write_value_csv(
    vf: &ValueField,
    grid: &TimeGrid,
    pgrid: &PeriodicGrid,
    mut w: impl Write,
) -> std::io::Result<()> {
    writeln!(w, "t,node,x,phi,psi,u_face")?;
    for (k, nodes) in vf.phi.iter().enumerate() {
        for (node, slice) in nodes.iter().enumerate() {
            for (j, v) in slice.iter().enumerate() {
                let psi = vf
                    .psi
                    .as_ref()
                    .map(|p| p[k][node][j])
                    .unwrap_or(0.0);
                let u = if k < vf.u_face.len() {
                    vf.u_face[k][node][j]
                } else {
                    f64::NAN
                };
                writeln!(
                    w,
                    "{},{},{},{},{},{}",
                    grid.node(k),
                    node,
                    pgrid.node(j),
                    v,
                    psi,
                    u
                )?;
            }
        }
    }
    Ok(())
}
