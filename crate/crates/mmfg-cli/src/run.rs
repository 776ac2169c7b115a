//! Experiment execution: dispatch to the owning solver module, emit CSV and
//! JSON artifacts, and evaluate the config's declared checks.

use crate::config::ConfigFile;
use mmfg_core::grid::TimeGrid;
use mmfg_core::hjbfpk::{
    mfg_fixed_point, write_value_csv, FixedPointOptions, OscillatorParams, PeriodicGrid,
    W0Lattice,
};
use mmfg_core::lqg::{
    bsde_residual, lqg_equilibrium, mc_bsde_oracle, reduce_bsde_to_ode, solve_riccati,
};
use mmfg_core::mvlimit::{
    bounded_rate_model, convergence_experiment, mild_feedback, rate_model_laws,
};
use mmfg_core::nash::{
    epsilon_nash_experiment, estimate_gain_constants, oscillator_equilibrium_laws,
    oscillator_population_model, solve_oscillator_equilibrium, DeviationFamily, GainSystem,
    NashSetup,
};
use mmfg_core::report::CheckOutcome;
use serde_json::{json, Value};
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

pub struct RunOutput {
    pub results: Value,
    pub checks: Vec<CheckOutcome>,
    pub files: Vec<PathBuf>,
}

type RunResult = Result<RunOutput, String>;

fn create(out_dir: &Path, name: &str, files: &mut Vec<PathBuf>) -> Result<BufWriter<File>, String> {
    let path = out_dir.join(name);
    let f = File::create(&path).map_err(|e| format!("cannot create {}: {e}", path.display()))?;
    files.push(PathBuf::from(name));
    Ok(BufWriter::new(f))
}

pub fn run(config: &ConfigFile, seed: u64, out_dir: &Path) -> RunResult {
    match config.kind.as_str() {
        "riccati" => run_riccati(config, out_dir),
        "lqg-solve" => run_lqg(config, seed, out_dir),
        "oscillator" => run_oscillator(config, out_dir, false),
        "fixed-point" => run_oscillator(config, out_dir, true),
        "mv-convergence" => run_mv(config, seed, out_dir),
        "nash-check" => run_nash(config, seed, out_dir),
        "gain-estimate" => run_gain(config, seed, out_dir),
        other => Err(format!("unknown experiment kind '{other}'")),
    }
}

fn run_riccati(config: &ConfigFile, out_dir: &Path) -> RunResult {
    let c = config.riccati.as_ref().expect("validated");
    let mut diags = Vec::new();
    let (a, b, q, r) = c.validate(&mut diags);
    let grid = TimeGrid::new(c.horizon, c.steps).map_err(|e| e.to_string())?;
    let sol = solve_riccati(&a, &b, &q, &r, &grid).map_err(|e| e.to_string())?;

    let mut files = Vec::new();
    {
        use std::io::Write;
        let mut w = create(out_dir, "riccati.csv", &mut files)?;
        writeln!(w, "t,pi").map_err(|e| e.to_string())?;
        for k in 0..=c.steps {
            let flat: Vec<String> = sol.node(k).iter().map(|v| v.to_string()).collect();
            writeln!(w, "{},{}", grid.node(k), flat.join(";")).map_err(|e| e.to_string())?;
        }
    }

    let mut checks = vec![
        CheckOutcome::new(
            "terminal-condition",
            sol.node(c.steps).abs().max() == 0.0,
            "Pi(T) = 0 exactly",
        ),
        CheckOutcome::new(
            "symmetry",
            sol.symmetry_defect() < 1e-10,
            format!("symmetry defect {:.2e}", sol.symmetry_defect()),
        ),
        CheckOutcome::new(
            "positive-semidefinite",
            sol.min_eigenvalue() > -1e-10,
            format!("min eigenvalue {:.2e}", sol.min_eigenvalue()),
        ),
    ];
    let mut worst_tanh = None;
    if let Some(tol) = c.tanh_tolerance {
        let mut worst: f64 = 0.0;
        for k in 0..=c.steps {
            let t = grid.node(k);
            worst = worst.max((sol.node(k)[(0, 0)] - (c.horizon - t).tanh()).abs());
        }
        worst_tanh = Some(worst);
        checks.push(CheckOutcome::new(
            "tanh-closed-form",
            worst < tol,
            format!("max |Pi - tanh(T-t)| = {worst:.3e} (tol {tol:.1e})"),
        ));
    }
    Ok(RunOutput {
        results: json!({
            "pi_at_zero": sol.node(0).iter().copied().collect::<Vec<f64>>(),
            "tanh_error": worst_tanh,
        }),
        checks,
        files,
    })
}

fn run_lqg(config: &ConfigFile, seed: u64, out_dir: &Path) -> RunResult {
    let c = config.lqg.as_ref().expect("validated");
    let mut diags = Vec::new();
    let params = c.to_params(&mut diags);
    let grid = TimeGrid::new(c.horizon, c.steps).map_err(|e| e.to_string())?;
    let eq = lqg_equilibrium(&params, &grid, c.scenarios, seed).map_err(|e| e.to_string())?;

    let mut files = Vec::new();
    {
        let w = create(out_dir, "gains.csv", &mut files)?;
        eq.write_gains_csv(&grid, w).map_err(|e| e.to_string())?;
    }
    {
        use std::io::Write;
        let mut w = create(out_dir, "flows.csv", &mut files)?;
        writeln!(w, "t,scenario,z0,zbar").map_err(|e| e.to_string())?;
        for (s, flow) in eq.flows.iter().enumerate() {
            for k in 0..=c.steps {
                let z0: Vec<String> = flow.z0[k].iter().map(|v| v.to_string()).collect();
                let zb: Vec<String> = flow.zbar[k].iter().map(|v| v.to_string()).collect();
                writeln!(w, "{},{},{},{}", grid.node(k), s, z0.join(";"), zb.join(";"))
                    .map_err(|e| e.to_string())?;
            }
        }
    }

    let residual = bsde_residual(&eq, &grid);
    let mut checks = vec![CheckOutcome::new(
        "terminal-conditions",
        eq.coeffs.p00[c.steps].abs().max() == 0.0 && eq.coeffs.p1[c.steps].abs().max() == 0.0,
        "s0(T) = s(T) = 0 exactly",
    )];
    let mut oracle_summary = Value::Null;
    if let Some(paths) = c.oracle_paths {
        let ric0 = solve_riccati(&params.a0, &params.b0, &params.q0, &params.r0, &grid)
            .map_err(|e| e.to_string())?;
        let ric = solve_riccati(&params.a, &params.b, &params.q, &params.r, &grid)
            .map_err(|e| e.to_string())?;
        let coeffs = reduce_bsde_to_ode(&params, &ric0, &ric, &grid).map_err(|e| e.to_string())?;
        let oracle = mc_bsde_oracle(&params, &ric0, &ric, paths, &grid, seed, c.oracle_sweeps.unwrap_or(3))
            .map_err(|e| e.to_string())?;
        let (rel_s0, rel_s) = oracle.relative_error(&coeffs);
        let tol = c.oracle_rel_tol.unwrap_or(0.05);
        checks.push(CheckOutcome::new(
            "oracle-agreement",
            rel_s0 < tol && rel_s < tol,
            format!("sup rel err s0 {rel_s0:.4}, s {rel_s:.4} (tol {tol})"),
        ));
        oracle_summary = json!({
            "rel_s0": rel_s0,
            "rel_s": rel_s,
            "max_condition": oracle.max_condition,
            "paths": paths,
        });
    }
    if c.check_residual_halving.unwrap_or(false) {
        let fine_grid = TimeGrid::new(c.horizon, c.steps * 2).map_err(|e| e.to_string())?;
        let eq_fine =
            lqg_equilibrium(&params, &fine_grid, c.scenarios, seed).map_err(|e| e.to_string())?;
        let fine = bsde_residual(&eq_fine, &fine_grid);
        let ratio = fine.s0_path_rms / residual.s0_path_rms;
        checks.push(CheckOutcome::new(
            "residual-halving",
            (0.4..=0.6).contains(&ratio),
            format!("accumulated residual ratio {ratio:.3} in [0.4, 0.6]"),
        ));
    }
    Ok(RunOutput {
        results: json!({
            "residual": residual,
            "oracle": oracle_summary,
            "scenarios": c.scenarios,
        }),
        checks,
        files,
    })
}

fn run_oscillator(config: &ConfigFile, out_dir: &Path, contraction_focus: bool) -> RunResult {
    let c = config.oscillator.as_ref().expect("validated");
    let mut diags = Vec::new();
    let params = c.to_params(&mut diags);
    let grid = TimeGrid::new(c.horizon, c.steps).map_err(|e| e.to_string())?;
    let pgrid = PeriodicGrid::new(c.cells).map_err(|e| e.to_string())?;
    let lattice = match c.mode.as_str() {
        "lattice" => W0Lattice::new(c.lattice_epochs.unwrap_or(8), c.sigma0, &grid)
            .map_err(|e| e.to_string())?,
        _ => W0Lattice::collapsed(&grid),
    };
    let sol = mfg_fixed_point(
        &params,
        &grid,
        &pgrid,
        &lattice,
        &c.major,
        &c.minor,
        FixedPointOptions {
            damping: c.damping,
            tol: c.tol,
            max_iter: c.max_iter,
        },
    )
    .map_err(|e| e.to_string())?;

    let mut files = Vec::new();
    {
        let w = create(out_dir, "minor_value.csv", &mut files)?;
        write_value_csv(&sol.minor_value, &grid, &pgrid, w).map_err(|e| e.to_string())?;
    }
    {
        let w = create(out_dir, "major_value.csv", &mut files)?;
        write_value_csv(&sol.major_value, &grid, &pgrid, w).map_err(|e| e.to_string())?;
    }
    {
        let w = create(out_dir, "minor_density.csv", &mut files)?;
        sol.minor_density.write_csv(&grid, &pgrid, w).map_err(|e| e.to_string())?;
    }
    {
        let w = create(out_dir, "major_density.csv", &mut files)?;
        sol.major_density.write_csv(&grid, &pgrid, w).map_err(|e| e.to_string())?;
    }
    {
        use std::io::Write;
        let mut w = create(out_dir, "trace.json", &mut files)?;
        let payload = json!({
            "trace": sol.trace,
            "ratios": sol.trace_ratios(),
            "converged": sol.converged,
            "iterations": sol.iterations,
        });
        write!(w, "{}", serde_json::to_string_pretty(&payload).unwrap())
            .map_err(|e| e.to_string())?;
    }

    let mass_defect = sol
        .minor_density
        .worst_mass_defect()
        .max(sol.major_density.worst_mass_defect());
    let most_negative = sol
        .minor_density
        .most_negative()
        .min(sol.major_density.most_negative());
    let mut checks = vec![CheckOutcome::new(
        "fpk-conservation",
        mass_defect < 1e-10 && most_negative >= -1e-12,
        format!("mass defect {mass_defect:.2e}, most negative {most_negative:.2e}"),
    )];
    if c.require_convergence.unwrap_or(true) {
        checks.push(CheckOutcome::new(
            "converged",
            sol.converged,
            format!(
                "fixed point {} after {} sweeps (tol {:.1e})",
                if sol.converged { "converged" } else { "did NOT converge" },
                sol.iterations,
                c.tol
            ),
        ));
    }
    if contraction_focus || c.check_contraction.unwrap_or(false) {
        let ratios = sol.trace_ratios();
        let contracting = ratios.iter().all(|r| *r < 1.0);
        let max_ratio = ratios.iter().copied().fold(0.0f64, f64::max);
        checks.push(CheckOutcome::new(
            "contraction",
            contracting && sol.converged,
            format!("successive-distance ratios all < 1: {contracting} (max {max_ratio:.3})"),
        ));
    }
    Ok(RunOutput {
        results: json!({
            "converged": sol.converged,
            "iterations": sol.iterations,
            "trace": sol.trace,
            "ratios": sol.trace_ratios(),
            "max_control_minor": sol.minor_value.max_control(),
            "max_control_major": sol.major_value.max_control(),
            "max_psi_minor": sol.minor_value.max_psi(),
        }),
        checks,
        files,
    })
}

fn run_mv(config: &ConfigFile, seed: u64, out_dir: &Path) -> RunResult {
    let c = config.mv_convergence.as_ref().expect("validated");
    let model = bounded_rate_model();
    let (u0, u) = mild_feedback();
    let grid = TimeGrid::new(c.horizon, c.steps).map_err(|e| e.to_string())?;
    let report = convergence_experiment(
        &model,
        &u0,
        &u,
        &c.n_list,
        c.reps,
        c.particles,
        c.picard_tol,
        c.picard_max,
        seed,
        &grid,
        &rate_model_laws(),
    )
    .map_err(|e| e.to_string())?;

    let mut files = Vec::new();
    {
        let w = create(out_dir, "rate.csv", &mut files)?;
        report.write_csv(w).map_err(|e| e.to_string())?;
    }
    let mut checks = Vec::new();
    if let Some((lo, hi)) = c.slope_window {
        checks.push(CheckOutcome::new(
            "rate-slope",
            (lo..=hi).contains(&report.fit.slope),
            format!(
                "fitted slope {:.3} (se {:.3}) in [{lo}, {hi}]",
                report.fit.slope, report.fit.slope_se
            ),
        ));
    }
    Ok(RunOutput {
        results: serde_json::to_value(&report).unwrap(),
        checks,
        files,
    })
}

fn run_nash(config: &ConfigFile, seed: u64, out_dir: &Path) -> RunResult {
    let c = config.nash.as_ref().expect("validated");
    let osc = OscillatorParams {
        sigma: c.sigma,
        sigma0: 0.0,
        r: c.r,
        lambda: c.lambda,
        horizon: c.horizon,
    };
    let grid = TimeGrid::new(c.horizon, c.steps).map_err(|e| e.to_string())?;
    let eq = solve_oscillator_equilibrium(
        &osc,
        &grid,
        c.cells,
        c.theta0,
        FixedPointOptions::default(),
    )
    .map_err(|e| e.to_string())?;
    let model = oscillator_population_model(&osc, c.control_bound);
    let laws = oscillator_equilibrium_laws(c.theta0);
    let setup = NashSetup {
        model: &model,
        u0: &eq.u0,
        u: &eq.u,
        oscillator: Some(&osc),
        cells: c.cells,
        laws: &laws,
    };
    let family = match c.target.as_str() {
        "major" => DeviationFamily::default_major(),
        _ => DeviationFamily::default_minor(),
    };
    let report = epsilon_nash_experiment(&setup, &family, &c.n_list, c.reps, seed, &grid)
        .map_err(|e| e.to_string())?;

    let mut files = Vec::new();
    {
        let w = create(out_dir, "benefits.csv", &mut files)?;
        report.write_csv(w).map_err(|e| e.to_string())?;
    }
    let mut checks = vec![CheckOutcome::new(
        "zero-deviation-exact",
        report.zero_member_exact,
        "identity member benefit is exactly zero under paired seeds",
    )];
    if c.check_decay.unwrap_or(true) {
        let b_first = report.benefits[0];
        let b_last = *report.benefits.last().unwrap();
        let se = (report.stderrs[0].powi(2) + report.stderrs.last().unwrap().powi(2)).sqrt();
        checks.push(CheckOutcome::new(
            "benefit-decay",
            b_first - b_last > 2.0 * se,
            format!(
                "b({}) = {b_first:.3e} vs b({}) = {b_last:.3e}, separation {:.1} se",
                report.n_values[0],
                report.n_values.last().unwrap(),
                (b_first - b_last) / se
            ),
        ));
    }
    if let Some(emax) = c.exponent_max {
        let exponent = report.decay_fit.map(|f| f.slope).unwrap_or(f64::NAN);
        checks.push(CheckOutcome::new(
            "decay-exponent",
            exponent <= emax,
            format!(
                "fitted exponent {exponent:.2} <= {emax} over {} resolved sizes",
                report.qualifying_sizes
            ),
        ));
    }
    Ok(RunOutput {
        results: serde_json::to_value(&report).unwrap(),
        checks,
        files,
    })
}

fn run_gain(config: &ConfigFile, seed: u64, out_dir: &Path) -> RunResult {
    let c = config.gain.as_ref().expect("validated");
    let mut diags = Vec::new();
    let estimate = match c.system.as_str() {
        "lqg" => {
            let params = config.lqg.as_ref().expect("validated").to_params(&mut diags);
            let lqg_cfg = config.lqg.as_ref().unwrap();
            let grid = TimeGrid::new(lqg_cfg.horizon, lqg_cfg.steps).map_err(|e| e.to_string())?;
            estimate_gain_constants(
                &GainSystem::Lqg {
                    params: &params,
                    scenarios: lqg_cfg.scenarios,
                    seed,
                },
                &grid,
                &c.sizes,
            )
            .map_err(|e| e.to_string())?
        }
        _ => {
            let osc_cfg = config.oscillator.as_ref().expect("validated");
            let params = osc_cfg.to_params(&mut diags);
            let grid = TimeGrid::new(osc_cfg.horizon, osc_cfg.steps).map_err(|e| e.to_string())?;
            estimate_gain_constants(
                &GainSystem::Oscillator {
                    params: &params,
                    cells: osc_cfg.cells,
                },
                &grid,
                &c.sizes,
            )
            .map_err(|e| e.to_string())?
        }
    };
    let mut files = Vec::new();
    {
        use std::io::Write;
        let mut w = create(out_dir, "gains.json", &mut files)?;
        write!(w, "{}", serde_json::to_string_pretty(&estimate).unwrap())
            .map_err(|e| e.to_string())?;
    }
    let mut checks = Vec::new();
    if c.check_product_below_one.unwrap_or(false) {
        checks.push(CheckOutcome::new(
            "gain-product",
            estimate.product_max < 1.0,
            format!("max contraction product {:.4} < 1", estimate.product_max),
        ));
    }
    Ok(RunOutput {
        results: serde_json::to_value(&estimate).unwrap(),
        checks,
        files,
    })
}
