//! Experiment configuration: one TOML file per experiment, schema-checked
//! with unknown keys rejected, validated into solver inputs with
//! human-readable diagnostics carrying the offending key path.

use mmfg_core::hjbfpk::{DensityInit, MajorInit, OscillatorParams};
use mmfg_core::lqg::LqgParams;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    /// riccati | lqg-solve | oscillator | fixed-point | mv-convergence |
    /// nash-check | gain-estimate
    pub kind: String,
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub riccati: Option<RiccatiConfig>,
    pub lqg: Option<LqgConfig>,
    pub oscillator: Option<OscillatorConfig>,
    pub mv_convergence: Option<MvConfig>,
    pub nash: Option<NashConfig>,
    pub gain: Option<GainConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiccatiConfig {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
    pub horizon: f64,
    pub steps: usize,
    /// Compare against the scalar closed form `tanh(T - t)`; only valid for
    /// the unit scalar configuration.
    pub tanh_tolerance: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LqgConfig {
    pub a0: Vec<Vec<f64>>,
    pub b0: Vec<Vec<f64>>,
    pub f0: Vec<Vec<f64>>,
    pub h0: Vec<Vec<f64>>,
    pub q0: Vec<Vec<f64>>,
    pub r0: Vec<Vec<f64>>,
    pub s0: Vec<Vec<f64>>,
    pub eta0: Vec<f64>,
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub f: Vec<Vec<f64>>,
    pub g: Vec<Vec<f64>>,
    pub h: Vec<Vec<f64>>,
    pub hhat: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
    pub s: Vec<Vec<f64>>,
    pub eta: Vec<f64>,
    pub horizon: f64,
    pub steps: usize,
    pub scenarios: usize,
    pub z0_init_mean: Vec<f64>,
    pub z0_init_std: Vec<f64>,
    pub z_init_mean: Vec<f64>,
    pub z_init_std: Vec<f64>,
    /// Run the least-squares Monte-Carlo oracle with this many paths and
    /// check the reduction against it.
    pub oracle_paths: Option<usize>,
    pub oracle_sweeps: Option<usize>,
    pub oracle_rel_tol: Option<f64>,
    /// Check that halving dt halves the accumulated BSDE residual.
    pub check_residual_halving: Option<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OscillatorConfig {
    pub sigma: f64,
    pub sigma0: f64,
    pub r: f64,
    pub lambda: f64,
    pub horizon: f64,
    pub steps: usize,
    pub cells: usize,
    /// "deterministic" or "lattice".
    pub mode: String,
    pub lattice_epochs: Option<usize>,
    pub major: MajorInit,
    pub minor: DensityInit,
    pub damping: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// Fail the run (nonzero exit) when the loop does not converge.
    pub require_convergence: Option<bool>,
    /// Check successive-distance ratios < 1 from the second sweep on.
    pub check_contraction: Option<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MvConfig {
    pub n_list: Vec<usize>,
    pub reps: usize,
    pub particles: usize,
    pub picard_tol: f64,
    pub picard_max: usize,
    pub horizon: f64,
    pub steps: usize,
    /// Expected log-log slope window, e.g. [-0.65, -0.35].
    pub slope_window: Option<(f64, f64)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NashConfig {
    pub sigma: f64,
    pub r: f64,
    pub lambda: f64,
    pub horizon: f64,
    pub steps: usize,
    pub cells: usize,
    pub control_bound: f64,
    pub theta0: f64,
    pub n_list: Vec<usize>,
    pub reps: usize,
    /// "minor" or "major".
    pub target: String,
    pub check_decay: Option<bool>,
    pub exponent_max: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainConfig {
    /// "lqg" (needs the [lqg] section) or "oscillator" (needs [oscillator]).
    pub system: String,
    pub sizes: Vec<f64>,
    pub check_product_below_one: Option<bool>,
}

/// A human-readable config problem with the key path it concerns.
#[derive(Debug, Clone, Serialize)]
pub struct Diagnostic {
    pub key: String,
    pub message: String,
}

impl Diagnostic {
    fn new(key: &str, message: impl Into<String>) -> Self {
        Diagnostic {
            key: key.into(),
            message: message.into(),
        }
    }
}

fn matrix(key: &str, rows: &[Vec<f64>], diags: &mut Vec<Diagnostic>) -> DMatrix<f64> {
    if rows.is_empty() || rows[0].is_empty() {
        diags.push(Diagnostic::new(key, "matrix must be non-empty"));
        return DMatrix::zeros(1, 1);
    }
    let cols = rows[0].len();
    if rows.iter().any(|r| r.len() != cols) {
        diags.push(Diagnostic::new(key, "matrix rows have unequal lengths"));
        return DMatrix::zeros(1, 1);
    }
    DMatrix::from_row_iterator(rows.len(), cols, rows.iter().flatten().copied())
}

fn check_symmetric(key: &str, m: &DMatrix<f64>, diags: &mut Vec<Diagnostic>) {
    if m.nrows() == m.ncols() {
        let dev = (m - m.transpose()).abs().max();
        if dev > 1e-10 {
            diags.push(Diagnostic::new(
                key,
                format!("must be symmetric within 1e-10 (deviation {dev:.2e})"),
            ));
        }
    }
}

impl RiccatiConfig {
    pub fn validate(&self, diags: &mut Vec<Diagnostic>) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let a = matrix("riccati.a", &self.a, diags);
        let b = matrix("riccati.b", &self.b, diags);
        let q = matrix("riccati.q", &self.q, diags);
        let r = matrix("riccati.r", &self.r, diags);
        if !(self.horizon > 0.0) {
            diags.push(Diagnostic::new("riccati.horizon", "must be positive"));
        }
        if self.steps == 0 {
            diags.push(Diagnostic::new("riccati.steps", "must be at least 1"));
        }
        check_symmetric("riccati.q", &q, diags);
        check_symmetric("riccati.r", &r, diags);
        (a, b, q, r)
    }
}

impl LqgConfig {
    pub fn to_params(&self, diags: &mut Vec<Diagnostic>) -> LqgParams {
        let params = LqgParams {
            a0: matrix("lqg.a0", &self.a0, diags),
            b0: matrix("lqg.b0", &self.b0, diags),
            f0: matrix("lqg.f0", &self.f0, diags),
            h0: matrix("lqg.h0", &self.h0, diags),
            q0: matrix("lqg.q0", &self.q0, diags),
            r0: matrix("lqg.r0", &self.r0, diags),
            s0_diff: matrix("lqg.s0", &self.s0, diags),
            eta0: DVector::from_vec(self.eta0.clone()),
            a: matrix("lqg.a", &self.a, diags),
            b: matrix("lqg.b", &self.b, diags),
            f: matrix("lqg.f", &self.f, diags),
            g: matrix("lqg.g", &self.g, diags),
            h: matrix("lqg.h", &self.h, diags),
            hhat: matrix("lqg.hhat", &self.hhat, diags),
            q: matrix("lqg.q", &self.q, diags),
            r: matrix("lqg.r", &self.r, diags),
            s_diff: matrix("lqg.s", &self.s, diags),
            eta: DVector::from_vec(self.eta.clone()),
            horizon: self.horizon,
            z0_init_mean: DVector::from_vec(self.z0_init_mean.clone()),
            z0_init_std: DVector::from_vec(self.z0_init_std.clone()),
            z_init_mean: DVector::from_vec(self.z_init_mean.clone()),
            z_init_std: DVector::from_vec(self.z_init_std.clone()),
        };
        if let Err(e) = params.validate() {
            diags.push(Diagnostic::new("lqg", e.to_string()));
        }
        if self.steps == 0 {
            diags.push(Diagnostic::new("lqg.steps", "must be at least 1"));
        }
        if self.scenarios == 0 {
            diags.push(Diagnostic::new("lqg.scenarios", "must be at least 1"));
        }
        if let Some(paths) = self.oracle_paths {
            if paths < 1000 {
                diags.push(Diagnostic::new("lqg.oracle_paths", "oracle needs at least 1000 paths"));
            }
        }
        params
    }
}

impl OscillatorConfig {
    pub fn to_params(&self, diags: &mut Vec<Diagnostic>) -> OscillatorParams {
        let params = OscillatorParams {
            sigma: self.sigma,
            sigma0: self.sigma0,
            r: self.r,
            lambda: self.lambda,
            horizon: self.horizon,
        };
        if let Err(e) = params.validate() {
            diags.push(Diagnostic::new("oscillator", e.to_string()));
        }
        if self.steps == 0 {
            diags.push(Diagnostic::new("oscillator.steps", "must be at least 1"));
        }
        if self.cells < 16 {
            diags.push(Diagnostic::new("oscillator.cells", "need at least 16 cells"));
        }
        match self.mode.as_str() {
            "deterministic" => {}
            "lattice" => {
                let epochs = self.lattice_epochs.unwrap_or(0);
                if epochs == 0 {
                    diags.push(Diagnostic::new(
                        "oscillator.lattice_epochs",
                        "lattice mode needs a positive epoch count",
                    ));
                } else if self.steps % epochs != 0 {
                    diags.push(Diagnostic::new(
                        "oscillator.lattice_epochs",
                        "must divide the number of time steps",
                    ));
                }
            }
            other => diags.push(Diagnostic::new(
                "oscillator.mode",
                format!("unknown mode '{other}' (deterministic | lattice)"),
            )),
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            diags.push(Diagnostic::new("oscillator.damping", "must lie in (0, 1]"));
        }
        if !(self.tol > 0.0) {
            diags.push(Diagnostic::new("oscillator.tol", "must be positive"));
        }
        if self.max_iter == 0 {
            diags.push(Diagnostic::new("oscillator.max_iter", "must be at least 1"));
        }
        params
    }
}

impl MvConfig {
    pub fn validate(&self, diags: &mut Vec<Diagnostic>) {
        if self.n_list.len() < 4 || self.n_list.windows(2).any(|w| w[0] >= w[1]) {
            diags.push(Diagnostic::new(
                "mv_convergence.n_list",
                "need at least 4 strictly increasing sizes",
            ));
        }
        if self.reps == 0 {
            diags.push(Diagnostic::new("mv_convergence.reps", "must be at least 1"));
        }
        if self.particles < 2 {
            diags.push(Diagnostic::new("mv_convergence.particles", "need at least 2"));
        }
        if !(self.horizon > 0.0) {
            diags.push(Diagnostic::new("mv_convergence.horizon", "must be positive"));
        }
        if self.steps == 0 {
            diags.push(Diagnostic::new("mv_convergence.steps", "must be at least 1"));
        }
    }
}

impl NashConfig {
    pub fn validate(&self, diags: &mut Vec<Diagnostic>) {
        if !(self.horizon > 0.0) {
            diags.push(Diagnostic::new("nash.horizon", "must be positive"));
        }
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            diags.push(Diagnostic::new("nash.lambda", "must lie in (0, 1)"));
        }
        if !(self.r > 0.0) {
            diags.push(Diagnostic::new("nash.r", "must be positive"));
        }
        if self.n_list.is_empty() || self.n_list.windows(2).any(|w| w[0] >= w[1]) {
            diags.push(Diagnostic::new("nash.n_list", "must be strictly increasing"));
        }
        if self.reps == 0 {
            diags.push(Diagnostic::new("nash.reps", "must be at least 1"));
        }
        if !matches!(self.target.as_str(), "minor" | "major") {
            diags.push(Diagnostic::new("nash.target", "must be 'minor' or 'major'"));
        }
        if !(self.control_bound > 0.0) {
            diags.push(Diagnostic::new("nash.control_bound", "must be positive"));
        }
    }
}

impl GainConfig {
    pub fn validate(&self, diags: &mut Vec<Diagnostic>) {
        if !matches!(self.system.as_str(), "lqg" | "oscillator") {
            diags.push(Diagnostic::new("gain.system", "must be 'lqg' or 'oscillator'"));
        }
        if self.sizes.is_empty() || self.sizes.iter().any(|s| *s < 0.0) {
            diags.push(Diagnostic::new("gain.sizes", "need non-negative perturbation sizes"));
        }
    }
}

impl ConfigFile {
    /// Parse a TOML config file.
    pub fn load(path: &std::path::Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("malformed config: {e}"))
    }

    /// Structural validation: the right section must exist for the kind and
    /// its constraints must hold. Returns all diagnostics found.
    pub fn validate(&self) -> Vec<Diagnostic> {
        let mut diags = Vec::new();
        let need = |section: Option<bool>, name: &str, diags: &mut Vec<Diagnostic>| {
            if section != Some(true) {
                diags.push(Diagnostic::new(name, "section required for this experiment kind"));
            }
        };
        match self.kind.as_str() {
            "riccati" => {
                need(self.riccati.as_ref().map(|_| true), "riccati", &mut diags);
                if let Some(c) = &self.riccati {
                    c.validate(&mut diags);
                }
            }
            "lqg-solve" => {
                need(self.lqg.as_ref().map(|_| true), "lqg", &mut diags);
                if let Some(c) = &self.lqg {
                    c.to_params(&mut diags);
                }
            }
            "oscillator" | "fixed-point" => {
                need(self.oscillator.as_ref().map(|_| true), "oscillator", &mut diags);
                if let Some(c) = &self.oscillator {
                    c.to_params(&mut diags);
                }
            }
            "mv-convergence" => {
                need(self.mv_convergence.as_ref().map(|_| true), "mv_convergence", &mut diags);
                if let Some(c) = &self.mv_convergence {
                    c.validate(&mut diags);
                }
            }
            "nash-check" => {
                need(self.nash.as_ref().map(|_| true), "nash", &mut diags);
                if let Some(c) = &self.nash {
                    c.validate(&mut diags);
                }
            }
            "gain-estimate" => {
                need(self.gain.as_ref().map(|_| true), "gain", &mut diags);
                if let Some(c) = &self.gain {
                    c.validate(&mut diags);
                    if c.system == "lqg" && self.lqg.is_none() {
                        diags.push(Diagnostic::new("lqg", "gain system 'lqg' needs the [lqg] section"));
                    }
                    if c.system == "oscillator" && self.oscillator.is_none() {
                        diags.push(Diagnostic::new(
                            "oscillator",
                            "gain system 'oscillator' needs the [oscillator] section",
                        ));
                    }
                    if let Some(l) = &self.lqg {
                        if c.system == "lqg" {
                            l.to_params(&mut diags);
                        }
                    }
                    if let Some(o) = &self.oscillator {
                        if c.system == "oscillator" {
                            o.to_params(&mut diags);
                        }
                    }
                }
            }
            other => {
                diags.push(Diagnostic::new("kind", format!("unknown experiment kind '{other}'")));
            }
        }
        diags
    }
}
