//! Feedback control laws `u(t, x)` with compact control sets.
//!
//! Control sets are coordinate-wise intervals; every evaluation clamps into
//! them. Nominally unbounded problems (LQG) use wide default bounds and the
//! control counts clamp activations so a run can report when the bounds were
//! actually hit.

use crate::error::{Error, Result};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

pub const WIDE_BOUND: f64 = 1e6;

/// Coordinate-wise interval bounds for a control set.
#[derive(Debug, Clone)]
pub struct ControlBounds {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl ControlBounds {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::invalid("control bound dimensions differ"));
        }
        if lo.iter().zip(&hi).any(|(a, b)| !(a < b)) {
            return Err(Error::invalid("control bounds must satisfy lo < hi"));
        }
        Ok(ControlBounds { lo, hi })
    }

    /// `[-WIDE_BOUND, WIDE_BOUND]^dim`, the default for LQG-style problems.
    pub fn wide(dim: usize) -> Self {
        ControlBounds {
            lo: vec![-WIDE_BOUND; dim],
            hi: vec![WIDE_BOUND; dim],
        }
    }

    pub fn symmetric(dim: usize, radius: f64) -> Result<Self> {
        ControlBounds::new(vec![-radius; dim], vec![radius; dim])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    /// Clamp in place; returns true when any coordinate was clamped.
    pub fn clamp(&self, u: &mut [f64]) -> bool {
        let mut hit = false;
        for (v, (a, b)) in u.iter_mut().zip(self.lo.iter().zip(&self.hi)) {
            if *v < *a {
                *v = *a;
                hit = true;
            } else if *v > *b {
                *v = *b;
                hit = true;
            }
        }
        hit
    }
}

type ControlFn = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;

/// Tabulated control on a time grid times a 1-D state grid, linearly
/// interpolated in both arguments. `period` wraps the state axis; this is
/// how lattice-extracted oscillator controls are carried around.
#[derive(Debug, Clone)]
pub struct TimeStateTable {
    times: Vec<f64>,
    xs: Vec<f64>,
    /// `[time][x]`, scalar controls.
    values: Vec<Vec<f64>>,
    period: Option<f64>,
}

impl TimeStateTable {
    pub fn new(
        times: Vec<f64>,
        xs: Vec<f64>,
        values: Vec<Vec<f64>>,
        period: Option<f64>,
    ) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::invalid("table time dimension mismatch"));
        }
        if values.iter().any(|row| row.len() != xs.len()) {
            return Err(Error::invalid("table state dimension mismatch"));
        }
        if times.len() < 1 || xs.len() < 2 {
            return Err(Error::invalid("table needs at least 1 time and 2 state nodes"));
        }
        Ok(TimeStateTable {
            times,
            xs,
            values,
            period,
        })
    }

    fn eval(&self, t: f64, x: f64) -> f64 {
        let row = |i: usize| -> f64 { self.interp_x(&self.values[i], x) };
        let n = self.times.len();
        if t <= self.times[0] {
            return row(0);
        }
        if t >= self.times[n - 1] {
            return row(n - 1);
        }
        let i = match self
            .times
            .binary_search_by(|v| v.partial_cmp(&t).unwrap())
        {
            Ok(i) => return row(i),
            Err(i) => i - 1,
        };
        let w = (t - self.times[i]) / (self.times[i + 1] - self.times[i]);
        (1.0 - w) * row(i) + w * row(i + 1)
    }

    fn interp_x(&self, row: &[f64], x: f64) -> f64 {
        let n = self.xs.len();
        match self.period {
            Some(p) => {
                // Uniform periodic grid assumed: xs[j] = j * p / n.
                let h = p / n as f64;
                let xw = x.rem_euclid(p);
                let j = (xw / h).floor() as usize % n;
                let w = (xw - j as f64 * h) / h;
                (1.0 - w) * row[j] + w * row[(j + 1) % n]
            }
            None => {
                if x <= self.xs[0] {
                    return row[0];
                }
                if x >= self.xs[n - 1] {
                    return row[n - 1];
                }
                let j = match self.xs.binary_search_by(|v| v.partial_cmp(&x).unwrap()) {
                    Ok(j) => return row[j],
                    Err(j) => j - 1,
                };
                let w = (x - self.xs[j]) / (self.xs[j + 1] - self.xs[j]);
                (1.0 - w) * row[j] + w * row[j + 1]
            }
        }
    }
}

#[derive(Clone)]
enum ControlLaw {
    Zero,
    Func { dim: usize, f: ControlFn },
    Table(TimeStateTable),
}

/// A feedback control law together with its control set.
///
/// The stored Lipschitz constant is declarative; [`FeedbackControl::probe_lipschitz`]
/// estimates the actual difference quotient on a sample grid so simulators
/// can enforce (H4)-style regularity numerically.
#[derive(Clone)]
pub struct FeedbackControl {
    law: ControlLaw,
    bounds: ControlBounds,
    lipschitz: f64,
    clamp_events: Arc<AtomicU64>,
}

impl std::fmt::Debug for FeedbackControl {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let kind = match &self.law {
            ControlLaw::Zero => "zero",
            ControlLaw::Func { .. } => "function",
            ControlLaw::Table(_) => "table",
        };
        f.debug_struct("FeedbackControl")
            .field("law", &kind)
            .field("dim", &self.dim())
            .field("lipschitz", &self.lipschitz)
            .finish()
    }
}

impl FeedbackControl {
    pub fn zero(dim: usize) -> Self {
        FeedbackControl {
            law: ControlLaw::Zero,
            bounds: ControlBounds::wide(dim),
            lipschitz: 0.0,
            clamp_events: Arc::new(AtomicU64::new(0)),
        }
    }

    pub fn from_fn(
        dim: usize,
        lipschitz: f64,
        bounds: ControlBounds,
        f: impl Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        FeedbackControl {
            law: ControlLaw::Func { dim, f: Arc::new(f) },
            bounds,
            lipschitz,
            clamp_events: Arc::new(AtomicU64::new(0)),
        }
    }

    pub fn from_table(table: TimeStateTable, lipschitz: f64, bounds: ControlBounds) -> Self {
        FeedbackControl {
            law: ControlLaw::Table(table),
            bounds,
            lipschitz,
            clamp_events: Arc::new(AtomicU64::new(0)),
        }
    }

    pub fn dim(&self) -> usize {
        match &self.law {
            ControlLaw::Zero => self.bounds.dim(),
            ControlLaw::Func { dim, .. } => *dim,
            ControlLaw::Table(_) => 1,
        }
    }

    pub fn bounds(&self) -> &ControlBounds {
        &self.bounds
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    /// Number of evaluations that hit the control bounds so far.
    pub fn clamp_count(&self) -> u64 {
        self.clamp_events.load(Ordering::Relaxed)
    }

    pub fn eval(&self, t: f64, x: &[f64], out: &mut [f64]) {
        match &self.law {
            ControlLaw::Zero => out.fill(0.0),
            ControlLaw::Func { f, .. } => f(t, x, out),
            ControlLaw::Table(tab) => out[0] = tab.eval(t, x[0]),
        }
        if self.bounds.clamp(out) {
            self.clamp_events.fetch_add(1, Ordering::Relaxed);
        }
    }

    /// Scalar convenience for 1-D controls.
    pub fn eval1(&self, t: f64, x: f64) -> f64 {
        let mut out = [0.0];
        self.eval(t, &[x], &mut out);
        out[0]
    }

    /// Estimate the Lipschitz constant in `x` by difference quotients on a
    /// sample grid. Errors when the estimate exceeds the declared constant
    /// by more than 5%.
    pub fn probe_lipschitz(&self, times: &[f64], xlo: f64, xhi: f64, samples: usize) -> Result<f64> {
        let dim = self.dim();
        let mut worst: f64 = 0.0;
        let step = (xhi - xlo) / samples as f64;
        let mut a = vec![0.0; dim];
        let mut b = vec![0.0; dim];
        for &t in times {
            for i in 0..samples {
                let x0 = xlo + i as f64 * step;
                let x1 = x0 + step;
                self.eval(t, &[x0], &mut a);
                self.eval(t, &[x1], &mut b);
                let diff: f64 = a
                    .iter()
                    .zip(&b)
                    .map(|(p, q)| (p - q) * (p - q))
                    .sum::<f64>()
                    .sqrt();
                worst = worst.max(diff / step);
            }
        }
        if self.lipschitz > 0.0 && worst > self.lipschitz * 1.05 {
            return Err(Error::invalid(format!(
                "control violates its declared Lipschitz bound: probed {worst:.4} > declared {:.4}",
                self.lipschitz
            )));
        }
        Ok(worst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clamping_never_exits_bounds() {
        let bounds = ControlBounds::symmetric(1, 0.5).unwrap();
        let c = FeedbackControl::from_fn(1, 10.0, bounds, |_, x, out| out[0] = 10.0 * x[0]);
        for i in -20..20 {
            let u = c.eval1(0.0, i as f64 * 0.1);
            assert!((-0.5..=0.5).contains(&u));
        }
        assert!(c.clamp_count() > 0);
    }

    #[test]
    fn table_interpolates_periodically() {
        let tau = std::f64::consts::TAU;
        let n = 8;
        let xs: Vec<f64> = (0..n).map(|j| j as f64 * tau / n as f64).collect();
        let vals: Vec<f64> = xs.iter().map(|&x| x.sin()).collect();
        let tab = TimeStateTable::new(vec![0.0, 1.0], xs, vec![vals.clone(), vals], Some(tau))
            .unwrap();
        let c = FeedbackControl::from_table(tab, 1.0, ControlBounds::wide(1));
        // Exact at nodes, and wrapping x by the period changes nothing.
        let h = tau / n as f64;
        assert!((c.eval1(0.5, h) - h.sin()).abs() < 1e-12);
        assert!((c.eval1(0.5, h + tau) - c.eval1(0.5, h)).abs() < 1e-12);
    }

    #[test]
    fn lipschitz_probe_flags_violation() {
        let c = FeedbackControl::from_fn(1, 0.1, ControlBounds::wide(1), |_, x, out| {
            out[0] = x[0]
        });
        assert!(c.probe_lipschitz(&[0.0], -1.0, 1.0, 16).is_err());
        let ok = FeedbackControl::from_fn(1, 1.2, ControlBounds::wide(1), |_, x, out| {
            out[0] = x[0]
        });
        assert!(ok.probe_lipschitz(&[0.0], -1.0, 1.0, 16).is_ok());
    }
}
