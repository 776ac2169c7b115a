//! Seeded Brownian increment bundles with per-(scenario, agent) streams.
//!
//! Every stochastic experiment in the crate draws its randomness through a
//! [`NoiseBundle`]. Each (scenario, agent) pair owns a dedicated counter
//! stream of one ChaCha generator keyed by the seed, so regeneration is
//! bit-identical and the order in which parallel workers consume paths can
//! never change the numbers.

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Initial-state laws. Gaussian is the default used by the experiment
/// configs; all variants have a finite second moment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialLaw {
    Gaussian { mean: Vec<f64>, std: Vec<f64> },
    Uniform { lo: Vec<f64>, hi: Vec<f64> },
    Point { value: Vec<f64> },
}

impl InitialLaw {
    pub fn dim(&self) -> usize {
        match self {
            InitialLaw::Gaussian { mean, .. } => mean.len(),
            InitialLaw::Uniform { lo, .. } => lo.len(),
            InitialLaw::Point { value } => value.len(),
        }
    }

    pub fn mean(&self) -> Vec<f64> {
        match self {
            InitialLaw::Gaussian { mean, .. } => mean.clone(),
            InitialLaw::Uniform { lo, hi } => {
                lo.iter().zip(hi).map(|(a, b)| 0.5 * (a + b)).collect()
            }
            InitialLaw::Point { value } => value.clone(),
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        match self {
            InitialLaw::Gaussian { mean, std } => mean
                .iter()
                .zip(std)
                .map(|(m, s)| m + s * rng.sample::<f64, _>(StandardNormal))
                .collect(),
            InitialLaw::Uniform { lo, hi } => lo
                .iter()
                .zip(hi)
                .map(|(a, b)| rng.gen_range(*a..*b))
                .collect(),
            InitialLaw::Point { value } => value.clone(),
        }
    }
}

/// Laws for the major agent (index 0) and the exchangeable minors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InitialLaws {
    pub major: InitialLaw,
    pub minor: InitialLaw,
}

/// Stream-id namespaces. The bundle uses [`NS_BUNDLE`]; other modules that
/// need auxiliary randomness (MV particle clouds, BSDE oracle paths) derive
/// their own namespaces from the same seed so nothing ever collides.
pub const NS_BUNDLE: u64 = 0;
pub const NS_MV_CLOUD: u64 = 1;
pub const NS_ORACLE: u64 = 2;
pub const NS_AUX: u64 = 3;

/// Derive a sub-seed for an independent experiment unit (SplitMix64 mix of
/// the base seed and a tag); used to give repetitions their own bundles.
pub fn mix_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A ChaCha generator keyed by `seed` on counter stream `(namespace, index)`.
pub fn stream_rng(seed: u64, namespace: u64, index: u64) -> ChaCha12Rng {
    assert!(index < 1 << 48, "stream index out of range");
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream((namespace << 48) | index);
    rng
}

/// Gaussian increments (variance `dt`) for one major path and
/// `agents` minor paths per scenario, plus sampled initial states.
#[derive(Debug, Clone)]
pub struct NoiseBundle {
    scenarios: usize,
    agents: usize,
    steps: usize,
    noise_dim: usize,
    state_dim: usize,
    dt: f64,
    seed: u64,
    /// `[scenario][step * m ..][..m]`
    major: Vec<Vec<f64>>,
    /// `[scenario][agent][step * m ..][..m]`
    minor: Vec<Vec<Vec<f64>>>,
    /// `[agent]` with index 0 the major, length `agents + 1`.
    initial_states: Vec<Vec<f64>>,
    laws: InitialLaws,
}

/// Draw a noise bundle. Stream layout (namespace [`NS_BUNDLE`]):
/// index 0 samples the initial states, then scenario `s` uses
/// `1 + s*(agents+1)` for the major increments and the following `agents`
/// indices for the minors.
pub fn sample_noise(
    grid: &TimeGrid,
    agents: usize,
    scenarios: usize,
    noise_dim: usize,
    seed: u64,
    laws: &InitialLaws,
) -> Result<NoiseBundle> {
    if agents == 0 || scenarios == 0 || noise_dim == 0 {
        return Err(Error::invalid(
            "agents, scenarios and noise dimension must all be at least 1",
        ));
    }
    if laws.major.dim() != laws.minor.dim() {
        return Err(Error::invalid("major and minor initial laws must share a dimension"));
    }
    let steps = grid.steps();
    let dt = grid.dt();
    let sqrt_dt = dt.sqrt();

    let mut init_rng = stream_rng(seed, NS_BUNDLE, 0);
    let mut initial_states = Vec::with_capacity(agents + 1);
    initial_states.push(laws.major.sample(&mut init_rng));
    for _ in 0..agents {
        initial_states.push(laws.minor.sample(&mut init_rng));
    }

    let draw_path = |stream: u64| -> Vec<f64> {
        let mut rng = stream_rng(seed, NS_BUNDLE, stream);
        (0..steps * noise_dim)
            .map(|_| sqrt_dt * rng.sample::<f64, _>(StandardNormal))
            .collect()
    };

    let mut major = Vec::with_capacity(scenarios);
    let mut minor = Vec::with_capacity(scenarios);
    for s in 0..scenarios {
        let base = 1 + (s as u64) * (agents as u64 + 1);
        major.push(draw_path(base));
        minor.push((0..agents).map(|i| draw_path(base + 1 + i as u64)).collect());
    }

    Ok(NoiseBundle {
        scenarios,
        agents,
        steps,
        noise_dim,
        state_dim: laws.major.dim(),
        dt,
        seed,
        major,
        minor,
        initial_states,
        laws: laws.clone(),
    })
}

impl NoiseBundle {
    pub fn scenarios(&self) -> usize {
        self.scenarios
    }

    pub fn agents(&self) -> usize {
        self.agents
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Major increment over `[t_k, t_{k+1})` in scenario `s`.
    pub fn major_increment(&self, scenario: usize, step: usize) -> &[f64] {
        let m = self.noise_dim;
        &self.major[scenario][step * m..(step + 1) * m]
    }

    /// Minor agent `i` (0-based) increment over `[t_k, t_{k+1})`.
    pub fn minor_increment(&self, scenario: usize, agent: usize, step: usize) -> &[f64] {
        let m = self.noise_dim;
        &self.minor[scenario][agent][step * m..(step + 1) * m]
    }

    /// Initial state; index 0 is the major agent, `1..=agents` the minors.
    pub fn initial_state(&self, agent: usize) -> &[f64] {
        &self.initial_states[agent]
    }

    pub fn initial_states(&self) -> &[Vec<f64>] {
        &self.initial_states
    }

    pub fn laws(&self) -> &InitialLaws {
        &self.laws
    }

    /// Flattened `[steps * m]` increment buffer for the major path.
    pub fn major_path_increments(&self, scenario: usize) -> &[f64] {
        &self.major[scenario]
    }

    /// Flattened `[steps * m]` increment buffer for one minor agent.
    pub fn minor_path_increments(&self, scenario: usize, agent: usize) -> &[f64] {
        &self.minor[scenario][agent]
    }

    /// Accumulated major path of `w0` (not scaled by any diffusion), one
    /// value per grid node; used by tests and by Dirac measure flows.
    pub fn major_cumulative(&self, scenario: usize) -> Vec<Vec<f64>> {
        let m = self.noise_dim;
        let mut out = vec![vec![0.0; m]];
        let mut acc = vec![0.0; m];
        for k in 0..self.steps {
            for (j, a) in acc.iter_mut().enumerate() {
                *a += self.major[scenario][k * m + j];
            }
            out.push(acc.clone());
        }
        out
    }
}
