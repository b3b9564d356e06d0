//! Stochastic simulation and statistical verification: Euler-Maruyama (or
//! drift-exact) integration of the switched SDE, Monte Carlo batches under
//! feedforward or feedback control, scripted disturbance injection, and
//! satisfaction-rate and excursion statistics.
//!
//! Randomness is counter-based: every normal draw is a pure function of
//! `(seed, stream, path, step, channel)`, so batches are reproducible and
//! paths are independent regardless of scheduling order.

use crate::bisim::BisimCertificate;
use crate::feedback::{self, LawState, NominalLibrary};
use crate::mtl::{self, MtlError, MtlFormula, SignalTrace};
use crate::numkernel::{cholesky, norm2, Matrix, NumError};
use crate::sysmodel::{self, ModeSchedule, SwitchedLinearSystem, SysError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("config invalid: {context}")]
    BadConfig { context: String },
    #[error("unknown disturbance channel `{name}`")]
    UnknownChannel { name: String },
    #[error(transparent)]
    System(#[from] SysError),
    #[error(transparent)]
    Formula(#[from] MtlError),
    #[error(transparent)]
    Numeric(#[from] NumError),
}

pub type SimResult<T> = Result<T, SimError>;

// ------------------------------------------------------------------
// Counter-based RNG
// ------------------------------------------------------------------

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

#[inline]
fn counter_u64(seed: u64, stream: u64, path: u64, step: u64, channel: u64) -> u64 {
    let mut h = splitmix64(seed ^ 0xA076_1D64_78BD_642F);
    h = splitmix64(h ^ stream.wrapping_mul(0xE703_7ED1_A0B4_28DB));
    h = splitmix64(h ^ path);
    h = splitmix64(h ^ step.wrapping_mul(0x8EBC_6AF0_9C88_C6E3));
    splitmix64(h ^ channel.wrapping_mul(0x5894_65E1_19C8_91E5))
}

#[inline]
fn to_unit_open(bits: u64) -> f64 {
    // (0, 1]: never zero so logs are safe.
    (((bits >> 11) as f64) + 1.0) / ((1u64 << 53) as f64 + 1.0)
}

/// Standard normal draw as a pure function of the counters (Box-Muller).
pub fn normal_draw(seed: u64, stream: u64, path: u64, step: u64, channel: u64) -> f64 {
    let u1 = to_unit_open(counter_u64(seed, stream, path, step, channel.wrapping_mul(2)));
    let u2 = to_unit_open(counter_u64(seed, stream, path, step, channel.wrapping_mul(2) ^ 1));
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Uniform draw in [0, 1) as a pure function of the counters.
pub fn uniform_draw(seed: u64, stream: u64, path: u64, step: u64, channel: u64) -> f64 {
    (counter_u64(seed, stream, path, step, channel) >> 11) as f64 / (1u64 << 53) as f64
}

const STREAM_NOISE: u64 = 1;
const STREAM_INIT: u64 = 2;

// ------------------------------------------------------------------
// Configuration
// ------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// Explicit Euler-Maruyama drift step.
    #[default]
    Euler,
    /// Drift propagated by the exact ZOH maps; noise added as in
    /// Euler-Maruyama. Required for stiff modes whose fast eigenvalues
    /// destabilize the explicit step at practical step sizes.
    ExactDrift,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Disturbance {
    pub start: f64,
    pub end: f64,
    pub channel: String,
    pub magnitude: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum InitialSampler {
    #[default]
    Center,
    UniformInBall,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub horizon: f64,
    pub paths: usize,
    pub seed: u64,
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default)]
    pub disturbances: Vec<Disturbance>,
    #[serde(default)]
    pub initial: InitialSampler,
}

impl SimConfig {
    fn validate(&self, sched: &ModeSchedule) -> SimResult<()> {
        if self.dt <= 0.0 {
            return Err(SimError::BadConfig { context: "dt must be positive".into() });
        }
        if self.paths == 0 {
            return Err(SimError::BadConfig { context: "paths must be >= 1".into() });
        }
        let steps = self.horizon / self.dt;
        if (steps - steps.round()).abs() > 1e-9 {
            return Err(SimError::BadConfig { context: "dt must divide the horizon".into() });
        }
        if self.horizon > sched.total_time() + 1e-9 {
            return Err(SimError::BadConfig {
                context: format!(
                    "horizon {} exceeds the schedule total {}",
                    self.horizon,
                    sched.total_time()
                ),
            });
        }
        for &(_, dwell) in &sched.entries {
            let k = dwell / self.dt;
            if (k - k.round()).abs() > 1e-9 {
                return Err(SimError::BadConfig { context: "dt must divide every dwell".into() });
            }
        }
        Ok(())
    }
}

/// Controller attachment for a batch.
#[derive(Clone, Copy)]
pub enum ControllerSpec<'a> {
    None,
    /// Per-simulation-step inputs (ZOH).
    Feedforward(&'a [Vec<f64>]),
    Feedback(&'a NominalLibrary),
}

enum ControllerState {
    None,
    Feedforward,
    Feedback(LawState),
}

// ------------------------------------------------------------------
// Single-path simulation
// ------------------------------------------------------------------

/// Simulate one path of the switched SDE under the given controller.
/// Deterministic in `(config.seed, path_index)`.
pub fn simulate_sde(
    sys: &SwitchedLinearSystem,
    sched: &ModeSchedule,
    x0: &[f64],
    controller: ControllerSpec,
    config: &SimConfig,
    path_index: u64,
) -> SimResult<SignalTrace> {
    config.validate(sched)?;
    sys.validate()?;
    for d in &config.disturbances {
        if !sys.disturbance_channels.contains_key(&d.channel) {
            return Err(SimError::UnknownChannel { name: d.channel.clone() });
        }
    }
    let n = sys.state_dim();
    let p = sys.input_dim();
    let m = sys.noise_dim();
    let dt = config.dt;
    let steps = (config.horizon / dt).round() as usize;
    let sqrt_dt = dt.sqrt();

    // Exact ZOH maps per schedule position (drift-exact scheme), plus the
    // exact one-step integral of each disturbance channel direction.
    let disc = if config.scheme == Scheme::ExactDrift {
        Some(sysmodel::discretize(sys, sched, dt)?)
    } else {
        None
    };
    let mut channel_maps: Vec<(String, Vec<Vec<f64>>)> = Vec::new();
    if config.scheme == Scheme::ExactDrift {
        for d in &config.disturbances {
            if channel_maps.iter().any(|(name, _)| name == &d.channel) {
                continue;
            }
            let g = &sys.disturbance_channels[&d.channel];
            let mut per_pos = Vec::new();
            for &(q, _) in &sched.entries {
                let (_, bd) = crate::numkernel::expm_with_input(
                    &sys.modes[q].a,
                    &Matrix::from_column(g),
                    dt,
                )?;
                per_pos.push(bd.column(0));
            }
            channel_maps.push((d.channel.clone(), per_pos));
        }
    }

    let boundaries = sched.boundaries();
    let mut pos = 0usize;
    let mut ctrl = match controller {
        ControllerSpec::None => ControllerState::None,
        ControllerSpec::Feedforward(_) => ControllerState::Feedforward,
        ControllerSpec::Feedback(lib) => ControllerState::Feedback(lib.initial_state(x0)),
    };

    let mut x = x0.to_vec();
    let mut states = Vec::with_capacity(steps + 1);
    let mut inputs = Vec::with_capacity(steps + 1);
    let mut modes = Vec::with_capacity(steps + 1);
    states.push(x.clone());
    modes.push(sched.entries[0].0);

    for j in 0..steps {
        let t = j as f64 * dt;
        // Advance the schedule position at boundaries.
        while pos + 1 < sched.entries.len() && t >= boundaries[pos] - 1e-12 {
            pos += 1;
            if let ControllerState::Feedback(ls) = &mut ctrl {
                *ls = feedback::on_position_change(*ls);
            }
        }
        let (q, _) = sched.entries[pos];
        let mode = &sys.modes[q];
        let local_step = j - (if pos == 0 { 0 } else { (boundaries[pos - 1] / dt).round() as usize });

        let u: Vec<f64> = match (&mut ctrl, controller) {
            (ControllerState::None, _) => vec![0.0; p],
            (ControllerState::Feedforward, ControllerSpec::Feedforward(us)) => {
                us.get(j).cloned().unwrap_or_else(|| vec![0.0; p])
            }
            (ControllerState::Feedback(ls), ControllerSpec::Feedback(lib)) => {
                let (u, next) = feedback::law_eval(lib, *ls, &x, pos, local_step);
                *ls = next;
                u
            }
            _ => unreachable!(),
        };

        // Drift step.
        let mut next = match &disc {
            Some(d) => {
                let (ad, bd, dd) = d.step(j);
                let mut v = ad.matvec(&x);
                let bu = bd.matvec(&u);
                for i in 0..n {
                    v[i] += bu[i] + dd[i];
                }
                v
            }
            None => {
                let mut v = x.clone();
                let ax = mode.a.matvec(&x);
                let bu = mode.b.matvec(&u);
                let drift = mode.drift.clone().unwrap_or_else(|| vec![0.0; n]);
                for i in 0..n {
                    v[i] += (ax[i] + bu[i] + drift[i]) * dt;
                }
                v
            }
        };

        // Scripted disturbances.
        for d in &config.disturbances {
            if t >= d.start - 1e-12 && t < d.end - 1e-12 {
                match &disc {
                    Some(_) => {
                        let per_pos = &channel_maps
                            .iter()
                            .find(|(name, _)| name == &d.channel)
                            .unwrap()
                            .1[pos];
                        for i in 0..n {
                            next[i] += per_pos[i] * d.magnitude;
                        }
                    }
                    None => {
                        let g = &sys.disturbance_channels[&d.channel];
                        for i in 0..n {
                            next[i] += g[i] * d.magnitude * dt;
                        }
                    }
                }
            }
        }

        // Additive noise.
        for ch in 0..m {
            let eta = normal_draw(config.seed, STREAM_NOISE, path_index, j as u64, ch as u64);
            let col = mode.sigma.column(ch);
            for i in 0..n {
                next[i] += col[i] * sqrt_dt * eta;
            }
        }

        x = next;
        states.push(x.clone());
        inputs.push(u);
        modes.push(q);
    }
    // Hold the last input for the final sample.
    let last_u = inputs.last().cloned().unwrap_or_else(|| vec![0.0; p]);
    inputs.push(last_u);

    let times: Vec<f64> = (0..=steps).map(|j| j as f64 * dt).collect();
    Ok(SignalTrace::new(times, states, inputs, modes, dt)?)
}

// ------------------------------------------------------------------
// Batches
// ------------------------------------------------------------------

/// Initial-state sampling for a batch.
#[derive(Debug, Clone)]
pub struct InitialSpec {
    pub center: Vec<f64>,
    /// Ellipsoid metric and level for `UniformInBall`.
    pub metric: Option<(Matrix, f64)>,
}

impl InitialSpec {
    fn sample(&self, sampler: InitialSampler, seed: u64, path: u64) -> SimResult<Vec<f64>> {
        match sampler {
            InitialSampler::Center => Ok(self.center.clone()),
            InitialSampler::UniformInBall => {
                let (metric, level) = self.metric.as_ref().ok_or(SimError::BadConfig {
                    context: "uniform-in-ball sampling needs a metric".into(),
                })?;
                if *level <= 0.0 {
                    return Ok(self.center.clone());
                }
                let n = self.center.len();
                let mut y: Vec<f64> =
                    (0..n).map(|i| normal_draw(seed, STREAM_INIT, path, i as u64, 0)).collect();
                let norm = norm2(&y).max(1e-300);
                let radius = uniform_draw(seed, STREAM_INIT, path, n as u64, 1).powf(1.0 / n as f64);
                y.iter_mut().for_each(|v| *v = *v / norm * radius);
                // Map the unit ball into the ellipsoid via L^-T.
                let l = cholesky(metric)?;
                let mut z = y;
                for i in (0..n).rev() {
                    let mut s = z[i];
                    for k in (i + 1)..n {
                        s -= l[(k, i)] * z[k];
                    }
                    z[i] = s / l[(i, i)];
                }
                Ok(self
                    .center
                    .iter()
                    .zip(&z)
                    .map(|(c, v)| c + v * level.sqrt())
                    .collect())
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BatchReport {
    pub paths: usize,
    pub satisfied: usize,
    pub satisfaction_rate: f64,
    pub min_robustness: f64,
    pub mean_robustness: f64,
    pub robustness: Vec<f64>,
    /// Per-path supremum of the certificate form against the nominal, when
    /// a nominal trace and certificate were supplied.
    pub sup_excursion: Option<Vec<f64>>,
    pub seed: u64,
}

pub struct BatchInputs<'a> {
    pub sys: &'a SwitchedLinearSystem,
    pub sched: &'a ModeSchedule,
    pub formula: &'a MtlFormula,
    pub initial: InitialSpec,
    pub controller: ControllerSpec<'a>,
    /// Nominal trace on the simulation grid, enabling excursion statistics.
    pub nominal: Option<&'a SignalTrace>,
    pub certificate: Option<&'a BisimCertificate>,
}

fn run_one_path(
    inputs: &BatchInputs,
    config: &SimConfig,
    path: u64,
) -> SimResult<(f64, Option<f64>)> {
    let x0 = inputs.initial.sample(config.initial, config.seed, path)?;
    let trace = simulate_sde(inputs.sys, inputs.sched, &x0, inputs.controller, config, path)?;
    let rob = mtl::robustness(inputs.formula, &trace, 0.0)?;
    let excursion = match (inputs.nominal, inputs.certificate) {
        (Some(nominal), Some(cert)) => {
            Some(sup_excursion(&trace, nominal, cert, inputs.sched))
        }
        _ => None,
    };
    Ok((rob, excursion))
}

/// Supremum over the trace of the certificate form between the path and the
/// nominal, with the per-position exponential weight in local time.
fn sup_excursion(
    trace: &SignalTrace,
    nominal: &SignalTrace,
    cert: &BisimCertificate,
    sched: &ModeSchedule,
) -> f64 {
    let starts = sched.segment_starts();
    let mut sup = 0.0f64;
    let n_shared = trace.len().min(nominal.len());
    for j in 0..n_shared {
        let t = trace.times[j];
        let pos = sched.position_at(t);
        let mc = &cert.modes[sched.entries[pos].0];
        let local = t - starts[pos];
        let diff: Vec<f64> = trace.states[j]
            .iter()
            .zip(&nominal.states[j])
            .map(|(a, b)| a - b)
            .collect();
        let phi = mc.m.quad_form(&diff) * (mc.mu * local).exp();
        sup = sup.max(phi);
    }
    sup
}

/// Run a Monte Carlo batch with per-path derived randomness. Identical
/// `(inputs, config)` produce identical reports, independent of the number
/// of worker threads.
pub fn run_batch(inputs: &BatchInputs, config: &SimConfig) -> SimResult<BatchReport> {
    config.validate(inputs.sched)?;
    let results = map_paths(config.paths, |path| run_one_path(inputs, config, path as u64));
    let mut robustness = Vec::with_capacity(config.paths);
    let mut excursions = Vec::new();
    for r in results {
        let (rob, exc) = r?;
        robustness.push(rob);
        if let Some(e) = exc {
            excursions.push(e);
        }
    }
    Ok(finalize_report(robustness, excursions, config.seed))
}

/// Sequential batch runner, available regardless of the `parallel` feature
/// (also the reference implementation the parallel path must agree with).
pub fn run_batch_sequential(inputs: &BatchInputs, config: &SimConfig) -> SimResult<BatchReport> {
    config.validate(inputs.sched)?;
    let results: Vec<_> =
        (0..config.paths).map(|path| run_one_path(inputs, config, path as u64)).collect();
    let mut robustness = Vec::with_capacity(config.paths);
    let mut excursions = Vec::new();
    for r in results {
        let (rob, exc) = r?;
        robustness.push(rob);
        if let Some(e) = exc {
            excursions.push(e);
        }
    }
    Ok(finalize_report(robustness, excursions, config.seed))
}

fn finalize_report(robustness: Vec<f64>, excursions: Vec<f64>, seed: u64) -> BatchReport {
    let paths = robustness.len();
    let satisfied = robustness.iter().filter(|r| **r >= 0.0).count();
    let min_robustness = robustness.iter().copied().fold(f64::INFINITY, f64::min);
    let mean_robustness = robustness.iter().sum::<f64>() / paths as f64;
    BatchReport {
        paths,
        satisfied,
        satisfaction_rate: satisfied as f64 / paths as f64,
        min_robustness,
        mean_robustness,
        robustness,
        sup_excursion: if excursions.is_empty() { None } else { Some(excursions) },
        seed,
    }
}

#[cfg(feature = "parallel")]
fn map_paths<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_paths<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    (0..n).map(f).collect()
}

/// One row of the excursion table: empirical exceedance of level `gamma`
/// against the certificate bound `alpha T / gamma`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExcursionRow {
    pub gamma: f64,
    pub empirical: f64,
    pub bound: f64,
    /// Binomial standard error of the empirical frequency.
    pub sigma_hat: f64,
}

/// Empirical exceedance frequencies of the per-path supremum against a
/// gamma grid, with the certificate tail bound for comparison.
pub fn excursion_stats(
    sup_excursion: &[f64],
    alpha: f64,
    horizon: f64,
    gamma_grid: &[f64],
) -> Vec<ExcursionRow> {
    let n = sup_excursion.len().max(1) as f64;
    gamma_grid
        .iter()
        .map(|&gamma| {
            let count = sup_excursion.iter().filter(|s| **s >= gamma).count();
            let p = count as f64 / n;
            ExcursionRow {
                gamma,
                empirical: p,
                bound: (alpha * horizon / gamma).min(1.0),
                sigma_hat: (p * (1.0 - p) / n).sqrt(),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests;
