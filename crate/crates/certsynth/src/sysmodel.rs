//! Switched stochastic linear control systems: per-mode `(A, B, Sigma)`
//! dynamics with optional affine drift, transition graphs with dwell times,
//! time-triggered mode schedules, and exact zero-order-hold discretization
//! of the nominal (diffusionless) dynamics.

use crate::mtl::{MtlError, SignalTrace};
use crate::numkernel::{self, Matrix};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SysError {
    #[error("step {dt} does not divide dwell time {dwell} of schedule entry {index}")]
    ScheduleMisaligned { dt: f64, dwell: f64, index: usize },
    #[error("schedule references unknown mode {mode}")]
    UnknownMode { mode: usize },
    #[error("transition ({from}, {to}) is not in the edge set")]
    IllegalTransition { from: usize, to: usize },
    #[error("dwell time {dwell} is below the minimum {min}")]
    DwellTooShort { dwell: f64, min: f64 },
    #[error("dimension mismatch: {context}")]
    Dimension { context: String },
    #[error(transparent)]
    Numeric(#[from] numkernel::NumError),
    #[error(transparent)]
    Trace(#[from] MtlError),
}

pub type SysResult<T> = Result<T, SysError>;

/// One mode of a switched system: `dx = (A x + B u + d) dt + Sigma dw`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mode {
    pub name: String,
    pub a: Matrix,
    pub b: Matrix,
    pub sigma: Matrix,
    /// Optional constant drift (disturbance offsets, scheduled ramps).
    #[serde(default)]
    pub drift: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SwitchedLinearSystem {
    pub modes: Vec<Mode>,
    pub edges: Vec<(usize, usize)>,
    pub min_dwell: f64,
    pub state_names: Vec<String>,
    pub input_names: Vec<String>,
    /// Named drift directions for scripted disturbance injection.
    #[serde(default)]
    pub disturbance_channels: BTreeMap<String, Vec<f64>>,
}

impl SwitchedLinearSystem {
    pub fn state_dim(&self) -> usize {
        self.modes[0].a.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.modes[0].b.cols()
    }

    pub fn noise_dim(&self) -> usize {
        self.modes[0].sigma.cols()
    }

    pub fn validate(&self) -> SysResult<()> {
        if self.modes.is_empty() {
            return Err(SysError::Dimension { context: "no modes".into() });
        }
        if self.min_dwell <= 0.0 {
            return Err(SysError::Dimension { context: "min_dwell must be positive".into() });
        }
        let n = self.state_dim();
        let p = self.input_dim();
        let m = self.noise_dim();
        for (i, mode) in self.modes.iter().enumerate() {
            let ok = mode.a.rows() == n
                && mode.a.cols() == n
                && mode.b.rows() == n
                && mode.b.cols() == p
                && mode.sigma.rows() == n
                && mode.sigma.cols() == m
                && mode.drift.as_ref().map_or(true, |d| d.len() == n);
            if !ok {
                return Err(SysError::Dimension { context: format!("mode {i} dimensions") });
            }
            if !mode.a.all_finite() || !mode.b.all_finite() || !mode.sigma.all_finite() {
                return Err(SysError::Dimension { context: format!("mode {i} has non-finite entries") });
            }
        }
        for &(q, qp) in &self.edges {
            if q >= self.modes.len() || qp >= self.modes.len() {
                return Err(SysError::UnknownMode { mode: q.max(qp) });
            }
        }
        if self.state_names.len() != n || self.input_names.len() != p {
            return Err(SysError::Dimension { context: "name list lengths".into() });
        }
        Ok(())
    }
}

/// Time-triggered mode sequence with dwell times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSchedule {
    /// `(mode index, dwell seconds)` per schedule position.
    pub entries: Vec<(usize, f64)>,
}

impl ModeSchedule {
    pub fn single(mode: usize, horizon: f64) -> Self {
        ModeSchedule { entries: vec![(mode, horizon)] }
    }

    pub fn total_time(&self) -> f64 {
        self.entries.iter().map(|(_, t)| t).sum()
    }

    /// Absolute switch times, excluding 0 and including the final end time.
    pub fn boundaries(&self) -> Vec<f64> {
        let mut acc = 0.0;
        self.entries
            .iter()
            .map(|(_, t)| {
                acc += t;
                acc
            })
            .collect()
    }

    /// Absolute start time of each schedule position.
    pub fn segment_starts(&self) -> Vec<f64> {
        let mut out = vec![0.0];
        let mut acc = 0.0;
        for (_, t) in &self.entries[..self.entries.len() - 1] {
            acc += t;
            out.push(acc);
        }
        out
    }

    /// Schedule position active at time `t` (last position at/after the end).
    pub fn position_at(&self, t: f64) -> usize {
        let mut acc = 0.0;
        for (i, (_, dwell)) in self.entries.iter().enumerate() {
            acc += dwell;
            if t < acc - 1e-12 {
                return i;
            }
        }
        self.entries.len() - 1
    }

    pub fn validate(&self, sys: &SwitchedLinearSystem) -> SysResult<()> {
        if self.entries.is_empty() {
            return Err(SysError::Dimension { context: "empty schedule".into() });
        }
        for &(q, dwell) in &self.entries {
            if q >= sys.modes.len() {
                return Err(SysError::UnknownMode { mode: q });
            }
            if dwell < sys.min_dwell - 1e-12 {
                return Err(SysError::DwellTooShort { dwell, min: sys.min_dwell });
            }
        }
        for w in self.entries.windows(2) {
            let (q, qp) = (w[0].0, w[1].0);
            if !sys.edges.contains(&(q, qp)) {
                return Err(SysError::IllegalTransition { from: q, to: qp });
            }
        }
        Ok(())
    }
}

/// An ellipsoidal initial set `{x | (x - center)^T M (x - center) <= radius}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InitialBall {
    pub center: Vec<f64>,
    pub radius: f64,
    pub metric: Matrix,
}

impl InitialBall {
    pub fn contains(&self, x: &[f64]) -> bool {
        let diff: Vec<f64> = x.iter().zip(&self.center).map(|(a, b)| a - b).collect();
        self.metric.quad_form(&diff) <= self.radius + 1e-12
    }
}

/// Exact per-step discretization of a schedule at step `dt`: each schedule
/// position carries `(Ad, Bd, dd)` and steps map to positions.
#[derive(Debug, Clone)]
pub struct Discretized {
    pub dt: f64,
    /// Per schedule position: ZOH step matrices and discrete drift.
    pub per_position: Vec<(Matrix, Matrix, Vec<f64>)>,
    /// Schedule position of each step `j` (state sample `j` to `j+1`).
    pub step_position: Vec<usize>,
    /// Number of state samples (steps + 1).
    pub n_samples: usize,
}

impl Discretized {
    pub fn n_steps(&self) -> usize {
        self.step_position.len()
    }

    pub fn step(&self, j: usize) -> (&Matrix, &Matrix, &[f64]) {
        let pos = self.step_position[j];
        let (ad, bd, dd) = &self.per_position[pos];
        (ad, bd, dd)
    }
}

/// ZOH-discretize every mode visited by the schedule. `dt` must divide each
/// dwell time; mode boundaries land exactly on samples.
pub fn discretize(
    sys: &SwitchedLinearSystem,
    sched: &ModeSchedule,
    dt: f64,
) -> SysResult<Discretized> {
    sys.validate()?;
    sched.validate(sys)?;
    assert!(dt > 0.0);
    let n = sys.state_dim();
    let mut per_position = Vec::new();
    let mut step_position = Vec::new();
    for (i, &(q, dwell)) in sched.entries.iter().enumerate() {
        let steps = dwell / dt;
        if (steps - steps.round()).abs() > 1e-9 * (1.0 + steps.abs()) {
            return Err(SysError::ScheduleMisaligned { dt, dwell, index: i });
        }
        let steps = steps.round() as usize;
        let mode = &sys.modes[q];
        // Fold the affine drift in as a constant-1 input channel.
        let drift = mode.drift.clone().unwrap_or_else(|| vec![0.0; n]);
        let b_aug = mode.b.hcat(&Matrix::from_column(&drift));
        let (ad, bd_aug) = numkernel::expm_with_input(&mode.a, &b_aug, dt)?;
        let bd = bd_aug.block(0, 0, n, sys.input_dim());
        let dd = bd_aug.column(sys.input_dim());
        per_position.push((ad, bd, dd));
        step_position.extend(std::iter::repeat(i).take(steps));
    }
    let n_samples = step_position.len() + 1;
    Ok(Discretized { dt, per_position, step_position, n_samples })
}

/// Exact ZOH propagation of the nominal (deterministic) switched system
/// under a sampled zero-order-hold input. The input slice must supply one
/// sample per step; the state is continuous across mode switches.
pub fn integrate_nominal(
    sys: &SwitchedLinearSystem,
    sched: &ModeSchedule,
    x0: &[f64],
    u: &[Vec<f64>],
    dt: f64,
) -> SysResult<SignalTrace> {
    let disc = discretize(sys, sched, dt)?;
    integrate_discretized(sys, sched, &disc, x0, u)
}

/// Propagate using a precomputed discretization.
pub fn integrate_discretized(
    sys: &SwitchedLinearSystem,
    sched: &ModeSchedule,
    disc: &Discretized,
    x0: &[f64],
    u: &[Vec<f64>],
) -> SysResult<SignalTrace> {
    let n = sys.state_dim();
    let p = sys.input_dim();
    if x0.len() != n {
        return Err(SysError::Dimension { context: "x0 length".into() });
    }
    let steps = disc.n_steps();
    if u.len() < steps {
        return Err(SysError::Dimension {
            context: format!("input has {} samples, need {steps}", u.len()),
        });
    }
    let mut states = Vec::with_capacity(steps + 1);
    let mut inputs = Vec::with_capacity(steps + 1);
    let mut modes = Vec::with_capacity(steps + 1);
    let mut x = x0.to_vec();
    states.push(x.clone());
    inputs.push(u[0].clone());
    modes.push(sched.entries[disc.step_position[0]].0);
    for j in 0..steps {
        let (ad, bd, dd) = disc.step(j);
        if u[j].len() != p {
            return Err(SysError::Dimension { context: format!("input sample {j} length") });
        }
        let mut next = ad.matvec(&x);
        let bu = bd.matvec(&u[j]);
        for i in 0..n {
            next[i] += bu[i] + dd[i];
        }
        x = next;
        states.push(x.clone());
        let held = u.get(j + 1).cloned().unwrap_or_else(|| u[j].clone());
        inputs.push(held);
        let pos = if j + 1 < steps { disc.step_position[j + 1] } else { disc.step_position[j] };
        modes.push(sched.entries[pos].0);
    }
    let times: Vec<f64> = (0..=steps).map(|j| j as f64 * disc.dt).collect();
    Ok(SignalTrace::new(times, states, inputs, modes, disc.dt)?)
}
