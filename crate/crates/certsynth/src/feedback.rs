//! Data-driven feedback law: a library of nominal trajectories with
//! per-mode input extensions, time-varying ellipsoidal regions around every
//! library point, and the online lookup that re-anchors the active
//! trajectory index whenever the state enters another region.

use crate::bisim::{ellipsoid_from_ball, BisimCertificate, BisimError};
use crate::mtl::{self, fragment_blocks, MtlError, MtlFormula};
use crate::numkernel::Matrix;
use crate::synth::{self, SynthError, SynthesisProblem};
use crate::sysmodel::{self, ModeSchedule, SysError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FeedbackError {
    #[error("extension width rho={rho} must lie in (0, {max})")]
    BadRho { rho: f64, max: f64 },
    #[error("library needs at least one center")]
    NoCenters,
    #[error("every center failed synthesis; last error: {last}")]
    AllCentersFailed { last: String },
    #[error("simulation step {dt_sim} must divide the synthesis step {dt_synth}")]
    GridMismatch { dt_sim: f64, dt_synth: f64 },
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    System(#[from] SysError),
    #[error(transparent)]
    Certificate(#[from] BisimError),
    #[error(transparent)]
    Formula(#[from] MtlError),
}

pub type FeedbackResult<T> = Result<T, FeedbackError>;

/// One library member: a nominal trajectory on the simulation grid plus the
/// per-position extension segments.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LibraryTrace {
    pub center: Vec<f64>,
    /// States at every simulation sample, length `total_steps + 1`.
    pub states: Vec<Vec<f64>>,
    /// Inputs at every simulation step, length `total_steps`.
    pub inputs: Vec<Vec<f64>>,
    /// Per schedule position: states at local indices `N_t+1 ..= N_t+W`.
    pub ext_states: Vec<Vec<Vec<f64>>>,
    /// Per schedule position: inputs at local steps `N_t .. N_t+W`.
    pub ext_inputs: Vec<Vec<Vec<f64>>>,
    /// Validated robustness of the tightened formula on this trace.
    pub robustness: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NominalLibrary {
    pub traces: Vec<LibraryTrace>,
    pub schedule: ModeSchedule,
    pub dt: f64,
    pub rho: f64,
    /// Certificate quantities the regions are built from.
    pub metric: Vec<Matrix>,
    pub mu: Vec<f64>,
    pub r: Vec<f64>,
    pub gamma_hat: f64,
    /// First simulation step of each schedule position.
    pub pos_start: Vec<usize>,
    /// Steps per schedule position.
    pub pos_steps: Vec<usize>,
    /// Centers that failed synthesis, with the failure text.
    pub skipped: Vec<(usize, String)>,
}

/// Online lookup state: active trace and data pointer within the mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LawState {
    pub ell: usize,
    pub jhat: usize,
}

impl NominalLibrary {
    pub fn n_traces(&self) -> usize {
        self.traces.len()
    }

    pub fn extension_steps(&self) -> usize {
        (self.rho / self.dt).round() as usize
    }

    /// Shrinking ball level at local index `j` of schedule position `pos`.
    pub fn level_at(&self, pos: usize, j: usize) -> f64 {
        let (q, _) = self.schedule.entries[pos];
        self.r[pos] * (-self.mu[q] * (j as f64 * self.dt) / 2.0).exp()
    }

    /// Nominal state of trace `ell` at local index `i` of position `pos`
    /// (extension indices beyond the dwell are served from the extension).
    pub fn point(&self, ell: usize, pos: usize, i: usize) -> &[f64] {
        let n_t = self.pos_steps[pos];
        if i <= n_t {
            &self.traces[ell].states[self.pos_start[pos] + i]
        } else {
            let k = (i - n_t - 1).min(self.traces[ell].ext_states[pos].len() - 1);
            &self.traces[ell].ext_states[pos][k]
        }
    }

    /// Input of trace `ell` at local step `i` of position `pos`.
    pub fn input(&self, ell: usize, pos: usize, i: usize) -> &[f64] {
        let n_t = self.pos_steps[pos];
        if i < n_t {
            &self.traces[ell].inputs[self.pos_start[pos] + i]
        } else {
            let k = (i - n_t).min(self.traces[ell].ext_inputs[pos].len() - 1);
            &self.traces[ell].ext_inputs[pos][k]
        }
    }

    fn metric_at(&self, pos: usize) -> &Matrix {
        &self.metric[self.schedule.entries[pos].0]
    }

    /// Initial trace assignment: lowest center whose initial ball contains
    /// the state, else the nearest center in the certificate metric.
    pub fn initial_state(&self, x: &[f64]) -> LawState {
        let m = self.metric_at(0);
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (ell, tr) in self.traces.iter().enumerate() {
            let diff: Vec<f64> = x.iter().zip(&tr.center).map(|(a, b)| a - b).collect();
            let d = m.quad_form(&diff);
            if d <= self.r[0] + 1e-12 {
                return LawState { ell, jhat: 0 };
            }
            if d < best_d {
                best_d = d;
                best = ell;
            }
        }
        LawState { ell: best, jhat: 0 }
    }
}

/// Region match result: trace and local time index.
pub type RegionMatch = Option<(usize, usize)>;

/// Ordered membership test over the time-varying regions at wall index
/// `j_t` of position `pos`. The active trace's inflated neighbourhoods take
/// priority (scanned from the law's data pointer upward); among other
/// traces, higher trace indices and later time indices win.
pub fn region_membership(
    lib: &NominalLibrary,
    state: LawState,
    x: &[f64],
    pos: usize,
    j_t: usize,
) -> RegionMatch {
    let w = lib.extension_steps();
    let n_t = lib.pos_steps[pos];
    let i_max = (j_t + w).min(n_t + w);
    let metric = lib.metric_at(pos);
    let level = lib.level_at(pos, j_t);
    let inflated = {
        let s = level.sqrt() + lib.gamma_hat.sqrt();
        s * s
    };

    // Active trace: earliest inflated neighbourhood at or after the pointer.
    let own_lo = state.jhat.max(j_t);
    for i in own_lo..=i_max {
        let p = lib.point(state.ell, pos, i);
        let diff: Vec<f64> = x.iter().zip(p).map(|(a, b)| a - b).collect();
        if metric.quad_form(&diff) <= inflated {
            return Some((i, state.ell));
        }
    }

    // Other traces: higher ell first, later indices first.
    for ell in (0..lib.n_traces()).rev() {
        if ell == state.ell {
            continue;
        }
        for i in (j_t..=i_max).rev() {
            let p = lib.point(ell, pos, i);
            let diff: Vec<f64> = x.iter().zip(p).map(|(a, b)| a - b).collect();
            if metric.quad_form(&diff) <= level {
                return Some((i, ell));
            }
        }
    }
    None
}

/// Evaluate the lookup law at wall index `j_t` of schedule position `pos`,
/// returning the input and the updated law state.
pub fn law_eval(
    lib: &NominalLibrary,
    state: LawState,
    x: &[f64],
    pos: usize,
    j_t: usize,
) -> (Vec<f64>, LawState) {
    let w = lib.extension_steps();
    let n_t = lib.pos_steps[pos];
    let last_step = n_t + w - 1;
    match region_membership(lib, state, x, pos, j_t) {
        Some((i, ell)) => {
            let u = lib.input(ell, pos, i.min(last_step)).to_vec();
            (u, LawState { ell, jhat: (i + 1).min(n_t + w) })
        }
        None => {
            let u = lib.input(state.ell, pos, state.jhat.min(last_step)).to_vec();
            (u, LawState { ell: state.ell, jhat: (state.jhat + 1).min(n_t + w) })
        }
    }
}

/// Reset the data pointer at a mode boundary, keeping the active trace.
pub fn on_position_change(state: LawState) -> LawState {
    LawState { ell: state.ell, jhat: 0 }
}

/// Deterministic center placement: the ball center plus `n - 1` boundary
/// points in pseudo-random metric directions.
pub fn default_centers(
    n: usize,
    center: &[f64],
    metric: &Matrix,
    level: f64,
    seed: u64,
) -> FeedbackResult<Vec<Vec<f64>>> {
    let dim = center.len();
    let mut out = vec![center.to_vec()];
    const STREAM_CENTERS: u64 = 0x11b;
    for k in 1..n {
        let dir: Vec<f64> = (0..dim)
            .map(|i| crate::mcsim::normal_draw(seed, STREAM_CENTERS, k as u64, i as u64, 7))
            .collect();
        let norm = crate::numkernel::norm2(&dir);
        let unit: Vec<f64> = dir.iter().map(|v| v / norm.max(1e-12)).collect();
        let offset = ellipsoid_from_ball(metric, level, &unit)?;
        out.push(center.iter().zip(&offset).map(|(c, o)| c + o).collect());
    }
    Ok(out)
}

pub struct LibraryOptions {
    /// Extension width in seconds; must be positive and below every dwell.
    pub rho: f64,
    /// Simulation grid the library is stored on.
    pub dt_sim: f64,
}

/// Build the nominal library: one synthesis per center, a per-position
/// re-solve with the dwell extended by rho, and validation of every kept
/// trace against the tightened formula. Centers whose synthesis fails are
/// skipped with a warning entry.
pub fn build_library(
    prob: &SynthesisProblem,
    cert: &BisimCertificate,
    centers: &[Vec<f64>],
    opts: &LibraryOptions,
) -> FeedbackResult<NominalLibrary> {
    if centers.is_empty() {
        return Err(FeedbackError::NoCenters);
    }
    let min_dwell = prob
        .sched
        .entries
        .iter()
        .map(|&(_, t)| t)
        .fold(f64::INFINITY, f64::min);
    if !(opts.rho > 0.0 && opts.rho < min_dwell) {
        return Err(FeedbackError::BadRho { rho: opts.rho, max: min_dwell });
    }
    let ratio = prob.dt / opts.dt_sim;
    if (ratio - ratio.round()).abs() > 1e-9 || ratio < 1.0 {
        return Err(FeedbackError::GridMismatch { dt_sim: opts.dt_sim, dt_synth: prob.dt });
    }
    let expand = ratio.round() as usize;

    let n_pos = prob.sched.entries.len();
    let w = (opts.rho / opts.dt_sim).round() as usize;
    let pos_steps: Vec<usize> = prob
        .sched
        .entries
        .iter()
        .map(|&(_, t)| (t / opts.dt_sim).round() as usize)
        .collect();
    let mut pos_start = vec![0usize];
    for i in 0..n_pos - 1 {
        pos_start.push(pos_start[i] + pos_steps[i]);
    }

    let mut traces = Vec::new();
    let mut skipped = Vec::new();
    let mut last_err = String::new();
    for (ci, center) in centers.iter().enumerate() {
        match build_one(prob, center, expand, opts, &pos_steps, &pos_start, w) {
            Ok(tr) => traces.push(tr),
            Err(e) => {
                last_err = e.to_string();
                skipped.push((ci, last_err.clone()));
            }
        }
    }
    if traces.is_empty() {
        return Err(FeedbackError::AllCentersFailed { last: last_err });
    }

    Ok(NominalLibrary {
        traces,
        schedule: prob.sched.clone(),
        dt: opts.dt_sim,
        rho: opts.rho,
        metric: cert.modes.iter().map(|mc| mc.m.clone()).collect(),
        mu: cert.modes.iter().map(|mc| mc.mu).collect(),
        r: cert.r.clone(),
        gamma_hat: cert.gamma_hat,
        pos_start,
        pos_steps,
        skipped,
    })
}

fn build_one(
    prob: &SynthesisProblem,
    center: &[f64],
    expand: usize,
    opts: &LibraryOptions,
    pos_steps: &[usize],
    pos_start: &[usize],
    w: usize,
) -> FeedbackResult<LibraryTrace> {
    let base_prob = SynthesisProblem { x0: center.to_vec(), ..prob.clone() };
    let base = synth::synthesize(&base_prob)?;
    let inputs = expand_inputs(&base.u, expand);
    let nominal = sysmodel::integrate_nominal(prob.sys, prob.sched, center, &inputs, opts.dt_sim)?;
    let robustness = mtl::robustness(&prob.formula, &nominal, 0.0)?;
    if robustness < -1e-9 {
        return Err(FeedbackError::Synth(SynthError::ValidationFailed { robustness }));
    }

    let mut ext_states = Vec::new();
    let mut ext_inputs = Vec::new();
    for pos in 0..prob.sched.entries.len() {
        let mut entries = prob.sched.entries.clone();
        entries[pos].1 += opts.rho;
        let ext_sched = ModeSchedule { entries };
        let ext_formula = extend_horizon(&prob.formula, opts.rho)?;
        let ext_prob = SynthesisProblem {
            sched: &ext_sched,
            formula: ext_formula,
            x0: center.to_vec(),
            ..prob.clone()
        };
        let ext = synth::synthesize(&ext_prob)?;
        let ext_u = expand_inputs(&ext.u, expand);
        let ext_trace =
            sysmodel::integrate_nominal(prob.sys, &ext_sched, center, &ext_u, opts.dt_sim)?;
        // Extension window: local steps N_t .. N_t+W of this position.
        let n_t = pos_steps[pos];
        let start = pos_start[pos];
        let states: Vec<Vec<f64>> =
            (1..=w).map(|k| ext_trace.states[start + n_t + k].clone()).collect();
        let inputs_seg: Vec<Vec<f64>> =
            (0..w).map(|k| ext_u[start + n_t + k].clone()).collect();
        ext_states.push(states);
        ext_inputs.push(inputs_seg);
    }

    Ok(LibraryTrace {
        center: center.to_vec(),
        states: nominal.states.clone(),
        inputs,
        ext_states,
        ext_inputs,
        robustness,
    })
}

fn expand_inputs(u: &[Vec<f64>], factor: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(u.len() * factor);
    for sample in u {
        for _ in 0..factor {
            out.push(sample.clone());
        }
    }
    out
}

/// Stretch every fragment block's end time by `rho` (used by the extension
/// re-solves so the added window stays constrained).
fn extend_horizon(formula: &MtlFormula, rho: f64) -> FeedbackResult<MtlFormula> {
    let blocks = fragment_blocks(formula, false)?;
    let parts = blocks
        .into_iter()
        .map(|b| {
            MtlFormula::always(
                b.tau,
                b.t_end + rho,
                MtlFormula::and(b.preds.into_iter().map(MtlFormula::Pred).collect()),
            )
        })
        .collect();
    Ok(MtlFormula::and(parts))
}

/// Serialized library with trace payloads, reloadable by the simulator.
pub fn save_library(lib: &NominalLibrary, path: &std::path::Path) -> std::io::Result<()> {
    let json = serde_json::to_string(lib).expect("library serializes");
    std::fs::write(path, json)
}

pub fn load_library(path: &std::path::Path) -> std::io::Result<NominalLibrary> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
}
