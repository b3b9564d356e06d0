//! Executable case-study builders: the Type-C wind turbine model, grid
//! frequency-response dynamics, their combination into a switched
//! stochastic system, and the DC network model that exposes line power
//! flows as linear predicates.

pub mod network;
pub mod wtg;

pub use network::{line_flow_outputs, LineFlow, NetworkData};
pub use wtg::{
    calibrate_drive_ratio, find_equilibrium, kron_reduce, linearize, wtg_residual, DaeBlocks,
    Equilibrium, ReducedWtg, WtgParams,
};

use crate::numkernel::{Matrix, NumError};
use crate::sysmodel::{Mode, ModeSchedule, SwitchedLinearSystem};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("model evaluation left its domain: {context}")]
    Domain { context: String },
    #[error("equilibrium solve did not converge (best residual {best_residual:.3e}): {context}")]
    NoConvergence { best_residual: f64, context: String },
    #[error("algebraic block is numerically singular")]
    SingularAlgebraicBlock,
    #[error("network graph is disconnected")]
    IslandedNetwork,
    #[error(transparent)]
    Numeric(#[from] NumError),
    #[error(transparent)]
    Formula(#[from] crate::mtl::MtlError),
}

pub type GridResult<T> = Result<T, GridError>;

/// Grid-side constants of the frequency-response model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridParams {
    /// System base, MVA.
    pub base_mva: f64,
    /// Aggregate inertia constant, seconds.
    pub h: f64,
    /// Load damping, pu per pu frequency.
    pub d: f64,
    /// Reheat/charging time constant, seconds.
    pub tau_ch: f64,
    /// Governor time constant, seconds.
    pub tau_g: f64,
    /// Droop, per unit frequency per per-unit power.
    pub r_droop: f64,
    /// Synchronous speed, rad/s.
    pub omega_s: f64,
    /// Generation-loss disturbance, pu.
    pub d_pd: f64,
    /// Scheduled storage ramp rate in the second mode, pu/s.
    pub storage_ramp: f64,
    /// Relaxation rate on the scheduled-storage state, 1/s. A literal
    /// zero-dynamics storage state carries a zero eigenvalue, which rules
    /// out any strict decay certificate; a small droop keeps the mode
    /// matrices strictly stable while changing the scheduled power by well
    /// under a percent over the dwell.
    pub storage_relax: f64,
    /// Number of turbine units aggregated into the wind farm.
    pub wtg_count: f64,
    /// First switch (storage ramp begins), seconds.
    pub t_switch_on: f64,
    /// Second switch (generation balanced again), seconds.
    pub t_switch_off: f64,
    /// Simulation horizon, seconds.
    pub t_horizon: f64,
}

impl Default for GridParams {
    fn default() -> Self {
        GridParams {
            base_mva: 1000.0,
            h: 4.0,
            d: 1.0,
            tau_ch: 0.3,
            tau_g: 0.1,
            r_droop: 0.05,
            omega_s: 2.0 * std::f64::consts::PI * 60.0,
            d_pd: 0.15,
            storage_ramp: 0.04,
            storage_relax: 0.02,
            wtg_count: 200.0,
            t_switch_on: 5.0,
            t_switch_off: 8.75,
            t_horizon: 10.0,
        }
    }
}

impl GridParams {
    /// Wind farm injection per unit of one turbine's per-unit output:
    /// `count * (machine base / system base)`.
    pub fn farm_scale(&self, wtg: &WtgParams) -> f64 {
        self.wtg_count * (wtg.s_b / (self.base_mva * 1e6))
    }
}

/// Combined model: the switched system plus the pieces downstream stages
/// need (reduced turbine blocks, equilibrium, schedules, name tables).
#[derive(Debug, Clone)]
pub struct AssembledGrid {
    pub sys: SwitchedLinearSystem,
    /// Full simulation schedule over the narrative horizon.
    pub sim_schedule: ModeSchedule,
    pub equilibrium: Equilibrium,
    pub blocks: DaeBlocks,
    pub reduced: ReducedWtg,
    /// Index of the grid frequency state.
    pub freq_index: usize,
    /// Index of the turbine rotor speed state (the noise coordinate).
    pub rotor_index: usize,
    /// Index of the scheduled-storage state.
    pub storage_index: usize,
}

pub const STATE_NAMES: [&str; 11] =
    ["deqd", "dedd", "dwr", "dx1", "dx2", "dx3", "dx4", "dw", "dps", "dpm", "dpv"];
pub const INPUT_NAMES: [&str; 2] = ["uw", "us"];

/// Build the switched frequency-regulation model: turbine equilibrium,
/// linearization, algebraic elimination, and the two-mode grid dynamics
/// (the storage ramp is an affine drift in the second mode; the generation
/// loss is an affine drift in both).
pub fn assemble_switched(
    wtg_params: &WtgParams,
    grid: &GridParams,
) -> GridResult<AssembledGrid> {
    let k_drive = match wtg_params.k_drive {
        Some(k) => k,
        None => calibrate_drive_ratio(wtg_params)?,
    };
    let equilibrium = find_equilibrium(wtg_params, k_drive, None)?;
    let blocks = linearize(wtg_params, &equilibrium)?;
    let reduced = kron_reduce(&blocks)?;
    let sys = assemble_from_reduced(&reduced, wtg_params, grid)?;
    let sim_schedule = simulation_schedule(grid);
    Ok(AssembledGrid {
        sys,
        sim_schedule,
        equilibrium,
        blocks,
        reduced,
        freq_index: 7,
        rotor_index: 2,
        storage_index: 8,
    })
}

/// The three-leg narrative schedule: normal, storage ramping, balanced.
pub fn simulation_schedule(grid: &GridParams) -> ModeSchedule {
    ModeSchedule {
        entries: vec![
            (0, grid.t_switch_on),
            (1, grid.t_switch_off - grid.t_switch_on),
            (0, grid.t_horizon - grid.t_switch_off),
        ],
    }
}

/// Assemble the 11-state switched system from a reduced turbine model.
/// States: 7 turbine states then [dw, dps, dpm, dpv]; inputs [uw, us].
pub fn assemble_from_reduced(
    reduced: &ReducedWtg,
    wtg_params: &WtgParams,
    grid: &GridParams,
) -> GridResult<SwitchedLinearSystem> {
    let nw = wtg::N_STATES;
    let n = nw + 4;
    let scale = grid.farm_scale(wtg_params);
    let gain = grid.omega_s / (2.0 * grid.h);

    let mut a = Matrix::zeros(n, n);
    a.set_block(0, 0, &reduced.a_kr);
    let (i_dw, i_dps, i_dpm, i_dpv) = (nw, nw + 1, nw + 2, nw + 3);
    // Frequency row: farm coupling, damping, storage and governor power.
    for j in 0..nw {
        a[(i_dw, j)] = gain * scale * reduced.c_kr[(0, j)];
    }
    a[(i_dw, i_dw)] = -grid.d / (2.0 * grid.h);
    a[(i_dw, i_dps)] = gain;
    a[(i_dw, i_dpm)] = gain;
    a[(i_dps, i_dps)] = -grid.storage_relax;
    // Governor and turbine lag rows; the droop acts on per-unit frequency.
    a[(i_dpm, i_dpm)] = -1.0 / grid.tau_ch;
    a[(i_dpm, i_dpv)] = 1.0 / grid.tau_ch;
    a[(i_dpv, i_dpv)] = -1.0 / grid.tau_g;
    a[(i_dpv, i_dw)] = -1.0 / (grid.tau_g * grid.r_droop * grid.omega_s);

    let mut b = Matrix::zeros(n, 2);
    for i in 0..nw {
        b[(i, 0)] = reduced.b_kr[(i, 0)];
    }
    b[(i_dw, 0)] = gain * scale * reduced.d_kr[(0, 0)];
    b[(i_dw, 1)] = gain;

    let mut sigma = Matrix::zeros(n, 1);
    for i in 0..nw {
        sigma[(i, 0)] = reduced.sigma_kr[(i, 0)];
    }
    // The direct-feed block is zero here (no algebraic diffusion), so the
    // frequency row sees the noise only through the rotor state.
    sigma[(i_dw, 0)] += gain * scale * reduced.e_kr[(0, 0)];

    // Affine drifts: generation loss in both modes, plus the storage ramp
    // in the second.
    let mut drift1 = vec![0.0; n];
    drift1[i_dw] = -gain * grid.d_pd;
    let mut drift2 = drift1.clone();
    drift2[i_dps] = grid.storage_ramp;

    let mode1 = Mode {
        name: "governor".into(),
        a: a.clone(),
        b: b.clone(),
        sigma: sigma.clone(),
        drift: Some(drift1),
    };
    let mode2 = Mode { name: "storage-ramp".into(), a, b, sigma, drift: Some(drift2) };

    let mut channels = BTreeMap::new();
    let mut kick = vec![0.0; n];
    kick[i_dw] = -gain;
    channels.insert("dPd".to_string(), kick);

    Ok(SwitchedLinearSystem {
        modes: vec![mode1, mode2],
        edges: vec![(0, 1), (1, 0)],
        min_dwell: 1.0,
        state_names: STATE_NAMES.iter().map(|s| s.to_string()).collect(),
        input_names: INPUT_NAMES.iter().map(|s| s.to_string()).collect(),
        disturbance_channels: channels,
    })
}

#[cfg(test)]
mod tests;
