//! DC network model: susceptance matrix assembly, base power flow from the
//! dispatch, and per-line sensitivities to bus injections. Produces the
//! linear functionals that turn line active-power limits into predicates
//! over the combined state and input.

use super::{GridError, GridResult, GridParams, ReducedWtg, WtgParams};
use crate::mtl::LinearPredicate;
use crate::numkernel::{self, Matrix};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Branch {
    pub from: String,
    pub to: String,
    /// Series reactance, pu.
    pub x: f64,
    /// Line charging, pu (carried for completeness; unused in DC flow).
    #[serde(default)]
    pub charging: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkData {
    /// Transmission lines whose flows are constrained.
    pub lines: Vec<Branch>,
    /// Generator step-up branches (never constrained).
    pub transformers: Vec<Branch>,
    /// Constant-power loads: (bus, pu).
    pub loads: Vec<(String, f64)>,
    /// Synchronous machine terminal; absorbs imbalance in the DC model.
    pub slack_bus: String,
    /// Wind farm terminal.
    pub wind_bus: String,
    /// Base-case thermal dispatch, pu.
    pub thermal_injection: f64,
    /// Base-case wind dispatch, pu.
    pub wind_injection: f64,
}

impl NetworkData {
    fn buses(&self) -> Vec<String> {
        let mut set = std::collections::BTreeSet::new();
        for b in self.lines.iter().chain(&self.transformers) {
            set.insert(b.from.clone());
            set.insert(b.to.clone());
        }
        for (bus, _) in &self.loads {
            set.insert(bus.clone());
        }
        set.into_iter().collect()
    }

    fn all_branches(&self) -> impl Iterator<Item = &Branch> {
        self.lines.iter().chain(&self.transformers)
    }
}

/// Solved DC flow data: angles per bus for the base case plus the
/// sensitivity of every angle to a unit injection at the wind bus.
#[derive(Debug, Clone)]
pub struct DcSolution {
    pub bus_index: BTreeMap<String, usize>,
    pub base_angles: Vec<f64>,
    pub wind_sensitivity_angles: Vec<f64>,
    /// Base flow on every constrained line, oriented from -> to.
    pub base_flows: Vec<f64>,
    /// Per-line flow change per unit wind-bus injection.
    pub flow_sensitivity: Vec<f64>,
}

/// Solve the base case and the wind-injection sensitivity. Errors if the
/// branch graph is disconnected.
pub fn solve_dc(net: &NetworkData) -> GridResult<DcSolution> {
    let buses = net.buses();
    let n = buses.len();
    let bus_index: BTreeMap<String, usize> =
        buses.iter().enumerate().map(|(i, b)| (b.clone(), i)).collect();

    // Connectivity check by union-find.
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut Vec<usize>, i: usize) -> usize {
        if parent[i] != i {
            let root = find(parent, parent[i]);
            parent[i] = root;
        }
        parent[i]
    }
    for b in net.all_branches() {
        let (i, j) = (bus_index[&b.from], bus_index[&b.to]);
        let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
        parent[ri] = rj;
    }
    let root = find(&mut parent, 0);
    for i in 1..n {
        if find(&mut parent, i) != root {
            return Err(GridError::IslandedNetwork);
        }
    }

    // Susceptance matrix over all branches.
    let mut b_full = Matrix::zeros(n, n);
    for br in net.all_branches() {
        let (i, j) = (bus_index[&br.from], bus_index[&br.to]);
        let b = 1.0 / br.x;
        b_full[(i, i)] += b;
        b_full[(j, j)] += b;
        b_full[(i, j)] -= b;
        b_full[(j, i)] -= b;
    }
    let slack = *bus_index
        .get(&net.slack_bus)
        .ok_or_else(|| GridError::Domain { context: "slack bus not in network".into() })?;
    let wind = *bus_index
        .get(&net.wind_bus)
        .ok_or_else(|| GridError::Domain { context: "wind bus not in network".into() })?;

    // Reduced system without the slack row/column.
    let keep: Vec<usize> = (0..n).filter(|&i| i != slack).collect();
    let mut b_red = Matrix::zeros(n - 1, n - 1);
    for (r, &i) in keep.iter().enumerate() {
        for (c, &j) in keep.iter().enumerate() {
            b_red[(r, c)] = b_full[(i, j)];
        }
    }

    // Base injections: wind dispatch and loads; the slack balances.
    let mut p = vec![0.0; n];
    p[wind] += net.wind_injection;
    for (bus, load) in &net.loads {
        let i = *bus_index
            .get(bus)
            .ok_or_else(|| GridError::Domain { context: format!("load bus {bus} unknown") })?;
        p[i] -= load;
    }
    let p_red: Vec<f64> = keep.iter().map(|&i| p[i]).collect();
    let lu = numkernel::Lu::factor(&b_red).map_err(|_| GridError::IslandedNetwork)?;
    let th_red = lu.solve_vec(&p_red);
    let mut base_angles = vec![0.0; n];
    for (r, &i) in keep.iter().enumerate() {
        base_angles[i] = th_red[r];
    }

    // Unit injection at the wind bus, withdrawal at the slack.
    let mut e = vec![0.0; n];
    e[wind] = 1.0;
    let e_red: Vec<f64> = keep.iter().map(|&i| e[i]).collect();
    let sens_red = lu.solve_vec(&e_red);
    let mut wind_sensitivity_angles = vec![0.0; n];
    for (r, &i) in keep.iter().enumerate() {
        wind_sensitivity_angles[i] = sens_red[r];
    }

    let mut base_flows = Vec::with_capacity(net.lines.len());
    let mut flow_sensitivity = Vec::with_capacity(net.lines.len());
    for br in &net.lines {
        let (i, j) = (bus_index[&br.from], bus_index[&br.to]);
        let b = 1.0 / br.x;
        base_flows.push(b * (base_angles[i] - base_angles[j]));
        flow_sensitivity.push(b * (wind_sensitivity_angles[i] - wind_sensitivity_angles[j]));
    }

    Ok(DcSolution { bus_index, base_angles, wind_sensitivity_angles, base_flows, flow_sensitivity })
}

/// One constrained line: base flow, sensitivity to the wind-farm injection,
/// and the two half-space predicates for `|P_line| <= limit` expressed over
/// the combined 11-state vector and the [uw, us] input.
#[derive(Debug, Clone)]
pub struct LineFlow {
    pub name: String,
    pub base_flow: f64,
    pub sensitivity: f64,
    pub upper: LinearPredicate,
    pub lower: LinearPredicate,
}

/// Build the per-line predicates: the in-horizon injection deviation at the
/// wind bus is `farm_scale * dP_gen(x, uw) + dP_s`, so each line's flow is
/// an affine functional of the combined state and input.
pub fn line_flow_outputs(
    net: &NetworkData,
    reduced: &ReducedWtg,
    wtg_params: &WtgParams,
    grid: &GridParams,
    limit: f64,
) -> GridResult<Vec<LineFlow>> {
    let dc = solve_dc(net)?;
    let scale = grid.farm_scale(wtg_params);
    let nw = super::wtg::N_STATES;
    let n = nw + 4;
    let storage_index = nw + 1;
    let mut out = Vec::with_capacity(net.lines.len());
    for (l, br) in net.lines.iter().enumerate() {
        let s = dc.flow_sensitivity[l];
        let base = dc.base_flows[l];
        let mut a = vec![0.0; n];
        for jcol in 0..nw {
            a[jcol] = s * scale * reduced.c_kr[(0, jcol)];
        }
        a[storage_index] = s;
        let c = vec![s * scale * reduced.d_kr[(0, 0)], 0.0];
        let name = format!("{}-{}", br.from, br.to);
        // base + a.x + c.u <= limit  and  >= -limit.
        let upper = LinearPredicate::normalized(
            a.clone(),
            c.clone(),
            limit - base,
            format!("P{name}<= {limit}"),
        )?;
        let lower = LinearPredicate::normalized(
            a.iter().map(|v| -v).collect(),
            c.iter().map(|v| -v).collect(),
            limit + base,
            format!("P{name}>=-{limit}"),
        )?;
        out.push(LineFlow { name, base_flow: base, sensitivity: s, upper, lower });
    }
    Ok(out)
}

/// The shipped nine-bus network: two generator step-up branches, twin-hub
/// transmission, and four constant-power loads.
pub fn ninebus_network() -> NetworkData {
    let line = |from: &str, to: &str, x: f64, charging: f64| Branch {
        from: from.into(),
        to: to.into(),
        x,
        charging,
    };
    NetworkData {
        lines: vec![
            line("2", "8", 0.01, 0.0006625),
            line("2", "9", 0.01, 0.0006625),
            line("7", "8", 0.04, 0.0023),
            line("7", "9", 0.04, 0.0023),
            line("4", "8", 0.03, 0.0031),
            line("4", "9", 0.03, 0.0031),
            line("4", "5", 0.03, 0.0034),
            line("5", "6", 0.03, 0.0094),
            line("6", "7", 0.02, 0.0258),
        ],
        transformers: vec![line("1", "2", 1.8868, 0.0), line("3", "7", 0.618, 0.0)],
        loads: vec![
            ("2".into(), 0.4),
            ("4".into(), 0.1),
            ("8".into(), 0.05),
            ("9".into(), 0.05),
        ],
        slack_bus: "1".into(),
        wind_bus: "3".into(),
        thermal_injection: 0.3,
        wind_injection: 0.3,
    }
}
