//! Self-contained dense linear program solver: revised simplex with Dantzig
//! pricing, a Bland anti-cycling fallback, and periodic basis
//! refactorization. Handles inequality and equality rows, per-variable
//! bounds, and free variables (by splitting). Deterministic pivot rules so
//! identical programs produce identical solutions.

use crate::numkernel::{dot, Lu, Matrix};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LpError {
    #[error("numerical failure after {iterations} simplex iterations")]
    NumericalFailure { iterations: usize },
    #[error("malformed program: {context}")]
    Malformed { context: String },
}

pub type LpResult<T> = Result<T, LpError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

/// `min c^T x  s.t.  G x <= h,  E x = f,  lower <= x <= upper`.
///
/// Bounds are optional per variable; a variable with neither bound is free.
#[derive(Debug, Clone, Default)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub g: Vec<Vec<f64>>,
    pub h: Vec<f64>,
    pub e: Vec<Vec<f64>>,
    pub f: Vec<f64>,
    pub lower: Vec<Option<f64>>,
    pub upper: Vec<Option<f64>>,
}

impl LinearProgram {
    pub fn new(n_vars: usize) -> Self {
        LinearProgram {
            objective: vec![0.0; n_vars],
            g: Vec::new(),
            h: Vec::new(),
            e: Vec::new(),
            f: Vec::new(),
            lower: vec![None; n_vars],
            upper: vec![None; n_vars],
        }
    }

    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn add_le(&mut self, row: Vec<f64>, rhs: f64) {
        assert_eq!(row.len(), self.n_vars());
        self.g.push(row);
        self.h.push(rhs);
    }

    pub fn add_eq(&mut self, row: Vec<f64>, rhs: f64) {
        assert_eq!(row.len(), self.n_vars());
        self.e.push(row);
        self.f.push(rhs);
    }

    fn validate(&self) -> LpResult<()> {
        let n = self.n_vars();
        let finite = |v: &f64| v.is_finite();
        if !self.objective.iter().all(finite)
            || !self.h.iter().all(finite)
            || !self.f.iter().all(finite)
            || !self.g.iter().flatten().all(finite)
            || !self.e.iter().flatten().all(finite)
        {
            return Err(LpError::Malformed { context: "non-finite entries".into() });
        }
        if self.g.len() != self.h.len() || self.e.len() != self.f.len() {
            return Err(LpError::Malformed { context: "row/rhs length mismatch".into() });
        }
        if self.lower.len() != n || self.upper.len() != n {
            return Err(LpError::Malformed { context: "bounds length mismatch".into() });
        }
        if self.g.iter().chain(self.e.iter()).any(|r| r.len() != n) {
            return Err(LpError::Malformed { context: "row width mismatch".into() });
        }
        for j in 0..n {
            if let (Some(l), Some(u)) = (self.lower[j], self.upper[j]) {
                if l > u {
                    return Err(LpError::Malformed { context: format!("bounds crossed on var {j}") });
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Primal point in original variables (on Optimal).
    pub x: Vec<f64>,
    pub objective: f64,
    /// Multipliers for the inequality rows (>= 0 on Optimal).
    pub dual_ineq: Vec<f64>,
    /// Multipliers for the equality rows.
    pub dual_eq: Vec<f64>,
    /// On Infeasible:残 per-row residual violations from phase 1, sorted by
    /// magnitude descending, as (row kind, row index, violation).
    pub infeasible_rows: Vec<(RowKind, usize, f64)>,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    Inequality,
    Equality,
}

/// 1-norm objective fragment over split inputs: channel `ch` at step `j`
/// maps to columns `2*(j*channels + ch)` (positive part) and `+1` (negative
/// part), each weighted by `weights[ch] * dt`.
#[derive(Debug, Clone)]
pub struct Norm1Fragment {
    pub channels: usize,
    pub steps: usize,
    pub objective: Vec<f64>,
}

pub fn norm1_objective(weights: &[f64], steps: usize, dt: f64) -> Norm1Fragment {
    let channels = weights.len();
    let mut objective = Vec::with_capacity(2 * channels * steps);
    for _ in 0..steps {
        for &w in weights {
            objective.push(w * dt);
            objective.push(w * dt);
        }
    }
    Norm1Fragment { channels, steps, objective }
}

impl Norm1Fragment {
    pub fn n_vars(&self) -> usize {
        2 * self.channels * self.steps
    }

    pub fn column_plus(&self, step: usize, channel: usize) -> usize {
        2 * (step * self.channels + channel)
    }

    pub fn column_minus(&self, step: usize, channel: usize) -> usize {
        self.column_plus(step, channel) + 1
    }

    /// Reassemble per-step inputs `u = u_plus - u_minus` from a solution.
    pub fn recover(&self, split: &[f64]) -> Vec<Vec<f64>> {
        (0..self.steps)
            .map(|j| {
                (0..self.channels)
                    .map(|ch| split[self.column_plus(j, ch)] - split[self.column_minus(j, ch)])
                    .collect()
            })
            .collect()
    }
}

// ------------------------------------------------------------------
// Standard-form conversion
// ------------------------------------------------------------------

/// How an original variable maps into standard-form columns.
#[derive(Debug, Clone, Copy)]
enum VarMap {
    /// `x = y[col] + shift`
    Shifted { col: usize, shift: f64 },
    /// `x = shift - y[col]`
    Mirrored { col: usize, shift: f64 },
    /// `x = y[pos] - y[neg]`
    Split { pos: usize, neg: usize },
}

struct StandardForm {
    /// Column-major structural matrix (length m each).
    cols: Vec<Vec<f64>>,
    rhs: Vec<f64>,
    cost: Vec<f64>,
    var_map: Vec<VarMap>,
    /// Origin of each row, in standard-form row order.
    row_origin: Vec<(RowKind, usize)>,
    /// Sign flip applied to each row to make the RHS nonnegative.
    row_sign: Vec<f64>,
    n_rows: usize,
}

fn standardize(p: &LinearProgram) -> StandardForm {
    let n = p.n_vars();
    let mut var_map = Vec::with_capacity(n);
    let mut n_cols = 0usize;
    let mut extra_upper_rows: Vec<(usize, f64)> = Vec::new(); // (var, u - l)
    for j in 0..n {
        match (p.lower[j], p.upper[j]) {
            (Some(l), None) => {
                var_map.push(VarMap::Shifted { col: n_cols, shift: l });
                n_cols += 1;
            }
            (None, Some(u)) => {
                var_map.push(VarMap::Mirrored { col: n_cols, shift: u });
                n_cols += 1;
            }
            (Some(l), Some(u)) => {
                var_map.push(VarMap::Shifted { col: n_cols, shift: l });
                extra_upper_rows.push((j, u - l));
                n_cols += 1;
            }
            (None, None) => {
                var_map.push(VarMap::Split { pos: n_cols, neg: n_cols + 1 });
                n_cols += 2;
            }
        }
    }

    let mg = p.g.len();
    let me = p.e.len();
    let m = mg + me + extra_upper_rows.len();
    let mut cols: Vec<Vec<f64>> = vec![vec![0.0; m]; n_cols];
    let mut rhs = vec![0.0; m];
    let mut cost = vec![0.0; n_cols];
    let mut row_origin = Vec::with_capacity(m);
    let mut row_sign = vec![1.0; m];

    // Substitute the variable mapping into a row, returning the constant
    // shift that moves to the RHS.
    let substitute = |row: &[f64], cols: &mut Vec<Vec<f64>>, r: usize| -> f64 {
        let mut shift = 0.0;
        for (j, &coef) in row.iter().enumerate() {
            if coef == 0.0 {
                continue;
            }
            match var_map[j] {
                VarMap::Shifted { col, shift: s } => {
                    cols[col][r] += coef;
                    shift += coef * s;
                }
                VarMap::Mirrored { col, shift: s } => {
                    cols[col][r] -= coef;
                    shift += coef * s;
                }
                VarMap::Split { pos, neg } => {
                    cols[pos][r] += coef;
                    cols[neg][r] -= coef;
                }
            }
        }
        shift
    };

    for (r, row) in p.g.iter().enumerate() {
        let shift = substitute(row, &mut cols, r);
        rhs[r] = p.h[r] - shift;
        row_origin.push((RowKind::Inequality, r));
    }
    for (i, row) in p.e.iter().enumerate() {
        let r = mg + i;
        let shift = substitute(row, &mut cols, r);
        rhs[r] = p.f[i] - shift;
        row_origin.push((RowKind::Equality, i));
    }
    for (i, &(var, span)) in extra_upper_rows.iter().enumerate() {
        let r = mg + me + i;
        match var_map[var] {
            VarMap::Shifted { col, .. } => cols[col][r] = 1.0,
            _ => unreachable!(),
        }
        rhs[r] = span;
        row_origin.push((RowKind::Inequality, usize::MAX - i)); // synthetic bound row
    }

    for (j, &coef) in p.objective.iter().enumerate() {
        match var_map[j] {
            VarMap::Shifted { col, .. } => cost[col] += coef,
            VarMap::Mirrored { col, .. } => cost[col] -= coef,
            VarMap::Split { pos, neg } => {
                cost[pos] += coef;
                cost[neg] -= coef;
            }
        }
    }

    // Slack columns for every inequality row (original and bound rows).
    let mut slack_cols: Vec<Vec<f64>> = Vec::new();
    for (r, origin) in row_origin.iter().enumerate() {
        if origin.0 == RowKind::Inequality {
            let mut col = vec![0.0; m];
            col[r] = 1.0;
            slack_cols.push(col);
            cost.push(0.0);
        }
    }
    cols.extend(slack_cols);

    // Make every RHS nonnegative.
    for r in 0..m {
        if rhs[r] < 0.0 {
            rhs[r] = -rhs[r];
            row_sign[r] = -1.0;
            for col in cols.iter_mut() {
                col[r] = -col[r];
            }
        }
    }

    StandardForm { cols, rhs, cost, var_map, row_origin, row_sign, n_rows: m }
}

// ------------------------------------------------------------------
// Revised simplex core
// ------------------------------------------------------------------

const PIVOT_TOL: f64 = 1e-9;
const FEAS_TOL: f64 = 1e-9;
const REFACTOR_EVERY: usize = 128;
const BLAND_AFTER_DEGENERATE: usize = 200;

struct Simplex<'a> {
    cols: &'a [Vec<f64>],
    rhs: &'a [f64],
    m: usize,
    basis: Vec<usize>,
    /// Explicit basis inverse, row-major m x m.
    binv: Vec<f64>,
    xb: Vec<f64>,
    iterations: usize,
    degenerate_streak: usize,
}

impl<'a> Simplex<'a> {
    fn column(&self, j: usize) -> &[f64] {
        &self.cols[j]
    }

    fn refactorize(&mut self) -> LpResult<()> {
        let m = self.m;
        let mut b = Matrix::zeros(m, m);
        for (k, &j) in self.basis.iter().enumerate() {
            for i in 0..m {
                b[(i, k)] = self.cols[j][i];
            }
        }
        let lu = Lu::factor(&b).map_err(|_| LpError::NumericalFailure { iterations: self.iterations })?;
        let inv = lu.solve_matrix(&Matrix::identity(m));
        for i in 0..m {
            for k in 0..m {
                self.binv[i * m + k] = inv[(i, k)];
            }
        }
        // xb = B^-1 rhs
        for i in 0..m {
            self.xb[i] = dot(&self.binv[i * m..(i + 1) * m], self.rhs);
        }
        Ok(())
    }

    fn binv_times(&self, col: &[f64]) -> Vec<f64> {
        let m = self.m;
        (0..m).map(|i| dot(&self.binv[i * m..(i + 1) * m], col)).collect()
    }

    /// y^T = cB^T B^-1
    fn duals(&self, cost: &[f64]) -> Vec<f64> {
        let m = self.m;
        let mut y = vec![0.0; m];
        for (k, &j) in self.basis.iter().enumerate() {
            let cb = cost[j];
            if cb == 0.0 {
                continue;
            }
            for i in 0..m {
                y[i] += cb * self.binv[k * m + i];
            }
        }
        y
    }

    /// Degenerate-pivot every basic artificial out of the basis where a
    /// structural column can replace it. Rows where no replacement exists
    /// are linearly dependent; their artificials stay pinned at zero.
    fn pivot_out_artificials(&mut self, n_structural: usize) -> LpResult<()> {
        let m = self.m;
        for r in 0..m {
            if self.basis[r] < n_structural {
                continue;
            }
            let mut replacement = None;
            for j in 0..n_structural {
                if self.basis.contains(&j) {
                    continue;
                }
                let wr = dot(&self.binv[r * m..(r + 1) * m], self.column(j));
                if wr.abs() > 1e-7 {
                    replacement = Some((j, wr));
                    break;
                }
            }
            let Some((e, _)) = replacement else { continue };
            let w = self.binv_times(self.column(e));
            let piv = w[r];
            let theta = self.xb[r].max(0.0) / piv;
            for i in 0..m {
                if i != r {
                    self.xb[i] -= theta * w[i];
                }
            }
            self.xb[r] = theta;
            let prow: Vec<f64> = self.binv[r * m..(r + 1) * m].iter().map(|v| v / piv).collect();
            for i in 0..m {
                if i == r {
                    continue;
                }
                let factor = w[i];
                if factor != 0.0 {
                    for k in 0..m {
                        self.binv[i * m + k] -= factor * prow[k];
                    }
                }
            }
            self.binv[r * m..(r + 1) * m].copy_from_slice(&prow);
            self.basis[r] = e;
        }
        Ok(())
    }

    /// Run simplex minimizing `cost` over columns in `allowed`.
    /// Returns Ok(true) on optimal, Ok(false) on unbounded.
    fn optimize(&mut self, cost: &[f64], allowed: &[bool], max_iters: usize) -> LpResult<bool> {
        loop {
            if self.iterations >= max_iters {
                return Err(LpError::NumericalFailure { iterations: self.iterations });
            }
            if self.iterations % REFACTOR_EVERY == REFACTOR_EVERY - 1 {
                self.refactorize()?;
            }
            let y = self.duals(cost);
            let use_bland = self.degenerate_streak > BLAND_AFTER_DEGENERATE;

            let mut entering: Option<usize> = None;
            let mut best = -PIVOT_TOL;
            for j in 0..self.cols.len() {
                if !allowed[j] || self.basis.contains(&j) {
                    continue;
                }
                let d = cost[j] - dot(&y, self.column(j));
                if use_bland {
                    if d < -PIVOT_TOL {
                        entering = Some(j);
                        break;
                    }
                } else if d < best {
                    best = d;
                    entering = Some(j);
                }
            }
            let Some(e) = entering else {
                return Ok(true);
            };

            let w = self.binv_times(self.column(e));
            let mut leave: Option<usize> = None;
            let mut theta = f64::INFINITY;
            for i in 0..self.m {
                if w[i] > PIVOT_TOL {
                    let ratio = self.xb[i].max(0.0) / w[i];
                    let better = match leave {
                        None => true,
                        Some(r) => {
                            ratio < theta - 1e-12
                                || ((ratio - theta).abs() <= 1e-12 && self.basis[i] < self.basis[r])
                        }
                    };
                    if better {
                        theta = ratio;
                        leave = Some(i);
                    }
                }
            }
            let Some(r) = leave else {
                return Ok(false); // unbounded direction
            };

            if theta <= FEAS_TOL {
                self.degenerate_streak += 1;
            } else {
                self.degenerate_streak = 0;
            }

            // Pivot: update xb and the explicit inverse.
            let m = self.m;
            let piv = w[r];
            for i in 0..m {
                if i != r {
                    self.xb[i] -= theta * w[i];
                }
            }
            self.xb[r] = theta;
            let (before, rest) = self.binv.split_at_mut(r * m);
            let (prow, after) = rest.split_at_mut(m);
            for v in prow.iter_mut() {
                *v /= piv;
            }
            for (i, chunk) in before.chunks_mut(m).enumerate() {
                let factor = w[i];
                if factor != 0.0 {
                    for (c, &pv) in chunk.iter_mut().zip(prow.iter()) {
                        *c -= factor * pv;
                    }
                }
            }
            for (i0, chunk) in after.chunks_mut(m).enumerate() {
                let factor = w[r + 1 + i0];
                if factor != 0.0 {
                    for (c, &pv) in chunk.iter_mut().zip(prow.iter()) {
                        *c -= factor * pv;
                    }
                }
            }
            self.basis[r] = e;
            self.iterations += 1;
        }
    }
}

/// Solve a linear program. Deterministic: a fixed program always produces
/// the same pivot path and the same solution.
pub fn solve_lp(p: &LinearProgram) -> LpResult<LpSolution> {
    p.validate()?;
    let sf = standardize(p);
    let m = sf.n_rows;
    let n_struct = sf.cols.len();

    if m == 0 {
        // Unconstrained: optimal iff no cost pull on any column.
        let unbounded = sf.cost.iter().any(|&c| c < -PIVOT_TOL)
            || sf
                .var_map
                .iter()
                .any(|vm| matches!(vm, VarMap::Split { pos, neg } if sf.cost[*pos] < -PIVOT_TOL || sf.cost[*neg] < -PIVOT_TOL));
        let x = recover_x(p, &sf, &[], &[]);
        let objective = dot(&p.objective, &x);
        return Ok(LpSolution {
            status: if unbounded { LpStatus::Unbounded } else { LpStatus::Optimal },
            x,
            objective,
            dual_ineq: vec![],
            dual_eq: vec![],
            infeasible_rows: vec![],
            iterations: 0,
        });
    }

    // Phase 1: artificial basis on every row; slacks of non-negated
    // inequality rows can serve directly.
    let mut cols = sf.cols.clone();
    let mut basis = Vec::with_capacity(m);
    let mut artificial_of_row = vec![usize::MAX; m];
    let mut slack_col_of_row = vec![usize::MAX; m];
    {
        // Identify slack columns: unit columns appended by standardize.
        let mut idx = 0;
        for (r, origin) in sf.row_origin.iter().enumerate() {
            if origin.0 == RowKind::Inequality {
                let col = n_struct - sf.row_origin.iter().filter(|o| o.0 == RowKind::Inequality).count()
                    + idx;
                slack_col_of_row[r] = col;
                idx += 1;
            }
        }
    }
    let mut phase1_cost = vec![0.0; n_struct];
    for r in 0..m {
        let sc = slack_col_of_row[r];
        if sc != usize::MAX && cols[sc][r] > 0.5 {
            basis.push(sc);
        } else {
            let mut art = vec![0.0; m];
            art[r] = 1.0;
            cols.push(art);
            phase1_cost.push(1.0);
            artificial_of_row[r] = cols.len() - 1;
            basis.push(cols.len() - 1);
        }
    }
    let n_total = cols.len();
    phase1_cost.resize(n_total, 0.0);

    let mut sx = Simplex {
        cols: &cols,
        rhs: &sf.rhs,
        m,
        basis,
        binv: vec![0.0; m * m],
        xb: vec![0.0; m],
        iterations: 0,
    degenerate_streak: 0,
    };
    sx.refactorize()?;

    let max_iters = 20_000 + 60 * (m + n_total);
    let allow_all = vec![true; n_total];
    let needs_phase1 = artificial_of_row.iter().any(|&a| a != usize::MAX);
    if needs_phase1 {
        let finished = sx.optimize(&phase1_cost, &allow_all, max_iters)?;
        debug_assert!(finished, "phase 1 objective is bounded below by zero");
        let infeas: f64 = sx
            .basis
            .iter()
            .zip(&sx.xb)
            .filter(|(j, _)| phase1_cost[**j] > 0.0)
            .map(|(_, v)| v.max(0.0))
            .sum();
        if infeas > 1e-7 * (1.0 + sf.rhs.iter().fold(0.0f64, |a, &b| a.max(b.abs()))) {
            // Report the rows that retain artificial value.
            let mut rows: Vec<(RowKind, usize, f64)> = Vec::new();
            for (k, &j) in sx.basis.iter().enumerate() {
                if phase1_cost[j] > 0.0 && sx.xb[k] > 1e-9 {
                    // Which row does this artificial belong to?
                    if let Some(r) = artificial_of_row.iter().position(|&a| a == j) {
                        let (kind, idx) = sf.row_origin[r];
                        if idx != usize::MAX && idx < usize::MAX - m {
                            rows.push((kind, idx, sx.xb[k]));
                        }
                    }
                }
            }
            rows.sort_by(|a, b| b.2.partial_cmp(&a.2).unwrap());
            return Ok(LpSolution {
                status: LpStatus::Infeasible,
                x: vec![],
                objective: f64::NAN,
                dual_ineq: vec![],
                dual_eq: vec![],
                infeasible_rows: rows,
                iterations: sx.iterations,
            });
        }
    }

    if needs_phase1 {
        sx.pivot_out_artificials(n_struct)?;
    }

    // Phase 2: artificials barred from entering.
    let mut phase2_cost = sf.cost.clone();
    phase2_cost.resize(n_total, 0.0);
    let mut allowed = vec![true; n_total];
    for &a in &artificial_of_row {
        if a != usize::MAX {
            allowed[a] = false;
        }
    }
    let optimal = sx.optimize(&phase2_cost, &allowed, max_iters)?;
    if !optimal {
        return Ok(LpSolution {
            status: LpStatus::Unbounded,
            x: vec![],
            objective: f64::NEG_INFINITY,
            dual_ineq: vec![],
            dual_eq: vec![],
            infeasible_rows: vec![],
            iterations: sx.iterations,
        });
    }
    sx.refactorize()?;

    // Recover the standard-form solution, then the original variables.
    let mut y_std = vec![0.0; n_total];
    for (k, &j) in sx.basis.iter().enumerate() {
        y_std[j] = sx.xb[k].max(0.0);
    }
    let x = recover_x(p, &sf, &y_std, &sx.basis);
    let objective = dot(&p.objective, &x);

    // Row multipliers from the final dual vector, unnegating flipped rows.
    let y = sx.duals(&phase2_cost);
    let mut dual_ineq = vec![0.0; p.g.len()];
    let mut dual_eq = vec![0.0; p.e.len()];
    for (r, &(kind, idx)) in sf.row_origin.iter().enumerate() {
        let v = y[r] * sf.row_sign[r];
        match kind {
            RowKind::Inequality if idx < p.g.len() => dual_ineq[idx] = v,
            RowKind::Equality => dual_eq[idx] = v,
            _ => {}
        }
    }

    Ok(LpSolution {
        status: LpStatus::Optimal,
        x,
        objective,
        dual_ineq,
        dual_eq,
        infeasible_rows: vec![],
        iterations: sx.iterations,
    })
}

fn recover_x(p: &LinearProgram, sf: &StandardForm, y_std: &[f64], _basis: &[usize]) -> Vec<f64> {
    let get = |col: usize| -> f64 { y_std.get(col).copied().unwrap_or(0.0) };
    (0..p.n_vars())
        .map(|j| match sf.var_map[j] {
            VarMap::Shifted { col, shift } => get(col) + shift,
            VarMap::Mirrored { col, shift } => shift - get(col),
            VarMap::Split { pos, neg } => get(pos) - get(neg),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lp(
        objective: Vec<f64>,
        g: Vec<(Vec<f64>, f64)>,
        lower: Vec<Option<f64>>,
        upper: Vec<Option<f64>>,
    ) -> LinearProgram {
        let n = objective.len();
        let mut p = LinearProgram::new(n);
        p.objective = objective;
        for (row, rhs) in g {
            p.add_le(row, rhs);
        }
        p.lower = lower;
        p.upper = upper;
        p
    }

    #[test]
    fn min_x_subject_to_x_ge_1() {
        // min x s.t. x >= 1  (as -x <= -1), x free
        let p = lp(vec![1.0], vec![(vec![-1.0], -1.0)], vec![None], vec![None]);
        let sol = solve_lp(&p).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.x[0] - 1.0).abs() < 1e-9);
        assert!((sol.objective - 1.0).abs() < 1e-9);
    }

    #[test]
    fn simple_two_var() {
        // min -x - y s.t. x + y <= 1, x, y >= 0 -> objective -1
        let p = lp(
            vec![-1.0, -1.0],
            vec![(vec![1.0, 1.0], 1.0)],
            vec![Some(0.0), Some(0.0)],
            vec![None, None],
        );
        let sol = solve_lp(&p).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.objective + 1.0).abs() < 1e-9);
    }

    #[test]
    fn detects_unbounded() {
        let p = lp(vec![-1.0], vec![(vec![-1.0], 0.0)], vec![None], vec![None]);
        let sol = solve_lp(&p).unwrap();
        assert_eq!(sol.status, LpStatus::Unbounded);
    }

    #[test]
    fn detects_infeasible_with_report() {
        // x <= -1 and x >= 1
        let p = lp(
            vec![1.0],
            vec![(vec![1.0], -1.0), (vec![-1.0], -1.0)],
            vec![None],
            vec![None],
        );
        let sol = solve_lp(&p).unwrap();
        assert_eq!(sol.status, LpStatus::Infeasible);
        assert!(!sol.infeasible_rows.is_empty());
    }

    #[test]
    fn equality_rows() {
        // min x + y s.t. x + y = 2, x - y <= 0, y <= 3
        let mut p = LinearProgram::new(2);
        p.objective = vec![1.0, 1.0];
        p.add_eq(vec![1.0, 1.0], 2.0);
        p.add_le(vec![1.0, -1.0], 0.0);
        p.upper = vec![None, Some(3.0)];
        let sol = solve_lp(&p).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.objective - 2.0).abs() < 1e-9);
        assert!(sol.x[0] <= sol.x[1] + 1e-9);
    }

    #[test]
    fn norm1_split_recovers_negative_optimum() {
        // One channel, one step: u must equal -2 via u <= -2 and u >= -2;
        // minimizing |u| picks u+ = 0, u- = 2.
        let frag = norm1_objective(&[1.0], 1, 1.0);
        let mut p = LinearProgram::new(frag.n_vars());
        p.objective = frag.objective.clone();
        p.lower = vec![Some(0.0); frag.n_vars()];
        p.upper = vec![None; frag.n_vars()];
        // u+ - u- == -2
        p.add_eq(vec![1.0, -1.0], -2.0);
        let sol = solve_lp(&p).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!(sol.x[0].abs() < 1e-9, "u+ = {}", sol.x[0]);
        assert!((sol.x[1] - 2.0).abs() < 1e-9, "u- = {}", sol.x[1]);
        let u = frag.recover(&sol.x);
        assert!((u[0][0] + 2.0).abs() < 1e-9);
    }

    #[test]
    fn weighted_channels_prefer_cheap_one() {
        // Two channels must sum to 1; channel 1 costs 100x more.
        let frag = norm1_objective(&[1.0, 100.0], 1, 1.0);
        let mut p = LinearProgram::new(frag.n_vars());
        p.objective = frag.objective.clone();
        p.lower = vec![Some(0.0); frag.n_vars()];
        p.upper = vec![None; frag.n_vars()];
        let mut row = vec![0.0; frag.n_vars()];
        row[frag.column_plus(0, 0)] = 1.0;
        row[frag.column_minus(0, 0)] = -1.0;
        row[frag.column_plus(0, 1)] = 1.0;
        row[frag.column_minus(0, 1)] = -1.0;
        p.add_eq(row, 1.0);
        let sol = solve_lp(&p).unwrap();
        let u = frag.recover(&sol.x);
        assert!((u[0][0] - 1.0).abs() < 1e-9, "cheap channel does the work");
        assert!(u[0][1].abs() < 1e-9);
    }

    #[test]
    fn zero_weight_channel_unbounded_when_pulled() {
        // Channel with zero weight and an objective bonus for growing: the
        // degenerate case must be flagged as unbounded, not silently solved.
        let frag = norm1_objective(&[0.0], 1, 1.0);
        let mut p = LinearProgram::new(frag.n_vars());
        p.objective = frag.objective.clone();
        p.objective[0] -= 1.0; // reward u+
        p.lower = vec![Some(0.0); frag.n_vars()];
        p.upper = vec![None; frag.n_vars()];
        let sol = solve_lp(&p).unwrap();
        assert_eq!(sol.status, LpStatus::Unbounded);
    }

    #[test]
    fn scaling_invariance_of_argmin() {
        let build = |s: f64| {
            lp(
                vec![s * 1.0, s * 2.0],
                vec![
                    (vec![-1.0, -1.0], -1.0),
                    (vec![1.0, 0.0], 3.0),
                    (vec![0.0, 1.0], 3.0),
                ],
                vec![Some(0.0), Some(0.0)],
                vec![None, None],
            )
        };
        let a = solve_lp(&build(1.0)).unwrap();
        let b = solve_lp(&build(7.5)).unwrap();
        assert_eq!(a.x, b.x, "same vertex under objective scaling");
    }

    // --------------------------------------------------------------
    // Vertex-enumeration oracle on random small LPs
    // --------------------------------------------------------------

    fn test_rand(seed: &mut u64) -> f64 {
        *seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((*seed >> 11) as f64) / ((1u64 << 53) as f64) * 2.0 - 1.0
    }

    /// Enumerate all basic solutions of {G x <= h} (n-subsets of tight rows)
    /// and return the best feasible objective, if any.
    fn vertex_oracle(c: &[f64], g: &[Vec<f64>], h: &[f64]) -> Option<(f64, Vec<f64>)> {
        let n = c.len();
        let m = g.len();
        let mut best: Option<(f64, Vec<f64>)> = None;
        let mut idx: Vec<usize> = (0..n).collect();
        loop {
            // Solve the n tight rows as equalities.
            let mut a = Matrix::zeros(n, n);
            let mut rhs = vec![0.0; n];
            for (r, &i) in idx.iter().enumerate() {
                for j in 0..n {
                    a[(r, j)] = g[i][j];
                }
                rhs[r] = h[i];
            }
            if let Ok(x) = crate::numkernel::solve(&a, &rhs) {
                let feasible = (0..m).all(|i| dot(&g[i], &x) <= h[i] + 1e-7);
                if feasible {
                    let obj = dot(c, &x);
                    if best.as_ref().map_or(true, |(b, _)| obj < *b) {
                        best = Some((obj, x));
                    }
                }
            }
            // next combination
            let mut k = n;
            loop {
                if k == 0 {
                    return best;
                }
                k -= 1;
                if idx[k] != k + m - n {
                    idx[k] += 1;
                    for j in (k + 1)..n {
                        idx[j] = idx[j - 1] + 1;
                    }
                    break;
                }
            }
        }
    }

    #[test]
    fn random_lps_match_vertex_oracle() {
        let mut seed = 2024u64;
        let mut solved = 0;
        for _case in 0..60 {
            let n = 3 + (test_rand(&mut seed).abs() * 3.0) as usize; // 3..=5
            let m_extra = 4 + (test_rand(&mut seed).abs() * 6.0) as usize;
            let mut g: Vec<Vec<f64>> = Vec::new();
            let mut h: Vec<f64> = Vec::new();
            for _ in 0..m_extra {
                g.push((0..n).map(|_| test_rand(&mut seed)).collect());
                h.push(test_rand(&mut seed) + 1.5);
            }
            // Box to keep things bounded.
            for j in 0..n {
                let mut row = vec![0.0; n];
                row[j] = 1.0;
                g.push(row.clone());
                h.push(2.0);
                row[j] = -1.0;
                g.push(row);
                h.push(2.0);
            }
            let c: Vec<f64> = (0..n).map(|_| test_rand(&mut seed)).collect();

            let mut p = LinearProgram::new(n);
            p.objective = c.clone();
            for (row, rhs) in g.iter().zip(&h) {
                p.add_le(row.clone(), *rhs);
            }
            let sol = solve_lp(&p).unwrap();
            let oracle = vertex_oracle(&c, &g, &h);
            match (sol.status, oracle) {
                (LpStatus::Optimal, Some((obj, _))) => {
                    assert!(
                        (sol.objective - obj).abs() <= 1e-6 * (1.0 + obj.abs()),
                        "objective {} vs oracle {obj}",
                        sol.objective
                    );
                    solved += 1;
                }
                (LpStatus::Infeasible, None) => {}
                (status, oracle) => {
                    panic!("status {status:?} disagrees with oracle {:?}", oracle.map(|o| o.0))
                }
            }
        }
        assert!(solved >= 40, "expected mostly feasible random cases, got {solved}");
    }

    #[test]
    fn weak_duality_spot_check() {
        // For optimal solutions of {min c.x : G x <= h}, the duals satisfy
        // y >= 0 and -G^T y = c with h^T... using standard sign convention:
        // L = c.x + y.(Gx - h); stationarity c + G^T y = 0; dual obj -h.y.
        let mut seed = 77u64;
        for _ in 0..20 {
            let n = 4;
            let mut g: Vec<Vec<f64>> = Vec::new();
            let mut h: Vec<f64> = Vec::new();
            for _ in 0..8 {
                g.push((0..n).map(|_| test_rand(&mut seed)).collect());
                h.push(test_rand(&mut seed).abs() + 0.5);
            }
            for j in 0..n {
                let mut row = vec![0.0; n];
                row[j] = 1.0;
                g.push(row.clone());
                h.push(1.5);
                row[j] = -1.0;
                g.push(row);
                h.push(1.5);
            }
            let c: Vec<f64> = (0..n).map(|_| test_rand(&mut seed)).collect();
            let mut p = LinearProgram::new(n);
            p.objective = c.clone();
            for (row, rhs) in g.iter().zip(&h) {
                p.add_le(row.clone(), *rhs);
            }
            let sol = solve_lp(&p).unwrap();
            if sol.status != LpStatus::Optimal {
                continue;
            }
            // Dual feasibility and matching objective.
            let y = &sol.dual_ineq;
            for &v in y {
                assert!(v <= 1e-7, "inequality multipliers nonpositive in this sign convention, got {v}");
            }
            // c = G^T y at optimum (all vars free here).
            for j in 0..n {
                let gy: f64 = (0..g.len()).map(|i| g[i][j] * y[i]).sum();
                assert!((c[j] - gy).abs() < 1e-6, "stationarity on var {j}");
            }
            let dual_obj: f64 = h.iter().zip(y).map(|(hi, yi)| hi * yi).sum();
            assert!((dual_obj - sol.objective).abs() < 1e-6, "strong duality value");
        }
    }
}
