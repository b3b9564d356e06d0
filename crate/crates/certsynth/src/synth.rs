//! Feedforward synthesis: encode a guarantee-tightened fragment formula as
//! linear constraints on the ZOH-discretized nominal trajectory, minimize
//! the weighted 1-norm of the input, and re-validate the result through the
//! robustness evaluator. Includes the iterative scheme that starts from a
//! reduced formula and adds violated constraints from a candidate pool.

use crate::lp::{self, LinearProgram, LpError, LpStatus, Norm1Fragment, RowKind};
use crate::mtl::{
    self, fragment_blocks, window_indices, LinearPredicate, MtlError, MtlFormula, SignalTrace,
};
use crate::numkernel::dot;
use crate::sysmodel::{self, ModeSchedule, SwitchedLinearSystem, SysError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("no input satisfies the tightened formula; worst rows: {}", format_report(.report))]
    Infeasible { report: Vec<(ConstraintRef, f64)> },
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error(transparent)]
    System(#[from] SysError),
    #[error(transparent)]
    Formula(#[from] MtlError),
    #[error("encoder/evaluator disagree: re-checked robustness {robustness:.3e} below tolerance")]
    ValidationFailed { robustness: f64 },
}

fn format_report(report: &[(ConstraintRef, f64)]) -> String {
    report
        .iter()
        .take(4)
        .map(|(c, v)| format!("{} @t={:.3} (violation {:.3e})", c.label, c.time, v))
        .collect::<Vec<_>>()
        .join(", ")
}

pub type SynthResult<T> = Result<T, SynthError>;

#[derive(Debug, Clone)]
pub struct SynthesisProblem<'a> {
    pub sys: &'a SwitchedLinearSystem,
    pub sched: &'a ModeSchedule,
    /// Fragment-shaped formula, typically already guarantee-tightened.
    pub formula: MtlFormula,
    pub x0: Vec<f64>,
    /// Synthesis grid step; must divide all dwell times and block taus.
    pub dt: f64,
    /// 1-norm weights per input channel.
    pub weights: Vec<f64>,
    /// Optional per-channel box bounds on the input.
    pub input_bounds: Option<Vec<(f64, f64)>>,
    /// Extra tightening subtracted from every predicate bound, absorbing
    /// inter-sample wiggle when the verification grid is finer than the
    /// synthesis grid.
    pub margin: f64,
}

/// Where an LP row came from: block `k`, conjunct `nu`, sample `j`.
#[derive(Debug, Clone)]
pub struct ConstraintRef {
    pub block: usize,
    pub conjunct: usize,
    pub sample: usize,
    pub time: f64,
    pub label: String,
}

pub struct Encoded {
    pub program: LinearProgram,
    pub fragment: Norm1Fragment,
    pub rows: Vec<ConstraintRef>,
}

/// Encode the fragment constraints on the discretized trajectory. Decision
/// variables are split inputs per step; the state is eliminated by forward
/// substitution, producing one inequality per (block, conjunct, sample).
pub fn encode(prob: &SynthesisProblem) -> SynthResult<Encoded> {
    let blocks = fragment_blocks(&prob.formula, false)?;
    let disc = sysmodel::discretize(prob.sys, prob.sched, prob.dt)?;
    let steps = disc.n_steps();
    let n = prob.sys.state_dim();
    let p = prob.sys.input_dim();
    assert_eq!(prob.weights.len(), p, "one weight per input channel");

    let fragment = lp::norm1_objective(&prob.weights, steps, prob.dt);
    let n_vars = fragment.n_vars();
    let mut program = LinearProgram::new(n_vars);
    program.objective = fragment.objective.clone();
    program.lower = vec![Some(0.0); n_vars];
    program.upper = vec![None; n_vars];

    // Zero-input trajectory (initial state plus accumulated drift).
    let mut x_free = Vec::with_capacity(steps + 1);
    x_free.push(prob.x0.clone());
    for j in 0..steps {
        let (ad, _, dd) = disc.step(j);
        let mut next = ad.matvec(&x_free[j]);
        for i in 0..n {
            next[i] += dd[i];
        }
        x_free.push(next);
    }

    let mut rows = Vec::new();
    for (k, block) in blocks.iter().enumerate() {
        let (j_lo, j_hi) = window_indices(0.0, prob.dt, steps + 1, block.tau, block.t_end);
        for (nu, pred) in block.preds.iter().enumerate() {
            for j in j_lo..=j_hi {
                let t_j = j as f64 * prob.dt;
                // Sensitivity of a^T x[j] to u[j'], by backward adjoint.
                let mut row = vec![0.0; n_vars];
                let mut v = pred.a.clone();
                for jp in (0..j).rev() {
                    let (ad, bd, _) = disc.step(jp);
                    let coef = bd.vecmat(&v);
                    for ch in 0..p {
                        row[fragment.column_plus(jp, ch)] += coef[ch];
                        row[fragment.column_minus(jp, ch)] -= coef[ch];
                    }
                    v = ad.vecmat(&v);
                }
                // Direct input term c^T u at the held sample.
                let held = j.min(steps.saturating_sub(1));
                for ch in 0..p {
                    if pred.c[ch] != 0.0 {
                        row[fragment.column_plus(held, ch)] += pred.c[ch];
                        row[fragment.column_minus(held, ch)] -= pred.c[ch];
                    }
                }
                // x[j] = x_free[j] + sum Gamma u, so the free trajectory
                // carries both the initial state and the accumulated drift.
                let rhs = pred.bound_at(t_j) - dot(&pred.a, &x_free[j]) - prob.margin;
                program.add_le(row, rhs);
                rows.push(ConstraintRef {
                    block: k,
                    conjunct: nu,
                    sample: j,
                    time: t_j,
                    label: pred.label.clone(),
                });
            }
        }
    }

    if let Some(bounds) = &prob.input_bounds {
        assert_eq!(bounds.len(), p);
        for j in 0..steps {
            for ch in 0..p {
                let (lo, hi) = bounds[ch];
                let (cp, cm) = (fragment.column_plus(j, ch), fragment.column_minus(j, ch));
                let mut row = vec![0.0; n_vars];
                row[cp] = 1.0;
                row[cm] = -1.0;
                program.add_le(row.clone(), hi);
                row[cp] = -1.0;
                row[cm] = 1.0;
                program.add_le(row, -lo);
                rows.push(ConstraintRef {
                    block: usize::MAX,
                    conjunct: ch,
                    sample: j,
                    time: j as f64 * prob.dt,
                    label: format!("bound[{ch}]"),
                });
                rows.push(ConstraintRef {
                    block: usize::MAX,
                    conjunct: ch,
                    sample: j,
                    time: j as f64 * prob.dt,
                    label: format!("bound[{ch}]"),
                });
            }
        }
    }

    Ok(Encoded { program, fragment, rows })
}

#[derive(Debug, Clone)]
pub struct SynthesisResult {
    /// Optimal input per synthesis step and channel.
    pub u: Vec<Vec<f64>>,
    /// Nominal trajectory on the synthesis grid under `u`.
    pub nominal: SignalTrace,
    /// Re-checked robustness of the problem formula at t = 0.
    pub robustness: f64,
    pub objective: f64,
    /// Rows tight at the optimum (margin below 1e-6), with their margins.
    pub active: Vec<(ConstraintRef, f64)>,
    pub lp_iterations: usize,
}

/// Solve the encoded program and independently re-validate the result
/// against the robustness evaluator.
pub fn synthesize(prob: &SynthesisProblem) -> SynthResult<SynthesisResult> {
    let encoded = encode(prob)?;
    let sol = lp::solve_lp(&encoded.program)?;
    match sol.status {
        LpStatus::Optimal => {}
        LpStatus::Infeasible => {
            let report = sol
                .infeasible_rows
                .iter()
                .filter(|(kind, _, _)| *kind == RowKind::Inequality)
                .filter_map(|(_, idx, v)| encoded.rows.get(*idx).map(|r| (r.clone(), *v)))
                .collect();
            return Err(SynthError::Infeasible { report });
        }
        LpStatus::Unbounded => {
            return Err(SynthError::Lp(LpError::NumericalFailure { iterations: sol.iterations }))
        }
    }
    let u = encoded.fragment.recover(&sol.x);
    let nominal = sysmodel::integrate_nominal(prob.sys, prob.sched, &prob.x0, &u, prob.dt)?;
    let robustness = mtl::robustness(&prob.formula, &nominal, 0.0)?;
    if robustness < -1e-6 {
        return Err(SynthError::ValidationFailed { robustness });
    }
    let mut active = Vec::new();
    for (i, cref) in encoded.rows.iter().enumerate() {
        if cref.block == usize::MAX {
            continue; // input bound rows
        }
        let margin = encoded.program.h[i] - dot(&encoded.program.g[i], &sol.x);
        if margin <= 1e-6 {
            active.push((cref.clone(), margin));
        }
    }
    Ok(SynthesisResult {
        u,
        nominal,
        robustness,
        objective: sol.objective,
        active,
        lp_iterations: sol.iterations,
    })
}

/// A candidate constraint: one predicate to be enforced on `[tau, T_end]`.
#[derive(Debug, Clone)]
pub struct PoolConstraint {
    pub tau: f64,
    pub pred: LinearPredicate,
}

/// Iterative synthesis: solve with the base formula, evaluate the pool on
/// the nominal trace, add every violated constraint, repeat until clean or
/// the pool is exhausted. Returns the result and the addition log.
pub fn synthesize_iterative(
    prob: &SynthesisProblem,
    pool: &[PoolConstraint],
) -> SynthResult<(SynthesisResult, Vec<String>)> {
    let t_end = fragment_blocks(&prob.formula, false)?
        .last()
        .map(|b| b.t_end)
        .unwrap_or(prob.sched.total_time());
    let mut added: Vec<bool> = vec![false; pool.len()];
    let mut log = Vec::new();
    for round in 0..=pool.len() {
        let mut formula_parts = vec![prob.formula.clone()];
        for (i, item) in pool.iter().enumerate() {
            if added[i] {
                formula_parts.push(MtlFormula::always(
                    item.tau,
                    t_end,
                    MtlFormula::Pred(item.pred.clone()),
                ));
            }
        }
        let working = SynthesisProblem { formula: MtlFormula::and(formula_parts), ..prob.clone() };
        let result = synthesize(&working)?;

        let mut any_new = false;
        for (i, item) in pool.iter().enumerate() {
            if added[i] {
                continue;
            }
            let check = MtlFormula::always(item.tau, t_end, MtlFormula::Pred(item.pred.clone()));
            let margin = mtl::robustness(&check, &result.nominal, 0.0)?;
            if margin < -1e-9 {
                added[i] = true;
                any_new = true;
                log.push(format!(
                    "round {}: added `{}` (violation {:.4e})",
                    round + 1,
                    item.pred.label,
                    -margin
                ));
            }
        }
        if !any_new {
            return Ok((result, log));
        }
    }
    unreachable!("each round adds at least one pool constraint");
}

#[cfg(test)]
mod tests;
