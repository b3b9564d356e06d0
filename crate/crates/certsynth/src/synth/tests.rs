use super::*;
use crate::mtl::{parse_formula, ParseOptions, PiecewiseDecay, VarKind, VarRef, VarTable};
use crate::numkernel::Matrix;
use crate::sysmodel::Mode;
use std::collections::BTreeMap;

/// Scalar integrator: xdot = u.
fn integrator() -> SwitchedLinearSystem {
    SwitchedLinearSystem {
        modes: vec![Mode {
            name: "m0".into(),
            a: Matrix::zeros(1, 1),
            b: Matrix::identity(1),
            sigma: Matrix::zeros(1, 1),
            drift: None,
        }],
        edges: vec![],
        min_dwell: 0.1,
        state_names: vec!["x".into()],
        input_names: vec!["u".into()],
        disturbance_channels: BTreeMap::new(),
    }
}

fn vars_1d() -> VarTable {
    let mut t = VarTable::new(1, 1);
    t.insert("x", VarRef { kind: VarKind::State, index: 0, scale: 1.0 });
    t.insert("u", VarRef { kind: VarKind::Input, index: 0, scale: 1.0 });
    t
}

fn problem<'a>(
    sys: &'a SwitchedLinearSystem,
    sched: &'a ModeSchedule,
    text: &str,
) -> SynthesisProblem<'a> {
    let formula = parse_formula(text, &vars_1d(), ParseOptions::default()).unwrap().formula;
    SynthesisProblem {
        sys,
        sched,
        formula,
        x0: vec![0.0],
        dt: 0.05,
        weights: vec![1.0],
        input_bounds: None,
        margin: 0.0,
    }
}

#[test]
fn already_satisfied_needs_no_input() {
    let sys = integrator();
    let sched = ModeSchedule::single(0, 1.0);
    let prob = problem(&sys, &sched, "G[0,1] (x <= 0.5)");
    let result = synthesize(&prob).unwrap();
    assert!(result.objective.abs() < 1e-9);
    for u in &result.u {
        assert!(u[0].abs() < 1e-9);
    }
    assert!(result.robustness >= 0.5 - 1e-9);
}

#[test]
fn minimum_effort_reach_and_hold() {
    // Must reach x >= 1 by t = 1 and hold through t = 2; the cheapest
    // input moves exactly one unit: integral |u| dt = 1.
    let sys = integrator();
    let sched = ModeSchedule::single(0, 2.0);
    let prob = problem(&sys, &sched, "G[1,2] (x >= 1)");
    let result = synthesize(&prob).unwrap();
    assert!(
        (result.objective - 1.0).abs() < 1e-6,
        "minimum total effort is 1, got {}",
        result.objective
    );
    assert!(result.robustness >= -1e-9);
    // The final state holds at (or above) the bound.
    assert!(result.nominal.states.last().unwrap()[0] >= 1.0 - 1e-7);
}

#[test]
fn infeasible_initial_state_reports_rows() {
    // x0 = 0 violates x <= -1 at t = 0 regardless of input.
    let sys = integrator();
    let sched = ModeSchedule::single(0, 1.0);
    let prob = problem(&sys, &sched, "G[0,1] (x <= -1)");
    match synthesize(&prob) {
        Err(SynthError::Infeasible { report }) => {
            assert!(!report.is_empty());
            assert_eq!(report[0].0.sample, 0, "worst violation at the start");
        }
        other => panic!("expected Infeasible, got {other:?}", other = other.err()),
    }
}

#[test]
fn encoder_and_evaluator_agree() {
    let sys = integrator();
    let sched = ModeSchedule::single(0, 2.0);
    for text in ["G[0,2] (x <= 0.3)", "G[1,2] (x >= 0.7)", "G[0.5,2] (x >= 0.2 & x <= 1.5)"] {
        let prob = problem(&sys, &sched, text);
        let result = synthesize(&prob).unwrap();
        let r = mtl::robustness(&prob.formula, &result.nominal, 0.0).unwrap();
        assert!(r >= -1e-6, "`{text}` re-check {r}");
    }
}

fn with_decay(mut pred: LinearPredicate, amp: f64) -> LinearPredicate {
    pred.decay = Some(PiecewiseDecay { starts: vec![0.0], rates: vec![0.1], amplitudes: vec![amp] });
    pred
}

#[test]
fn larger_offsets_cost_at_least_as_much() {
    let sys = integrator();
    let sched = ModeSchedule::single(0, 2.0);
    let base = LinearPredicate::normalized(vec![-1.0], vec![0.0], -1.0, "x>=1").unwrap();
    let mut last = 0.0;
    for amp in [0.0, 0.1, 0.3] {
        let formula = MtlFormula::always(1.0, 2.0, MtlFormula::Pred(with_decay(base.clone(), amp)));
        let prob = SynthesisProblem {
            sys: &sys,
            sched: &sched,
            formula,
            x0: vec![0.0],
            dt: 0.05,
            weights: vec![1.0],
            input_bounds: None,
        margin: 0.0,
        };
        let result = synthesize(&prob).unwrap();
        assert!(
            result.objective >= last - 1e-9,
            "objective must be monotone in the offsets ({} < {last})",
            result.objective
        );
        last = result.objective;
    }
}

#[test]
fn input_bounds_respected() {
    let sys = integrator();
    let sched = ModeSchedule::single(0, 2.0);
    let mut prob = problem(&sys, &sched, "G[1,2] (x >= 1)");
    prob.input_bounds = Some(vec![(-1.5, 1.5)]);
    let result = synthesize(&prob).unwrap();
    for u in &result.u {
        assert!(u[0] <= 1.5 + 1e-7 && u[0] >= -1.5 - 1e-7);
    }
    assert!(result.robustness >= -1e-9);
}

#[test]
fn too_tight_input_bounds_are_infeasible() {
    // Reaching 1 by t = 1 needs average input 1; a 0.8 cap cannot.
    let sys = integrator();
    let sched = ModeSchedule::single(0, 2.0);
    let mut prob = problem(&sys, &sched, "G[1,2] (x >= 1)");
    prob.input_bounds = Some(vec![(-0.8, 0.8)]);
    assert!(matches!(synthesize(&prob), Err(SynthError::Infeasible { .. })));
}

#[test]
fn iterative_empty_log_when_pool_clean() {
    let sys = integrator();
    let sched = ModeSchedule::single(0, 2.0);
    let prob = problem(&sys, &sched, "G[0,2] (x <= 0.5)");
    // Pool constraint already satisfied by the unforced solution.
    let pool = vec![PoolConstraint {
        tau: 0.0,
        pred: LinearPredicate::normalized(vec![1.0], vec![0.0], 2.0, "x<=2").unwrap(),
    }];
    let (result, log) = synthesize_iterative(&prob, &pool).unwrap();
    assert!(log.is_empty());
    assert!(result.objective.abs() < 1e-9);
}

/// Leaky integrator: xdot = -x + u. Holding a level costs input, so the
/// cheapest solution rises as late as possible; earlier floor constraints
/// are then violated deterministically.
fn leaky() -> SwitchedLinearSystem {
    let mut sys = integrator();
    sys.modes[0].a = Matrix::diag(&[-1.0]);
    sys
}

fn floor_pred(bound: f64, label: &str) -> LinearPredicate {
    LinearPredicate::normalized(vec![-1.0], vec![0.0], -bound, label).unwrap()
}

#[test]
fn iterative_adds_violated_and_terminates() {
    // Adding the first floor creates a violation of the second: the chain
    // must terminate within pool-size rounds with everything satisfied.
    let sys = leaky();
    let sched = ModeSchedule::single(0, 2.0);
    let prob = problem(&sys, &sched, "G[1,2] (x >= 1)");
    let pool = vec![
        PoolConstraint { tau: 0.5, pred: floor_pred(0.4, "x>=0.4mid") },
        PoolConstraint { tau: 0.75, pred: floor_pred(0.7, "x>=0.7late") },
    ];
    let (result, log) = synthesize_iterative(&prob, &pool).unwrap();
    assert!(!log.is_empty(), "at least one pool constraint must be added");
    assert!(log.len() <= pool.len());
    // Final nominal satisfies the whole pool.
    for item in &pool {
        let check = MtlFormula::always(item.tau, 2.0, MtlFormula::Pred(item.pred.clone()));
        let m = mtl::robustness(&check, &result.nominal, 0.0).unwrap();
        assert!(m >= -1e-9, "pool item `{}` violated after convergence", item.pred.label);
    }
}

#[test]
fn adding_pool_constraints_never_cheapens() {
    let sys = leaky();
    let sched = ModeSchedule::single(0, 2.0);
    let prob = problem(&sys, &sched, "G[1,2] (x >= 1)");
    let unconstrained = synthesize(&prob).unwrap();
    let pool = vec![PoolConstraint { tau: 0.25, pred: floor_pred(0.5, "x>=0.5early") }];
    let (constrained, log) = synthesize_iterative(&prob, &pool).unwrap();
    assert!(!log.is_empty());
    assert!(constrained.objective >= unconstrained.objective - 1e-9);
}
