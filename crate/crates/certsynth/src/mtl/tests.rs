use super::*;
use proptest::prelude::*;

fn table_1d() -> VarTable {
    let mut t = VarTable::new(1, 1);
    t.insert("x", VarRef { kind: VarKind::State, index: 0, scale: 1.0 });
    t.insert("u", VarRef { kind: VarKind::Input, index: 0, scale: 1.0 });
    t
}

fn grid_table() -> VarTable {
    // Two states (dw ~ rad/s, dwr ~ rad/s) plus Hz-scaled aliases.
    let mut t = VarTable::new(2, 1);
    t.insert("dw", VarRef { kind: VarKind::State, index: 0, scale: 1.0 });
    t.insert("dwr", VarRef { kind: VarKind::State, index: 1, scale: 1.0 });
    t.insert("df", VarRef { kind: VarKind::State, index: 0, scale: 1.0 / (2.0 * std::f64::consts::PI) });
    t.insert("us", VarRef { kind: VarKind::Input, index: 0, scale: 1.0 });
    t
}

fn const_trace(n: usize, dt: f64, x: Vec<f64>, u: Vec<f64>) -> SignalTrace {
    SignalTrace::new(
        (0..n).map(|j| j as f64 * dt).collect(),
        vec![x; n],
        vec![u; n],
        vec![0; n],
        dt,
    )
    .unwrap()
}

#[test]
fn parse_always_conjunction() {
    let parsed = parse_formula(
        "G[0,5] (df <= 0.5 & df >= -0.5)",
        &grid_table(),
        ParseOptions::default(),
    )
    .unwrap();
    match &parsed.formula {
        MtlFormula::Always { interval, child } => {
            assert_eq!((interval.lo, interval.hi), (0.0, 5.0));
            match child.as_ref() {
                MtlFormula::And(parts) => assert_eq!(parts.len(), 2),
                other => panic!("expected And, got {other:?}"),
            }
        }
        other => panic!("expected Always, got {other:?}"),
    }
    // df has scale 1/(2pi); the normalized predicate bound is in rad/s.
    let preds = parsed.formula.predicates();
    assert!((preds[0].a[0] - 1.0).abs() < 1e-12);
    assert!((preds[0].b - 0.5 * 2.0 * std::f64::consts::PI).abs() < 1e-9);
    assert!(!parsed.warnings.is_empty());
}

#[test]
fn parse_fragment_valid() {
    let parsed =
        parse_formula("G[2,5] (df <= 0.4)", &grid_table(), ParseOptions::default()).unwrap();
    let blocks = fragment_blocks(&parsed.formula, false).unwrap();
    assert_eq!(blocks.len(), 1);
    assert_eq!(blocks[0].tau, 2.0);
    assert_eq!(blocks[0].preds.len(), 1);
}

#[test]
fn parse_malformed_is_syntax_error() {
    let err = parse_formula("F[0,1] (x <= 0) U[0,2] ...", &table_1d(), ParseOptions::default())
        .unwrap_err();
    assert!(matches!(err, MtlError::Syntax { .. }), "got {err:?}");
}

#[test]
fn parse_unknown_variable() {
    let err =
        parse_formula("G[0,1] (bogus <= 1)", &table_1d(), ParseOptions::default()).unwrap_err();
    assert!(matches!(err, MtlError::UnknownVariable { .. }));
}

#[test]
fn parse_rejects_unnormalized_when_disabled() {
    let err = parse_formula(
        "2*x <= 1",
        &table_1d(),
        ParseOptions { auto_normalize: false },
    )
    .unwrap_err();
    assert!(matches!(err, MtlError::NonNormalizedPredicate { .. }));
}

#[test]
fn parse_print_parse_identity() {
    let texts = [
        "G[0,5] (x <= 0.5 & x >= -0.5)",
        "F[0,1] x <= 0 | G[1,2] (x + u <= 3)",
        "!(x <= 1) & (x <= 2 U[0.5,2] x >= 0)",
        "0.5*x - 2*u <= 1.25",
    ];
    let vars = table_1d();
    let state_names = vec!["x".to_string()];
    let input_names = vec!["u".to_string()];
    for text in texts {
        let first = parse_formula(text, &vars, ParseOptions::default()).unwrap().formula;
        let printed = parse::print_formula(&first, &state_names, &input_names);
        let second = parse_formula(&printed, &vars, ParseOptions::default()).unwrap().formula;
        assert_eq!(first, second, "roundtrip failed for `{text}` -> `{printed}`");
    }
}

#[test]
fn robustness_boundary_predicate_is_zero() {
    let vars = grid_table();
    let f = parse_formula("df <= 0.5", &vars, ParseOptions::default()).unwrap().formula;
    let trace = const_trace(11, 0.1, vec![0.5 * 2.0 * std::f64::consts::PI, 0.0], vec![0.0]);
    let r = robustness(&f, &trace, 0.0).unwrap();
    assert!(r.abs() < 1e-12, "boundary robustness {r}");
}

#[test]
fn robustness_always_constant_margin() {
    let vars = table_1d();
    let f = parse_formula("G[0,1] (x <= 1)", &vars, ParseOptions::default()).unwrap().formula;
    let trace = const_trace(21, 0.1, vec![0.0], vec![0.0]);
    let r = robustness(&f, &trace, 0.0).unwrap();
    assert!((r - 1.0).abs() < 1e-12);
}

#[test]
fn time_domain_examples() {
    let vars = table_1d();
    let trace = const_trace(101, 0.1, vec![0.0], vec![0.0]);
    let pred = parse_formula("x <= 1", &vars, ParseOptions::default()).unwrap().formula;
    let d = time_domain(&pred, &trace).unwrap();
    assert_eq!(d.parts, vec![(0.0, 10.0)]);

    let g = parse_formula("G[2,5] (x <= 1)", &vars, ParseOptions::default()).unwrap().formula;
    let d = time_domain(&g, &trace).unwrap();
    assert!((d.parts[0].0 - 0.0).abs() < 1e-12 && (d.parts[0].1 - 5.0).abs() < 1e-12);

    let short = const_trace(41, 0.1, vec![0.0], vec![0.0]);
    assert!(matches!(time_domain(&g, &short), Err(MtlError::EmptyDomain)));
}

#[test]
fn out_of_domain_rejected() {
    let vars = table_1d();
    let trace = const_trace(101, 0.1, vec![0.0], vec![0.0]);
    let g = parse_formula("G[2,5] (x <= 1)", &vars, ParseOptions::default()).unwrap().formula;
    assert!(matches!(robustness(&g, &trace, 6.0), Err(MtlError::OutOfDomain { .. })));
}

#[test]
fn until_hand_case() {
    // x ramps 0, 1, 2, ...; phi = (x <= 10) U[0, 0.3] (x >= 2).
    let n = 6;
    let dt = 0.1;
    let trace = SignalTrace::new(
        (0..n).map(|j| j as f64 * dt).collect(),
        (0..n).map(|j| vec![j as f64]).collect(),
        vec![vec![0.0]; n],
        vec![0; n],
        dt,
    )
    .unwrap();
    let vars = table_1d();
    let f = parse_formula("x <= 10 U[0,0.3] x >= 2", &vars, ParseOptions::default())
        .unwrap()
        .formula;
    // By hand over t' in {0,1,2,3}: right margins x(t')-2 = -2,-1,0,1;
    // left margins 10-x(t'') >= 7 over the prefix, so result = max right = 1.
    let r = robustness(&f, &trace, 0.0).unwrap();
    assert!((r - 1.0).abs() < 1e-12, "got {r}");
}

#[test]
fn robustify_zero_offsets_identity() {
    let vars = grid_table();
    let f = parse_formula(
        "G[0,5] (df <= 0.5 & df >= -0.5) & G[2,5] df <= 0.4",
        &vars,
        ParseOptions::default(),
    )
    .unwrap()
    .formula;
    let blocks = fragment_blocks(&f, false).unwrap();
    let modification = RobustModification {
        segment_starts: vec![0.0],
        rates: vec![0.1],
        offsets: blocks.iter().map(|b| vec![vec![0.0]; b.preds.len()]).collect(),
    };
    let out = robustify(&f, &modification).unwrap();
    // Canonical rebuild of an already-canonical fragment: identical AST.
    assert_eq!(out, f);
}

#[test]
fn robustify_missing_offset() {
    let vars = grid_table();
    let f = parse_formula("G[0,5] (df <= 0.5 & df >= -0.5)", &vars, ParseOptions::default())
        .unwrap()
        .formula;
    let modification = RobustModification {
        segment_starts: vec![0.0],
        rates: vec![0.1],
        offsets: vec![vec![vec![0.0]]], // only one of two conjuncts covered
    };
    assert!(matches!(robustify(&f, &modification), Err(MtlError::MissingOffset { .. })));
}

#[test]
fn robustify_piecewise_decay_bound() {
    let vars = table_1d();
    let f = parse_formula("G[0,10] (x <= 1)", &vars, ParseOptions::default()).unwrap().formula;
    let modification = RobustModification {
        segment_starts: vec![0.0, 4.0],
        rates: vec![0.2, 0.5],
        offsets: vec![vec![vec![0.3, 0.2]]],
    };
    let out = robustify(&f, &modification).unwrap();
    let pred = out.predicates()[0].clone();
    // First segment: 1 - 0.3 exp(-0.1 t); second: 1 - 0.2 exp(-0.25 (t-4)).
    assert!((pred.bound_at(0.0) - (1.0 - 0.3)).abs() < 1e-12);
    assert!((pred.bound_at(2.0) - (1.0 - 0.3 * (-0.1f64 * 2.0).exp())).abs() < 1e-12);
    assert!((pred.bound_at(4.0) - (1.0 - 0.2)).abs() < 1e-12);
    assert!((pred.bound_at(6.0) - (1.0 - 0.2 * (-0.25f64 * 2.0).exp())).abs() < 1e-12);
}

#[test]
fn fragment_nesting_check() {
    let vars = table_1d();
    let nested = parse_formula(
        "G[0,5] (x <= 0.5) & G[2,5] (x <= 0.4)",
        &vars,
        ParseOptions::default(),
    )
    .unwrap()
    .formula;
    assert!(fragment_blocks(&nested, true).is_ok());

    let not_nested = parse_formula(
        "G[0,5] (x <= 0.5) & G[2,5] (x <= 0.6)",
        &vars,
        ParseOptions::default(),
    )
    .unwrap()
    .formula;
    assert!(matches!(
        fragment_blocks(&not_nested, true),
        Err(MtlError::FragmentViolation { .. })
    ));
}

#[test]
fn fragment_domain_contains_zero() {
    let vars = table_1d();
    let f = parse_formula(
        "G[0,5] (x <= 0.5) & G[2,5] (x <= 0.4)",
        &vars,
        ParseOptions::default(),
    )
    .unwrap()
    .formula;
    let trace = const_trace(51, 0.1, vec![0.0], vec![0.0]);
    let d = time_domain(&f, &trace).unwrap();
    assert!(d.contains(0.0));
}

// ------------------------------------------------------------------
// Independent boolean evaluator used for the sign-soundness property.
// ------------------------------------------------------------------

fn bool_eval(f: &MtlFormula, trace: &SignalTrace, j: usize) -> bool {
    let t = trace.times[j];
    match f {
        MtlFormula::True => true,
        MtlFormula::Pred(p) => p.margin(&trace.states[j], &trace.inputs[j], t) >= 0.0,
        MtlFormula::Not(c) => !bool_eval(c, trace, j),
        MtlFormula::And(cs) => cs.iter().all(|c| bool_eval(c, trace, j)),
        MtlFormula::Or(cs) => cs.iter().any(|c| bool_eval(c, trace, j)),
        MtlFormula::Always { interval, child } => {
            let (lo, hi) = trace.sample_window(t + interval.lo, t + interval.hi);
            (lo..=hi).all(|jj| bool_eval(child, trace, jj))
        }
        MtlFormula::Eventually { interval, child } => {
            let (lo, hi) = trace.sample_window(t + interval.lo, t + interval.hi);
            (lo..=hi).any(|jj| bool_eval(child, trace, jj))
        }
        MtlFormula::Until { interval, left, right } => {
            let (lo, hi) = trace.sample_window(t + interval.lo, t + interval.hi);
            (lo..=hi).any(|jp| {
                bool_eval(right, trace, jp) && (j..jp).all(|jpp| bool_eval(left, trace, jpp))
            })
        }
    }
}

// ------------------------------------------------------------------
// Property tests
// ------------------------------------------------------------------

fn arb_pred() -> impl Strategy<Value = MtlFormula> {
    // 1-D predicates x <= b (positive normal) for monotonicity; the sign
    // uses Not nodes, exercised separately.
    (-2.0f64..2.0).prop_map(|b| {
        MtlFormula::Pred(LinearPredicate::normalized(vec![1.0], vec![0.0], b, "x<=b").unwrap())
    })
}

fn arb_formula(neg_free: bool) -> impl Strategy<Value = MtlFormula> {
    let leaf = arb_pred();
    leaf.prop_recursive(3, 24, 3, move |inner| {
        let interval = (0.0f64..0.6, 0.0f64..0.8)
            .prop_map(|(lo, w)| Interval::new((lo * 10.0).round() / 10.0, ((lo + w) * 10.0).round() / 10.0));
        let mut options = vec![
            (inner.clone(), inner.clone())
                .prop_map(|(a, b)| MtlFormula::And(vec![a, b]))
                .boxed(),
            (inner.clone(), inner.clone())
                .prop_map(|(a, b)| MtlFormula::Or(vec![a, b]))
                .boxed(),
            (interval.clone(), inner.clone())
                .prop_map(|(interval, c)| MtlFormula::Always { interval, child: Box::new(c) })
                .boxed(),
            (interval.clone(), inner.clone())
                .prop_map(|(interval, c)| MtlFormula::Eventually { interval, child: Box::new(c) })
                .boxed(),
            (interval.clone(), inner.clone(), inner.clone())
                .prop_map(|(interval, l, r)| MtlFormula::Until {
                    interval,
                    left: Box::new(l),
                    right: Box::new(r),
                })
                .boxed(),
        ];
        if !neg_free {
            options.push(inner.prop_map(|c| MtlFormula::Not(Box::new(c))).boxed());
        }
        proptest::strategy::Union::new(options)
    })
}

fn arb_trace() -> impl Strategy<Value = SignalTrace> {
    proptest::collection::vec(-1.5f64..1.5, 16..24).prop_map(|xs| {
        let n = xs.len();
        SignalTrace::new(
            (0..n).map(|j| j as f64 * 0.1).collect(),
            xs.iter().map(|&x| vec![x]).collect(),
            vec![vec![0.0]; n],
            vec![0; n],
            0.1,
        )
        .unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn negation_flips_sign(f in arb_formula(false), trace in arb_trace()) {
        if let Ok(dom) = time_domain(&f, &trace) {
            let t = dom.parts[0].0;
            let r = robustness(&f, &trace, t).unwrap();
            let neg = MtlFormula::Not(Box::new(f.clone()));
            let rn = robustness(&neg, &trace, t).unwrap();
            prop_assert_eq!(r, -rn);
        }
    }

    #[test]
    fn positive_robustness_implies_boolean_satisfaction(
        f in arb_formula(false),
        trace in arb_trace(),
    ) {
        if let Ok(dom) = time_domain(&f, &trace) {
            let t = dom.parts[0].0;
            let j = trace.index_of(t);
            let r = robustness(&f, &trace, t).unwrap();
            if r > 0.0 {
                prop_assert!(bool_eval(&f, &trace, j));
            }
            if r < 0.0 {
                prop_assert!(!bool_eval(&f, &trace, j));
            }
        }
    }

    #[test]
    fn dominating_margins_do_not_decrease_robustness(
        f in arb_formula(true),
        trace in arb_trace(),
        drop in 0.0f64..1.0,
    ) {
        // All predicates have normal +x, so lowering x pointwise improves
        // every margin.
        if let Ok(dom) = time_domain(&f, &trace) {
            let t = dom.parts[0].0;
            let better = SignalTrace::new(
                trace.times.clone(),
                trace.states.iter().map(|s| vec![s[0] - drop]).collect(),
                trace.inputs.clone(),
                trace.modes.clone(),
                trace.dt,
            ).unwrap();
            let r1 = robustness(&f, &trace, t).unwrap();
            let r2 = robustness(&f, &better, t).unwrap();
            prop_assert!(r2 >= r1 - 1e-12);
        }
    }

    #[test]
    fn robustify_never_increases_robustness(
        trace in arb_trace(),
        b1 in -0.5f64..1.5,
        b2 in -0.5f64..1.5,
        d1 in 0.0f64..0.5,
        d2 in 0.0f64..0.5,
    ) {
        let f = MtlFormula::and(vec![
            MtlFormula::always(0.0, 1.0, MtlFormula::Pred(
                LinearPredicate::normalized(vec![1.0], vec![0.0], b1, "p1").unwrap())),
            MtlFormula::always(0.5, 1.0, MtlFormula::Pred(
                LinearPredicate::normalized(vec![1.0], vec![0.0], b2, "p2").unwrap())),
        ]);
        let modification = RobustModification {
            segment_starts: vec![0.0],
            rates: vec![0.1],
            offsets: vec![vec![vec![d1]], vec![vec![d2]]],
        };
        let fd = robustify(&f, &modification).unwrap();
        let r = robustness(&f, &trace, 0.0).unwrap();
        let rd = robustness(&fd, &trace, 0.0).unwrap();
        prop_assert!(rd <= r + 1e-12);
    }
}
