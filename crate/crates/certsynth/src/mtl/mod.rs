//! Metric temporal logic over sampled signal traces: formula AST, text
//! grammar and parser, quantitative (robustness) semantics, finite time
//! domains, and guarantee-offset modification of predicate bounds.

mod parse;

pub use parse::{parse_formula, print_formula, ParseOptions, Parsed, VarKind, VarRef, VarTable};

use crate::numkernel::{dot, norm2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MtlError {
    #[error("syntax error at {line}:{col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("unknown variable `{name}` at {line}:{col}")]
    UnknownVariable { name: String, line: usize, col: usize },
    #[error("predicate state normal has 2-norm {norm:.3e}, not 1 (auto-normalization disabled)")]
    NonNormalizedPredicate { norm: f64 },
    #[error("time {t} is outside the formula's time domain")]
    OutOfDomain { t: f64 },
    #[error("formula time domain is empty (trace horizon too short)")]
    EmptyDomain,
    #[error("missing guarantee offset for predicate block {k}, conjunct {nu}")]
    MissingOffset { k: usize, nu: usize },
    #[error("formula is not in the supported synthesis fragment: {msg}")]
    FragmentViolation { msg: String },
    #[error("trace is malformed: {msg}")]
    BadTrace { msg: String },
}

pub type MtlResult<T> = Result<T, MtlError>;

/// Piecewise exponentially decaying bound offset. Segment `i` starts at
/// `starts[i]` and contributes `amplitudes[i] * exp(-rates[i] * (t - starts[i]) / 2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseDecay {
    pub starts: Vec<f64>,
    pub rates: Vec<f64>,
    pub amplitudes: Vec<f64>,
}

impl PiecewiseDecay {
    pub fn value_at(&self, t: f64) -> f64 {
        if self.starts.is_empty() {
            return 0.0;
        }
        let mut seg = 0;
        for (i, &s) in self.starts.iter().enumerate() {
            if t >= s - 1e-12 {
                seg = i;
            } else {
                break;
            }
        }
        self.amplitudes[seg] * (-self.rates[seg] * (t - self.starts[seg]) / 2.0).exp()
    }
}

/// Half-space predicate `a^T x + c^T u <= bound(t)` with unit state normal.
/// The bound is `b` minus an optional decaying offset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearPredicate {
    pub a: Vec<f64>,
    pub c: Vec<f64>,
    pub b: f64,
    pub label: String,
    #[serde(default)]
    pub decay: Option<PiecewiseDecay>,
}

// The label is reporting metadata; equality is semantic.
impl PartialEq for LinearPredicate {
    fn eq(&self, other: &Self) -> bool {
        self.a == other.a && self.c == other.c && self.b == other.b && self.decay == other.decay
    }
}

impl LinearPredicate {
    /// Construct with automatic normalization to a unit state normal.
    pub fn normalized(a: Vec<f64>, c: Vec<f64>, b: f64, label: impl Into<String>) -> MtlResult<Self> {
        let n = norm2(&a);
        if n < 1e-12 {
            return Err(MtlError::FragmentViolation {
                msg: format!("predicate `{}` has a zero state normal", label.into()),
            });
        }
        Ok(LinearPredicate {
            a: a.iter().map(|v| v / n).collect(),
            c: c.iter().map(|v| v / n).collect(),
            b: b / n,
            label: label.into(),
            decay: None,
        })
    }

    pub fn bound_at(&self, t: f64) -> f64 {
        match &self.decay {
            Some(d) => self.b - d.value_at(t),
            None => self.b,
        }
    }

    /// Signed margin of `(x, u)` against the predicate at time `t`;
    /// positive means satisfied.
    pub fn margin(&self, x: &[f64], u: &[f64], t: f64) -> f64 {
        self.bound_at(t) - dot(&self.a, x) - dot(&self.c, u)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        assert!(lo >= 0.0 && lo <= hi, "interval must satisfy 0 <= lo <= hi");
        Interval { lo, hi }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MtlFormula {
    True,
    Pred(LinearPredicate),
    Not(Box<MtlFormula>),
    And(Vec<MtlFormula>),
    Or(Vec<MtlFormula>),
    Until { interval: Interval, left: Box<MtlFormula>, right: Box<MtlFormula> },
    Always { interval: Interval, child: Box<MtlFormula> },
    Eventually { interval: Interval, child: Box<MtlFormula> },
}

impl MtlFormula {
    pub fn and(parts: Vec<MtlFormula>) -> MtlFormula {
        if parts.len() == 1 {
            parts.into_iter().next().unwrap()
        } else {
            MtlFormula::And(parts)
        }
    }

    pub fn always(lo: f64, hi: f64, child: MtlFormula) -> MtlFormula {
        MtlFormula::Always { interval: Interval::new(lo, hi), child: Box::new(child) }
    }

    /// All predicates in evaluation order.
    pub fn predicates(&self) -> Vec<&LinearPredicate> {
        let mut out = Vec::new();
        self.visit(&mut |f| {
            if let MtlFormula::Pred(p) = f {
                out.push(p);
            }
        });
        out
    }

    fn visit<'a>(&'a self, f: &mut impl FnMut(&'a MtlFormula)) {
        f(self);
        match self {
            MtlFormula::True | MtlFormula::Pred(_) => {}
            MtlFormula::Not(c) => c.visit(f),
            MtlFormula::And(cs) | MtlFormula::Or(cs) => cs.iter().for_each(|c| c.visit(f)),
            MtlFormula::Until { left, right, .. } => {
                left.visit(f);
                right.visit(f);
            }
            MtlFormula::Always { child, .. } | MtlFormula::Eventually { child, .. } => child.visit(f),
        }
    }
}

/// Time-stamped samples of (state, input, mode) at a uniform step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalTrace {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub inputs: Vec<Vec<f64>>,
    pub modes: Vec<usize>,
    pub dt: f64,
}

impl SignalTrace {
    pub fn new(
        times: Vec<f64>,
        states: Vec<Vec<f64>>,
        inputs: Vec<Vec<f64>>,
        modes: Vec<usize>,
        dt: f64,
    ) -> MtlResult<Self> {
        if times.is_empty() {
            return Err(MtlError::BadTrace { msg: "empty trace".into() });
        }
        if states.len() != times.len() || inputs.len() != times.len() || modes.len() != times.len() {
            return Err(MtlError::BadTrace { msg: "channel lengths differ".into() });
        }
        for w in times.windows(2) {
            if (w[1] - w[0] - dt).abs() > 1e-12 * (1.0 + dt) {
                return Err(MtlError::BadTrace { msg: "sampling step is not uniform".into() });
            }
        }
        Ok(SignalTrace { times, states, inputs, modes, dt })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// Index of the sample closest to `t`.
    pub fn index_of(&self, t: f64) -> usize {
        let raw = (t - self.start()) / self.dt;
        (raw.round().max(0.0) as usize).min(self.len() - 1)
    }

    /// Inclusive index window covering `[lo, hi]` with endpoints snapped
    /// outward to the nearest sample; clamped to the trace.
    pub fn sample_window(&self, lo: f64, hi: f64) -> (usize, usize) {
        window_indices(self.start(), self.dt, self.len(), lo, hi)
    }
}

/// Inclusive sample-index window covering `[lo, hi]` on a uniform grid
/// `t0 + j dt`, endpoints snapped outward, clamped to `0..n`.
///
/// This single rule is shared by the robustness evaluator and the LP
/// encoder so that both constrain exactly the same sample set.
pub fn window_indices(t0: f64, dt: f64, n: usize, lo: f64, hi: f64) -> (usize, usize) {
    let n = n as i64;
    let rel_lo = (lo - t0) / dt;
    let rel_hi = (hi - t0) / dt;
    let snap = 1e-6;
    let lo_idx = if (rel_lo - rel_lo.round()).abs() < snap {
        rel_lo.round() as i64
    } else {
        rel_lo.floor() as i64
    };
    let hi_idx = if (rel_hi - rel_hi.round()).abs() < snap {
        rel_hi.round() as i64
    } else {
        rel_hi.ceil() as i64
    };
    let lo_idx = lo_idx.clamp(0, n - 1) as usize;
    let hi_idx = hi_idx.clamp(0, n - 1) as usize;
    (lo_idx, hi_idx)
}

/// Finite union of disjoint closed intervals, kept sorted.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalSet {
    pub parts: Vec<(f64, f64)>,
}

impl IntervalSet {
    pub fn single(lo: f64, hi: f64) -> Self {
        if lo > hi {
            IntervalSet { parts: vec![] }
        } else {
            IntervalSet { parts: vec![(lo, hi)] }
        }
    }

    pub fn is_empty(&self) -> bool {
        self.parts.is_empty()
    }

    pub fn contains(&self, t: f64) -> bool {
        self.parts.iter().any(|&(lo, hi)| t >= lo - 1e-9 && t <= hi + 1e-9)
    }

    pub fn intersect(&self, other: &IntervalSet) -> IntervalSet {
        let mut parts = Vec::new();
        for &(a1, b1) in &self.parts {
            for &(a2, b2) in &other.parts {
                let lo = a1.max(a2);
                let hi = b1.min(b2);
                if lo <= hi {
                    parts.push((lo, hi));
                }
            }
        }
        parts.sort_by(|x, y| x.partial_cmp(y).unwrap());
        IntervalSet { parts }
    }

    /// `{ t | t + [lo, hi] subset of self }`, component-wise (components are
    /// separated, and `t + I` is connected, so this is exact).
    pub fn shrink(&self, iv: Interval) -> IntervalSet {
        let parts = self
            .parts
            .iter()
            .filter_map(|&(a, b)| {
                let lo = a - iv.lo;
                let hi = b - iv.hi;
                (lo <= hi).then_some((lo, hi))
            })
            .collect();
        IntervalSet { parts }
    }
}

/// Finite time domain of a formula over a trace.
pub fn time_domain(formula: &MtlFormula, trace: &SignalTrace) -> MtlResult<IntervalSet> {
    if trace.is_empty() {
        return Err(MtlError::BadTrace { msg: "empty trace".into() });
    }
    let d = domain_rec(formula, trace);
    if d.is_empty() {
        return Err(MtlError::EmptyDomain);
    }
    Ok(d)
}

fn domain_rec(formula: &MtlFormula, trace: &SignalTrace) -> IntervalSet {
    let full = IntervalSet::single(trace.start(), trace.end());
    match formula {
        MtlFormula::True | MtlFormula::Pred(_) => full,
        MtlFormula::Not(child) => domain_rec(child, trace),
        MtlFormula::And(cs) | MtlFormula::Or(cs) => cs
            .iter()
            .map(|c| domain_rec(c, trace))
            .fold(full, |acc, d| acc.intersect(&d)),
        MtlFormula::Until { interval, left, right } => {
            let d = domain_rec(left, trace).intersect(&domain_rec(right, trace));
            d.shrink(*interval).intersect(&full)
        }
        MtlFormula::Always { interval, child } | MtlFormula::Eventually { interval, child } => {
            domain_rec(child, trace).shrink(*interval).intersect(&full)
        }
    }
}

/// Robustness degree of `formula` over `trace` at time `t`, per the sampled
/// max/min semantics. `t` must lie in the formula's time domain.
pub fn robustness(formula: &MtlFormula, trace: &SignalTrace, t: f64) -> MtlResult<f64> {
    let dom = time_domain(formula, trace)?;
    if !dom.contains(t) {
        return Err(MtlError::OutOfDomain { t });
    }
    let j = trace.index_of(t);
    let mut memo = std::collections::HashMap::new();
    Ok(eval(formula, trace, j, &mut memo))
}

type Memo = std::collections::HashMap<(usize, usize), f64>;

fn eval(formula: &MtlFormula, trace: &SignalTrace, j: usize, memo: &mut Memo) -> f64 {
    let key = (formula as *const MtlFormula as usize, j);
    if let Some(&v) = memo.get(&key) {
        return v;
    }
    let t = trace.times[j];
    let v = match formula {
        MtlFormula::True => f64::INFINITY,
        MtlFormula::Pred(p) => p.margin(&trace.states[j], &trace.inputs[j], t),
        MtlFormula::Not(child) => -eval(child, trace, j, memo),
        MtlFormula::And(cs) => cs
            .iter()
            .map(|c| eval(c, trace, j, memo))
            .fold(f64::INFINITY, f64::min),
        MtlFormula::Or(cs) => cs
            .iter()
            .map(|c| eval(c, trace, j, memo))
            .fold(f64::NEG_INFINITY, f64::max),
        MtlFormula::Always { interval, child } => {
            let (lo, hi) = trace.sample_window(t + interval.lo, t + interval.hi);
            (lo..=hi)
                .map(|jj| eval(child, trace, jj, memo))
                .fold(f64::INFINITY, f64::min)
        }
        MtlFormula::Eventually { interval, child } => {
            let (lo, hi) = trace.sample_window(t + interval.lo, t + interval.hi);
            (lo..=hi)
                .map(|jj| eval(child, trace, jj, memo))
                .fold(f64::NEG_INFINITY, f64::max)
        }
        MtlFormula::Until { interval, left, right } => {
            let (lo, hi) = trace.sample_window(t + interval.lo, t + interval.hi);
            let mut best = f64::NEG_INFINITY;
            for jp in lo..=hi {
                let mut cand = eval(right, trace, jp, memo);
                // min over j <= j'' < j' of the left operand
                for jpp in j..jp {
                    cand = cand.min(eval(left, trace, jpp, memo));
                }
                best = best.max(cand);
            }
            best
        }
    };
    memo.insert(key, v);
    v
}

/// One `Always` block of the synthesis fragment: a conjunction of predicates
/// that must hold on `[tau, t_end]`.
#[derive(Debug, Clone)]
pub struct FragmentBlock {
    pub tau: f64,
    pub t_end: f64,
    pub preds: Vec<LinearPredicate>,
}

/// Decompose a formula into synthesis-fragment blocks: a conjunction of
/// `Always_[tau_k, T_end]` over conjunctions of predicates, sharing one
/// `T_end`. Blocks with equal `tau` are merged; the result is sorted by
/// `tau`. With `check_nesting`, later blocks must tighten matching-normal
/// predicate bounds of earlier ones.
pub fn fragment_blocks(formula: &MtlFormula, check_nesting: bool) -> MtlResult<Vec<FragmentBlock>> {
    let mut blocks: Vec<FragmentBlock> = Vec::new();
    collect_blocks(formula, &mut blocks)?;
    if blocks.is_empty() {
        return Err(MtlError::FragmentViolation { msg: "no Always blocks found".into() });
    }
    let t_end = blocks[0].t_end;
    if blocks.iter().any(|b| (b.t_end - t_end).abs() > 1e-9) {
        return Err(MtlError::FragmentViolation { msg: "blocks do not share one end time".into() });
    }
    blocks.sort_by(|a, b| a.tau.partial_cmp(&b.tau).unwrap());
    let mut merged: Vec<FragmentBlock> = Vec::new();
    for b in blocks {
        match merged.last_mut() {
            Some(last) if (last.tau - b.tau).abs() < 1e-12 => last.preds.extend(b.preds),
            _ => merged.push(b),
        }
    }
    if check_nesting {
        for w in merged.windows(2) {
            let (outer, inner) = (&w[0], &w[1]);
            for op in &outer.preds {
                let tightened = inner.preds.iter().any(|ip| {
                    normals_match(&op.a, &ip.a) && normals_match(&op.c, &ip.c) && ip.b <= op.b + 1e-12
                });
                if !tightened {
                    return Err(MtlError::FragmentViolation {
                        msg: format!(
                            "predicate `{}` of the tau={} block is not tightened at tau={}",
                            op.label, outer.tau, inner.tau
                        ),
                    });
                }
            }
        }
    }
    Ok(merged)
}

fn normals_match(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-9)
}

fn collect_blocks(formula: &MtlFormula, out: &mut Vec<FragmentBlock>) -> MtlResult<()> {
    match formula {
        MtlFormula::And(cs) => {
            for c in cs {
                collect_blocks(c, out)?;
            }
            Ok(())
        }
        MtlFormula::Always { interval, child } => {
            let mut preds = Vec::new();
            collect_preds(child, &mut preds)?;
            out.push(FragmentBlock { tau: interval.lo, t_end: interval.hi, preds });
            Ok(())
        }
        other => Err(MtlError::FragmentViolation {
            msg: format!("unexpected node outside Always blocks: {other:?}"),
        }),
    }
}

fn collect_preds(formula: &MtlFormula, out: &mut Vec<LinearPredicate>) -> MtlResult<()> {
    match formula {
        MtlFormula::And(cs) => {
            for c in cs {
                collect_preds(c, out)?;
            }
            Ok(())
        }
        MtlFormula::Pred(p) => {
            out.push(p.clone());
            Ok(())
        }
        other => Err(MtlError::FragmentViolation {
            msg: format!("Always block contains a non-predicate node: {other:?}"),
        }),
    }
}

/// Per-predicate, per-schedule-position bound offsets with piecewise
/// exponential decay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustModification {
    /// Absolute start time of each schedule position.
    pub segment_starts: Vec<f64>,
    /// Decay rate (the certificate's mu) per schedule position.
    pub rates: Vec<f64>,
    /// `offsets[k][nu][i]` for fragment block `k`, conjunct `nu`, position `i`.
    pub offsets: Vec<Vec<Vec<f64>>>,
}

/// Tighten each fragment predicate bound by the modification's decaying
/// offsets, producing the guarantee-adjusted formula. The input must be
/// fragment-shaped and the modification must cover every predicate.
pub fn robustify(formula: &MtlFormula, modification: &RobustModification) -> MtlResult<MtlFormula> {
    let blocks = fragment_blocks(formula, false)?;
    if modification.offsets.len() != blocks.len() {
        return Err(MtlError::MissingOffset { k: modification.offsets.len(), nu: 0 });
    }
    let n_pos = modification.segment_starts.len();
    let mut parts = Vec::new();
    for (k, block) in blocks.iter().enumerate() {
        let block_offsets = &modification.offsets[k];
        if block_offsets.len() != block.preds.len() {
            return Err(MtlError::MissingOffset { k, nu: block_offsets.len() });
        }
        let mut preds = Vec::new();
        for (nu, pred) in block.preds.iter().enumerate() {
            let amps = &block_offsets[nu];
            if amps.len() != n_pos {
                return Err(MtlError::MissingOffset { k, nu });
            }
            if amps.iter().any(|d| *d < 0.0) {
                return Err(MtlError::FragmentViolation {
                    msg: format!("negative offset for predicate `{}`", pred.label),
                });
            }
            let mut p = pred.clone();
            if amps.iter().any(|d| *d > 0.0) {
                p.decay = Some(PiecewiseDecay {
                    starts: modification.segment_starts.clone(),
                    rates: modification.rates.clone(),
                    amplitudes: amps.clone(),
                });
            }
            preds.push(MtlFormula::Pred(p));
        }
        parts.push(MtlFormula::always(block.tau, block.t_end, MtlFormula::and(preds)));
    }
    Ok(MtlFormula::and(parts))
}

#[cfg(test)]
mod tests;
