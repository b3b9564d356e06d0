//! Text grammar for MTL formulas.
//!
//! ```text
//! phi     := or
//! or      := and ('|' and)*
//! and     := until ('&' until)*
//! until   := unary ('U' '[' num ',' num ']' unary)*
//! unary   := '!' unary | 'G' '[' num ',' num ']' unary
//!          | 'F' '[' num ',' num ']' unary | '(' phi ')' | atom
//! atom    := lincomb ('<=' | '>=') num
//! lincomb := ['-'] term (('+' | '-') term)*
//! term    := num '*' var | var
//! ```
//!
//! Variables are declared against a [`VarTable`] mapping names to state or
//! input indices, optionally with a scale factor (for unit-change aliases).
//! Predicates are automatically normalized to a unit state normal, scaling
//! the input coefficients and the bound accordingly; a warning is recorded
//! when this changes the coefficients.

use super::{Interval, LinearPredicate, MtlError, MtlFormula, MtlResult};
use crate::numkernel::norm2;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarKind {
    State,
    Input,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarRef {
    pub kind: VarKind,
    pub index: usize,
    /// The variable denotes `scale * x[index]` (or `scale * u[index]`).
    pub scale: f64,
}

/// Name resolution table for formula variables.
#[derive(Debug, Clone, Default)]
pub struct VarTable {
    pub state_dim: usize,
    pub input_dim: usize,
    entries: BTreeMap<String, VarRef>,
}

impl VarTable {
    pub fn new(state_dim: usize, input_dim: usize) -> Self {
        VarTable { state_dim, input_dim, entries: BTreeMap::new() }
    }

    /// Table with one entry per state/input name, scale 1.
    pub fn from_names(state_names: &[String], input_names: &[String]) -> Self {
        let mut t = VarTable::new(state_names.len(), input_names.len());
        for (i, n) in state_names.iter().enumerate() {
            t.insert(n, VarRef { kind: VarKind::State, index: i, scale: 1.0 });
        }
        for (i, n) in input_names.iter().enumerate() {
            t.insert(n, VarRef { kind: VarKind::Input, index: i, scale: 1.0 });
        }
        t
    }

    pub fn insert(&mut self, name: &str, var: VarRef) {
        match var.kind {
            VarKind::State => assert!(var.index < self.state_dim),
            VarKind::Input => assert!(var.index < self.input_dim),
        }
        self.entries.insert(name.to_string(), var);
    }

    pub fn get(&self, name: &str) -> Option<&VarRef> {
        self.entries.get(name)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ParseOptions {
    /// Rescale predicates to a unit state normal instead of rejecting them.
    pub auto_normalize: bool,
}

impl Default for ParseOptions {
    fn default() -> Self {
        ParseOptions { auto_normalize: true }
    }
}

#[derive(Debug, Clone)]
pub struct Parsed {
    pub formula: MtlFormula,
    pub warnings: Vec<String>,
}

pub fn parse_formula(text: &str, vars: &VarTable, opts: ParseOptions) -> MtlResult<Parsed> {
    let tokens = tokenize(text)?;
    let mut p = Parser { tokens, pos: 0, vars, opts, warnings: Vec::new() };
    let formula = p.parse_or()?;
    if p.pos != p.tokens.len() {
        let tok = &p.tokens[p.pos];
        return Err(MtlError::Syntax {
            line: tok.line,
            col: tok.col,
            msg: format!("unexpected trailing `{}`", tok.text),
        });
    }
    Ok(Parsed { formula, warnings: p.warnings })
}

/// Render a formula back to grammar text, using raw state/input names.
/// Parse-print-parse is the identity on ASTs for formulas without bound
/// offsets (offsets have no textual form).
pub fn print_formula(
    formula: &MtlFormula,
    state_names: &[String],
    input_names: &[String],
) -> String {
    print_prec(formula, state_names, input_names, 0)
}

fn print_prec(f: &MtlFormula, sn: &[String], inn: &[String], parent: u8) -> String {
    // precedence levels: or=1, and=2, until=3, unary=4
    let (s, level) = match f {
        MtlFormula::True => ("true".to_string(), 4),
        MtlFormula::Pred(p) => (print_pred(p, sn, inn), 4),
        MtlFormula::Not(c) => (format!("!{}", print_prec(c, sn, inn, 4)), 4),
        MtlFormula::And(cs) => (
            cs.iter().map(|c| print_prec(c, sn, inn, 2)).collect::<Vec<_>>().join(" & "),
            2,
        ),
        MtlFormula::Or(cs) => (
            cs.iter().map(|c| print_prec(c, sn, inn, 1)).collect::<Vec<_>>().join(" | "),
            1,
        ),
        MtlFormula::Until { interval, left, right } => (
            format!(
                "{} U[{},{}] {}",
                print_prec(left, sn, inn, 4),
                interval.lo,
                interval.hi,
                print_prec(right, sn, inn, 4)
            ),
            3,
        ),
        MtlFormula::Always { interval, child } => (
            format!("G[{},{}] {}", interval.lo, interval.hi, print_prec(child, sn, inn, 4)),
            4,
        ),
        MtlFormula::Eventually { interval, child } => (
            format!("F[{},{}] {}", interval.lo, interval.hi, print_prec(child, sn, inn, 4)),
            4,
        ),
    };
    if level < parent {
        format!("({s})")
    } else {
        s
    }
}

fn print_pred(p: &LinearPredicate, state_names: &[String], input_names: &[String]) -> String {
    let mut terms = Vec::new();
    for (i, &v) in p.a.iter().enumerate() {
        if v != 0.0 {
            terms.push((v, state_names[i].clone()));
        }
    }
    for (i, &v) in p.c.iter().enumerate() {
        if v != 0.0 {
            terms.push((v, input_names[i].clone()));
        }
    }
    let mut s = String::new();
    for (i, (v, name)) in terms.iter().enumerate() {
        if i == 0 {
            if *v < 0.0 {
                s.push('-');
            }
        } else if *v < 0.0 {
            s.push_str(" - ");
        } else {
            s.push_str(" + ");
        }
        let mag = v.abs();
        if mag == 1.0 {
            s.push_str(name);
        } else {
            s.push_str(&format!("{mag}*{name}"));
        }
    }
    format!("{s} <= {}", p.b)
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Num(f64),
    LBracket,
    RBracket,
    LParen,
    RParen,
    Comma,
    Amp,
    Pipe,
    Bang,
    Star,
    Plus,
    Minus,
    Le,
    Ge,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    text: String,
    line: usize,
    col: usize,
}

fn tokenize(text: &str) -> MtlResult<Vec<Token>> {
    let mut tokens = Vec::new();
    let mut line = 1usize;
    let mut col = 1usize;
    let chars: Vec<char> = text.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let (tline, tcol) = (line, col);
        let mut push = |tok: Tok, text: String| {
            tokens.push(Token { tok, text, line: tline, col: tcol });
        };
        match c {
            '\n' => {
                line += 1;
                col = 1;
                i += 1;
                continue;
            }
            ' ' | '\t' | '\r' => {}
            '[' => push(Tok::LBracket, "[".into()),
            ']' => push(Tok::RBracket, "]".into()),
            '(' => push(Tok::LParen, "(".into()),
            ')' => push(Tok::RParen, ")".into()),
            ',' => push(Tok::Comma, ",".into()),
            '&' => push(Tok::Amp, "&".into()),
            '|' => push(Tok::Pipe, "|".into()),
            '!' => push(Tok::Bang, "!".into()),
            '*' => push(Tok::Star, "*".into()),
            '+' => push(Tok::Plus, "+".into()),
            '-' => push(Tok::Minus, "-".into()),
            '<' | '>' => {
                if i + 1 < chars.len() && chars[i + 1] == '=' {
                    push(if c == '<' { Tok::Le } else { Tok::Ge }, format!("{c}="));
                    i += 1;
                    col += 1;
                } else {
                    return Err(MtlError::Syntax {
                        line,
                        col,
                        msg: format!("strict `{c}` is not supported, use `{c}=`"),
                    });
                }
            }
            _ if c.is_ascii_digit() || c == '.' => {
                let start = i;
                while i < chars.len()
                    && (chars[i].is_ascii_digit()
                        || chars[i] == '.'
                        || chars[i] == 'e'
                        || chars[i] == 'E'
                        || ((chars[i] == '+' || chars[i] == '-')
                            && i > start
                            && (chars[i - 1] == 'e' || chars[i - 1] == 'E')))
                {
                    i += 1;
                    col += 1;
                }
                let s: String = chars[start..i].iter().collect();
                let v: f64 = s.parse().map_err(|_| MtlError::Syntax {
                    line,
                    col: tcol,
                    msg: format!("bad number `{s}`"),
                })?;
                tokens.push(Token { tok: Tok::Num(v), text: s, line, col: tcol });
                continue;
            }
            _ if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                    col += 1;
                }
                let s: String = chars[start..i].iter().collect();
                tokens.push(Token { tok: Tok::Ident(s.clone()), text: s, line, col: tcol });
                continue;
            }
            _ => {
                return Err(MtlError::Syntax { line, col, msg: format!("unexpected character `{c}`") })
            }
        }
        i += 1;
        col += 1;
    }
    Ok(tokens)
}

struct Parser<'a> {
    tokens: Vec<Token>,
    pos: usize,
    vars: &'a VarTable,
    opts: ParseOptions,
    warnings: Vec<String>,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn err_here(&self, msg: impl Into<String>) -> MtlError {
        let (line, col) = self
            .peek()
            .map(|t| (t.line, t.col))
            .or_else(|| self.tokens.last().map(|t| (t.line, t.col + t.text.len())))
            .unwrap_or((1, 1));
        MtlError::Syntax { line, col, msg: msg.into() }
    }

    fn expect(&mut self, tok: Tok, what: &str) -> MtlResult<()> {
        match self.peek() {
            Some(t) if t.tok == tok => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(self.err_here(format!("expected {what}"))),
        }
    }

    fn parse_or(&mut self) -> MtlResult<MtlFormula> {
        let mut parts = vec![self.parse_and()?];
        while matches!(self.peek().map(|t| &t.tok), Some(Tok::Pipe)) {
            self.pos += 1;
            parts.push(self.parse_and()?);
        }
        Ok(if parts.len() == 1 { parts.pop().unwrap() } else { MtlFormula::Or(parts) })
    }

    fn parse_and(&mut self) -> MtlResult<MtlFormula> {
        let mut parts = vec![self.parse_until()?];
        while matches!(self.peek().map(|t| &t.tok), Some(Tok::Amp)) {
            self.pos += 1;
            parts.push(self.parse_until()?);
        }
        Ok(if parts.len() == 1 { parts.pop().unwrap() } else { MtlFormula::And(parts) })
    }

    fn parse_until(&mut self) -> MtlResult<MtlFormula> {
        let mut left = self.parse_unary()?;
        loop {
            match self.peek() {
                Some(t) if matches!(&t.tok, Tok::Ident(s) if s == "U") => {
                    self.pos += 1;
                    let interval = self.parse_interval()?;
                    let right = self.parse_unary()?;
                    left = MtlFormula::Until {
                        interval,
                        left: Box::new(left),
                        right: Box::new(right),
                    };
                }
                _ => return Ok(left),
            }
        }
    }

    fn parse_interval(&mut self) -> MtlResult<Interval> {
        self.expect(Tok::LBracket, "`[`")?;
        let lo = self.parse_signed_num()?;
        self.expect(Tok::Comma, "`,`")?;
        let hi = self.parse_signed_num()?;
        self.expect(Tok::RBracket, "`]`")?;
        if lo < 0.0 || lo > hi {
            return Err(self.err_here(format!("bad interval [{lo},{hi}]: need 0 <= lo <= hi")));
        }
        Ok(Interval::new(lo, hi))
    }

    fn parse_signed_num(&mut self) -> MtlResult<f64> {
        let mut sign = 1.0;
        while matches!(self.peek().map(|t| &t.tok), Some(Tok::Minus)) {
            sign = -sign;
            self.pos += 1;
        }
        match self.peek().cloned() {
            Some(Token { tok: Tok::Num(v), .. }) => {
                self.pos += 1;
                Ok(sign * v)
            }
            _ => Err(self.err_here("expected a number")),
        }
    }

    fn parse_unary(&mut self) -> MtlResult<MtlFormula> {
        match self.peek().cloned() {
            Some(t) if t.tok == Tok::Bang => {
                self.pos += 1;
                Ok(MtlFormula::Not(Box::new(self.parse_unary()?)))
            }
            Some(t) if matches!(&t.tok, Tok::Ident(s) if s == "G") => {
                self.pos += 1;
                let interval = self.parse_interval()?;
                Ok(MtlFormula::Always { interval, child: Box::new(self.parse_unary()?) })
            }
            Some(t) if matches!(&t.tok, Tok::Ident(s) if s == "F") => {
                self.pos += 1;
                let interval = self.parse_interval()?;
                Ok(MtlFormula::Eventually { interval, child: Box::new(self.parse_unary()?) })
            }
            Some(t) if matches!(&t.tok, Tok::Ident(s) if s == "true") => {
                self.pos += 1;
                Ok(MtlFormula::True)
            }
            Some(t) if t.tok == Tok::LParen => {
                self.pos += 1;
                let inner = self.parse_or()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(inner)
            }
            Some(_) => self.parse_atom(),
            None => Err(self.err_here("unexpected end of formula")),
        }
    }

    fn parse_atom(&mut self) -> MtlResult<MtlFormula> {
        let mut a = vec![0.0; self.vars.state_dim];
        let mut c = vec![0.0; self.vars.input_dim];
        let mut label_parts: Vec<String> = Vec::new();
        let mut sign = 1.0;
        if matches!(self.peek().map(|t| &t.tok), Some(Tok::Minus)) {
            sign = -1.0;
            self.pos += 1;
        }
        loop {
            let coeff = match self.peek().cloned() {
                Some(Token { tok: Tok::Num(v), .. }) => {
                    self.pos += 1;
                    self.expect(Tok::Star, "`*` after coefficient")?;
                    v
                }
                _ => 1.0,
            };
            let (name, line, col) = match self.peek().cloned() {
                Some(Token { tok: Tok::Ident(s), line, col, .. }) => {
                    self.pos += 1;
                    (s, line, col)
                }
                _ => return Err(self.err_here("expected a variable name")),
            };
            let var = self
                .vars
                .get(&name)
                .ok_or(MtlError::UnknownVariable { name: name.clone(), line, col })?;
            let signed = sign * coeff * var.scale;
            match var.kind {
                VarKind::State => a[var.index] += signed,
                VarKind::Input => c[var.index] += signed,
            }
            label_parts.push(name);
            match self.peek().map(|t| t.tok.clone()) {
                Some(Tok::Plus) => {
                    sign = 1.0;
                    self.pos += 1;
                }
                Some(Tok::Minus) => {
                    sign = -1.0;
                    self.pos += 1;
                }
                _ => break,
            }
        }
        let flip = match self.peek().map(|t| t.tok.clone()) {
            Some(Tok::Le) => false,
            Some(Tok::Ge) => true,
            _ => return Err(self.err_here("expected `<=` or `>=`")),
        };
        self.pos += 1;
        let mut b = self.parse_signed_num()?;
        if flip {
            // a.x >= b  <=>  -a.x <= -b
            a.iter_mut().for_each(|v| *v = -*v);
            c.iter_mut().for_each(|v| *v = -*v);
            b = -b;
        }
        let norm = norm2(&a);
        if norm < 1e-12 {
            return Err(self.err_here("predicate has no state component"));
        }
        if (norm - 1.0).abs() > 1e-9 {
            if !self.opts.auto_normalize {
                return Err(MtlError::NonNormalizedPredicate { norm });
            }
            self.warnings.push(format!(
                "predicate over [{}] normalized (state normal had 2-norm {norm:.6})",
                label_parts.join(",")
            ));
        }
        let label = format!(
            "{}{}{}",
            label_parts.join("+"),
            if flip { ">=" } else { "<=" },
            if flip { -b } else { b }
        );
        Ok(MtlFormula::Pred(LinearPredicate::normalized(a, c, b, label)?))
    }
}
