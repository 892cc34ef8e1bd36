//! Functional decompositions `w_j = h_j(w_i{, w_k})` compiled from postfix streams.
//!
//! Observables are stored 0-based; every rendering and serialization uses the
//! 1-based `w_k` names. Referenced indices are always strictly smaller than the
//! defining index, so the dependency graph is acyclic by construction.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{apply_op, Op, RpnExpr, TokenKind};
use crate::obs_name;
use crate::prim::{fmt_num, render_affine, BinaryOp, Composite, EvalError, UnaryOp};

#[derive(Debug, Error)]
pub enum DecompError {
    #[error("expression uses {found} variables but the decomposition has {n_x} inputs")]
    VariableCount { found: usize, n_x: usize },
    #[error("variable `{0}` is not among the declared inputs")]
    UnknownVariable(String),
    #[error("malformed postfix stream: stack underflow at token {at} (`{lexeme}`)")]
    StackUnderflow { at: usize, lexeme: String },
    #[error("malformed postfix stream: {0} values left on the stack")]
    Leftover(usize),
    #[error("parenthesis token in postfix stream")]
    Paren,
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Parse(#[from] crate::expr::ParseError),
    #[error("invalid decomposition: {0}")]
    Invalid(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub enum ObservableExpr {
    Input {
        slot: usize,
    },
    Unary {
        op: UnaryOp,
        arg: usize,
    },
    Binary {
        op: BinaryOp,
        lhs: usize,
        rhs: usize,
    },
    /// `Σ c·w + offset`, terms sorted by index, no zero coefficients.
    Affine {
        terms: Vec<(usize, f64)>,
        offset: f64,
    },
}

impl ObservableExpr {
    /// Distinct argument indices in ascending order.
    pub fn args(&self) -> Vec<usize> {
        let mut v = match self {
            ObservableExpr::Input { .. } => Vec::new(),
            ObservableExpr::Unary { arg, .. } => vec![*arg],
            ObservableExpr::Binary { lhs, rhs, .. } => vec![*lhs, *rhs],
            ObservableExpr::Affine { terms, .. } => terms.iter().map(|t| t.0).collect(),
        };
        v.sort_unstable();
        v.dedup();
        v
    }

    pub fn kind(&self) -> &'static str {
        match self {
            ObservableExpr::Input { .. } => "input",
            ObservableExpr::Unary { .. } => "unary",
            ObservableExpr::Binary { .. } => "binary",
            ObservableExpr::Affine { .. } => "affine",
        }
    }

    pub fn is_affine(&self) -> bool {
        matches!(self, ObservableExpr::Affine { .. })
    }

    /// Sorts commutative operands and merges affine terms.
    pub fn canonicalize(self) -> Self {
        match self {
            ObservableExpr::Binary { op, lhs, rhs } if op.is_commutative() && lhs > rhs => {
                ObservableExpr::Binary { op, lhs: rhs, rhs: lhs }
            }
            ObservableExpr::Affine { terms, offset } => ObservableExpr::Affine { terms: merge_terms(terms), offset },
            other => other,
        }
    }

    /// Structural key of a canonical expression.
    pub fn key(&self) -> String {
        match self {
            ObservableExpr::Input { slot } => format!("in{slot}"),
            ObservableExpr::Unary { op, arg } => format!("{}({arg})", op.key()),
            ObservableExpr::Binary { op, lhs, rhs } => format!("{}({lhs},{rhs})", op.name()),
            ObservableExpr::Affine { terms, offset } => {
                let parts: Vec<String> = terms.iter().map(|(i, c)| format!("{i}:{:016x}", c.to_bits())).collect();
                format!("aff[{};{:016x}]", parts.join(","), offset.to_bits())
            }
        }
    }

    pub fn map_args(&self, f: impl Fn(usize) -> usize) -> Self {
        match self {
            ObservableExpr::Input { slot } => ObservableExpr::Input { slot: *slot },
            ObservableExpr::Unary { op, arg } => ObservableExpr::Unary { op: op.clone(), arg: f(*arg) },
            ObservableExpr::Binary { op, lhs, rhs } => ObservableExpr::Binary { op: *op, lhs: f(*lhs), rhs: f(*rhs) },
            ObservableExpr::Affine { terms, offset } => {
                ObservableExpr::Affine { terms: terms.iter().map(|(i, c)| (f(*i), *c)).collect(), offset: *offset }
            }
        }
    }

    /// Value given the values of all lower-indexed observables.
    pub fn eval(&self, values: &[f64], inputs: &[f64]) -> Result<f64, EvalError> {
        match self {
            ObservableExpr::Input { slot } => Ok(inputs[*slot]),
            ObservableExpr::Unary { op, arg } => op.eval(values[*arg]),
            ObservableExpr::Binary { op, lhs, rhs } => op.eval(values[*lhs], values[*rhs]),
            ObservableExpr::Affine { terms, offset } => Ok(terms.iter().map(|(i, c)| c * values[*i]).sum::<f64>() + offset),
        }
    }

    pub fn render(&self, names: &dyn Fn(usize) -> String) -> String {
        match self {
            ObservableExpr::Input { slot } => format!("x_{}", slot + 1),
            ObservableExpr::Unary { op, arg } => op.render(&names(*arg)),
            ObservableExpr::Binary { op, lhs, rhs } => {
                let sym = match op {
                    BinaryOp::Mul => "*",
                    BinaryOp::Div => "/",
                    BinaryOp::Pow => "^",
                };
                format!("{}{sym}{}", names(*lhs), names(*rhs))
            }
            ObservableExpr::Affine { terms, offset } => {
                let t: Vec<(String, f64)> = terms.iter().map(|(i, c)| (names(*i), *c)).collect();
                render_affine(&t, *offset)
            }
        }
    }
}

fn merge_terms(mut terms: Vec<(usize, f64)>) -> Vec<(usize, f64)> {
    terms.sort_by_key(|t| t.0);
    let mut out: Vec<(usize, f64)> = Vec::with_capacity(terms.len());
    for (i, c) in terms {
        match out.last_mut() {
            Some(last) if last.0 == i => last.1 += c,
            _ => out.push((i, c)),
        }
    }
    out.retain(|t| t.1 != 0.0);
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalDecomposition {
    /// Input names, one per slot.
    pub inputs: Vec<String>,
    /// All observables; the first `n_x` are inputs in slot order.
    pub observables: Vec<ObservableExpr>,
    /// Output observable indices (0-based), in output order.
    pub outputs: Vec<usize>,
}

impl FunctionalDecomposition {
    pub fn with_inputs(inputs: Vec<String>) -> Self {
        let observables = (0..inputs.len()).map(|slot| ObservableExpr::Input { slot }).collect();
        FunctionalDecomposition { inputs, observables, outputs: Vec::new() }
    }

    pub fn n_x(&self) -> usize {
        self.inputs.len()
    }

    /// Total observable count including inputs.
    pub fn len(&self) -> usize {
        self.observables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observables.is_empty()
    }

    /// Number of non-input observables (`K`).
    pub fn computed_count(&self) -> usize {
        self.observables.len() - self.n_x()
    }

    /// Forward substitution; returns every observable's value.
    pub fn eval_all(&self, inputs: &[f64]) -> Result<Vec<f64>, EvalError> {
        assert_eq!(inputs.len(), self.n_x(), "input length must equal n_x");
        let mut values = Vec::with_capacity(self.observables.len());
        for obs in &self.observables {
            let v = obs.eval(&values, inputs)?;
            values.push(v);
        }
        Ok(values)
    }

    /// Output values at `outputs`.
    pub fn eval(&self, inputs: &[f64]) -> Result<Vec<f64>, EvalError> {
        let values = self.eval_all(inputs)?;
        Ok(self.outputs.iter().map(|&o| values[o]).collect())
    }

    /// Successor lists (distinct consumers of each observable).
    pub fn successors(&self) -> Vec<Vec<usize>> {
        let mut succ = vec![Vec::new(); self.observables.len()];
        for (j, obs) in self.observables.iter().enumerate() {
            for a in obs.args() {
                succ[a].push(j);
            }
        }
        succ
    }

    pub fn validate(&self) -> Result<(), DecompError> {
        let bad = |m: String| Err(DecompError::Invalid(m));
        if self.observables.len() < self.n_x() {
            return bad("fewer observables than inputs".into());
        }
        for (j, obs) in self.observables.iter().enumerate() {
            match obs {
                ObservableExpr::Input { slot } => {
                    if j >= self.n_x() || *slot != j {
                        return bad(format!("{} is an input out of slot order", obs_name(j)));
                    }
                }
                _ if j < self.n_x() => return bad(format!("{} must be an input", obs_name(j))),
                ObservableExpr::Affine { terms, offset } => {
                    if !offset.is_finite() || terms.iter().any(|t| !t.1.is_finite() || t.1 == 0.0) {
                        return bad(format!("{} has a zero or non-finite coefficient", obs_name(j)));
                    }
                    if terms.windows(2).any(|w| w[0].0 >= w[1].0) {
                        return bad(format!("{} terms are not sorted and distinct", obs_name(j)));
                    }
                }
                _ => {}
            }
            if obs.args().iter().any(|&a| a >= j) {
                return bad(format!("{} references an index not smaller than its own", obs_name(j)));
            }
        }
        if let Some(o) = self.outputs.iter().find(|&&o| o >= self.observables.len()) {
            return bad(format!("output index {} out of range", o + 1));
        }
        Ok(())
    }

    /// Keeps the observables flagged in `keep` (inputs always kept) and reindexes.
    /// Returns the old-to-new index map.
    pub fn compact(&self, keep: &[bool]) -> (FunctionalDecomposition, Vec<Option<usize>>) {
        let mut map = vec![None; self.observables.len()];
        let mut observables = Vec::new();
        for (j, obs) in self.observables.iter().enumerate() {
            if j < self.n_x() || keep[j] {
                map[j] = Some(observables.len());
                observables.push(obs.map_args(|a| map[a].expect("argument of a kept observable must be kept")));
            }
        }
        let outputs = self.outputs.iter().map(|&o| map[o].expect("outputs are kept")).collect();
        (FunctionalDecomposition { inputs: self.inputs.clone(), observables, outputs }, map)
    }

    /// Flags observables that some output (or an index in `extra`) depends on.
    pub fn live(&self, extra: &[usize]) -> Vec<bool> {
        let mut live = vec![false; self.observables.len()];
        for &o in self.outputs.iter().chain(extra) {
            live[o] = true;
        }
        for j in (0..self.observables.len()).rev() {
            if live[j] {
                for a in self.observables[j].args() {
                    live[a] = true;
                }
            }
        }
        live
    }

    /// One `w_k = ...` line per observable, outputs marked.
    pub fn listing(&self) -> String {
        let mut out = String::new();
        for (j, obs) in self.observables.iter().enumerate() {
            let rhs = match obs {
                ObservableExpr::Input { slot } => self.inputs[*slot].clone(),
                _ => obs.render(&obs_name),
            };
            let marker = if self.outputs.contains(&j) { "  <- output" } else { "" };
            out.push_str(&format!("{} = {}{}\n", obs_name(j), rhs, marker));
        }
        out
    }

    /// Expression of observable `root` with `stop` as the free variable.
    ///
    /// Every path from `root` back to the inputs must pass through `stop`.
    pub fn to_composite(&self, root: usize, stop: usize) -> Option<Composite> {
        if root == stop {
            return Some(Composite::Var);
        }
        Some(match &self.observables[root] {
            ObservableExpr::Input { .. } => return None,
            ObservableExpr::Unary { op, arg } => Composite::Unary(op.clone(), Box::new(self.to_composite(*arg, stop)?)),
            ObservableExpr::Binary { op, lhs, rhs } => {
                Composite::Binary(*op, Box::new(self.to_composite(*lhs, stop)?), Box::new(self.to_composite(*rhs, stop)?))
            }
            ObservableExpr::Affine { terms, offset } => {
                let mut t = Vec::with_capacity(terms.len());
                for (i, c) in terms {
                    t.push((self.to_composite(*i, stop)?, *c));
                }
                Composite::Affine(t, *offset)
            }
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&FdDoc::from(self)).expect("serializable")
    }

    pub fn from_json(text: &str) -> Result<Self, DecompError> {
        let doc: FdDoc = serde_json::from_str(text)?;
        doc.try_into()
    }
}

impl fmt::Display for FunctionalDecomposition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.listing())
    }
}

/// Stack operand during compilation: a literal or an observable index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Operand {
    Const(f64),
    Obs(usize),
}

/// Incremental construction with optional canonical deduplication.
#[derive(Debug, Clone)]
pub struct Builder {
    fd: FunctionalDecomposition,
    dedup: bool,
    index: HashMap<String, usize>,
}

impl Builder {
    pub fn new(inputs: Vec<String>, dedup: bool) -> Self {
        let fd = FunctionalDecomposition::with_inputs(inputs);
        let index = fd.observables.iter().enumerate().map(|(i, o)| (o.key(), i)).collect();
        Builder { fd, dedup, index }
    }

    /// Switches deduplication for subsequent pushes.
    pub fn set_dedup(&mut self, on: bool) {
        self.dedup = on;
    }

    pub fn input(&self, slot: usize) -> Operand {
        assert!(slot < self.fd.n_x());
        Operand::Obs(slot)
    }

    pub fn len(&self) -> usize {
        self.fd.observables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fd.observables.is_empty()
    }

    /// Appends an observable, or returns an existing equal one in dedup mode.
    pub fn push(&mut self, expr: ObservableExpr) -> usize {
        let expr = expr.canonicalize();
        let key = expr.key();
        if self.dedup {
            if let Some(&i) = self.index.get(&key) {
                return i;
            }
        }
        let j = self.fd.observables.len();
        self.fd.observables.push(expr);
        self.index.entry(key).or_insert(j);
        j
    }

    pub fn unary(&mut self, op: UnaryOp, a: Operand) -> Result<Operand, EvalError> {
        Ok(match a {
            Operand::Const(v) => Operand::Const(op.eval(v)?),
            Operand::Obs(i) => Operand::Obs(self.push(ObservableExpr::Unary { op, arg: i })),
        })
    }

    /// `Σ c·operand + offset`; literal terms fold into the offset.
    pub fn affine(&mut self, terms: &[(Operand, f64)], offset: f64) -> Operand {
        let mut off = offset;
        let mut obs_terms = Vec::new();
        for (t, c) in terms {
            match t {
                Operand::Const(v) => off += c * v,
                Operand::Obs(i) => obs_terms.push((*i, *c)),
            }
        }
        let merged = merge_terms(obs_terms);
        match merged.as_slice() {
            [] => Operand::Const(off),
            [(i, c)] if *c == 1.0 && off == 0.0 => Operand::Obs(*i),
            _ => Operand::Obs(self.push(ObservableExpr::Affine { terms: merged, offset: off })),
        }
    }

    pub fn add(&mut self, a: Operand, b: Operand) -> Operand {
        self.affine(&[(a, 1.0), (b, 1.0)], 0.0)
    }

    pub fn sub(&mut self, a: Operand, b: Operand) -> Operand {
        self.affine(&[(a, 1.0), (b, -1.0)], 0.0)
    }

    pub fn scale(&mut self, a: Operand, c: f64) -> Operand {
        self.affine(&[(a, c)], 0.0)
    }

    pub fn mul(&mut self, a: Operand, b: Operand) -> Result<Operand, EvalError> {
        Ok(match (a, b) {
            (Operand::Const(x), Operand::Const(y)) => Operand::Const(BinaryOp::Mul.eval(x, y)?),
            (Operand::Const(c), o @ Operand::Obs(_)) | (o @ Operand::Obs(_), Operand::Const(c)) => self.scale(o, c),
            (Operand::Obs(i), Operand::Obs(k)) if i == k => self.unary(UnaryOp::Sq, a)?,
            (Operand::Obs(i), Operand::Obs(k)) => Operand::Obs(self.push(ObservableExpr::Binary { op: BinaryOp::Mul, lhs: i, rhs: k })),
        })
    }

    pub fn div(&mut self, a: Operand, b: Operand) -> Result<Operand, EvalError> {
        Ok(match (a, b) {
            (Operand::Const(x), Operand::Const(y)) => Operand::Const(BinaryOp::Div.eval(x, y)?),
            (o @ Operand::Obs(_), Operand::Const(c)) => {
                if c == 0.0 {
                    return Err(BinaryOp::Div.eval(1.0, 0.0).unwrap_err());
                }
                self.scale(o, 1.0 / c)
            }
            (Operand::Const(c), o @ Operand::Obs(_)) => {
                let inv = self.unary(UnaryOp::PowConst(-1.0), o)?;
                self.scale(inv, c)
            }
            (Operand::Obs(i), Operand::Obs(k)) => Operand::Obs(self.push(ObservableExpr::Binary { op: BinaryOp::Div, lhs: i, rhs: k })),
        })
    }

    pub fn pow(&mut self, a: Operand, b: Operand) -> Result<Operand, EvalError> {
        Ok(match (a, b) {
            (Operand::Const(x), Operand::Const(y)) => Operand::Const(BinaryOp::Pow.eval(x, y)?),
            (o @ Operand::Obs(_), Operand::Const(k)) => {
                if k == 1.0 {
                    o
                } else if k == 0.0 {
                    Operand::Const(1.0)
                } else if k == 2.0 {
                    self.unary(UnaryOp::Sq, o)?
                } else {
                    self.unary(UnaryOp::PowConst(k), o)?
                }
            }
            (Operand::Const(base), o @ Operand::Obs(_)) => {
                if base == 1.0 {
                    Operand::Const(1.0)
                } else {
                    self.unary(UnaryOp::ExpBase(base), o)?
                }
            }
            (Operand::Obs(i), Operand::Obs(k)) => Operand::Obs(self.push(ObservableExpr::Binary { op: BinaryOp::Pow, lhs: i, rhs: k })),
        })
    }

    pub fn binary(&mut self, op: Op, a: Operand, b: Operand) -> Result<Operand, EvalError> {
        match op {
            Op::Add => Ok(self.add(a, b)),
            Op::Sub => Ok(self.sub(a, b)),
            Op::Mul => self.mul(a, b),
            Op::Div => self.div(a, b),
            Op::Pow => self.pow(a, b),
        }
    }

    /// Materializes an operand as an observable (constants become `Affine{[], c}`).
    pub fn materialize(&mut self, a: Operand) -> usize {
        match a {
            Operand::Obs(i) => i,
            Operand::Const(c) => self.push(ObservableExpr::Affine { terms: Vec::new(), offset: c }),
        }
    }

    pub fn output(&mut self, a: Operand) -> usize {
        let i = self.materialize(a);
        self.fd.outputs.push(i);
        i
    }

    pub fn finish(self) -> FunctionalDecomposition {
        self.fd
    }
}

/// Maps the variables of `rpns` to input slots.
///
/// Explicit `names` win. Otherwise variables spelled `w_k` take slot `k`, and
/// any other naming assigns slots by first appearance.
pub fn resolve_inputs(rpns: &[RpnExpr], n_x: usize, names: Option<&[String]>) -> Result<Vec<String>, DecompError> {
    let mut vars: Vec<String> = Vec::new();
    for r in rpns {
        for v in r.variables() {
            if !vars.contains(&v) {
                vars.push(v);
            }
        }
    }
    if let Some(names) = names {
        if let Some(v) = vars.iter().find(|v| !names.contains(v)) {
            return Err(DecompError::UnknownVariable(v.clone()));
        }
        return Ok(names.to_vec());
    }
    let w_slots: Option<Vec<usize>> =
        vars.iter().map(|v| v.strip_prefix("w_").and_then(|k| k.parse::<usize>().ok()).filter(|&k| k >= 1)).collect();
    if let Some(slots) = w_slots.filter(|s| !s.is_empty()) {
        let max = *slots.iter().max().expect("non-empty");
        if max > n_x {
            return Err(DecompError::VariableCount { found: max, n_x });
        }
        return Ok((1..=n_x).map(|k| format!("w_{k}")).collect());
    }
    if vars.len() > n_x {
        return Err(DecompError::VariableCount { found: vars.len(), n_x });
    }
    let mut out = vars;
    let mut k = out.len();
    while out.len() < n_x {
        k += 1;
        out.push(format!("w_{k}"));
    }
    Ok(out)
}

/// Runs the observable-forming stack machine over several streams that share one
/// observable list. `•` tokens mark outputs; without them each stream must
/// reduce to a single value, which becomes an output.
pub fn compile(rpns: &[RpnExpr], inputs: Vec<String>, dedup: bool) -> Result<FunctionalDecomposition, DecompError> {
    let slot_of: HashMap<String, usize> = inputs.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
    let mut b = Builder::new(inputs, dedup);
    for rpn in rpns {
        let mut stack: Vec<Operand> = Vec::new();
        let mut marked = false;
        for (at, tok) in rpn.tokens.iter().enumerate() {
            let underflow = || DecompError::StackUnderflow { at, lexeme: tok.lexeme.clone() };
            match &tok.kind {
                TokenKind::Number(v) => stack.push(Operand::Const(*v)),
                TokenKind::Variable => {
                    let slot = *slot_of.get(&tok.lexeme).ok_or_else(|| DecompError::UnknownVariable(tok.lexeme.clone()))?;
                    stack.push(b.input(slot));
                }
                TokenKind::Function(op) => {
                    let a = stack.pop().ok_or_else(underflow)?;
                    stack.push(b.unary(op.clone(), a)?);
                }
                TokenKind::Neg => {
                    let a = stack.pop().ok_or_else(underflow)?;
                    stack.push(match a {
                        Operand::Const(v) => Operand::Const(-v),
                        o => b.scale(o, -1.0),
                    });
                }
                TokenKind::Operator(op) => {
                    let rhs = stack.pop().ok_or_else(underflow)?;
                    let lhs = stack.pop().ok_or_else(underflow)?;
                    let v = match (lhs, rhs) {
                        (Operand::Const(x), Operand::Const(y)) => Operand::Const(apply_op(*op, x, y)?),
                        _ => b.binary(*op, lhs, rhs)?,
                    };
                    stack.push(v);
                }
                TokenKind::Output => {
                    // pop, note the observable, push it back
                    let top = stack.pop().ok_or_else(underflow)?;
                    let i = b.output(top);
                    stack.push(Operand::Obs(i));
                    marked = true;
                }
                TokenKind::LParen | TokenKind::RParen => return Err(DecompError::Paren),
            }
        }
        if !marked {
            match stack.as_slice() {
                [top] => {
                    b.output(*top);
                }
                s => return Err(DecompError::Leftover(s.len())),
            }
        }
    }
    Ok(b.finish())
}

/// Algorithm 1: one observable per operator application, no reuse.
pub fn decompose_basic(rpn: &RpnExpr, n_x: usize) -> Result<FunctionalDecomposition, DecompError> {
    let inputs = resolve_inputs(std::slice::from_ref(rpn), n_x, None)?;
    compile(std::slice::from_ref(rpn), inputs, false)
}

/// Algorithm 2: candidates equal to an existing observable reuse its index.
pub fn decompose_dedup(rpn: &RpnExpr, n_x: usize) -> Result<FunctionalDecomposition, DecompError> {
    let inputs = resolve_inputs(std::slice::from_ref(rpn), n_x, None)?;
    compile(std::slice::from_ref(rpn), inputs, true)
}

/// Vector-valued function: elements share one deduplicated observable list and
/// each element's result is marked as an output, in element order.
pub fn concat_vector(expressions: &[RpnExpr], variables: &[String]) -> Result<FunctionalDecomposition, DecompError> {
    let inputs = resolve_inputs(expressions, variables.len(), Some(variables))?;
    let mut marked = Vec::with_capacity(expressions.len());
    for e in expressions {
        let mut tokens = e.tokens.clone();
        tokens.push(crate::expr::Token { kind: TokenKind::Output, lexeme: "•".into(), pos: 0 });
        marked.push(RpnExpr::new(tokens));
    }
    compile(&marked, inputs, true)
}

/// Alg. 2 applied to an existing decomposition: merges canonically equal observables.
pub fn dedup(fd: &FunctionalDecomposition) -> FunctionalDecomposition {
    let mut b = Builder::new(fd.inputs.clone(), true);
    let mut map: Vec<usize> = (0..fd.n_x()).collect();
    for obs in &fd.observables[fd.n_x()..] {
        map.push(b.push(obs.map_args(|a| map[a])));
    }
    let mut out = b.finish();
    out.outputs = fd.outputs.iter().map(|&o| map[o]).collect();
    out
}

/// Inlines affine observables into their single affine consumer.
pub fn fold_affine(fd: &FunctionalDecomposition) -> FunctionalDecomposition {
    fold_affine_protected(fd, &[]).0
}

/// As [`fold_affine`], never folding away `protected` observables. Also
/// returns the old-to-new index map.
pub fn fold_affine_protected(fd: &FunctionalDecomposition, protected: &[usize]) -> (FunctionalDecomposition, Vec<Option<usize>>) {
    let keep: BTreeSet<usize> = fd.outputs.iter().chain(protected).copied().collect();
    let mut obs = fd.observables.clone();
    loop {
        let succ = FunctionalDecomposition { inputs: fd.inputs.clone(), observables: obs.clone(), outputs: Vec::new() }.successors();
        let mut changed = false;
        for j in fd.n_x()..obs.len() {
            let ObservableExpr::Affine { terms, offset } = &obs[j] else { continue };
            let foldable = |k: usize| obs[k].is_affine() && !keep.contains(&k) && succ[k].len() == 1;
            if !terms.iter().any(|&(k, _)| foldable(k)) {
                continue;
            }
            let mut new_terms = Vec::new();
            let mut new_off = *offset;
            for &(k, c) in terms {
                if foldable(k) {
                    let ObservableExpr::Affine { terms: inner, offset: o } = &obs[k] else { unreachable!() };
                    new_off += c * o;
                    new_terms.extend(inner.iter().map(|&(i, ci)| (i, c * ci)));
                } else {
                    new_terms.push((k, c));
                }
            }
            obs[j] = ObservableExpr::Affine { terms: merge_terms(new_terms), offset: new_off };
            changed = true;
            break;
        }
        if !changed {
            break;
        }
    }
    let folded = FunctionalDecomposition { inputs: fd.inputs.clone(), observables: obs, outputs: fd.outputs.clone() };
    let extra: Vec<usize> = protected.to_vec();
    let live = folded.live(&extra);
    folded.compact(&live)
}

/// Equivalence oracle: output values by forward substitution.
pub fn eval_fd(fd: &FunctionalDecomposition, inputs: &[f64]) -> Result<Vec<f64>, EvalError> {
    fd.eval(inputs)
}

/// Parses a single-variable infix expression into a [`Composite`] body.
pub fn parse_composite(text: &str) -> Result<Composite, DecompError> {
    let rpn = RpnExpr::from_infix(text)?;
    let vars = rpn.variables();
    if vars.len() > 1 {
        return Err(DecompError::VariableCount { found: vars.len(), n_x: 1 });
    }
    let name = vars.into_iter().next().unwrap_or_else(|| "x".to_string());
    let fd = compile(std::slice::from_ref(&rpn), vec![name], true)?;
    let out = fd.outputs[0];
    Ok(fd.to_composite(out, 0).expect("single input").canonical())
}

// ---------------------------------------------------------------------------
// JSON document

#[derive(Debug, Serialize, Deserialize)]
struct FdDoc {
    n_x: usize,
    #[serde(default)]
    inputs: Vec<String>,
    observables: Vec<ObsDoc>,
    outputs: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ObsDoc {
    index: usize,
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    op: Option<String>,
    #[serde(default)]
    args: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    coeffs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    offset: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    params: Vec<f64>,
    /// Body of a fused unary primitive, infix in the variable `x`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    body: Option<String>,
    /// Human-readable rendering; ignored when reading.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    expr: Option<String>,
}

impl From<&FunctionalDecomposition> for FdDoc {
    fn from(fd: &FunctionalDecomposition) -> Self {
        let observables = fd
            .observables
            .iter()
            .enumerate()
            .map(|(j, obs)| {
                let mut d = ObsDoc {
                    index: j + 1,
                    kind: obs.kind().to_string(),
                    op: None,
                    args: obs.args().iter().map(|a| a + 1).collect(),
                    coeffs: Vec::new(),
                    offset: None,
                    params: Vec::new(),
                    body: None,
                    expr: Some(match obs {
                        ObservableExpr::Input { slot } => fd.inputs[*slot].clone(),
                        _ => obs.render(&obs_name),
                    }),
                };
                match obs {
                    ObservableExpr::Input { .. } => {}
                    ObservableExpr::Unary { op, .. } => {
                        d.op = Some(op.name().to_string());
                        d.params = op.params();
                        if let UnaryOp::Composite(body) = op {
                            d.body = Some(body.render("x"));
                        }
                    }
                    ObservableExpr::Binary { op, lhs, rhs } => {
                        d.op = Some(op.name().to_string());
                        d.args = vec![lhs + 1, rhs + 1];
                    }
                    ObservableExpr::Affine { terms, offset } => {
                        d.op = Some("affine".into());
                        d.args = terms.iter().map(|t| t.0 + 1).collect();
                        d.coeffs = terms.iter().map(|t| t.1).collect();
                        d.offset = Some(*offset);
                    }
                }
                d
            })
            .collect();
        FdDoc { n_x: fd.n_x(), inputs: fd.inputs.clone(), observables, outputs: fd.outputs.iter().map(|o| o + 1).collect() }
    }
}

impl TryFrom<FdDoc> for FunctionalDecomposition {
    type Error = DecompError;

    fn try_from(doc: FdDoc) -> Result<Self, DecompError> {
        let bad = |m: String| DecompError::Invalid(m);
        let inputs = if doc.inputs.is_empty() {
            (1..=doc.n_x).map(|k| format!("x_{k}")).collect()
        } else if doc.inputs.len() == doc.n_x {
            doc.inputs
        } else {
            return Err(bad("inputs length differs from n_x".into()));
        };
        let mut observables = Vec::with_capacity(doc.observables.len());
        for (j, o) in doc.observables.into_iter().enumerate() {
            if o.index != j + 1 {
                return Err(bad(format!("observable indices must be contiguous from 1 (found {} at position {})", o.index, j + 1)));
            }
            let arg = |k: usize| -> Result<usize, DecompError> {
                o.args.get(k).filter(|&&a| a >= 1).map(|a| a - 1).ok_or_else(|| bad(format!("w_{} is missing argument {}", j + 1, k + 1)))
            };
            let op_name = o.op.as_deref().unwrap_or("");
            let expr = match o.kind.as_str() {
                "input" => ObservableExpr::Input { slot: j },
                "unary" => {
                    let op = match (op_name, o.params.as_slice(), &o.body) {
                        ("composite", _, Some(body)) => UnaryOp::Composite(Arc::new(parse_composite(body)?)),
                        ("powk", [k], _) => UnaryOp::PowConst(*k),
                        ("powb", [b], _) => UnaryOp::ExpBase(*b),
                        (name, [], _) => UnaryOp::from_name(name).ok_or_else(|| bad(format!("unknown unary primitive `{name}`")))?,
                        (name, _, _) => return Err(bad(format!("bad parameters for `{name}`"))),
                    };
                    ObservableExpr::Unary { op, arg: arg(0)? }
                }
                "binary" => {
                    let op = BinaryOp::from_name(op_name).ok_or_else(|| bad(format!("unknown binary primitive `{op_name}`")))?;
                    ObservableExpr::Binary { op, lhs: arg(0)?, rhs: arg(1)? }
                }
                "affine" => {
                    if o.coeffs.len() != o.args.len() {
                        return Err(bad(format!("w_{} has {} args but {} coeffs", j + 1, o.args.len(), o.coeffs.len())));
                    }
                    let mut terms = Vec::new();
                    for k in 0..o.args.len() {
                        terms.push((arg(k)?, o.coeffs[k]));
                    }
                    ObservableExpr::Affine { terms, offset: o.offset.unwrap_or(0.0) }
                }
                other => return Err(bad(format!("unknown observable kind `{other}`"))),
            };
            observables.push(expr);
        }
        let outputs = doc
            .outputs
            .iter()
            .map(|&o| o.checked_sub(1).ok_or_else(|| bad("output indices are 1-based".into())))
            .collect::<Result<Vec<_>, _>>()?;
        let fd = FunctionalDecomposition { inputs, observables, outputs };
        fd.validate()?;
        Ok(fd)
    }
}

/// `name = value` formatting for constants in reports.
pub fn fmt_const(v: f64) -> String {
    fmt_num(v)
}
