//! Primitive functions that can define an observable.
//!
//! Unary primitives carry their constant parameters inline (`x^k`, `b^x`), and
//! the fused result of a unary contraction is stored as a [`Composite`] body
//! with a single free variable.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("`{op}` is undefined at {args:?}")]
    Domain { op: String, args: Vec<f64> },
}

fn domain(op: impl Into<String>, args: &[f64]) -> EvalError {
    EvalError::Domain { op: op.into(), args: args.to_vec() }
}

/// Breakpoint of the hard-sigmoid gate.
pub const HARDSIG_KNEE: f64 = 2.5;

/// Clipped-affine gate: `0` below `-2.5`, `1` above `2.5`, `0.2x + 0.5` between.
pub fn hard_sigmoid(x: f64) -> f64 {
    if x < -HARDSIG_KNEE {
        0.0
    } else if x <= HARDSIG_KNEE {
        0.2 * x + 0.5
    } else {
        1.0
    }
}

/// Heaviside step with `step(0) = 1`.
pub fn step(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        0.0
    }
}

pub fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone)]
pub enum UnaryOp {
    Sin,
    Cos,
    Tan,
    Exp,
    Log,
    Sqrt,
    Abs,
    Tanh,
    Sig,
    HardSig,
    Step,
    Sq,
    /// `x^k` with constant `k`.
    PowConst(f64),
    /// `b^x` with constant `b > 0`.
    ExpBase(f64),
    /// Fused chain produced by unary contraction.
    Composite(Arc<Composite>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BinaryOp {
    Mul,
    Div,
    Pow,
}

impl BinaryOp {
    pub fn name(self) -> &'static str {
        match self {
            BinaryOp::Mul => "mul",
            BinaryOp::Div => "div",
            BinaryOp::Pow => "pow",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "mul" => Some(BinaryOp::Mul),
            "div" => Some(BinaryOp::Div),
            "pow" => Some(BinaryOp::Pow),
            _ => None,
        }
    }

    pub fn is_commutative(self) -> bool {
        matches!(self, BinaryOp::Mul)
    }

    pub fn eval(self, a: f64, b: f64) -> Result<f64, EvalError> {
        let v = match self {
            BinaryOp::Mul => a * b,
            BinaryOp::Div => {
                if b == 0.0 {
                    return Err(domain("div", &[a, b]));
                }
                a / b
            }
            BinaryOp::Pow => a.powf(b),
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(domain(self.name(), &[a, b]))
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            BinaryOp::Mul => "*",
            BinaryOp::Div => "/",
            BinaryOp::Pow => "^",
        }
    }
}

/// Names accepted by the expression grammar, in declaration order.
pub const GRAMMAR_FUNCTIONS: [&str; 12] = ["sin", "cos", "tan", "exp", "log", "sqrt", "abs", "tanh", "sig", "hardsig", "step", "sq"];

impl UnaryOp {
    /// Looks up a parameter-free primitive by its grammar name.
    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "sin" => UnaryOp::Sin,
            "cos" => UnaryOp::Cos,
            "tan" => UnaryOp::Tan,
            "exp" => UnaryOp::Exp,
            "log" => UnaryOp::Log,
            "sqrt" => UnaryOp::Sqrt,
            "abs" => UnaryOp::Abs,
            "tanh" => UnaryOp::Tanh,
            "sig" => UnaryOp::Sig,
            "hardsig" => UnaryOp::HardSig,
            "step" => UnaryOp::Step,
            "sq" => UnaryOp::Sq,
            _ => return None,
        })
    }

    /// Short identifier; parameterized primitives share one name per family.
    pub fn name(&self) -> &'static str {
        match self {
            UnaryOp::Sin => "sin",
            UnaryOp::Cos => "cos",
            UnaryOp::Tan => "tan",
            UnaryOp::Exp => "exp",
            UnaryOp::Log => "log",
            UnaryOp::Sqrt => "sqrt",
            UnaryOp::Abs => "abs",
            UnaryOp::Tanh => "tanh",
            UnaryOp::Sig => "sig",
            UnaryOp::HardSig => "hardsig",
            UnaryOp::Step => "step",
            UnaryOp::Sq => "sq",
            UnaryOp::PowConst(_) => "powk",
            UnaryOp::ExpBase(_) => "powb",
            UnaryOp::Composite(_) => "composite",
        }
    }

    pub fn params(&self) -> Vec<f64> {
        match self {
            UnaryOp::PowConst(k) => vec![*k],
            UnaryOp::ExpBase(b) => vec![*b],
            _ => Vec::new(),
        }
    }

    pub fn eval(&self, x: f64) -> Result<f64, EvalError> {
        let v = match self {
            UnaryOp::Sin => x.sin(),
            UnaryOp::Cos => x.cos(),
            UnaryOp::Tan => x.tan(),
            UnaryOp::Exp => x.exp(),
            UnaryOp::Log => {
                if x <= 0.0 {
                    return Err(domain("log", &[x]));
                }
                x.ln()
            }
            UnaryOp::Sqrt => {
                if x < 0.0 {
                    return Err(domain("sqrt", &[x]));
                }
                x.sqrt()
            }
            UnaryOp::Abs => x.abs(),
            UnaryOp::Tanh => x.tanh(),
            UnaryOp::Sig => logistic(x),
            UnaryOp::HardSig => hard_sigmoid(x),
            UnaryOp::Step => step(x),
            UnaryOp::Sq => x * x,
            UnaryOp::PowConst(k) => x.powf(*k),
            UnaryOp::ExpBase(b) => {
                if *b <= 0.0 {
                    return Err(domain("powb", &[*b, x]));
                }
                b.powf(x)
            }
            UnaryOp::Composite(body) => body.eval(x)?,
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(domain(self.name(), &[x]))
        }
    }

    /// Points where the primitive stops being smooth.
    pub fn kinks(&self) -> &'static [f64] {
        match self {
            UnaryOp::HardSig => &[-HARDSIG_KNEE, HARDSIG_KNEE],
            UnaryOp::Abs | UnaryOp::Step => &[0.0],
            _ => &[],
        }
    }

    /// Exactly piecewise affine (zero curvature between kinks).
    pub fn is_piecewise_affine(&self) -> bool {
        match self {
            UnaryOp::HardSig | UnaryOp::Abs | UnaryOp::Step => true,
            UnaryOp::PowConst(k) => *k == 0.0 || *k == 1.0,
            UnaryOp::ExpBase(b) => *b == 1.0,
            UnaryOp::Composite(body) => body.is_affine(),
            _ => false,
        }
    }

    /// Canonical text used for structural equality. Floats are encoded by bit pattern.
    pub fn key(&self) -> String {
        match self {
            UnaryOp::PowConst(k) => format!("powk[{:016x}]", k.to_bits()),
            UnaryOp::ExpBase(b) => format!("powb[{:016x}]", b.to_bits()),
            UnaryOp::Composite(body) => format!("composite[{}]", body.key()),
            other => other.name().to_string(),
        }
    }

    /// Renders `op(arg)` in the infix grammar where one exists.
    pub fn render(&self, arg: &str) -> String {
        match self {
            UnaryOp::PowConst(k) => format!("{}^{}", wrap_operand(arg), fmt_num(*k)),
            UnaryOp::ExpBase(b) => format!("{}^{}", fmt_num(*b), wrap_operand(arg)),
            UnaryOp::Composite(body) => body.render(arg),
            other => format!("{}({})", other.name(), arg),
        }
    }
}

impl PartialEq for UnaryOp {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

impl fmt::Display for UnaryOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.key())
    }
}

/// Shortest round-tripping decimal form.
pub fn fmt_num(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

fn wrap_operand(s: &str) -> String {
    if s.chars().all(|c| c.is_alphanumeric() || c == '_' || c == '.') || is_call(s) {
        s.to_string()
    } else {
        format!("({s})")
    }
}

fn is_call(s: &str) -> bool {
    // `name(...)` with the outer parentheses matching each other
    let Some(open) = s.find('(') else { return false };
    if !s.ends_with(')') || !s[..open].chars().all(|c| c.is_alphanumeric() || c == '_') || open == 0 {
        return false;
    }
    let mut depth = 0i32;
    for (i, c) in s.char_indices().skip(open) {
        match c {
            '(' => depth += 1,
            ')' => {
                depth -= 1;
                if depth == 0 && i != s.len() - 1 {
                    return false;
                }
            }
            _ => {}
        }
    }
    true
}

/// Expression in one free variable, built by composing observable definitions.
#[derive(Debug, Clone)]
pub enum Composite {
    Var,
    Unary(UnaryOp, Box<Composite>),
    Binary(BinaryOp, Box<Composite>, Box<Composite>),
    Affine(Vec<(Composite, f64)>, f64),
}

impl Composite {
    pub fn eval(&self, x: f64) -> Result<f64, EvalError> {
        match self {
            Composite::Var => Ok(x),
            Composite::Unary(op, a) => op.eval(a.eval(x)?),
            Composite::Binary(op, a, b) => op.eval(a.eval(x)?, b.eval(x)?),
            Composite::Affine(terms, offset) => {
                let mut acc = *offset;
                for (t, c) in terms {
                    acc += c * t.eval(x)?;
                }
                Ok(acc)
            }
        }
    }

    pub fn is_affine(&self) -> bool {
        match self {
            Composite::Var => true,
            Composite::Affine(terms, _) => terms.iter().all(|(t, _)| t.is_affine()),
            Composite::Unary(..) | Composite::Binary(..) => false,
        }
    }

    /// Flattens nested sums, merges repeated terms and sorts them by key.
    pub fn canonical(&self) -> Composite {
        match self {
            Composite::Var => Composite::Var,
            Composite::Unary(UnaryOp::Composite(body), a) => {
                // inline nested composite bodies so equality ignores fusion history
                body.substitute(&a.canonical()).canonical()
            }
            Composite::Unary(op, a) => Composite::Unary(op.clone(), Box::new(a.canonical())),
            Composite::Binary(op, a, b) => {
                let (mut a, mut b) = (a.canonical(), b.canonical());
                if op.is_commutative() && a.key() > b.key() {
                    std::mem::swap(&mut a, &mut b);
                }
                Composite::Binary(*op, Box::new(a), Box::new(b))
            }
            Composite::Affine(terms, offset) => {
                let mut flat: Vec<(Composite, f64)> = Vec::new();
                let mut off = *offset;
                for (t, c) in terms {
                    match t.canonical() {
                        Composite::Affine(inner, o) => {
                            off += c * o;
                            flat.extend(inner.into_iter().map(|(it, ic)| (it, ic * c)));
                        }
                        other => flat.push((other, *c)),
                    }
                }
                let mut keyed: Vec<(String, Composite, f64)> = flat.into_iter().map(|(t, c)| (t.key(), t, c)).collect();
                keyed.sort_by(|a, b| a.0.cmp(&b.0));
                let mut merged: Vec<(String, Composite, f64)> = Vec::new();
                for (k, t, c) in keyed {
                    match merged.last_mut() {
                        Some(last) if last.0 == k => last.2 += c,
                        _ => merged.push((k, t, c)),
                    }
                }
                let terms: Vec<(Composite, f64)> = merged.into_iter().filter(|m| m.2 != 0.0).map(|(_, t, c)| (t, c)).collect();
                if terms.len() == 1 && terms[0].1 == 1.0 && off == 0.0 {
                    return terms.into_iter().next().map(|t| t.0).unwrap_or(Composite::Var);
                }
                Composite::Affine(terms, off)
            }
        }
    }

    /// Replaces the free variable by `arg`.
    pub fn substitute(&self, arg: &Composite) -> Composite {
        match self {
            Composite::Var => arg.clone(),
            Composite::Unary(op, a) => Composite::Unary(op.clone(), Box::new(a.substitute(arg))),
            Composite::Binary(op, a, b) => Composite::Binary(*op, Box::new(a.substitute(arg)), Box::new(b.substitute(arg))),
            Composite::Affine(terms, off) => Composite::Affine(terms.iter().map(|(t, c)| (t.substitute(arg), *c)).collect(), *off),
        }
    }

    pub fn key(&self) -> String {
        match self {
            Composite::Var => "$".to_string(),
            Composite::Unary(op, a) => format!("{}({})", op.key(), a.key()),
            Composite::Binary(op, a, b) => format!("{}({},{})", op.name(), a.key(), b.key()),
            Composite::Affine(terms, off) => {
                let parts: Vec<String> = terms.iter().map(|(t, c)| format!("{:016x}*{}", c.to_bits(), t.key())).collect();
                format!("aff[{};{:016x}]", parts.join(","), off.to_bits())
            }
        }
    }

    /// Infix rendering with `var` substituted for the free variable.
    pub fn render(&self, var: &str) -> String {
        match self {
            Composite::Var => var.to_string(),
            Composite::Unary(op, a) => op.render(&a.render(var)),
            Composite::Binary(op, a, b) => {
                format!("{}{}{}", wrap_operand(&a.render(var)), op.symbol(), wrap_operand(&b.render(var)))
            }
            Composite::Affine(terms, off) => {
                let rendered: Vec<(String, f64)> = terms.iter().map(|(t, c)| (t.render(var), *c)).collect();
                render_affine(&rendered, *off)
            }
        }
    }

    /// Number of primitive applications in the body.
    pub fn size(&self) -> usize {
        match self {
            Composite::Var => 0,
            Composite::Unary(op, a) => {
                let inner = match op {
                    UnaryOp::Composite(body) => body.size(),
                    _ => 1,
                };
                inner + a.size()
            }
            Composite::Binary(_, a, b) => 1 + a.size() + b.size(),
            Composite::Affine(terms, _) => 1 + terms.iter().map(|(t, _)| t.size()).sum::<usize>(),
        }
    }
}

impl PartialEq for Composite {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

/// Renders `c1*t1 + c2*t2 + ... + offset` with unit coefficients elided.
pub fn render_affine(terms: &[(String, f64)], offset: f64) -> String {
    let mut out = String::new();
    for (i, (t, c)) in terms.iter().enumerate() {
        let (sign, mag) = if *c < 0.0 { ("-", -c) } else { ("+", *c) };
        // a scaled or negated compound term needs its own parentheses, as does
        // a later sum, so the text reparses to the same structure
        let compound = wrap_operand(t) != *t;
        let needs_paren = compound && (mag != 1.0 || sign == "-" || (i > 0 && (t.contains('+') || t.contains('-'))));
        let t = if needs_paren { format!("({t})") } else { t.clone() };
        if i == 0 {
            if sign == "-" {
                out.push('-');
            }
        } else {
            out.push_str(sign);
        }
        if mag == 1.0 {
            out.push_str(&t);
        } else {
            out.push_str(&format!("{}*{}", fmt_num(mag), t));
        }
    }
    if terms.is_empty() {
        return fmt_num(offset);
    }
    if offset != 0.0 {
        out.push_str(if offset < 0.0 { "-" } else { "+" });
        out.push_str(&fmt_num(offset.abs()));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hard_sigmoid_pieces() {
        assert_eq!(hard_sigmoid(-3.0), 0.0);
        assert_eq!(hard_sigmoid(3.0), 1.0);
        assert!((hard_sigmoid(1.0) - 0.7).abs() < 1e-15);
        assert_eq!(hard_sigmoid(-2.5), 0.0);
        assert_eq!(hard_sigmoid(2.5), 1.0);
    }

    #[test]
    fn step_is_one_at_zero() {
        assert_eq!(step(0.0), 1.0);
        assert_eq!(step(-1e-300), 0.0);
    }

    #[test]
    fn domain_errors() {
        assert!(UnaryOp::Log.eval(0.0).is_err());
        assert!(UnaryOp::Sqrt.eval(-1.0).is_err());
        assert!(BinaryOp::Div.eval(1.0, 0.0).is_err());
        assert!(BinaryOp::Pow.eval(-1.0, 0.5).is_err());
    }

    #[test]
    fn canonical_flattens_and_sorts_sums() {
        let s = |x| Composite::Unary(UnaryOp::Sin, Box::new(x));
        let c = |x| Composite::Unary(UnaryOp::Cos, Box::new(x));
        let a = Composite::Affine(vec![(s(Composite::Var), 1.0), (Composite::Affine(vec![(c(s(Composite::Var)), 1.0)], 0.0), 1.0)], 0.0);
        let b = Composite::Affine(vec![(c(s(Composite::Var)), 1.0), (s(Composite::Var), 1.0)], 0.0);
        assert_eq!(a.canonical().key(), b.canonical().key());
        assert_eq!(b.render("w_3"), "cos(sin(w_3))+sin(w_3)");
    }

    #[test]
    fn affine_rendering() {
        let t = vec![("w_1".to_string(), 2.0), ("w_2".to_string(), -1.0)];
        assert_eq!(render_affine(&t, -1.0), "2*w_1-w_2-1");
        assert_eq!(render_affine(&[], 3.0), "3");
    }
}
