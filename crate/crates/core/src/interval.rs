//! Closed-interval arithmetic and forward range propagation.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decomp::{FunctionalDecomposition, ObservableExpr};
use crate::obs_name;
use crate::prim::{hard_sigmoid, logistic, step, BinaryOp, Composite, UnaryOp};

/// Default relative inflation applied to computed ranges.
pub const DEFAULT_INFLATION: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IntervalError {
    #[error("`{op}` is undefined somewhere on {arg}")]
    Domain { op: String, arg: String },
    // the cause is part of the message, not a separate source, so chained
    // reports do not repeat it
    #[error("{}: {cause}", obs_name(*index))]
    At { index: usize, cause: Box<IntervalError> },
    #[error("invalid interval [{0}, {1}]")]
    Invalid(f64, f64),
    #[error("expected {expected} input domains, got {got}")]
    Arity { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self, IntervalError> {
        if lo.is_finite() && hi.is_finite() && lo <= hi {
            Ok(Interval { lo, hi })
        } else {
            Err(IntervalError::Invalid(lo, hi))
        }
    }

    pub fn point(v: f64) -> Self {
        Interval { lo: v, hi: v }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn radius(&self) -> f64 {
        0.5 * (self.hi - self.lo)
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn contains_interval(&self, other: &Interval) -> bool {
        self.lo <= other.lo && other.hi <= self.hi
    }

    pub fn hull(&self, other: &Interval) -> Interval {
        Interval { lo: self.lo.min(other.lo), hi: self.hi.max(other.hi) }
    }

    pub fn mag(&self) -> f64 {
        self.lo.abs().max(self.hi.abs())
    }

    /// Smallest `|x|` over the interval.
    pub fn mig(&self) -> f64 {
        if self.contains(0.0) {
            0.0
        } else {
            self.lo.abs().min(self.hi.abs())
        }
    }

    pub fn scale(&self, c: f64) -> Interval {
        let (a, b) = (c * self.lo, c * self.hi);
        Interval { lo: a.min(b), hi: a.max(b) }
    }

    pub fn add(&self, other: &Interval) -> Interval {
        Interval { lo: self.lo + other.lo, hi: self.hi + other.hi }
    }

    pub fn shift(&self, c: f64) -> Interval {
        Interval { lo: self.lo + c, hi: self.hi + c }
    }

    /// Outward widening by `factor · (1 + mag)`.
    pub fn inflate(&self, factor: f64) -> Interval {
        let d = factor * (1.0 + self.mag());
        Interval { lo: self.lo - d, hi: self.hi + d }
    }

    fn from_points(points: &[f64]) -> Interval {
        let lo = points.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = points.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Interval { lo, hi }
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.lo, self.hi)
    }
}

fn domain(op: &str, x: &Interval) -> IntervalError {
    IntervalError::Domain { op: op.to_string(), arg: x.to_string() }
}

/// Whether `t0 + k·period` lies in `[lo, hi]` for some integer `k`.
fn hits(lo: f64, hi: f64, t0: f64, period: f64) -> bool {
    let k = ((lo - t0) / period).ceil();
    t0 + k * period <= hi
}

fn monotone(f: impl Fn(f64) -> f64, x: &Interval) -> Interval {
    Interval::from_points(&[f(x.lo), f(x.hi)])
}

fn even_like(f: impl Fn(f64) -> f64, x: &Interval) -> Interval {
    if x.lo >= 0.0 || x.hi <= 0.0 {
        monotone(f, x)
    } else {
        Interval { lo: f(0.0), hi: f(x.lo).max(f(x.hi)) }
    }
}

/// Natural interval extension of a unary primitive.
pub fn apply_unary(op: &UnaryOp, x: &Interval) -> Result<Interval, IntervalError> {
    let r = match op {
        UnaryOp::Sin | UnaryOp::Cos => {
            // the shift only locates extrema; endpoints use the function
            // itself so the bounds agree with pointwise evaluation
            let (shift, f): (f64, fn(f64) -> f64) = if matches!(op, UnaryOp::Cos) { (FRAC_PI_2, f64::cos) } else { (0.0, f64::sin) };
            let (lo, hi) = (x.lo + shift, x.hi + shift);
            if hi - lo >= 2.0 * PI {
                Interval { lo: -1.0, hi: 1.0 }
            } else {
                let mut r = Interval::from_points(&[f(x.lo), f(x.hi)]);
                if hits(lo, hi, FRAC_PI_2, 2.0 * PI) {
                    r.hi = 1.0;
                }
                if hits(lo, hi, -FRAC_PI_2, 2.0 * PI) {
                    r.lo = -1.0;
                }
                r
            }
        }
        UnaryOp::Tan => {
            if x.hi - x.lo >= PI || hits(x.lo, x.hi, FRAC_PI_2, PI) {
                return Err(domain("tan", x));
            }
            monotone(f64::tan, x)
        }
        UnaryOp::Exp => monotone(f64::exp, x),
        UnaryOp::Log => {
            if x.lo <= 0.0 {
                return Err(domain("log", x));
            }
            monotone(f64::ln, x)
        }
        UnaryOp::Sqrt => {
            if x.lo < 0.0 {
                return Err(domain("sqrt", x));
            }
            monotone(f64::sqrt, x)
        }
        UnaryOp::Abs => even_like(f64::abs, x),
        UnaryOp::Sq => even_like(|v| v * v, x),
        UnaryOp::Tanh => monotone(f64::tanh, x),
        UnaryOp::Sig => monotone(logistic, x),
        UnaryOp::HardSig => monotone(hard_sigmoid, x),
        UnaryOp::Step => monotone(step, x),
        UnaryOp::PowConst(k) => pow_const(*k, x)?,
        UnaryOp::ExpBase(b) => {
            if *b <= 0.0 {
                return Err(domain("powb", x));
            }
            monotone(|v| b.powf(v), x)
        }
        UnaryOp::Composite(body) => apply_composite(body, x)?,
    };
    if r.lo.is_finite() && r.hi.is_finite() {
        Ok(r)
    } else {
        Err(domain(op.name(), x))
    }
}

fn pow_const(k: f64, x: &Interval) -> Result<Interval, IntervalError> {
    let integer = k == k.trunc();
    if !integer && x.lo < 0.0 {
        return Err(domain("powk", x));
    }
    if k < 0.0 && x.contains(0.0) {
        return Err(domain("powk", x));
    }
    // monotone on each side of zero
    let mut pts = vec![x.lo.powf(k), x.hi.powf(k)];
    if x.lo < 0.0 && x.hi > 0.0 {
        pts.push(0.0);
    }
    Ok(Interval::from_points(&pts))
}

/// Natural interval extension of a binary primitive.
pub fn apply_binary(op: BinaryOp, a: &Interval, b: &Interval) -> Result<Interval, IntervalError> {
    let corners = |f: &dyn Fn(f64, f64) -> f64| Interval::from_points(&[f(a.lo, b.lo), f(a.lo, b.hi), f(a.hi, b.lo), f(a.hi, b.hi)]);
    let r = match op {
        BinaryOp::Mul => corners(&|x, y| x * y),
        BinaryOp::Div => {
            if b.contains(0.0) {
                return Err(domain("div", b));
            }
            corners(&|x, y| x / y)
        }
        BinaryOp::Pow => {
            if a.lo <= 0.0 {
                return Err(domain("pow", a));
            }
            corners(&|x, y| x.powf(y))
        }
    };
    if r.lo.is_finite() && r.hi.is_finite() {
        Ok(r)
    } else {
        Err(domain(op.name(), a))
    }
}

pub fn apply_affine(terms: &[(Interval, f64)], offset: f64) -> Interval {
    terms.iter().fold(Interval::point(offset), |acc, (x, c)| acc.add(&x.scale(*c)))
}

/// Natural extension of a fused body.
pub fn apply_composite(body: &Composite, x: &Interval) -> Result<Interval, IntervalError> {
    match body {
        Composite::Var => Ok(*x),
        Composite::Unary(op, a) => apply_unary(op, &apply_composite(a, x)?),
        Composite::Binary(op, a, b) => apply_binary(*op, &apply_composite(a, x)?, &apply_composite(b, x)?),
        Composite::Affine(terms, off) => {
            let mut t = Vec::with_capacity(terms.len());
            for (c, k) in terms {
                t.push((apply_composite(c, x)?, *k));
            }
            Ok(apply_affine(&t, *off))
        }
    }
}

/// Known bounds on a primitive's values, used to clip inflation.
fn codomain(op: &UnaryOp) -> (f64, f64) {
    match op {
        UnaryOp::Sin | UnaryOp::Cos | UnaryOp::Tanh => (-1.0, 1.0),
        UnaryOp::Sig | UnaryOp::HardSig | UnaryOp::Step => (0.0, 1.0),
        UnaryOp::Sq | UnaryOp::Abs | UnaryOp::Sqrt => (0.0, f64::INFINITY),
        _ => (f64::NEG_INFINITY, f64::INFINITY),
    }
}

/// Inflates `r` without leaving the primitive's codomain, and keeps strictly
/// positive ranges strictly positive.
fn inflate_clipped(r: Interval, factor: f64, op: Option<&UnaryOp>) -> Interval {
    let mut out = r.inflate(factor);
    if let Some(op) = op {
        let (lo, hi) = codomain(op);
        out.lo = out.lo.max(lo.min(r.lo));
        out.hi = out.hi.min(hi.max(r.hi));
    }
    if r.lo > 0.0 && out.lo <= 0.0 {
        out.lo = 0.5 * r.lo;
    }
    out
}

/// Forward pass assigning each observable a sound range over the input box.
pub fn propagate(fd: &FunctionalDecomposition, domain: &[Interval]) -> Result<Vec<Interval>, IntervalError> {
    propagate_with(fd, domain, DEFAULT_INFLATION)
}

pub fn propagate_with(fd: &FunctionalDecomposition, domain: &[Interval], inflation: f64) -> Result<Vec<Interval>, IntervalError> {
    if domain.len() != fd.n_x() {
        return Err(IntervalError::Arity { expected: fd.n_x(), got: domain.len() });
    }
    let mut out: Vec<Interval> = Vec::with_capacity(fd.len());
    for (j, obs) in fd.observables.iter().enumerate() {
        let at = |e: IntervalError| IntervalError::At { index: j, cause: Box::new(e) };
        let r = match obs {
            ObservableExpr::Input { slot } => domain[*slot],
            ObservableExpr::Unary { op, arg } => inflate_clipped(apply_unary(op, &out[*arg]).map_err(at)?, inflation, Some(op)),
            ObservableExpr::Binary { op, lhs, rhs } => {
                inflate_clipped(apply_binary(*op, &out[*lhs], &out[*rhs]).map_err(at)?, inflation, None)
            }
            ObservableExpr::Affine { terms, offset } => {
                let t: Vec<(Interval, f64)> = terms.iter().map(|(i, c)| (out[*i], *c)).collect();
                inflate_clipped(apply_affine(&t, *offset), inflation, None)
            }
        };
        out.push(r);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decomp::decompose_dedup;
    use crate::expr::RpnExpr;

    fn iv(lo: f64, hi: f64) -> Interval {
        Interval::new(lo, hi).unwrap()
    }

    fn close(a: Interval, lo: f64, hi: f64) -> bool {
        (a.lo - lo).abs() < 1e-12 && (a.hi - hi).abs() < 1e-12
    }

    #[test]
    fn unary_examples() {
        assert!(close(apply_unary(&UnaryOp::Sq, &iv(-1.0, 2.0)).unwrap(), 0.0, 4.0));
        assert!(close(apply_unary(&UnaryOp::Sin, &iv(0.0, PI)).unwrap(), 0.0, 1.0));
        assert!(close(apply_unary(&UnaryOp::HardSig, &iv(-3.0, 1.0)).unwrap(), 0.0, 0.7));
        assert!(close(apply_unary(&UnaryOp::Cos, &iv(-0.5, 0.5)).unwrap(), 0.5f64.cos(), 1.0));
        assert!(close(apply_unary(&UnaryOp::Cos, &iv(3.0, 3.5)).unwrap(), -1.0, 3f64.cos().max(3.5f64.cos())));
        assert!(close(apply_unary(&UnaryOp::Abs, &iv(-3.0, 1.0)).unwrap(), 0.0, 3.0));
        assert!(close(apply_unary(&UnaryOp::PowConst(3.0), &iv(-2.0, 1.0)).unwrap(), -8.0, 1.0));
        assert!(close(apply_unary(&UnaryOp::PowConst(-1.0), &iv(1.0, 2.0)).unwrap(), 0.5, 1.0));
        assert!(close(apply_unary(&UnaryOp::Step, &iv(-1.0, 1.0)).unwrap(), 0.0, 1.0));
    }

    #[test]
    fn domain_violations() {
        assert!(apply_unary(&UnaryOp::Log, &iv(0.0, 1.0)).is_err());
        assert!(apply_unary(&UnaryOp::Sqrt, &iv(-0.1, 1.0)).is_err());
        assert!(apply_unary(&UnaryOp::Tan, &iv(1.0, 2.0)).is_err());
        assert!(apply_unary(&UnaryOp::PowConst(-1.0), &iv(-1.0, 1.0)).is_err());
        assert!(apply_binary(BinaryOp::Div, &iv(1.0, 2.0), &iv(-1.0, 1.0)).is_err());
    }

    #[test]
    fn binary_examples() {
        assert!(close(apply_binary(BinaryOp::Mul, &iv(-1.0, 2.0), &iv(-3.0, 1.0)).unwrap(), -6.0, 3.0));
        assert!(close(apply_binary(BinaryOp::Div, &iv(1.0, 2.0), &iv(1.0, 2.0)).unwrap(), 0.5, 2.0));
    }

    #[test]
    fn propagate_examples() {
        let fd = decompose_dedup(&RpnExpr::from_infix("sin(x)+sin(x)^2").unwrap(), 1).unwrap();
        let r = propagate(&fd, &[iv(-PI, PI)]).unwrap();
        assert!((r[1].lo + 1.0).abs() < 1e-8 && (r[1].hi - 1.0).abs() < 1e-8);
        assert!(r[2].lo == 0.0 && (r[2].hi - 1.0).abs() < 1e-8);
        assert!((r[3].lo + 1.0).abs() < 1e-8 && (r[3].hi - 2.0).abs() < 1e-8);
        assert!(r[1].lo >= -1.0 && r[1].hi <= 1.0, "codomain clipping");
        let id = decompose_dedup(&RpnExpr::from_infix("x").unwrap(), 1).unwrap();
        assert_eq!(propagate(&id, &[iv(-2.0, 3.0)]).unwrap(), [iv(-2.0, 3.0)]);
        let sum = decompose_dedup(&RpnExpr::from_infix("x+y").unwrap(), 2).unwrap();
        let r = propagate(&sum, &[iv(0.0, 1.0), iv(0.0, 1.0)]).unwrap();
        assert!(r[2].contains_interval(&iv(0.0, 2.0)) && r[2].width() < 2.0 + 1e-8);
    }

    #[test]
    fn propagate_reports_index() {
        let fd = decompose_dedup(&RpnExpr::from_infix("log(x)").unwrap(), 1).unwrap();
        match propagate(&fd, &[iv(-1.0, 1.0)]) {
            Err(IntervalError::At { index: 1, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn inflation_keeps_sqrt_of_square_defined() {
        let fd = decompose_dedup(&RpnExpr::from_infix("sqrt(x^2)").unwrap(), 1).unwrap();
        assert!(propagate(&fd, &[iv(-1.0, 1.0)]).is_ok());
        let fd = decompose_dedup(&RpnExpr::from_infix("log(exp(x))").unwrap(), 1).unwrap();
        assert!(propagate(&fd, &[iv(-40.0, 1.0)]).is_ok());
    }
}
