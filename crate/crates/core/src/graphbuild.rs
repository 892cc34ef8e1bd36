//! Piecewise-affine bands around primitive graphs and their composition along
//! a decomposition into one hybrid zonotope containing the function's graph.
//!
//! A unary band is a chain of trapezoids over a partition of the argument
//! range; neighbouring trapezoids share their vertical edge. On a segment
//! `[a, b]` with `f'' ∈ [c_lo, c_hi]`, the secant `L` satisfies
//! `f − L ∈ [−max(c_hi,0)·h²/8, −min(c_lo,0)·h²/8]`, which gives the band.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decomp::{Builder, FunctionalDecomposition, ObservableExpr, Operand};
use crate::hz::{Complexity, HybridZonotope, HzError, PolyUnion};
use crate::interval::{apply_binary, apply_unary, propagate, Interval, IntervalError};
use crate::obs_name;
use crate::prim::{BinaryOp, EvalError, UnaryOp};

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Interval(#[from] IntervalError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Hz(#[from] HzError),
    #[error("`{op}` on {domain} needs more than {max} segments for tolerance {tol}")]
    Budget { op: String, domain: String, max: usize, tol: f64 },
    #[error("step split requires lo < 0 < hi and lo <= a <= 0, got [{lo}, {hi}] with a = {a}")]
    StepDomain { lo: f64, hi: f64, a: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProductMode {
    /// `a·b = ¼(a+b)² − ¼(a−b)²` with squared-sum bands.
    #[default]
    Rewrite,
    /// Products get a bivariate band (exact for `{0,1}`-valued factors).
    Direct,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApproxConfig {
    /// Default vertical half-width of every band.
    pub tol: f64,
    /// Per-primitive overrides keyed by primitive name (`sin`, `sq`, `mul`, ...).
    pub tols: BTreeMap<String, f64>,
    /// Segment budget per unary band (grid cells per axis for binary bands).
    pub max_segments: usize,
    pub product_mode: ProductMode,
    /// Split point of the step band; `0` over-approximates, negative values
    /// give an inner approximation near the jump.
    pub step_a: f64,
}

impl Default for ApproxConfig {
    fn default() -> Self {
        ApproxConfig { tol: 0.05, tols: BTreeMap::new(), max_segments: 256, product_mode: ProductMode::Rewrite, step_a: 0.0 }
    }
}

impl ApproxConfig {
    pub fn with_tol(tol: f64) -> Self {
        ApproxConfig { tol, ..Self::default() }
    }

    pub fn tol_for(&self, primitive: &str) -> f64 {
        self.tols.get(primitive).copied().unwrap_or(self.tol)
    }

    pub fn validate(&self) -> Result<(), GraphError> {
        let bad = |t: f64| !(t.is_finite() && t > 0.0);
        if bad(self.tol) || self.tols.values().any(|&t| bad(t)) {
            return Err(GraphError::Config("tolerances must be positive and finite".into()));
        }
        if self.max_segments == 0 {
            return Err(GraphError::Config("max_segments must be at least 1".into()));
        }
        if !self.step_a.is_finite() || self.step_a > 0.0 {
            return Err(GraphError::Config("step split point must be finite and <= 0".into()));
        }
        Ok(())
    }
}

/// A band around a primitive's graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Band {
    pub union: PolyUnion,
    /// Trapezoids (unary) or grid cells (binary).
    pub segments: usize,
    /// Largest vertical half-width.
    pub half_width: f64,
    /// False when a curvature bound came from sampling.
    pub rigorous: bool,
}

impl Band {
    pub fn to_hz(&self) -> Result<HybridZonotope, HzError> {
        HybridZonotope::from_poly_union(&self.union)
    }
}

fn budget(op: &str, dom: &str, max: usize, tol: f64) -> GraphError {
    GraphError::Budget { op: op.to_string(), domain: dom.to_string(), max, tol }
}

/// Range of `g` over `x` given its critical points.
fn range_with_critical(g: impl Fn(f64) -> f64, x: Interval, critical: &[f64]) -> Interval {
    let mut pts = vec![g(x.lo), g(x.hi)];
    pts.extend(critical.iter().filter(|&&c| x.contains(c)).map(|&c| g(c)));
    let lo = pts.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = pts.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Interval { lo, hi }
}

fn negate(x: Interval) -> Interval {
    Interval { lo: -x.hi, hi: -x.lo }
}

/// Analytic range of `f''` over `x`; `None` when unbounded or not available.
pub fn curvature(op: &UnaryOp, x: Interval) -> Option<Interval> {
    let r = match op {
        UnaryOp::Sin | UnaryOp::Cos => negate(apply_unary(op, &x).ok()?),
        UnaryOp::Tan => {
            let t = apply_unary(op, &x).ok()?;
            let g = |t: f64| 2.0 * t * (1.0 + t * t);
            Interval { lo: g(t.lo), hi: g(t.hi) }
        }
        UnaryOp::Exp => apply_unary(op, &x).ok()?,
        UnaryOp::ExpBase(b) => apply_unary(op, &x).ok()?.scale(b.ln().powi(2)),
        UnaryOp::Log => {
            if x.lo <= 0.0 {
                return None;
            }
            Interval { lo: -1.0 / (x.lo * x.lo), hi: -1.0 / (x.hi * x.hi) }
        }
        UnaryOp::Sqrt => {
            if x.lo <= 0.0 {
                return None;
            }
            Interval { lo: -0.25 * x.lo.powf(-1.5), hi: -0.25 * x.hi.powf(-1.5) }
        }
        UnaryOp::Sq => Interval::point(2.0),
        UnaryOp::Tanh => {
            let t = apply_unary(op, &x).ok()?;
            let c = 1.0 / 3f64.sqrt();
            range_with_critical(|t| -2.0 * (t - t * t * t), t, &[-c, c])
        }
        UnaryOp::Sig => {
            let s = apply_unary(op, &x).ok()?;
            let r3 = 3f64.sqrt();
            range_with_critical(|s| s * (1.0 - s) * (1.0 - 2.0 * s), s, &[(3.0 - r3) / 6.0, (3.0 + r3) / 6.0])
        }
        UnaryOp::PowConst(k) => {
            if *k == 0.0 || *k == 1.0 {
                Interval::point(0.0)
            } else {
                apply_unary(&UnaryOp::PowConst(k - 2.0), &x).ok()?.scale(k * (k - 1.0))
            }
        }
        UnaryOp::Abs | UnaryOp::HardSig | UnaryOp::Step | UnaryOp::Composite(_) => return None,
    };
    (r.lo.is_finite() && r.hi.is_finite()).then_some(r)
}

/// Non-rigorous `f''` range from second differences on a 1024-point grid, widened ×1.5.
fn sampled_curvature(op: &UnaryOp, x: Interval) -> Result<Interval, EvalError> {
    const N: usize = 1024;
    let h = x.width() / (N - 1) as f64;
    if h == 0.0 {
        return Ok(Interval::point(0.0));
    }
    let ys: Vec<f64> = (0..N).map(|i| op.eval(x.lo + h * i as f64)).collect::<Result<_, _>>()?;
    let m = ys.windows(3).map(|w| ((w[0] - 2.0 * w[1] + w[2]) / (h * h)).abs()).fold(0.0, f64::max);
    Ok(Interval { lo: -1.5 * m, hi: 1.5 * m })
}

/// Non-rigorous deviation range `f − L` from dense sampling, widened ×1.5.
fn sampled_deviation(op: &UnaryOp, a: f64, b: f64, fa: f64, fb: f64) -> Result<(f64, f64), EvalError> {
    const N: usize = 1024;
    let (mut lo, mut hi) = (0.0f64, 0.0f64);
    for i in 1..N - 1 {
        let t = i as f64 / (N - 1) as f64;
        let x = a + t * (b - a);
        let d = op.eval(x)? - (fa + t * (fb - fa));
        lo = lo.min(d);
        hi = hi.max(d);
    }
    Ok((1.5 * lo, 1.5 * hi))
}

struct Segment {
    a: f64,
    b: f64,
    fa: f64,
    fb: f64,
    /// Band offsets relative to the secant.
    lo_off: f64,
    hi_off: f64,
    rigorous: bool,
}

fn segment(op: &UnaryOp, a: f64, b: f64) -> Result<Segment, EvalError> {
    let (fa, fb) = (op.eval(a)?, op.eval(b)?);
    let h = b - a;
    let pad = 1e-12 * (1.0 + fa.abs().max(fb.abs()));
    let iv = Interval { lo: a, hi: b };
    let (lo_off, hi_off, rigorous) = match op {
        UnaryOp::Composite(_) => {
            let c = sampled_curvature(op, iv)?;
            (-c.hi.max(0.0) * h * h / 8.0, -c.lo.min(0.0) * h * h / 8.0, false)
        }
        _ => match curvature(op, iv) {
            Some(c) => (-c.hi.max(0.0) * h * h / 8.0, -c.lo.min(0.0) * h * h / 8.0, true),
            None => {
                let (lo, hi) = sampled_deviation(op, a, b, fa, fb)?;
                (lo, hi, false)
            }
        },
    };
    Ok(Segment { a, b, fa, fb, lo_off: lo_off - pad, hi_off: hi_off + pad, rigorous })
}

/// Band of a unary primitive over `dom` with half-width at most the
/// primitive's tolerance. Piecewise-affine primitives get zero-width bands
/// broken at their kinks; `step` uses [`exact_step`] semantics.
pub fn sos_unary(op: &UnaryOp, dom: Interval, cfg: &ApproxConfig) -> Result<Band, GraphError> {
    cfg.validate()?;
    let tol = cfg.tol_for(op.name());
    if matches!(op, UnaryOp::Step) {
        return step_band(dom, cfg.step_a);
    }
    if dom.width() == 0.0 {
        let v = DMatrix::from_column_slice(2, 1, &[dom.lo, op.eval(dom.lo)?]);
        return Ok(Band { union: PolyUnion::new(v, vec![vec![0]])?, segments: 1, half_width: 0.0, rigorous: true });
    }
    if op.is_piecewise_affine() {
        let mut xs = vec![dom.lo];
        xs.extend(op.kinks().iter().copied().filter(|&k| dom.lo < k && k < dom.hi));
        xs.push(dom.hi);
        if xs.len() - 1 > cfg.max_segments {
            return Err(budget(op.name(), &dom.to_string(), cfg.max_segments, tol));
        }
        let mut v = DMatrix::zeros(2, xs.len());
        for (i, &x) in xs.iter().enumerate() {
            v[(0, i)] = x;
            v[(1, i)] = op.eval(x)?;
        }
        let selections = (0..xs.len() - 1).map(|i| vec![i, i + 1]).collect();
        return Ok(Band { union: PolyUnion::new(v, selections)?, segments: xs.len() - 1, half_width: 0.0, rigorous: true });
    }
    let over = || budget(op.name(), &dom.to_string(), cfg.max_segments, tol);
    let mut segs = vec![segment(op, dom.lo, dom.hi)?];
    loop {
        // split every segment whose own band, or a shared edge, is too wide
        let mut split = vec![false; segs.len()];
        for (k, s) in segs.iter().enumerate() {
            if (s.hi_off - s.lo_off) / 2.0 > tol {
                split[k] = true;
            }
            if k + 1 < segs.len() {
                let t = &segs[k + 1];
                if (s.hi_off.max(t.hi_off) - s.lo_off.min(t.lo_off)) / 2.0 > tol {
                    split[k] = true;
                    split[k + 1] = true;
                }
            }
        }
        if !split.contains(&true) {
            break;
        }
        let mut next = Vec::with_capacity(2 * segs.len());
        for (s, sp) in segs.into_iter().zip(split) {
            if sp {
                let m = 0.5 * (s.a + s.b);
                if !(s.a < m && m < s.b) {
                    return Err(over());
                }
                next.push(segment(op, s.a, m)?);
                next.push(segment(op, m, s.b)?);
            } else {
                next.push(s);
            }
        }
        segs = next;
        if segs.len() > cfg.max_segments {
            return Err(over());
        }
    }
    // shared vertical edges: union of the neighbouring offsets
    let n = segs.len();
    let mut cols: Vec<[f64; 2]> = Vec::new();
    let mut node_vertices: Vec<Vec<usize>> = Vec::new();
    let mut half_width = 0.0f64;
    for k in 0..=n {
        let (x, fx) = if k < n { (segs[k].a, segs[k].fa) } else { (segs[n - 1].b, segs[n - 1].fb) };
        let adjacent = [k.checked_sub(1), (k < n).then_some(k)];
        let lo = adjacent.iter().flatten().map(|&i| segs[i].lo_off).fold(f64::INFINITY, f64::min);
        let hi = adjacent.iter().flatten().map(|&i| segs[i].hi_off).fold(f64::NEG_INFINITY, f64::max);
        half_width = half_width.max((hi - lo) / 2.0);
        let first = cols.len();
        cols.push([x, fx + lo]);
        cols.push([x, fx + hi]);
        node_vertices.push(vec![first, first + 1]);
    }
    let v = DMatrix::from_fn(2, cols.len(), |r, c| cols[c][r]);
    let selections = (0..n).map(|k| [node_vertices[k].clone(), node_vertices[k + 1].clone()].concat()).collect();
    let rigorous = segs.iter().all(|s| s.rigorous);
    Ok(Band { union: PolyUnion::new(v, selections)?, segments: n, half_width, rigorous })
}

/// The step graph over `dom` split at `a`: segments `(lo,0)–(a,0)` and `(0,1)–(hi,1)`.
pub fn exact_step(dom: Interval, a: f64) -> Result<PolyUnion, GraphError> {
    if !(dom.lo < 0.0 && 0.0 < dom.hi && dom.lo <= a && a <= 0.0) {
        return Err(GraphError::StepDomain { lo: dom.lo, hi: dom.hi, a });
    }
    let v = DMatrix::from_row_slice(2, 4, &[dom.lo, a, 0.0, dom.hi, 0.0, 0.0, 1.0, 1.0]);
    Ok(PolyUnion::new(v, vec![vec![0, 1], vec![2, 3]])?)
}

fn step_band(dom: Interval, a: f64) -> Result<Band, GraphError> {
    let constant = |y: f64| -> Result<Band, GraphError> {
        let v = DMatrix::from_row_slice(2, 2, &[dom.lo, dom.hi, y, y]);
        Ok(Band { union: PolyUnion::new(v, vec![vec![0, 1]])?, segments: 1, half_width: 0.0, rigorous: true })
    };
    if dom.lo >= 0.0 {
        return constant(1.0);
    }
    if dom.hi < 0.0 {
        return constant(0.0);
    }
    let a = a.max(dom.lo);
    let union = if dom.hi == 0.0 {
        PolyUnion::new(DMatrix::from_row_slice(2, 3, &[dom.lo, a, 0.0, 0.0, 0.0, 1.0]), vec![vec![0, 1], vec![2]])?
    } else {
        exact_step(dom, a)?
    };
    Ok(Band { union, segments: 2, half_width: 0.0, rigorous: true })
}

/// Bounds on `|f_xx|` and `|f_yy|` over a cell.
fn second_partials(op: BinaryOp, x: Interval, y: Interval) -> Result<(f64, f64), IntervalError> {
    Ok(match op {
        BinaryOp::Mul => (0.0, 0.0),
        BinaryOp::Div => {
            // f_yy = 2x / y³
            let y3 = apply_unary(&UnaryOp::PowConst(3.0), &y)?;
            (0.0, apply_binary(BinaryOp::Div, &x.scale(2.0), &y3)?.mag())
        }
        BinaryOp::Pow => {
            // f_xx = y(y−1)·x^(y−2),  f_yy = ln(x)²·x^y
            let yy = apply_binary(BinaryOp::Mul, &y, &y.shift(-1.0))?;
            let fxx = apply_binary(BinaryOp::Mul, &yy, &apply_binary(BinaryOp::Pow, &x, &y.shift(-2.0))?)?;
            let ln2 = apply_unary(&UnaryOp::Sq, &apply_unary(&UnaryOp::Log, &x)?)?;
            let fyy = apply_binary(BinaryOp::Mul, &ln2, &apply_binary(BinaryOp::Pow, &x, &y)?)?;
            (fxx.mag(), fyy.mag())
        }
    })
}

/// Band of a binary primitive over `dom1 × dom2` on a uniform grid: each
/// cell is the hull of its corner values widened by the bilinear
/// interpolation error bound.
pub fn binary_sos(op: BinaryOp, dom1: Interval, dom2: Interval, cfg: &ApproxConfig) -> Result<Band, GraphError> {
    cfg.validate()?;
    let tol = cfg.tol_for(op.name());
    let dom_text = format!("{dom1} x {dom2}");
    for n in 1..=cfg.max_segments {
        let xs = grid(dom1, n);
        let ys = grid(dom2, n);
        let mut vals = vec![vec![0.0; n + 1]; n + 1];
        for (i, &x) in xs.iter().enumerate() {
            for (j, &y) in ys.iter().enumerate() {
                vals[i][j] = op.eval(x, y)?;
            }
        }
        let mut e = 0.0f64;
        let mut half_width = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let cx = Interval { lo: xs[i], hi: xs[i + 1] };
                let cy = Interval { lo: ys[j], hi: ys[j + 1] };
                let (mxx, myy) = second_partials(op, cx, cy)?;
                let ec = (mxx * cx.width().powi(2) + myy * cy.width().powi(2)) / 8.0;
                let twist = (vals[i][j] + vals[i + 1][j + 1] - vals[i][j + 1] - vals[i + 1][j]).abs();
                e = e.max(ec);
                half_width = half_width.max(ec + twist / 4.0);
            }
        }
        let pad = 1e-12 * (1.0 + vals.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs())));
        let e = if e > 0.0 { e + pad } else { 0.0 };
        if half_width > tol {
            continue;
        }
        let mut cols: Vec<[f64; 3]> = Vec::new();
        let mut node: Vec<Vec<Vec<usize>>> = vec![vec![Vec::new(); n + 1]; n + 1];
        for i in 0..=n {
            for j in 0..=n {
                let f = vals[i][j];
                let first = cols.len();
                if e > 0.0 {
                    cols.push([xs[i], ys[j], f - e]);
                    cols.push([xs[i], ys[j], f + e]);
                    node[i][j] = vec![first, first + 1];
                } else {
                    cols.push([xs[i], ys[j], f]);
                    node[i][j] = vec![first];
                }
            }
        }
        let v = DMatrix::from_fn(3, cols.len(), |r, c| cols[c][r]);
        let mut selections = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                selections.push(
                    [&node[i][j], &node[i + 1][j], &node[i][j + 1], &node[i + 1][j + 1]].iter().flat_map(|s| s.iter().copied()).collect(),
                );
            }
        }
        return Ok(Band { union: PolyUnion::new(v, selections)?, segments: n * n, half_width, rigorous: true });
    }
    Err(budget(op.name(), &dom_text, cfg.max_segments, tol))
}

fn grid(d: Interval, n: usize) -> Vec<f64> {
    (0..=n).map(|i| if i == n { d.hi } else { d.lo + d.width() * i as f64 / n as f64 }).collect()
}

/// Exact band of `ind · y` for `ind ∈ {0,1}`: `(0, y, 0)` or `(1, y, y)`.
/// `indicator_first` selects which factor is the indicator.
pub fn indicator_product(other: Interval, indicator_first: bool) -> Result<Band, GraphError> {
    let pts: [[f64; 3]; 4] = [[0.0, other.lo, 0.0], [0.0, other.hi, 0.0], [1.0, other.lo, other.lo], [1.0, other.hi, other.hi]];
    let v = DMatrix::from_fn(3, 4, |r, c| {
        let p = pts[c];
        match (r, indicator_first) {
            (0, true) | (1, false) => p[0],
            (0, false) | (1, true) => p[1],
            _ => p[2],
        }
    });
    Ok(Band { union: PolyUnion::new(v, vec![vec![0, 1], vec![2, 3]])?, segments: 2, half_width: 0.0, rigorous: true })
}

/// Whether observable `j` only takes the values 0 and 1.
pub fn is_indicator(fd: &FunctionalDecomposition, j: usize) -> bool {
    match &fd.observables[j] {
        ObservableExpr::Unary { op: UnaryOp::Step, .. } => true,
        ObservableExpr::Affine { terms, offset } => {
            matches!(terms.as_slice(), [(k, c)] if is_indicator(fd, *k)
                && [*offset, offset + c].iter().all(|v| *v == 0.0 || *v == 1.0))
        }
        ObservableExpr::Binary { op: BinaryOp::Mul, lhs, rhs } => is_indicator(fd, *lhs) && is_indicator(fd, *rhs),
        _ => false,
    }
}

/// Replaces every product `a·b` by `¼(a+b)² − ¼(a−b)²`, reusing shared sums
/// and squares. Other observables are copied as they are, duplicates included.
pub fn rewrite_products(fd: &FunctionalDecomposition) -> Result<FunctionalDecomposition, EvalError> {
    let mut b = Builder::new(fd.inputs.clone(), false);
    let mut map: Vec<Operand> = (0..fd.n_x()).map(|i| b.input(i)).collect();
    for obs in &fd.observables[fd.n_x()..] {
        let operand = match obs {
            ObservableExpr::Binary { op: BinaryOp::Mul, lhs, rhs } => {
                let (x, y) = (map[*lhs], map[*rhs]);
                b.set_dedup(true);
                let s = b.add(x, y);
                let d = b.sub(x, y);
                let s2 = b.unary(UnaryOp::Sq, s)?;
                let d2 = b.unary(UnaryOp::Sq, d)?;
                let out = b.affine(&[(s2, 0.25), (d2, -0.25)], 0.0);
                b.set_dedup(false);
                out
            }
            other => {
                let idx = |k: usize| match map[k] {
                    Operand::Obs(i) => i,
                    Operand::Const(_) => unreachable!("observables map to observables"),
                };
                Operand::Obs(b.push(other.map_args(idx)))
            }
        };
        // keep every observable addressable even if it folded to a constant
        map.push(Operand::Obs(b.materialize(operand)));
    }
    let mut out = b.finish();
    out.outputs = fd
        .outputs
        .iter()
        .map(|&o| match map[o] {
            Operand::Obs(i) => i,
            Operand::Const(_) => unreachable!(),
        })
        .collect();
    let live = out.live(&[]);
    Ok(out.compact(&live).0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservableReport {
    /// `w_k` name in the decomposition that was built.
    pub name: String,
    pub kind: String,
    pub primitive: Option<String>,
    pub range: Interval,
    pub segments: usize,
    pub half_width: f64,
    pub tol: Option<f64>,
    pub rigorous: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildReport {
    pub product_mode: ProductMode,
    pub observables: Vec<ObservableReport>,
    pub total_segments: usize,
    pub complexity: Complexity,
}

/// Result of [`build_graph_set`]: the set over `(inputs, outputs)`, the
/// decomposition actually approximated, and per-observable statistics.
#[derive(Debug, Clone)]
pub struct GraphSet {
    pub set: HybridZonotope,
    pub fd: FunctionalDecomposition,
    pub report: BuildReport,
}

/// Builds a hybrid zonotope containing `{(x, f(x)) : x ∈ domain}`.
pub fn build_graph_set(fd: &FunctionalDecomposition, domain: &[Interval], cfg: &ApproxConfig) -> Result<GraphSet, GraphError> {
    cfg.validate()?;
    fd.validate().map_err(|e| GraphError::Config(e.to_string()))?;
    let fd = match cfg.product_mode {
        ProductMode::Rewrite => rewrite_products(fd)?,
        ProductMode::Direct => fd.clone(),
    };
    let ranges = propagate(&fd, domain)?;
    let n_x = fd.n_x();
    let mut z = HybridZonotope::from_box(domain);
    let mut coord: Vec<usize> = (0..n_x).collect();
    let mut reports = Vec::new();
    for (j, obs) in fd.observables.iter().enumerate().skip(n_x) {
        let dim = z.dim();
        let mut report = ObservableReport {
            name: obs_name(j),
            kind: obs.kind().to_string(),
            primitive: None,
            range: ranges[j],
            segments: 0,
            half_width: 0.0,
            tol: None,
            rigorous: true,
        };
        let (band, args) = match obs {
            ObservableExpr::Input { .. } => unreachable!("inputs precede computed observables"),
            ObservableExpr::Affine { terms, offset } => {
                // exact lift z ↦ (z, Σ c·z_k + offset)
                let mut r = DMatrix::zeros(dim + 1, dim);
                r.view_mut((0, 0), (dim, dim)).fill_with_identity();
                for &(k, c) in terms {
                    r[(dim, coord[k])] += c;
                }
                let mut t = DVector::zeros(dim + 1);
                t[dim] = *offset;
                z = z.affine_map(&r, &t)?;
                coord.push(dim);
                reports.push(report);
                continue;
            }
            ObservableExpr::Unary { op, arg } => {
                report.primitive = Some(op.name().to_string());
                report.tol = (!op.is_piecewise_affine() && !matches!(op, UnaryOp::Step)).then(|| cfg.tol_for(op.name()));
                (sos_unary(op, ranges[*arg], cfg)?, vec![*arg])
            }
            ObservableExpr::Binary { op, lhs, rhs } => {
                report.primitive = Some(op.name().to_string());
                let band = if *op == BinaryOp::Mul && is_indicator(&fd, *lhs) {
                    indicator_product(ranges[*rhs], true)?
                } else if *op == BinaryOp::Mul && is_indicator(&fd, *rhs) {
                    indicator_product(ranges[*lhs], false)?
                } else {
                    report.tol = Some(cfg.tol_for(op.name()));
                    binary_sos(*op, ranges[*lhs], ranges[*rhs], cfg)?
                };
                (band, vec![*lhs, *rhs])
            }
        };
        report.segments = band.segments;
        report.half_width = band.half_width;
        report.rigorous = band.rigorous;
        let w = band.to_hz()?;
        z = z.cartesian_product(&HybridZonotope::from_box(&[ranges[j]]));
        let mut r = DMatrix::zeros(args.len() + 1, dim + 1);
        for (row, &a) in args.iter().enumerate() {
            r[(row, coord[a])] = 1.0;
        }
        r[(args.len(), dim)] = 1.0;
        z = z.intersect_lifted(&w, &r)?;
        coord.push(dim);
        reports.push(report);
    }
    let keep: Vec<usize> = (0..n_x).chain(fd.outputs.iter().map(|&o| coord[o])).collect();
    let set = z.project(&keep)?;
    let total_segments = reports.iter().map(|r| r.segments).sum();
    let report = BuildReport { product_mode: cfg.product_mode, observables: reports, total_segments, complexity: set.complexity() };
    Ok(GraphSet { set, fd, report })
}
