//! Depth-first search over binary factors with linear-relaxation pruning.
//!
//! The relaxation treats every `ξb` as continuous in `[-1, 1]`; branching
//! fixes one binary at a time to `±1`. A single [`Lp`] is reused across the
//! whole search, so each node warm starts from its parent's basis.

use nalgebra::{DMatrix, DVector};

use super::lp::Lp;
use super::{HybridZonotope, HzError};

/// A relaxed binary within this distance of `±1` counts as integral.
const INT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchOptions {
    /// Containment tolerance on `‖z − p‖∞`.
    pub tol: f64,
    /// Absolute feasibility tolerance on variable bounds and residuals.
    pub feas_tol: f64,
    /// Maximum number of search nodes per query.
    pub node_limit: usize,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions { tol: 1e-6, feas_tol: 1e-7, node_limit: 200_000 }
    }
}

/// Column layout: `[ξc | ξb | s]`, one slack per pinned coordinate.
struct Relaxation {
    lp: Lp,
    ng: usize,
    nb: usize,
    a: DMatrix<f64>,
    b: DVector<f64>,
}

impl Relaxation {
    /// Constraints of `z` plus `|z_k − v| ≤ tol` for each pinned `(k, v)`.
    fn new(z: &HybridZonotope, pinned: &[(usize, f64)], opts: &SearchOptions) -> Result<Self, HzError> {
        let (ng, nb, nc) = (z.ng(), z.nb(), z.nc());
        let np = pinned.len();
        let n = ng + nb + np;
        let m = nc + np;
        let mut a = DMatrix::zeros(m, n);
        let mut b = DVector::zeros(m);
        a.view_mut((0, 0), (nc, ng)).copy_from(&z.ac);
        a.view_mut((0, ng), (nc, nb)).copy_from(&z.ab);
        b.rows_mut(0, nc).copy_from(&z.b);
        for (r, &(k, v)) in pinned.iter().enumerate() {
            if k >= z.dim() {
                return Err(HzError::Dimension(format!("coordinate {k} of a {}-dimensional set", z.dim())));
            }
            if !v.is_finite() {
                return Err(HzError::Dimension(format!("non-finite coordinate value {v}")));
            }
            let row = nc + r;
            a.view_mut((row, 0), (1, ng)).copy_from(&z.gc.row(k));
            a.view_mut((row, ng), (1, nb)).copy_from(&z.gb.row(k));
            a[(row, ng + nb + r)] = -1.0;
            b[row] = v - z.c[k];
        }
        let tol = opts.tol.max(0.0);
        let mut lo = vec![-1.0; ng + nb];
        let mut hi = vec![1.0; ng + nb];
        lo.extend(std::iter::repeat_n(-tol, np));
        hi.extend(std::iter::repeat_n(tol, np));
        let lp = Lp::new(a.clone(), b.clone(), lo, hi, opts.feas_tol);
        Ok(Relaxation { lp, ng, nb, a, b })
    }

    /// Moves the pinned rows to a new point of the same length and frees
    /// every binary; the basis carries over.
    fn repin(&mut self, z: &HybridZonotope, p: &[f64]) {
        let nc = z.nc();
        for (k, &v) in p.iter().enumerate() {
            self.b[nc + k] = v - z.c[k];
        }
        for k in 0..self.nb {
            self.release(k);
        }
        self.lp.set_rhs(self.b.as_slice());
    }

    fn binary(&self, k: usize) -> usize {
        self.ng + k
    }

    fn is_fixed(&self, k: usize) -> bool {
        let (l, u) = self.lp.bounds(self.binary(k));
        l == u
    }

    fn fix(&mut self, k: usize, v: f64) {
        self.lp.set_bounds(self.binary(k), v, v);
    }

    fn release(&mut self, k: usize) {
        self.lp.set_bounds(self.binary(k), -1.0, 1.0);
    }

    /// Unfixed binary farthest from `±1` and the sign it leans to.
    fn branch_var(&self) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64, f64)> = None;
        for k in 0..self.nb {
            if self.is_fixed(k) {
                continue;
            }
            let v = self.lp.value(self.binary(k));
            let frac = 1.0 - v.abs();
            if best.is_none_or(|(_, _, f)| frac > f) {
                best = Some((k, v, frac));
            }
        }
        best.map(|(k, v, _)| (k, if v >= 0.0 { 1.0 } else { -1.0 }))
    }

    fn all_near_integral(&self) -> bool {
        (0..self.nb).all(|k| self.is_fixed(k) || 1.0 - self.lp.value(self.binary(k)).abs() <= INT_TOL)
    }

    /// Independent residual check of the current (clipped) solution.
    fn verified(&self, tol: f64) -> bool {
        let x: Vec<f64> = (0..self.a.ncols())
            .map(|j| {
                let (l, u) = self.lp.bounds(j);
                self.lp.value(j).clamp(l, u)
            })
            .collect();
        let r = &self.a * DVector::from_vec(x) - &self.b;
        let scale = 1.0 + self.b.amax();
        r.amax() <= tol.max(1e-12 * scale) * 10.0
    }
}

struct Budget {
    used: usize,
    limit: usize,
}

impl Budget {
    fn tick(&mut self, found: u64) -> Result<(), HzError> {
        self.used += 1;
        if self.used > self.limit {
            Err(HzError::Budget { limit: self.limit, found })
        } else {
            Ok(())
        }
    }
}

pub(crate) fn contains(z: &HybridZonotope, p: &[f64], opts: &SearchOptions) -> Result<bool, HzError> {
    if p.len() != z.dim() {
        return Err(HzError::Dimension(format!("point of length {} for a {}-dimensional set", p.len(), z.dim())));
    }
    let pinned: Vec<(usize, f64)> = p.iter().copied().enumerate().collect();
    let mut rel = Relaxation::new(z, &pinned, opts)?;
    let mut budget = Budget { used: 0, limit: opts.node_limit };
    find_leaf(&mut rel, &mut budget, opts)
}

/// [`contains`] for many points, reusing one relaxation so each query warm
/// starts from the previous one's basis.
pub(crate) fn contains_all(z: &HybridZonotope, points: &[Vec<f64>], opts: &SearchOptions) -> Result<Vec<bool>, HzError> {
    let Some(first) = points.first() else {
        return Ok(Vec::new());
    };
    if let Some(p) = points.iter().find(|p| p.len() != z.dim()) {
        return Err(HzError::Dimension(format!("point of length {} for a {}-dimensional set", p.len(), z.dim())));
    }
    let pinned: Vec<(usize, f64)> = first.iter().copied().enumerate().collect();
    let mut rel = Relaxation::new(z, &pinned, opts)?;
    let mut out = Vec::with_capacity(points.len());
    for (i, p) in points.iter().enumerate() {
        if let Some(v) = p.iter().find(|v| !v.is_finite()) {
            return Err(HzError::Dimension(format!("non-finite coordinate value {v}")));
        }
        if i > 0 {
            rel.repin(z, p);
        }
        let mut budget = Budget { used: 0, limit: opts.node_limit };
        out.push(find_leaf(&mut rel, &mut budget, opts)?);
    }
    Ok(out)
}

fn find_leaf(rel: &mut Relaxation, budget: &mut Budget, opts: &SearchOptions) -> Result<bool, HzError> {
    budget.tick(0)?;
    if !rel.lp.feasible()? {
        return Ok(false);
    }
    if rel.all_near_integral() {
        // try the rounded assignment directly before branching
        let free: Vec<(usize, f64)> =
            (0..rel.nb).filter(|&k| !rel.is_fixed(k)).map(|k| (k, rel.lp.value(rel.binary(k)).signum())).collect();
        for &(k, v) in &free {
            rel.fix(k, if v == 0.0 { 1.0 } else { v });
        }
        if rel.lp.feasible()? && rel.verified(opts.feas_tol) {
            return Ok(true);
        }
        for &(k, _) in &free {
            rel.release(k);
        }
        if free.is_empty() {
            return Ok(false);
        }
        if !rel.lp.feasible()? {
            return Ok(false);
        }
    }
    let Some((k, first)) = rel.branch_var() else {
        return Ok(rel.verified(opts.feas_tol));
    };
    for v in [first, -first] {
        rel.fix(k, v);
        if find_leaf(rel, budget, opts)? {
            return Ok(true);
        }
    }
    rel.release(k);
    Ok(false)
}

pub(crate) fn count_leaves(z: &HybridZonotope, opts: &SearchOptions) -> Result<u64, HzError> {
    let mut rel = Relaxation::new(z, &[], opts)?;
    // binaries absent from the constraints double the count without search
    let (constrained, free): (Vec<usize>, Vec<usize>) = (0..z.nb()).partition(|&k| z.ab.column(k).amax() > 0.0);
    let mut order = constrained;
    order.sort_by(|&x, &y| z.ab.column(y).norm().total_cmp(&z.ab.column(x).norm()).then(x.cmp(&y)));
    let mut budget = Budget { used: 0, limit: opts.node_limit };
    let mut found = 0u64;
    enumerate(&mut rel, &order, 0, &mut budget, &mut found, opts)?;
    let factor = 1u64.checked_shl(free.len() as u32).filter(|_| free.len() < 64);
    match factor {
        Some(f) => Ok(found.saturating_mul(f)),
        None if found == 0 => Ok(0),
        None => Ok(u64::MAX),
    }
}

fn enumerate(
    rel: &mut Relaxation,
    order: &[usize],
    depth: usize,
    budget: &mut Budget,
    found: &mut u64,
    opts: &SearchOptions,
) -> Result<(), HzError> {
    budget.tick(*found)?;
    if !rel.lp.feasible()? {
        return Ok(());
    }
    let Some(&k) = order.get(depth) else {
        if rel.verified(opts.feas_tol) {
            *found += 1;
        }
        return Ok(());
    };
    let lean = if rel.lp.value(rel.binary(k)) >= 0.0 { 1.0 } else { -1.0 };
    for v in [lean, -lean] {
        rel.fix(k, v);
        enumerate(rel, order, depth + 1, budget, found, opts)?;
    }
    rel.release(k);
    Ok(())
}

/// Minimizes `w · (Gc ξc + Gb ξb)` over the (pinned) set by branch and bound.
/// Returns the optimal value and the factor vector `[ξc | ξb]`.
fn minimize(z: &HybridZonotope, pinned: &[(usize, f64)], w: &[f64], opts: &SearchOptions) -> Result<Option<(f64, Vec<f64>)>, HzError> {
    if w.len() != z.dim() {
        return Err(HzError::Dimension(format!("direction of length {} for a {}-dimensional set", w.len(), z.dim())));
    }
    let mut rel = Relaxation::new(z, pinned, opts)?;
    let wv = DVector::from_column_slice(w);
    let mut cost: Vec<f64> = (wv.transpose() * &z.gc).iter().copied().collect();
    cost.extend((wv.transpose() * &z.gb).iter().copied());
    cost.extend(std::iter::repeat_n(0.0, pinned.len()));
    rel.lp.set_cost(&cost);
    let mut budget = Budget { used: 0, limit: opts.node_limit };
    let mut best: Option<(f64, Vec<f64>)> = None;
    branch_min(&mut rel, &mut budget, &mut best, opts)?;
    Ok(best.map(|(v, x)| (v, x[..rel.ng + rel.nb].to_vec())))
}

fn branch_min(rel: &mut Relaxation, budget: &mut Budget, best: &mut Option<(f64, Vec<f64>)>, opts: &SearchOptions) -> Result<(), HzError> {
    budget.tick(u64::from(best.is_some()))?;
    let Some(bound) = rel.lp.minimize()? else {
        return Ok(());
    };
    let prune = |best: &Option<(f64, Vec<f64>)>, v: f64| best.as_ref().is_some_and(|(b, _)| v >= *b - 1e-12 * (1.0 + b.abs()));
    if prune(best, bound) {
        return Ok(());
    }
    if rel.all_near_integral() {
        let free: Vec<usize> = (0..rel.nb).filter(|&k| !rel.is_fixed(k)).collect();
        for &k in &free {
            let v = rel.lp.value(rel.binary(k)).signum();
            rel.fix(k, if v == 0.0 { 1.0 } else { v });
        }
        let mut found = false;
        if let Some(v) = rel.lp.minimize()? {
            if rel.verified(opts.feas_tol) {
                found = true;
                if !prune(best, v) {
                    *best = Some((v, rel.lp.values()));
                }
            }
        }
        for &k in &free {
            rel.release(k);
        }
        // a rounding that fails verification falls back to branching
        if found || free.is_empty() || rel.lp.minimize()?.is_none() {
            return Ok(());
        }
    }
    let Some((k, first)) = rel.branch_var() else {
        return Ok(());
    };
    for v in [first, -first] {
        rel.fix(k, v);
        branch_min(rel, budget, best, opts)?;
    }
    rel.release(k);
    Ok(())
}

/// Range of coordinate `coord` over the points whose pinned coordinates are
/// within `opts.tol` of the given values; `None` when that slice is empty.
pub(crate) fn coordinate_range(
    z: &HybridZonotope,
    pinned: &[(usize, f64)],
    coord: usize,
    opts: &SearchOptions,
) -> Result<Option<(f64, f64)>, HzError> {
    if coord >= z.dim() {
        return Err(HzError::Dimension(format!("coordinate {coord} of a {}-dimensional set", z.dim())));
    }
    let mut w = vec![0.0; z.dim()];
    w[coord] = 1.0;
    let Some((lo, _)) = minimize(z, pinned, &w, opts)? else {
        return Ok(None);
    };
    w[coord] = -1.0;
    let Some((neg_hi, _)) = minimize(z, pinned, &w, opts)? else {
        return Ok(None);
    };
    Ok(Some((lo + z.c[coord], -neg_hi + z.c[coord])))
}

pub(crate) fn support_point(z: &HybridZonotope, direction: &[f64], opts: &SearchOptions) -> Result<Option<Vec<f64>>, HzError> {
    let neg: Vec<f64> = direction.iter().map(|d| -d).collect();
    Ok(minimize(z, &[], &neg, opts)?.map(|(_, x)| {
        let (xc, xb) = x.split_at(z.ng());
        z.point_at(xc, xb).iter().copied().collect()
    }))
}
