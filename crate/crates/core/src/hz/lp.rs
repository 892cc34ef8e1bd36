//! Dense bounded-variable simplex for `min cᵀx  s.t.  A x = b,  l ≤ x ≤ u`
//! with finite bounds.
//!
//! Every row carries an artificial column fixed to `[0, 0]`; the starting
//! basis is all artificials. Feasibility is reached by minimizing the sum of
//! bound violations of the basic variables, so bound changes (branching) warm
//! start from whatever basis is current.

use nalgebra::{DMatrix, DVector};

use super::HzError;

/// Pivot elements smaller than this are never selected.
const PIVOT_TOL: f64 = 1e-9;
/// Reduced-cost optimality tolerance.
const OPT_TOL: f64 = 1e-9;
/// Pivots between refactorizations.
const REFACTOR_EVERY: usize = 96;
/// An infeasibility verdict reached from a warm basis is re-derived from the
/// artificial basis when the residual violation is below this multiple of
/// the feasibility tolerance, or when `B⁻¹A` has entries above
/// [`ILL_CONDITIONED`]: both point at round-off rather than infeasibility.
const RECHECK_FACTOR: f64 = 1e4;
const ILL_CONDITIONED: f64 = 1e6;

#[derive(Debug, Clone)]
pub(crate) struct Lp {
    m: usize,
    n: usize,
    a: DMatrix<f64>,
    b: DVector<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    cost: Vec<f64>,
    /// `B⁻¹A`, row-major `m × n`.
    t: Vec<f64>,
    /// The basis has not moved since the last reset.
    cold: bool,
    /// Basic variable of each row; `n + r` is the artificial of row `r`.
    basis: Vec<usize>,
    /// Row of each basic structural.
    row_of: Vec<Option<usize>>,
    /// Values of nonbasic structurals (always at a bound).
    x: Vec<f64>,
    xb: Vec<f64>,
    feas_tol: f64,
    since_refactor: usize,
    pub(crate) pivots: usize,
}

enum Step {
    Flip,
    Pivot { row: usize, leave_value: f64 },
}

impl Lp {
    pub(crate) fn new(a: DMatrix<f64>, b: DVector<f64>, lo: Vec<f64>, hi: Vec<f64>, feas_tol: f64) -> Self {
        let (m, n) = a.shape();
        debug_assert!(b.len() == m && lo.len() == n && hi.len() == n);
        let x = lo.clone();
        let mut lp = Lp {
            m,
            n,
            t: Vec::new(),
            cold: true,
            basis: (n..n + m).collect(),
            row_of: vec![None; n],
            x,
            xb: vec![0.0; m],
            cost: vec![0.0; n],
            a,
            b,
            lo,
            hi,
            feas_tol,
            since_refactor: 0,
            pivots: 0,
        };
        lp.reset_basis();
        lp
    }

    fn reset_basis(&mut self) {
        self.basis = (self.n..self.n + self.m).collect();
        self.row_of = vec![None; self.n];
        for j in 0..self.n {
            self.x[j] = self.lo[j];
        }
        self.t = (0..self.m).flat_map(|i| (0..self.n).map(move |j| (i, j))).map(|(i, j)| self.a[(i, j)]).collect();
        let ax = &self.a * DVector::from_column_slice(&self.x);
        self.xb = (0..self.m).map(|i| self.b[i] - ax[i]).collect();
        self.since_refactor = 0;
        self.cold = true;
    }

    /// Replaces `b`, keeping the current basis.
    pub(crate) fn set_rhs(&mut self, b: &[f64]) {
        self.b.copy_from_slice(b);
        if self.cold {
            let ax = &self.a * DVector::from_column_slice(&self.x);
            self.xb = (0..self.m).map(|i| self.b[i] - ax[i]).collect();
            return;
        }
        let mut bm = DMatrix::zeros(self.m, self.m);
        for (r, &k) in self.basis.iter().enumerate() {
            if k < self.n {
                bm.set_column(r, &self.a.column(k));
            } else {
                bm[(k - self.n, r)] = 1.0;
            }
        }
        let mut rhs = self.b.clone();
        for j in 0..self.n {
            if self.row_of[j].is_none() && self.x[j] != 0.0 {
                rhs.axpy(-self.x[j], &self.a.column(j), 1.0);
            }
        }
        match bm.lu().solve(&rhs) {
            Some(xb) if xb.iter().all(|v| v.is_finite()) => self.xb = xb.iter().copied().collect(),
            _ => self.reset_basis(),
        }
    }

    pub(crate) fn set_cost(&mut self, cost: &[f64]) {
        self.cost.copy_from_slice(cost);
    }

    pub(crate) fn bounds(&self, j: usize) -> (f64, f64) {
        (self.lo[j], self.hi[j])
    }

    pub(crate) fn set_bounds(&mut self, j: usize, lo: f64, hi: f64) {
        self.lo[j] = lo;
        self.hi[j] = hi;
        if self.row_of[j].is_none() {
            let target = self.x[j].clamp(lo, hi);
            let target = if (target - lo).abs() <= (hi - target).abs() { lo } else { hi };
            let delta = target - self.x[j];
            if delta != 0.0 {
                for i in 0..self.m {
                    self.xb[i] -= self.t[i * self.n + j] * delta;
                }
                self.x[j] = target;
            }
        }
    }

    pub(crate) fn value(&self, j: usize) -> f64 {
        match self.row_of[j] {
            Some(r) => self.xb[r],
            None => self.x[j],
        }
    }

    pub(crate) fn values(&self) -> Vec<f64> {
        (0..self.n).map(|j| self.value(j)).collect()
    }

    pub(crate) fn objective(&self) -> f64 {
        (0..self.n).map(|j| self.cost[j] * self.value(j)).sum()
    }

    fn var_bounds(&self, k: usize) -> (f64, f64) {
        if k < self.n {
            (self.lo[k], self.hi[k])
        } else {
            (0.0, 0.0)
        }
    }

    fn max_violation(&self) -> f64 {
        (0..self.m)
            .map(|i| {
                let (l, u) = self.var_bounds(self.basis[i]);
                (l - self.xb[i]).max(self.xb[i] - u).max(0.0)
            })
            .fold(0.0, f64::max)
    }

    /// Recomputes `B⁻¹A` and the basic values from scratch.
    fn refactor(&mut self) -> Result<(), HzError> {
        self.since_refactor = 0;
        if self.m == 0 {
            return Ok(());
        }
        let mut bm = DMatrix::zeros(self.m, self.m);
        for (r, &k) in self.basis.iter().enumerate() {
            if k < self.n {
                bm.set_column(r, &self.a.column(k));
            } else {
                bm[(k - self.n, r)] = 1.0;
            }
        }
        let lu = bm.lu();
        let mut rhs = self.b.clone();
        for j in 0..self.n {
            if self.row_of[j].is_none() && self.x[j] != 0.0 {
                rhs.axpy(-self.x[j], &self.a.column(j), 1.0);
            }
        }
        let (Some(t), Some(xb)) = (lu.solve(&self.a), lu.solve(&rhs)) else {
            // numerically singular basis: restart from the artificial basis
            self.reset_basis();
            return Ok(());
        };
        if !t.iter().chain(xb.iter()).all(|v| v.is_finite()) {
            self.reset_basis();
            return Ok(());
        }
        for i in 0..self.m {
            for j in 0..self.n {
                self.t[i * self.n + j] = t[(i, j)];
            }
            self.xb[i] = xb[i];
        }
        Ok(())
    }

    fn suspicious(&self) -> bool {
        self.max_violation() <= RECHECK_FACTOR * self.feas_tol || self.t.iter().any(|v| v.abs() > ILL_CONDITIONED)
    }

    fn iteration_limit(&self) -> usize {
        50 * (self.m + self.n) + 1000
    }

    /// Drives all basic variables within `feas_tol` of their bounds.
    pub(crate) fn feasible(&mut self) -> Result<bool, HzError> {
        let mut refactored_at_end = false;
        let mut retried = false;
        let limit = self.iteration_limit();
        let mut iter = 0;
        loop {
            iter += 1;
            if iter > limit {
                return Err(HzError::Solver(format!("phase 1 iteration limit ({limit}) reached")));
            }
            let bland = iter > limit / 2;
            let mut cb = vec![0.0; self.m];
            let mut infeasible = false;
            for i in 0..self.m {
                let (l, u) = self.var_bounds(self.basis[i]);
                if self.xb[i] < l - self.feas_tol {
                    cb[i] = -1.0;
                    infeasible = true;
                } else if self.xb[i] > u + self.feas_tol {
                    cb[i] = 1.0;
                    infeasible = true;
                }
            }
            if !infeasible {
                if self.since_refactor > 0 && !refactored_at_end {
                    refactored_at_end = true;
                    self.refactor()?;
                    continue;
                }
                return Ok(true);
            }
            let d = self.reduced_costs(&cb, false);
            let Some((j, dir)) = self.entering(&d, bland) else {
                if self.since_refactor > 0 && !refactored_at_end {
                    refactored_at_end = true;
                    self.refactor()?;
                    continue;
                }
                if !self.cold && !retried && self.suspicious() {
                    retried = true;
                    self.reset_basis();
                    refactored_at_end = false;
                    continue;
                }
                return Ok(false);
            };
            let step = self.ratio_phase1(j, dir, d[j] * dir, bland);
            self.apply(j, dir, step)?;
        }
    }

    /// Minimizes the cost; `None` if infeasible.
    pub(crate) fn minimize(&mut self) -> Result<Option<f64>, HzError> {
        let limit = self.iteration_limit();
        for _ in 0..4 {
            if !self.feasible()? {
                return Ok(None);
            }
            let mut iter = 0;
            loop {
                iter += 1;
                if iter > limit {
                    return Err(HzError::Solver(format!("phase 2 iteration limit ({limit}) reached")));
                }
                let bland = iter > limit / 2;
                let cb: Vec<f64> = self.basis.iter().map(|&k| if k < self.n { self.cost[k] } else { 0.0 }).collect();
                let d = self.reduced_costs(&cb, true);
                let Some((j, dir)) = self.entering(&d, bland) else { break };
                let step = self.ratio_phase2(j, dir, bland);
                self.apply(j, dir, step)?;
            }
            if self.since_refactor > 0 {
                self.refactor()?;
            }
            if self.max_violation() <= self.feas_tol {
                return Ok(Some(self.objective()));
            }
        }
        Err(HzError::Solver("phase 2 lost feasibility repeatedly".into()))
    }

    /// `d_j = c_j − Σ_i cb_i T_ij` (phase 2) or `−Σ_i cb_i T_ij` (phase 1).
    fn reduced_costs(&self, cb: &[f64], with_cost: bool) -> Vec<f64> {
        let mut d = if with_cost { self.cost.clone() } else { vec![0.0; self.n] };
        for (i, &w) in cb.iter().enumerate() {
            if w != 0.0 {
                let row = &self.t[i * self.n..(i + 1) * self.n];
                for (dj, tij) in d.iter_mut().zip(row) {
                    *dj -= w * tij;
                }
            }
        }
        d
    }

    fn entering(&self, d: &[f64], bland: bool) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64, f64)> = None;
        for j in 0..self.n {
            if self.row_of[j].is_some() || self.lo[j] == self.hi[j] {
                continue;
            }
            let dir = if self.x[j] <= self.lo[j] && d[j] < -OPT_TOL {
                1.0
            } else if self.x[j] >= self.hi[j] && d[j] > OPT_TOL {
                -1.0
            } else {
                continue;
            };
            if bland {
                return Some((j, dir));
            }
            if best.is_none_or(|(_, _, s)| d[j].abs() > s) {
                best = Some((j, dir, d[j].abs()));
            }
        }
        best.map(|(j, dir, _)| (j, dir))
    }

    fn column(&self, j: usize, dir: f64) -> Vec<f64> {
        (0..self.m).map(|i| -self.t[i * self.n + j] * dir).collect()
    }

    /// Ratio test for phase 2: every basic variable stays within its bounds.
    fn ratio_phase2(&self, j: usize, dir: f64, bland: bool) -> (f64, Step) {
        let alpha = self.column(j, dir);
        let mut best = (self.hi[j] - self.lo[j], Step::Flip, f64::INFINITY);
        for (i, &a) in alpha.iter().enumerate() {
            if a.abs() < PIVOT_TOL {
                continue;
            }
            let (l, u) = self.var_bounds(self.basis[i]);
            let (bound, theta) = if a > 0.0 { (u, (u - self.xb[i]) / a) } else { (l, (l - self.xb[i]) / a) };
            let theta = theta.max(0.0);
            if better(theta, a, i, &best, bland, &self.basis) {
                best = (theta, Step::Pivot { row: i, leave_value: bound }, a.abs());
            }
        }
        (best.0, best.1)
    }

    /// Ratio test for phase 1: walks the breakpoints of the piecewise-linear
    /// infeasibility sum and stops where its slope turns nonnegative or a
    /// variable would leave its feasible range.
    fn ratio_phase1(&self, j: usize, dir: f64, slope0: f64, bland: bool) -> (f64, Step) {
        let alpha = self.column(j, dir);
        let mut block = (self.hi[j] - self.lo[j], Step::Flip, f64::INFINITY);
        let mut breaks: Vec<(f64, usize, f64, f64)> = Vec::new();
        for (i, &a) in alpha.iter().enumerate() {
            if a.abs() < PIVOT_TOL {
                continue;
            }
            let v = self.xb[i];
            let (l, u) = self.var_bounds(self.basis[i]);
            let below = v < l - self.feas_tol;
            let above = v > u + self.feas_tol;
            let candidate = if below {
                if a > 0.0 {
                    breaks.push(((l - v) / a, i, a.abs(), l));
                    Some((u, (u - v) / a))
                } else {
                    None
                }
            } else if above {
                if a < 0.0 {
                    breaks.push(((u - v) / a, i, a.abs(), u));
                    Some((l, (l - v) / a))
                } else {
                    None
                }
            } else if a > 0.0 {
                Some((u, ((u - v) / a).max(0.0)))
            } else {
                Some((l, ((l - v) / a).max(0.0)))
            };
            if let Some((bound, theta)) = candidate {
                if better(theta, a, i, &block, bland, &self.basis) {
                    block = (theta, Step::Pivot { row: i, leave_value: bound }, a.abs());
                }
            }
        }
        breaks.sort_by(|x, y| x.0.total_cmp(&y.0).then(y.2.total_cmp(&x.2)));
        let mut slope = slope0;
        for &(theta, i, w, bound) in &breaks {
            if theta >= block.0 {
                break;
            }
            slope += w;
            if slope >= -OPT_TOL * 1e-3 {
                return (theta, Step::Pivot { row: i, leave_value: bound });
            }
        }
        (block.0, block.1)
    }

    fn apply(&mut self, j: usize, dir: f64, (theta, step): (f64, Step)) -> Result<(), HzError> {
        if !theta.is_finite() {
            return Err(HzError::Solver("unbounded step in a bounded problem".into()));
        }
        let n = self.n;
        if theta != 0.0 {
            for i in 0..self.m {
                self.xb[i] -= self.t[i * n + j] * dir * theta;
            }
        }
        match step {
            Step::Flip => {
                self.x[j] = if dir > 0.0 { self.hi[j] } else { self.lo[j] };
            }
            Step::Pivot { row, leave_value } => {
                let entering_value = self.x[j] + dir * theta;
                let leaving = self.basis[row];
                if leaving < n {
                    self.row_of[leaving] = None;
                    self.x[leaving] = leave_value;
                }
                self.basis[row] = j;
                self.row_of[j] = Some(row);
                self.cold = false;
                self.xb[row] = entering_value;
                self.pivot(row, j);
                self.pivots += 1;
                self.since_refactor += 1;
                if self.since_refactor >= REFACTOR_EVERY.max(self.m) {
                    self.refactor()?;
                }
            }
        }
        Ok(())
    }

    fn pivot(&mut self, r: usize, j: usize) {
        let n = self.n;
        let p = self.t[r * n + j];
        let (before, rest) = self.t.split_at_mut(r * n);
        let (prow, after) = rest.split_at_mut(n);
        for v in prow.iter_mut() {
            *v /= p;
        }
        prow[j] = 1.0;
        for row in before.chunks_exact_mut(n).chain(after.chunks_exact_mut(n)) {
            let f = row[j];
            if f != 0.0 {
                for (v, pv) in row.iter_mut().zip(prow.iter()) {
                    *v -= f * pv;
                }
                row[j] = 0.0;
            }
        }
    }
}

/// Ratio-test tie breaking: smaller step, then larger pivot (or smaller
/// basic index under Bland's rule).
fn better(theta: f64, a: f64, i: usize, best: &(f64, Step, f64), bland: bool, basis: &[usize]) -> bool {
    const TIE: f64 = 1e-12;
    if theta < best.0 - TIE {
        return true;
    }
    if theta > best.0 + TIE {
        return false;
    }
    match best.1 {
        Step::Flip => false,
        Step::Pivot { row, .. } => {
            if bland {
                basis[i] < basis[row]
            } else {
                a.abs() > best.2
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lp(a: &[f64], m: usize, b: &[f64], lo: &[f64], hi: &[f64], tol: f64) -> Lp {
        let n = lo.len();
        Lp::new(DMatrix::from_row_slice(m, n, a), DVector::from_column_slice(b), lo.to_vec(), hi.to_vec(), tol)
    }

    #[test]
    fn feasibility_of_simple_systems() {
        // x + y = 1 with x, y in [0, 1]
        let mut p = lp(&[1.0, 1.0], 1, &[1.0], &[0.0, 0.0], &[1.0, 1.0], 1e-9);
        assert!(p.feasible().unwrap());
        assert!((p.value(0) + p.value(1) - 1.0).abs() < 1e-12);
        // x + y = 3 is out of reach
        let mut q = lp(&[1.0, 1.0], 1, &[3.0], &[0.0, 0.0], &[1.0, 1.0], 1e-9);
        assert!(!q.feasible().unwrap());
    }

    #[test]
    fn minimization_with_bound_changes() {
        // min x - y  s.t. x + y = 1,  x - y + s = 0, s in [-0.5, 0.5]
        let mut p = lp(&[1.0, 1.0, 0.0, 1.0, -1.0, 1.0], 2, &[1.0, 0.0], &[0.0, 0.0, -0.5], &[1.0, 1.0, 0.5], 1e-9);
        p.set_cost(&[1.0, -1.0, 0.0]);
        let v = p.minimize().unwrap().unwrap();
        assert!((v + 0.5).abs() < 1e-9, "{v}");
        p.set_bounds(0, 0.6, 1.0);
        let v = p.minimize().unwrap().unwrap();
        assert!((v - 0.2).abs() < 1e-9, "{v}");
        p.set_bounds(0, 0.8, 1.0);
        assert_eq!(p.minimize().unwrap(), None);
        p.set_bounds(0, 0.0, 1.0);
        assert!(p.minimize().unwrap().is_some());
    }

    #[test]
    fn tiny_violations_respect_tolerance() {
        // λ1 + λ2 = 1, -λ1 - 1e-12 λ2 = -1e-13: needs λ1 < 0
        let a = [1.0, 1.0, -1.0, -1e-12];
        let mut strict = lp(&a, 2, &[1.0, -1e-13], &[0.0, 0.0], &[1.0, 1.0], 1e-15);
        assert!(!strict.feasible().unwrap());
        let mut loose = lp(&a, 2, &[1.0, -1e-13], &[0.0, 0.0], &[1.0, 1.0], 1e-7);
        assert!(loose.feasible().unwrap());
    }
}
