//! Hybrid zonotopes
//! `{ Gc ξc + Gb ξb + c : ξc ∈ [-1,1]^ng, ξb ∈ {-1,1}^nb, Ac ξc + Ab ξb = b }`
//! and the set operations used to build graph over-approximations.

mod lp;
mod poly;
mod search;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::interval::Interval;

pub use poly::PolyUnion;
pub use search::SearchOptions;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HzError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("search budget of {limit} nodes exhausted ({found} feasible leaves found so far)")]
    Budget { limit: usize, found: u64 },
    #[error("linear solver failure: {0}")]
    Solver(String),
    #[error("invalid polytope union: {0}")]
    InvalidPolyUnion(String),
    #[error("set is empty")]
    Empty,
    #[error("invalid set document: {0}")]
    Document(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct HybridZonotope {
    pub gc: DMatrix<f64>,
    pub gb: DMatrix<f64>,
    pub c: DVector<f64>,
    pub ac: DMatrix<f64>,
    pub ab: DMatrix<f64>,
    pub b: DVector<f64>,
}

/// Complexity triple plus ambient dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Complexity {
    pub dim: usize,
    pub ng: usize,
    pub nb: usize,
    pub nc: usize,
}

impl HybridZonotope {
    pub fn new(
        gc: DMatrix<f64>,
        gb: DMatrix<f64>,
        c: DVector<f64>,
        ac: DMatrix<f64>,
        ab: DMatrix<f64>,
        b: DVector<f64>,
    ) -> Result<Self, HzError> {
        let n = c.len();
        let (ng, nb, nc) = (gc.ncols(), gb.ncols(), b.len());
        let checks = [
            (gc.nrows() == n, "Gc rows"),
            (gb.nrows() == n, "Gb rows"),
            (ac.nrows() == nc && ac.ncols() == ng, "Ac shape"),
            (ab.nrows() == nc && ab.ncols() == nb, "Ab shape"),
        ];
        if let Some((_, what)) = checks.iter().find(|c| !c.0) {
            return Err(HzError::Dimension(format!("{what} inconsistent with n={n}, ng={ng}, nb={nb}, nc={nc}")));
        }
        let finite = gc.iter().chain(gb.iter()).chain(c.iter()).chain(ac.iter()).chain(ab.iter()).chain(b.iter()).all(|v| v.is_finite());
        if !finite {
            return Err(HzError::Dimension("non-finite entry".into()));
        }
        Ok(HybridZonotope { gc, gb, c, ac, ab, b })
    }

    /// Axis-aligned box.
    pub fn from_box(bounds: &[Interval]) -> Self {
        let n = bounds.len();
        let gc = DMatrix::from_diagonal(&DVector::from_iterator(n, bounds.iter().map(Interval::radius)));
        let c = DVector::from_iterator(n, bounds.iter().map(Interval::mid));
        HybridZonotope { gc, gb: DMatrix::zeros(n, 0), c, ac: DMatrix::zeros(0, n), ab: DMatrix::zeros(0, 0), b: DVector::zeros(0) }
    }

    pub fn unit_box(n: usize) -> Self {
        Self::from_box(&vec![Interval { lo: -1.0, hi: 1.0 }; n])
    }

    pub fn point(p: &[f64]) -> Self {
        let n = p.len();
        HybridZonotope {
            gc: DMatrix::zeros(n, 0),
            gb: DMatrix::zeros(n, 0),
            c: DVector::from_column_slice(p),
            ac: DMatrix::zeros(0, 0),
            ab: DMatrix::zeros(0, 0),
            b: DVector::zeros(0),
        }
    }

    pub fn dim(&self) -> usize {
        self.c.len()
    }

    pub fn ng(&self) -> usize {
        self.gc.ncols()
    }

    pub fn nb(&self) -> usize {
        self.gb.ncols()
    }

    pub fn nc(&self) -> usize {
        self.b.len()
    }

    pub fn complexity(&self) -> Complexity {
        Complexity { dim: self.dim(), ng: self.ng(), nb: self.nb(), nc: self.nc() }
    }

    /// Exact image `{R z + t}`.
    pub fn affine_map(&self, r: &DMatrix<f64>, t: &DVector<f64>) -> Result<Self, HzError> {
        if r.ncols() != self.dim() || t.len() != r.nrows() {
            return Err(HzError::Dimension(format!(
                "map is {}x{} with offset {} for a set of dimension {}",
                r.nrows(),
                r.ncols(),
                t.len(),
                self.dim()
            )));
        }
        Ok(HybridZonotope {
            gc: r * &self.gc,
            gb: r * &self.gb,
            c: r * &self.c + t,
            ac: self.ac.clone(),
            ab: self.ab.clone(),
            b: self.b.clone(),
        })
    }

    /// Projection onto the listed coordinates (repeats allowed).
    pub fn project(&self, coords: &[usize]) -> Result<Self, HzError> {
        let mut r = DMatrix::zeros(coords.len(), self.dim());
        for (row, &k) in coords.iter().enumerate() {
            if k >= self.dim() {
                return Err(HzError::Dimension(format!("coordinate {k} of a {}-dimensional set", self.dim())));
            }
            r[(row, k)] = 1.0;
        }
        self.affine_map(&r, &DVector::zeros(coords.len()))
    }

    /// Exact product `Z1 × Z2` (block-diagonal factors and constraints).
    pub fn cartesian_product(&self, other: &Self) -> Self {
        HybridZonotope {
            gc: block_diag(&self.gc, &other.gc),
            gb: block_diag(&self.gb, &other.gb),
            c: stack(&self.c, &other.c),
            ac: block_diag(&self.ac, &other.ac),
            ab: block_diag(&self.ab, &other.ab),
            b: stack(&self.b, &other.b),
        }
    }

    /// Exact generalized intersection `{z ∈ Z : R z ∈ W}`.
    pub fn intersect_lifted(&self, w: &Self, r: &DMatrix<f64>) -> Result<Self, HzError> {
        if r.nrows() != w.dim() || r.ncols() != self.dim() {
            return Err(HzError::Dimension(format!("R is {}x{}, expected {}x{}", r.nrows(), r.ncols(), w.dim(), self.dim())));
        }
        let (ng1, nb1, nc1) = (self.ng(), self.nb(), self.nc());
        let (ng2, nb2, nc2) = (w.ng(), w.nb(), w.nc());
        let n = self.dim();
        let m = w.dim();
        let mut gc = DMatrix::zeros(n, ng1 + ng2);
        gc.view_mut((0, 0), (n, ng1)).copy_from(&self.gc);
        let mut gb = DMatrix::zeros(n, nb1 + nb2);
        gb.view_mut((0, 0), (n, nb1)).copy_from(&self.gb);
        let rows = nc1 + nc2 + m;
        let mut ac = DMatrix::zeros(rows, ng1 + ng2);
        let mut ab = DMatrix::zeros(rows, nb1 + nb2);
        ac.view_mut((0, 0), (nc1, ng1)).copy_from(&self.ac);
        ab.view_mut((0, 0), (nc1, nb1)).copy_from(&self.ab);
        ac.view_mut((nc1, ng1), (nc2, ng2)).copy_from(&w.ac);
        ab.view_mut((nc1, nb1), (nc2, nb2)).copy_from(&w.ab);
        ac.view_mut((nc1 + nc2, 0), (m, ng1)).copy_from(&(r * &self.gc));
        ac.view_mut((nc1 + nc2, ng1), (m, ng2)).copy_from(&(-&w.gc));
        ab.view_mut((nc1 + nc2, 0), (m, nb1)).copy_from(&(r * &self.gb));
        ab.view_mut((nc1 + nc2, nb1), (m, nb2)).copy_from(&(-&w.gb));
        let mut b = DVector::zeros(rows);
        b.rows_mut(0, nc1).copy_from(&self.b);
        b.rows_mut(nc1, nc2).copy_from(&w.b);
        b.rows_mut(nc1 + nc2, m).copy_from(&(&w.c - r * &self.c));
        Ok(HybridZonotope { gc, gb, c: self.c.clone(), ac, ab, b })
    }

    /// Point for given factors (no constraint check).
    pub fn point_at(&self, xc: &[f64], xb: &[f64]) -> DVector<f64> {
        &self.gc * DVector::from_column_slice(xc) + &self.gb * DVector::from_column_slice(xb) + &self.c
    }

    pub fn contains(&self, p: &[f64], opts: &SearchOptions) -> Result<bool, HzError> {
        search::contains(self, p, opts)
    }

    /// Membership of each point; faster than repeated [`Self::contains`].
    pub fn contains_all(&self, points: &[Vec<f64>], opts: &SearchOptions) -> Result<Vec<bool>, HzError> {
        search::contains_all(self, points, opts)
    }

    pub fn count_leaves(&self, opts: &SearchOptions) -> Result<u64, HzError> {
        search::count_leaves(self, opts)
    }

    /// Per-coordinate bounds, or `Empty`.
    pub fn interval_hull(&self, opts: &SearchOptions) -> Result<Vec<Interval>, HzError> {
        (0..self.dim())
            .map(|k| {
                let (lo, hi) = search::coordinate_range(self, &[], k, opts)?.ok_or(HzError::Empty)?;
                Ok(Interval { lo: lo - opts.feas_tol, hi: hi + opts.feas_tol })
            })
            .collect()
    }

    /// Range of coordinate `coord` over the slice where each `(k, v)` in
    /// `fixed` pins coordinate `k` to `v` (within `opts.tol`). `None` if the
    /// slice is empty.
    pub fn slice_range(&self, fixed: &[(usize, f64)], coord: usize, opts: &SearchOptions) -> Result<Option<(f64, f64)>, HzError> {
        search::coordinate_range(self, fixed, coord, opts)
    }

    /// A point of the set maximizing `direction · z`, if the set is nonempty.
    pub fn support_point(&self, direction: &[f64], opts: &SearchOptions) -> Result<Option<Vec<f64>>, HzError> {
        search::support_point(self, direction, opts)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&HzDoc::from(self)).expect("serializable")
    }

    pub fn from_json(text: &str) -> Result<Self, HzError> {
        let doc: HzDoc = serde_json::from_str(text).map_err(|e| HzError::Document(e.to_string()))?;
        doc.try_into()
    }
}

fn block_diag(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows() + b.nrows(), a.ncols() + b.ncols());
    out.view_mut((0, 0), a.shape()).copy_from(a);
    out.view_mut(a.shape(), b.shape()).copy_from(b);
    out
}

fn stack(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(a.len() + b.len());
    out.rows_mut(0, a.len()).copy_from(a);
    out.rows_mut(a.len(), b.len()).copy_from(b);
    out
}

#[derive(Debug, Serialize, Deserialize)]
struct HzDoc {
    dim: usize,
    ng: usize,
    nb: usize,
    nc: usize,
    /// Row-major blocks.
    gc: Vec<Vec<f64>>,
    gb: Vec<Vec<f64>>,
    c: Vec<f64>,
    ac: Vec<Vec<f64>>,
    ab: Vec<Vec<f64>>,
    b: Vec<f64>,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn from_rows(r: &[Vec<f64>], nrows: usize, ncols: usize, what: &str) -> Result<DMatrix<f64>, HzError> {
    if r.len() != nrows || r.iter().any(|row| row.len() != ncols) {
        return Err(HzError::Document(format!("{what} must be {nrows}x{ncols}")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| r[i][j]))
}

impl From<&HybridZonotope> for HzDoc {
    fn from(z: &HybridZonotope) -> Self {
        HzDoc {
            dim: z.dim(),
            ng: z.ng(),
            nb: z.nb(),
            nc: z.nc(),
            gc: rows(&z.gc),
            gb: rows(&z.gb),
            c: z.c.iter().copied().collect(),
            ac: rows(&z.ac),
            ab: rows(&z.ab),
            b: z.b.iter().copied().collect(),
        }
    }
}

impl TryFrom<HzDoc> for HybridZonotope {
    type Error = HzError;

    fn try_from(d: HzDoc) -> Result<Self, HzError> {
        if d.c.len() != d.dim || d.b.len() != d.nc {
            return Err(HzError::Document("c or b length inconsistent".into()));
        }
        HybridZonotope::new(
            from_rows(&d.gc, d.dim, d.ng, "gc")?,
            from_rows(&d.gb, d.dim, d.nb, "gb")?,
            DVector::from_vec(d.c),
            from_rows(&d.ac, d.nc, d.ng, "ac")?,
            from_rows(&d.ab, d.nc, d.nb, "ab")?,
            DVector::from_vec(d.b),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts() -> SearchOptions {
        SearchOptions::default()
    }

    fn iv(lo: f64, hi: f64) -> Interval {
        Interval { lo, hi }
    }

    fn close_hull(h: &[Interval], want: &[(f64, f64)]) {
        assert_eq!(h.len(), want.len());
        for (a, b) in h.iter().zip(want) {
            assert!((a.lo - b.0).abs() < 1e-6 && (a.hi - b.1).abs() < 1e-6, "{h:?} vs {want:?}");
        }
    }

    #[test]
    fn affine_map_examples() {
        let z = HybridZonotope::unit_box(2);
        let same = z.affine_map(&DMatrix::identity(2, 2), &DVector::zeros(2)).unwrap();
        assert_eq!(same, z);
        let m = z.affine_map(&(DMatrix::identity(2, 2) * 2.0), &DVector::from_vec(vec![1.0, 0.0])).unwrap();
        close_hull(&m.interval_hull(&opts()).unwrap(), &[(-1.0, 3.0), (-2.0, 2.0)]);
        assert!(z.affine_map(&DMatrix::identity(3, 3), &DVector::zeros(3)).is_err());
    }

    #[test]
    fn product_examples() {
        let p = HybridZonotope::from_box(&[iv(0.0, 1.0)]).cartesian_product(&HybridZonotope::from_box(&[iv(2.0, 3.0)]));
        assert!(p.contains(&[0.5, 2.5], &opts()).unwrap());
        assert!(!p.contains(&[0.5, 3.5], &opts()).unwrap());
        let q = p.cartesian_product(&HybridZonotope::point(&[7.0]));
        assert!(q.contains(&[0.5, 2.5, 7.0], &opts()).unwrap());
        assert!(!q.contains(&[0.5, 2.5, 7.1], &opts()).unwrap());
    }

    #[test]
    fn intersection_examples() {
        let z = HybridZonotope::unit_box(2);
        let w = HybridZonotope::from_box(&[iv(0.0, 1.0)]);
        let r = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let half = z.intersect_lifted(&w, &r).unwrap();
        close_hull(&half.interval_hull(&opts()).unwrap(), &[(0.0, 1.0), (-1.0, 1.0)]);
        assert!(!half.contains(&[-0.5, 0.0], &opts()).unwrap());
        assert!(half.contains(&[0.5, -0.9], &opts()).unwrap());
    }

    #[test]
    fn unit_box_membership() {
        let z = HybridZonotope::unit_box(3);
        assert!(z.contains(&[0.0, 0.0, 0.0], &SearchOptions { tol: 0.0, ..opts() }).unwrap());
        assert!(!z.contains(&[1.1, 0.0, 0.0], &SearchOptions { tol: 0.05, ..opts() }).unwrap());
        assert_eq!(z.count_leaves(&opts()).unwrap(), 1);
    }

    #[test]
    fn json_round_trip() {
        let z = HybridZonotope::unit_box(2)
            .intersect_lifted(&HybridZonotope::from_box(&[iv(0.0, 1.0)]), &DMatrix::from_row_slice(1, 2, &[1.0, 1.0]))
            .unwrap();
        let back = HybridZonotope::from_json(&z.to_json()).unwrap();
        assert_eq!(back, z);
        assert!(
            HybridZonotope::from_json(r#"{"dim":1,"ng":1,"nb":0,"nc":0,"gc":[[1,2]],"gb":[[]],"c":[0],"ac":[],"ab":[],"b":[]}"#).is_err()
        );
    }

    #[test]
    fn batch_membership_matches_single_queries() {
        // two disjoint unit squares in the plane, glued to a free third coordinate
        let v = DMatrix::from_row_slice(1, 4, &[0.0, 1.0, 3.0, 4.0]);
        let gap = HybridZonotope::from_poly_union(&PolyUnion::new(v, vec![vec![0, 1], vec![2, 3]]).unwrap()).unwrap();
        let z = gap.cartesian_product(&HybridZonotope::from_box(&[iv(-1.0, 1.0), iv(0.0, 2.0)]));
        let mut points = Vec::new();
        for i in 0..12 {
            for j in 0..5 {
                points.push(vec![-0.5 + 0.4 * i as f64, -1.5 + 0.7 * j as f64, 0.3 * j as f64]);
            }
        }
        let batch = z.contains_all(&points, &opts()).unwrap();
        let single: Vec<bool> = points.iter().map(|p| z.contains(p, &opts()).unwrap()).collect();
        assert_eq!(batch, single);
        assert!(batch.iter().any(|&b| b) && batch.iter().any(|&b| !b));
        assert!(z.contains_all(&[], &opts()).unwrap().is_empty());
        assert!(z.contains_all(&[vec![0.0]], &opts()).is_err());
    }
}
