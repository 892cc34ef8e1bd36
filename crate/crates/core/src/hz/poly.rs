//! Unions of convex polytopes given by a vertex matrix and an incidence
//! matrix, and their exact hybrid-zonotope encoding.

use nalgebra::{DMatrix, DVector};

use super::{HybridZonotope, HzError};

/// `∪_j conv{ V_i : M_ij = 1 }` with vertices as the columns of `V`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyUnion {
    pub vertices: DMatrix<f64>,
    /// Vertex indices of each polytope.
    pub selections: Vec<Vec<usize>>,
}

impl PolyUnion {
    pub fn new(vertices: DMatrix<f64>, selections: Vec<Vec<usize>>) -> Result<Self, HzError> {
        if !vertices.iter().all(|v| v.is_finite()) {
            return Err(HzError::InvalidPolyUnion("non-finite vertex coordinate".into()));
        }
        if selections.is_empty() {
            return Err(HzError::InvalidPolyUnion("no polytopes".into()));
        }
        for (j, sel) in selections.iter().enumerate() {
            if sel.is_empty() {
                return Err(HzError::InvalidPolyUnion(format!("polytope {j} selects no vertices")));
            }
            if let Some(&i) = sel.iter().find(|&&i| i >= vertices.ncols()) {
                return Err(HzError::InvalidPolyUnion(format!("polytope {j} selects vertex {i} of {}", vertices.ncols())));
            }
        }
        Ok(PolyUnion { vertices, selections })
    }

    /// From an `n_v × n_p` 0/1 incidence matrix.
    pub fn from_incidence(vertices: DMatrix<f64>, incidence: &DMatrix<f64>) -> Result<Self, HzError> {
        if incidence.nrows() != vertices.ncols() {
            return Err(HzError::InvalidPolyUnion(format!("incidence has {} rows for {} vertices", incidence.nrows(), vertices.ncols())));
        }
        if incidence.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(HzError::InvalidPolyUnion("incidence entries must be 0 or 1".into()));
        }
        let selections = (0..incidence.ncols()).map(|j| (0..incidence.nrows()).filter(|&i| incidence[(i, j)] == 1.0).collect()).collect();
        Self::new(vertices, selections)
    }

    pub fn dim(&self) -> usize {
        self.vertices.nrows()
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.ncols()
    }

    pub fn n_polytopes(&self) -> usize {
        self.selections.len()
    }

    pub fn incidence(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n_vertices(), self.n_polytopes());
        for (j, sel) in self.selections.iter().enumerate() {
            for &i in sel {
                m[(i, j)] = 1.0;
            }
        }
        m
    }
}

impl HybridZonotope {
    /// Exact encoding of a polytope union: convex weights `λ = (1 + ξλ)/2`,
    /// a one-hot selector `z = (1 + ξb)/2`, and `λ_i + s_i = Σ_j M_ij z_j`
    /// with slack `s = (1 + ξs)/2 ∈ [0, 1]`.
    pub fn from_poly_union(p: &PolyUnion) -> Result<Self, HzError> {
        let (d, nv, np) = (p.dim(), p.n_vertices(), p.n_polytopes());
        let m = p.incidence();
        let v = &p.vertices;
        let mut gc = DMatrix::zeros(d, 2 * nv);
        gc.view_mut((0, 0), (d, nv)).copy_from(&(v * 0.5));
        let c: DVector<f64> = v * DVector::from_element(nv, 0.5);
        let nc = 2 + nv;
        let mut ac = DMatrix::zeros(nc, 2 * nv);
        let mut ab = DMatrix::zeros(nc, np);
        let mut b = DVector::zeros(nc);
        ac.row_mut(0).columns_mut(0, nv).fill(0.5);
        b[0] = 1.0 - 0.5 * nv as f64;
        ab.row_mut(1).fill(0.5);
        b[1] = 1.0 - 0.5 * np as f64;
        for i in 0..nv {
            ac[(2 + i, i)] = 0.5;
            ac[(2 + i, nv + i)] = 0.5;
            for j in 0..np {
                ab[(2 + i, j)] = -0.5 * m[(i, j)];
            }
            b[2 + i] = 0.5 * m.row(i).sum() - 1.0;
        }
        HybridZonotope::new(gc, DMatrix::zeros(d, np), c, ac, ab, b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hz::SearchOptions;

    /// Step graph over `[lo, hi]` split at `a`: segment `(lo,0)–(a,0)` and `(0,1)–(hi,1)`.
    fn step_union(lo: f64, a: f64, hi: f64) -> PolyUnion {
        let v = DMatrix::from_row_slice(2, 4, &[lo, a, 0.0, hi, 0.0, 0.0, 1.0, 1.0]);
        let m = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0]);
        PolyUnion::from_incidence(v, &m).unwrap()
    }

    #[test]
    fn step_set_membership() {
        let z = HybridZonotope::from_poly_union(&step_union(-1.0, 0.0, 1.0)).unwrap();
        let o = SearchOptions::default();
        assert!(z.contains(&[-0.5, 0.0], &o).unwrap());
        assert!(z.contains(&[0.5, 1.0], &o).unwrap());
        assert!(!z.contains(&[-0.5, 1.0], &o).unwrap());
        assert!(!z.contains(&[0.5, 0.0], &o).unwrap());
        assert_eq!(z.count_leaves(&o).unwrap(), 2);
        assert_eq!(z.complexity().ng, 8);
        assert_eq!(z.complexity().nb, 2);
        assert_eq!(z.complexity().nc, 6);
    }

    #[test]
    fn negative_split_gives_inner_approximation() {
        let z = HybridZonotope::from_poly_union(&step_union(-1.0, -1e-12, 1.0)).unwrap();
        let strict = SearchOptions { tol: 0.0, feas_tol: 1e-15, ..SearchOptions::default() };
        assert!(!z.contains(&[-1e-13, 0.0], &strict).unwrap());
        assert!(z.contains(&[-2e-12, 0.0], &strict).unwrap());
        assert!(z.contains(&[0.0, 1.0], &strict).unwrap());
    }

    #[test]
    fn incidence_round_trip_and_validation() {
        let p = step_union(-1.0, 0.0, 1.0);
        assert_eq!(p.selections, vec![vec![0, 1], vec![2, 3]]);
        assert_eq!(PolyUnion::from_incidence(p.vertices.clone(), &p.incidence()).unwrap(), p);
        assert!(PolyUnion::new(p.vertices.clone(), vec![vec![]]).is_err());
        assert!(PolyUnion::new(p.vertices.clone(), vec![vec![7]]).is_err());
    }

    #[test]
    fn disjoint_segments_have_two_leaves() {
        let v = DMatrix::from_row_slice(1, 4, &[0.0, 1.0, 3.0, 4.0]);
        let p = PolyUnion::new(v, vec![vec![0, 1], vec![2, 3]]).unwrap();
        let z = HybridZonotope::from_poly_union(&p).unwrap();
        let o = SearchOptions::default();
        assert_eq!(z.count_leaves(&o).unwrap(), 2);
        assert!(z.contains(&[3.5], &o).unwrap());
        assert!(!z.contains(&[2.0], &o).unwrap());
        let h = z.interval_hull(&o).unwrap();
        assert!((h[0].lo - 0.0).abs() < 1e-6 && (h[0].hi - 4.0).abs() < 1e-6);
    }
}
