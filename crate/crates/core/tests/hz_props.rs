//! Hybrid zonotope operations against a direct union-of-boxes membership oracle.

use fdecomp::hz::SearchOptions;
use fdecomp::{HybridZonotope, Interval, PolyUnion};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

/// Points this close to a box face are not classified by the oracle.
const MARGIN: f64 = 1e-4;

type Boxes = Vec<[(f64, f64); 2]>;

/// Up to four (possibly overlapping) boxes in `[−3, 3]²`.
fn boxes() -> impl Strategy<Value = Boxes> {
    let side = (-3.0..2.5f64, 0.05..2.0f64).prop_map(|(lo, w)| (lo, (lo + w).min(3.0)));
    prop::collection::vec([side.clone(), side], 1..=4)
}

fn union_of(bs: &Boxes) -> PolyUnion {
    let mut cols = Vec::new();
    let mut selections = Vec::new();
    for [(x0, x1), (y0, y1)] in bs {
        let first = cols.len() / 2;
        cols.extend([*x0, *y0, *x1, *y0, *x1, *y1, *x0, *y1]);
        selections.push((first..first + 4).collect());
    }
    PolyUnion::new(DMatrix::from_column_slice(2, cols.len() / 2, &cols), selections).unwrap()
}

/// `Some(inside)` unless the point is within `MARGIN` of some box boundary.
fn oracle(bs: &Boxes, p: &[f64]) -> Option<bool> {
    let mut inside = false;
    for b in bs {
        let dist = (0..2).map(|k| (p[k] - b[k].0).min(b[k].1 - p[k])).fold(f64::INFINITY, f64::min);
        if dist.abs() < MARGIN {
            return None;
        }
        inside |= dist > 0.0;
    }
    Some(inside)
}

fn points(n: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-3.5..3.5f64, 2), n)
}

fn opts() -> SearchOptions {
    SearchOptions::default()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn membership_matches_the_union(bs in boxes(), pts in points(60)) {
        let z = HybridZonotope::from_poly_union(&union_of(&bs)).unwrap();
        let got = z.contains_all(&pts, &opts()).unwrap();
        for (p, g) in pts.iter().zip(got) {
            if let Some(want) = oracle(&bs, p) {
                prop_assert_eq!(g, want, "{:?} in {:?}", p, bs);
            }
        }
    }

    #[test]
    fn convex_combinations_are_members(bs in boxes(), weights in prop::collection::vec(prop::collection::vec(0.0..1.0f64, 4), 20)) {
        let u = union_of(&bs);
        let z = HybridZonotope::from_poly_union(&u).unwrap();
        let pts: Vec<Vec<f64>> = weights
            .iter()
            .enumerate()
            .map(|(i, w)| {
                let sel = &u.selections[i % u.n_polytopes()];
                let total: f64 = w.iter().sum::<f64>().max(1e-12);
                let p = sel.iter().zip(w).fold(DVector::zeros(2), |acc, (&v, &wi)| acc + u.vertices.column(v) * (wi / total));
                p.iter().copied().collect()
            })
            .collect();
        prop_assert!(z.contains_all(&pts, &opts()).unwrap().into_iter().all(|b| b));
    }

    #[test]
    fn one_leaf_per_polytope(bs in boxes()) {
        let z = HybridZonotope::from_poly_union(&union_of(&bs)).unwrap();
        prop_assert_eq!(z.count_leaves(&opts()).unwrap(), bs.len() as u64);
    }

    #[test]
    fn hull_is_the_bounding_box(bs in boxes()) {
        let z = HybridZonotope::from_poly_union(&union_of(&bs)).unwrap();
        let hull = z.interval_hull(&opts()).unwrap();
        for k in 0..2 {
            let lo = bs.iter().map(|b| b[k].0).fold(f64::INFINITY, f64::min);
            let hi = bs.iter().map(|b| b[k].1).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(hull[k].lo <= lo && lo - hull[k].lo < 1e-6, "{:?} vs {lo}", hull[k]);
            prop_assert!(hull[k].hi >= hi && hull[k].hi - hi < 1e-6, "{:?} vs {hi}", hull[k]);
        }
    }

    #[test]
    fn affine_images_are_exact(
        bs in boxes(),
        m in prop::collection::vec(-2.0..2.0f64, 4),
        t in prop::collection::vec(-1.0..1.0f64, 2),
        pts in points(40),
    ) {
        let r = DMatrix::from_row_slice(2, 2, &m);
        prop_assume!(r.determinant().abs() > 0.2);
        let t = DVector::from_vec(t);
        let image = HybridZonotope::from_poly_union(&union_of(&bs)).unwrap().affine_map(&r, &t).unwrap();
        let mapped: Vec<Vec<f64>> = pts.iter().map(|p| (&r * DVector::from_column_slice(p) + &t).iter().copied().collect()).collect();
        // tolerances scale with the map, so keep a wider margin from faces
        let got = image.contains_all(&mapped, &SearchOptions { tol: 1e-7, ..opts() }).unwrap();
        for ((p, q), g) in pts.iter().zip(&mapped).zip(got) {
            let far = bs.iter().all(|b| (0..2).all(|k| (p[k] - b[k].0).abs() > 1e-3 && (p[k] - b[k].1).abs() > 1e-3));
            if far {
                prop_assert_eq!(g, oracle(&bs, p).unwrap(), "{:?} ↦ {:?}", p, q);
            }
        }
    }

    #[test]
    fn products_are_exact(a in boxes(), b in boxes(), p in points(20), q in points(20)) {
        let (za, zb) = (HybridZonotope::from_poly_union(&union_of(&a)).unwrap(), HybridZonotope::from_poly_union(&union_of(&b)).unwrap());
        let prod = za.cartesian_product(&zb);
        prop_assert_eq!(prod.dim(), 4);
        let joined: Vec<Vec<f64>> = p.iter().zip(&q).map(|(x, y)| x.iter().chain(y).copied().collect()).collect();
        let got = prod.contains_all(&joined, &opts()).unwrap();
        for ((x, y), g) in p.iter().zip(&q).zip(got) {
            if let (Some(u), Some(v)) = (oracle(&a, x), oracle(&b, y)) {
                prop_assert_eq!(g, u && v);
            }
        }
    }

    #[test]
    fn lifted_intersection_is_exact(bs in boxes(), cut in (-3.0..2.0f64, 0.1..2.0f64), pts in points(40)) {
        let z = HybridZonotope::from_poly_union(&union_of(&bs)).unwrap();
        let (lo, hi) = (cut.0, cut.0 + cut.1);
        let w = HybridZonotope::from_box(&[Interval::new(lo, hi).unwrap()]);
        // keep points whose first coordinate lies in [lo, hi]
        let r = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let both = z.intersect_lifted(&w, &r).unwrap();
        let got = both.contains_all(&pts, &opts()).unwrap();
        for (p, g) in pts.iter().zip(got) {
            let in_cut = (p[0] - lo).min(hi - p[0]);
            if let (Some(u), true) = (oracle(&bs, p), in_cut.abs() >= MARGIN) {
                prop_assert_eq!(g, u && in_cut > 0.0);
            }
        }
    }

    #[test]
    fn json_round_trips(bs in boxes(), pts in points(20)) {
        let z = HybridZonotope::from_poly_union(&union_of(&bs)).unwrap();
        let back = HybridZonotope::from_json(&z.to_json()).unwrap();
        prop_assert_eq!(back.complexity(), z.complexity());
        prop_assert_eq!(back.contains_all(&pts, &opts()).unwrap(), z.contains_all(&pts, &opts()).unwrap());
    }
}

#[test]
fn gaps_between_segments_are_excluded() {
    // [0, 1] ∪ [2, 3] on a line, as two one-dimensional segments
    let u = PolyUnion::new(DMatrix::from_row_slice(1, 4, &[0.0, 1.0, 2.0, 3.0]), vec![vec![0, 1], vec![2, 3]]).unwrap();
    let z = HybridZonotope::from_poly_union(&u).unwrap();
    let probe: Vec<Vec<f64>> = [0.0, 0.5, 1.0, 1.001, 1.5, 1.999, 2.0, 2.5, 3.0, 3.001, -0.001].iter().map(|&v| vec![v]).collect();
    let got = z.contains_all(&probe, &opts()).unwrap();
    assert_eq!(got, [true, true, true, false, false, false, true, true, true, false, false]);
    // the convex relaxation alone would accept the gap
    assert_eq!(z.slice_range(&[], 0, &opts()).unwrap().map(|(a, b)| (a.round(), b.round())), Some((0.0, 3.0)));
}
