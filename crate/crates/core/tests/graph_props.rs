//! Primitive bands and whole graph sets enclose the functions they approximate.

mod common;

use common::infix_expr;
use fdecomp::decomp::{compile, resolve_inputs};
use fdecomp::graphbuild::{build_graph_set, rewrite_products, sos_unary, Band};
use fdecomp::hz::SearchOptions;
use fdecomp::{ApproxConfig, BinaryOp, FunctionalDecomposition, Interval, ObservableExpr, RpnExpr, UnaryOp};
use proptest::prelude::*;

/// Smooth or piecewise-affine primitives with the domains they are drawn on.
fn op_and_domain() -> impl Strategy<Value = (UnaryOp, Interval)> {
    let ops = prop::sample::select(vec![
        UnaryOp::Sin,
        UnaryOp::Cos,
        UnaryOp::Tanh,
        UnaryOp::Sig,
        UnaryOp::Exp,
        UnaryOp::Sq,
        UnaryOp::PowConst(3.0),
        UnaryOp::Log,
        UnaryOp::Sqrt,
        UnaryOp::Abs,
        UnaryOp::HardSig,
    ]);
    (ops, -3.0..3.0f64, 0.0..3.0f64).prop_map(|(op, lo, w)| {
        let lo = if matches!(op, UnaryOp::Log | UnaryOp::Sqrt) { 0.1 + lo.abs() } else { lo };
        (op, Interval::new(lo, lo + w).unwrap())
    })
}

/// Vertical extent of the band at `x`. A trapezoid lists its left edge
/// `(a, lo), (a, hi)` then its right edge; a zero-width piece is `(a, f), (b, f)`.
fn extent(band: &Band, x: f64) -> Option<(f64, f64)> {
    let v = &band.union.vertices;
    band.union.selections.iter().find_map(|sel| {
        let [lo_l, hi_l, lo_r, hi_r] = match sel[..] {
            [l, r] => [l, l, r, r],
            [a, b, c, d] => [a, b, c, d],
            _ => panic!("unexpected band piece {sel:?}"),
        };
        let (a, b) = (v[(0, lo_l)], v[(0, lo_r)]);
        if !(a <= x && x <= b) {
            return None;
        }
        let s = if b > a { (x - a) / (b - a) } else { 0.0 };
        let at = |i: usize, j: usize| v[(1, i)] + s * (v[(1, j)] - v[(1, i)]);
        Some((at(lo_l, lo_r), at(hi_l, hi_r)))
    })
}

fn one_variable(src: &str) -> FunctionalDecomposition {
    // quotients over [−1, 1] almost always meet zero, so multiply instead
    let src = src.replace(['y', 'z'], "x").replace('/', "*");
    let rpns = [RpnExpr::from_infix(&src).unwrap()];
    compile(&rpns, resolve_inputs(&rpns, 1, Some(&["x".to_string()])).unwrap(), true).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn bands_stay_within_tolerance((op, dom) in op_and_domain(), tol in 0.005..0.2f64, fractions in prop::collection::vec(0.0..=1.0f64, 200)) {
        let band = sos_unary(&op, dom, &ApproxConfig::with_tol(tol)).unwrap();
        prop_assert!(band.rigorous, "{op:?} on {dom:?}");
        prop_assert!(band.half_width <= tol + 1e-12, "{op:?}: half-width {} > {tol}", band.half_width);
        prop_assert_eq!(band.segments, band.union.n_polytopes());
        if op.is_piecewise_affine() {
            prop_assert_eq!(band.half_width, 0.0);
        }
        for f in &fractions {
            let x = dom.lo + f * dom.width();
            let y = op.eval(x).unwrap();
            let (lo, hi) = extent(&band, x).unwrap();
            let slack = 1e-12 * (1.0 + y.abs());
            prop_assert!(lo - slack <= y && y <= hi + slack, "{op:?}({x}) = {y} outside [{lo}, {hi}]");
            prop_assert!(hi - lo <= 2.0 * tol + slack, "{op:?} at {x}: width {}", hi - lo);
        }
    }

    #[test]
    fn bands_are_members_of_their_zonotopes((op, dom) in op_and_domain(), fractions in prop::collection::vec(0.0..=1.0f64, 30)) {
        let band = sos_unary(&op, dom, &ApproxConfig::with_tol(0.05)).unwrap();
        let z = band.to_hz().unwrap();
        let pts: Vec<Vec<f64>> = fractions.iter().map(|f| dom.lo + f * dom.width()).map(|x| vec![x, op.eval(x).unwrap()]).collect();
        prop_assert!(z.contains_all(&pts, &SearchOptions::default()).unwrap().into_iter().all(|b| b));
        prop_assert_eq!(z.count_leaves(&SearchOptions::default()).unwrap(), band.segments as u64);
    }

    #[test]
    fn products_are_rewritten_away(src in infix_expr()) {
        let rpns = [RpnExpr::from_infix(&src).unwrap()];
        let names: Vec<String> = ["x", "y", "z"].iter().map(|s| s.to_string()).collect();
        let Ok(fd) = compile(&rpns, resolve_inputs(&rpns, 3, Some(&names)).unwrap(), true) else { return Ok(()) };
        let products = fd.observables.iter().filter(|o| matches!(o, ObservableExpr::Binary { op: BinaryOp::Mul, .. })).count();
        let r = rewrite_products(&fd).unwrap();
        let left = r.observables.iter().any(|o| matches!(o, ObservableExpr::Binary { op: BinaryOp::Mul, .. }));
        prop_assert!(!left, "{src}: a product survived");
        // each product costs at most a sum, a difference, two squares and a combination
        prop_assert!(r.len() <= fd.len() + 4 * products);
        prop_assert_eq!(r.n_x(), fd.n_x());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn graph_sets_contain_the_graph(src in infix_expr(), xs in prop::collection::vec(-1.0..=1.0f64, 25)) {
        let fd = one_variable(&src);
        let gs = build_graph_set(&fd, &[Interval::new(-1.0, 1.0).unwrap()], &ApproxConfig::with_tol(0.1));
        prop_assert!(gs.is_ok(), "{src}: {:?}", gs.err());
        let gs = gs.unwrap();
        // membership search is exponential in the binaries in the worst case
        prop_assume!(gs.set.nb() <= 48);
        prop_assert_eq!(gs.set.dim(), 1 + fd.outputs.len());
        let pts: Vec<Vec<f64>> = xs.iter().filter_map(|&x| Some(vec![x, fd.eval(&[x]).ok()?[0]])).collect();
        let got = gs.set.contains_all(&pts, &SearchOptions::default()).unwrap();
        for (p, g) in pts.iter().zip(got) {
            prop_assert!(g, "{src}: {p:?} not in the graph set");
        }
    }
}
