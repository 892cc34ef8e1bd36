//! Range propagation encloses every sampled value and grows with the domain.

mod common;

use common::{infix_expr, VARS};
use fdecomp::decomp::{compile, resolve_inputs};
use fdecomp::interval::{apply_unary, propagate};
use fdecomp::{FunctionalDecomposition, Interval, RpnExpr, UnaryOp};
use proptest::prelude::*;

fn build(src: &str) -> Option<FunctionalDecomposition> {
    let rpns = [RpnExpr::from_infix(src).unwrap()];
    let names: Vec<String> = VARS.iter().map(|v| v.to_string()).collect();
    compile(&rpns, resolve_inputs(&rpns, 3, Some(&names)).unwrap(), true).ok()
}

/// A box inside `[−2, 2]³`.
fn domain() -> impl Strategy<Value = Vec<Interval>> {
    prop::collection::vec((-2.0..2.0f64, 0.0..2.0f64), 3)
        .prop_map(|v| v.into_iter().map(|(lo, w)| Interval::new(lo, (lo + w).min(2.0)).unwrap()).collect())
}

/// Points of the box, corners first.
fn samples(dom: &[Interval], fractions: &[[f64; 3]]) -> Vec<[f64; 3]> {
    let corners = (0..8).map(|m| [0, 1, 2].map(|k| if m >> k & 1 == 1 { dom[k].hi } else { dom[k].lo }));
    let inner = fractions.iter().map(|f| [0, 1, 2].map(|k| dom[k].lo + f[k] * dom[k].width()));
    corners.chain(inner).collect()
}

fn unary_op() -> impl Strategy<Value = UnaryOp> {
    prop::sample::select(vec![
        UnaryOp::Sin,
        UnaryOp::Cos,
        UnaryOp::Tan,
        UnaryOp::Exp,
        UnaryOp::Log,
        UnaryOp::Sqrt,
        UnaryOp::Abs,
        UnaryOp::Tanh,
        UnaryOp::Sig,
        UnaryOp::HardSig,
        UnaryOp::Step,
        UnaryOp::Sq,
        UnaryOp::PowConst(3.0),
        UnaryOp::PowConst(0.5),
        UnaryOp::PowConst(-2.0),
        UnaryOp::ExpBase(2.0),
        UnaryOp::ExpBase(0.5),
    ])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn ranges_enclose_sampled_values(
        src in infix_expr(),
        dom in domain(),
        fractions in prop::collection::vec([0.0..=1.0f64, 0.0..=1.0f64, 0.0..=1.0f64], 1000),
    ) {
        let Some(fd) = build(&src) else { return Ok(()) };
        let Ok(ranges) = propagate(&fd, &dom) else { return Ok(()) };
        for vals in samples(&dom, &fractions) {
            let Ok(all) = fd.eval_all(&vals) else { continue };
            for (j, (v, r)) in all.iter().zip(&ranges).enumerate() {
                prop_assert!(r.contains(*v), "{src}: w_{} = {v} outside {r:?} at {vals:?}", j + 1);
            }
        }
    }

    #[test]
    fn ranges_grow_with_the_domain(src in infix_expr(), dom in domain(), grow in prop::collection::vec((0.0..1.0f64, 0.0..1.0f64), 3)) {
        let Some(fd) = build(&src) else { return Ok(()) };
        let wide: Vec<Interval> = dom.iter().zip(&grow).map(|(d, (a, b))| Interval::new(d.lo - a, d.hi + b).unwrap()).collect();
        let (Ok(narrow), Ok(wider)) = (propagate(&fd, &dom), propagate(&fd, &wide)) else { return Ok(()) };
        for (j, (n, w)) in narrow.iter().zip(&wider).enumerate() {
            prop_assert!(w.contains_interval(n), "{src}: w_{} {n:?} escapes {w:?}", j + 1);
        }
    }

    #[test]
    fn unary_images_are_sound(op in unary_op(), lo in -4.0..4.0f64, w in 0.0..4.0f64, fractions in prop::collection::vec(0.0..=1.0f64, 200)) {
        let x = Interval::new(lo, lo + w).unwrap();
        let Ok(r) = apply_unary(&op, &x) else {
            // only partial functions may refuse an argument range
            prop_assert!(matches!(op, UnaryOp::Tan | UnaryOp::Log | UnaryOp::Sqrt | UnaryOp::PowConst(_)), "{op:?} on {x:?}");
            return Ok(());
        };
        for f in fractions.iter().chain(&[0.0, 1.0]) {
            let t = x.lo + f * x.width();
            let v = op.eval(t).unwrap();
            prop_assert!(r.lo <= v && v <= r.hi, "{op:?}({t}) = {v} outside {r:?}");
        }
    }
}
