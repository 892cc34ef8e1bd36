//! A three-mode discrete hybrid automaton as a functional decomposition.
//!
//! Event generator `δ1 = [x ≥ 0]`, `δ2 = [x + u − 1 ≥ 0]`; mode 1 when
//! `(δ1, δ2) = (0, 0)`, mode 2 when `δ1 = 1`, mode 3 otherwise; switched
//! affine dynamics `x+ = x + u − 1`, `2x`, `2` respectively. Mode indicators
//! are products of step observables and their complements, and the update is
//! `ind1·(x + u − 1) + δ1·2x + 2·ind3`.

use crate::decomp::{Builder, FunctionalDecomposition};
use crate::pipeline::{simplify, StageOptions, Stages};
use crate::prim::{step, UnaryOp};

/// Direct simulation: `(mode, x_{k+1})`.
pub fn simulate(x: f64, u: f64) -> (u8, f64) {
    let d1 = step(x);
    let d2 = step(x + u - 1.0);
    if d1 == 1.0 {
        (2, 2.0 * x)
    } else if d2 == 0.0 {
        (1, x + u - 1.0)
    } else {
        (3, 2.0)
    }
}

/// The decomposition before and after simplification, with the mode
/// indicators tracked through every stage.
#[derive(Debug, Clone)]
pub struct DhaModel {
    pub stages: Stages,
    /// `ind1`, `δ1` (= ind2), `ind3` in the deduplicated decomposition.
    pub indicators: [usize; 3],
}

impl DhaModel {
    pub fn build() -> Self {
        let (fd, indicators) = decomposition();
        // protecting the indicators only tracks their positions: none of them
        // is affine, and no contraction is available either way
        let opts = StageOptions { fold_affine: true, protect: indicators.to_vec() };
        let stages = simplify(&fd, &opts).expect("well-formed decomposition");
        DhaModel { stages, indicators }
    }

    pub fn reduced(&self) -> &FunctionalDecomposition {
        &self.stages.reduced
    }

    /// Mode and next state read off an evaluation of `fd`, whose indicators
    /// sit at `indicators`.
    pub fn evaluate(fd: &FunctionalDecomposition, indicators: &[usize; 3], x: f64, u: f64) -> (u8, f64) {
        let values = fd.eval_all(&[x, u]).expect("total on finite inputs");
        let ind = indicators.map(|i| values[i]);
        let mode = match ind {
            [1.0, 0.0, 0.0] => 1,
            [0.0, 1.0, 0.0] => 2,
            [0.0, 0.0, 1.0] => 3,
            _ => 0,
        };
        (mode, values[fd.outputs[0]])
    }

    /// Indicator positions in the reduced decomposition.
    pub fn reduced_indicators(&self) -> [usize; 3] {
        [self.stages.protected[0], self.stages.protected[1], self.stages.protected[2]]
    }
}

/// Builds the decomposition with Algorithm 2 semantics; returns it with the
/// indices of `ind1`, `δ1`, `ind3`.
pub fn decomposition() -> (FunctionalDecomposition, [usize; 3]) {
    let mut b = Builder::new(vec!["x_k".into(), "u_k".into()], true);
    let x = b.input(0);
    let u = b.input(1);
    let d1 = b.unary(UnaryOp::Step, x).expect("step is total");
    let n1 = b.affine(&[(d1, -1.0)], 1.0);
    let s = b.add(x, u);
    let guard = b.affine(&[(s, 1.0)], -1.0);
    let d2 = b.unary(UnaryOp::Step, guard).expect("step is total");
    let n2 = b.affine(&[(d2, -1.0)], 1.0);
    let ind1 = b.mul(n1, n2).expect("finite");
    let m1 = b.mul(ind1, guard).expect("finite");
    let two_x = b.scale(x, 2.0);
    let m2 = b.mul(d1, two_x).expect("finite");
    let t = b.add(m1, m2);
    let ind3 = b.mul(n1, d2).expect("finite");
    let m3 = b.scale(ind3, 2.0);
    let out = b.add(t, m3);
    b.output(out);
    let idx = [ind1, d1, ind3].map(|o| b.materialize(o));
    (b.finish(), idx)
}
