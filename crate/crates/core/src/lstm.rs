//! One LSTM step as a functional decomposition, plus a direct evaluator.
//!
//! Inputs are `x_t` (d entries), then `h_{t−1}` and `c_{t−1}` (N entries
//! each) unless the spec pins them to numeric values. Gate pre-activations
//! are affine observables; Hadamard products are rewritten into squares of
//! sums and differences.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decomp::{fold_affine, Builder, FunctionalDecomposition, Operand};
use crate::graphbuild::rewrite_products;
use crate::prim::{EvalError, UnaryOp};

#[derive(Debug, Error)]
pub enum LstmError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("unknown primitive `{0}`")]
    UnknownPrimitive(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn default_gate() -> String {
    "hardsig".into()
}

fn default_state() -> String {
    "tanh".into()
}

/// Weights act on the stacked vector `(h_{t−1}, x_t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmSpec {
    pub n: usize,
    pub d: usize,
    /// `N × (N+d)` row-major.
    pub w_f: Vec<Vec<f64>>,
    pub w_i: Vec<Vec<f64>>,
    pub w_c: Vec<Vec<f64>>,
    pub w_o: Vec<Vec<f64>>,
    pub b_f: Vec<f64>,
    pub b_i: Vec<f64>,
    pub b_c: Vec<f64>,
    pub b_o: Vec<f64>,
    #[serde(default = "default_gate")]
    pub gate: String,
    #[serde(default = "default_state")]
    pub state: String,
    /// Fixed previous hidden state; symbolic inputs when absent.
    #[serde(default)]
    pub h_prev: Option<Vec<f64>>,
    #[serde(default)]
    pub c_prev: Option<Vec<f64>>,
    /// Also output `c_t` after `h_t`.
    #[serde(default)]
    pub output_cell: bool,
}

struct Gate<'a> {
    w: &'a [Vec<f64>],
    b: &'a [f64],
}

impl LstmSpec {
    /// Spec with weights and biases drawn by `sample` (row by row, gate order f, i, c, o).
    pub fn from_fn(n: usize, d: usize, mut sample: impl FnMut() -> f64) -> Self {
        let mut mat = || (0..n).map(|_| (0..n + d).map(|_| sample()).collect()).collect::<Vec<Vec<f64>>>();
        let (w_f, w_i, w_c, w_o) = (mat(), mat(), mat(), mat());
        let mut vec = || (0..n).map(|_| sample()).collect::<Vec<f64>>();
        let (b_f, b_i, b_c, b_o) = (vec(), vec(), vec(), vec());
        LstmSpec {
            n,
            d,
            w_f,
            w_i,
            w_c,
            w_o,
            b_f,
            b_i,
            b_c,
            b_o,
            gate: default_gate(),
            state: default_state(),
            h_prev: None,
            c_prev: None,
            output_cell: false,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, LstmError> {
        let spec: LstmSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }

    pub fn validate(&self) -> Result<(), LstmError> {
        let (n, d) = (self.n, self.d);
        for (name, w) in [("w_f", &self.w_f), ("w_i", &self.w_i), ("w_c", &self.w_c), ("w_o", &self.w_o)] {
            if w.len() != n || w.iter().any(|r| r.len() != n + d) {
                return Err(LstmError::Dimension(format!("{name} must be {n}x{}", n + d)));
            }
        }
        for (name, b) in [("b_f", &self.b_f), ("b_i", &self.b_i), ("b_c", &self.b_c), ("b_o", &self.b_o)] {
            if b.len() != n {
                return Err(LstmError::Dimension(format!("{name} must have {n} entries")));
            }
        }
        for (name, s) in [("h_prev", &self.h_prev), ("c_prev", &self.c_prev)] {
            if s.as_ref().is_some_and(|v| v.len() != n) {
                return Err(LstmError::Dimension(format!("{name} must have {n} entries")));
            }
        }
        let all = [&self.w_f, &self.w_i, &self.w_c, &self.w_o].into_iter().flatten().flatten();
        let biases = [&self.b_f, &self.b_i, &self.b_c, &self.b_o].into_iter().flatten();
        if !all.chain(biases).all(|v| v.is_finite()) {
            return Err(LstmError::Dimension("non-finite weight".into()));
        }
        self.primitives()?;
        Ok(())
    }

    fn primitives(&self) -> Result<(UnaryOp, UnaryOp), LstmError> {
        let get = |name: &str| UnaryOp::from_name(name).ok_or_else(|| LstmError::UnknownPrimitive(name.to_string()));
        Ok((get(&self.gate)?, get(&self.state)?))
    }

    fn gates(&self) -> [Gate<'_>; 4] {
        [
            Gate { w: &self.w_f, b: &self.b_f },
            Gate { w: &self.w_i, b: &self.b_i },
            Gate { w: &self.w_c, b: &self.b_c },
            Gate { w: &self.w_o, b: &self.b_o },
        ]
    }

    /// Input names in slot order.
    pub fn input_names(&self) -> Vec<String> {
        let mut names: Vec<String> = (1..=self.d).map(|k| format!("x{k}")).collect();
        if self.h_prev.is_none() {
            names.extend((1..=self.n).map(|k| format!("h{k}")));
        }
        if self.c_prev.is_none() {
            names.extend((1..=self.n).map(|k| format!("c{k}")));
        }
        names
    }

    /// Direct evaluation of one step; returns `(h_t, c_t)`.
    pub fn step(&self, x: &[f64], h: &[f64], c: &[f64]) -> Result<(Vec<f64>, Vec<f64>), LstmError> {
        if x.len() != self.d || h.len() != self.n || c.len() != self.n {
            return Err(LstmError::Dimension("state or input length".into()));
        }
        let (gate, state) = self.primitives()?;
        let hx: Vec<f64> = h.iter().chain(x).copied().collect();
        let pre = |g: &Gate, k: usize| g.w[k].iter().zip(&hx).map(|(w, v)| w * v).sum::<f64>() + g.b[k];
        let [gf, gi, gc, go] = self.gates();
        let mut h_t = Vec::with_capacity(self.n);
        let mut c_t = Vec::with_capacity(self.n);
        for k in 0..self.n {
            let f = gate.eval(pre(&gf, k))?;
            let i = gate.eval(pre(&gi, k))?;
            let ct = state.eval(pre(&gc, k))?;
            let o = gate.eval(pre(&go, k))?;
            let cn = f * c[k] + i * ct;
            h_t.push(o * state.eval(cn)?);
            c_t.push(cn);
        }
        Ok((h_t, c_t))
    }

    /// Splits a decomposition input vector into `(x, h, c)` using the pinned state where set.
    pub fn split_inputs(&self, inputs: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let x = inputs[..self.d].to_vec();
        let mut rest = &inputs[self.d..];
        let mut take = |fixed: &Option<Vec<f64>>| match fixed {
            Some(v) => v.clone(),
            None => {
                let (a, b) = rest.split_at(self.n);
                rest = b;
                a.to_vec()
            }
        };
        let h = take(&self.h_prev);
        let c = take(&self.c_prev);
        (x, h, c)
    }
}

/// Builds the one-step decomposition with products rewritten and affine
/// layers folded.
pub fn lstm_ingest(spec: &LstmSpec) -> Result<FunctionalDecomposition, LstmError> {
    spec.validate()?;
    let (gate, state) = spec.primitives()?;
    let (n, d) = (spec.n, spec.d);
    let mut b = Builder::new(spec.input_names(), false);
    let x: Vec<Operand> = (0..d).map(|k| b.input(k)).collect();
    let mut slot = d;
    let mut state_vec = |fixed: &Option<Vec<f64>>, b: &Builder| -> Vec<Operand> {
        match fixed {
            Some(v) => v.iter().map(|&c| Operand::Const(c)).collect(),
            None => {
                let ops = (slot..slot + n).map(|k| b.input(k)).collect();
                slot += n;
                ops
            }
        }
    };
    let h = state_vec(&spec.h_prev, &b);
    let c = state_vec(&spec.c_prev, &b);
    let hx: Vec<Operand> = h.iter().chain(&x).copied().collect();
    let [gf, gi, gc, go] = spec.gates();
    let pre = |b: &mut Builder, g: &Gate, k: usize| {
        let terms: Vec<(Operand, f64)> = hx.iter().zip(&g.w[k]).map(|(o, w)| (*o, *w)).collect();
        b.affine(&terms, g.b[k])
    };
    let mut h_out = Vec::with_capacity(n);
    let mut c_out = Vec::with_capacity(n);
    for k in 0..n {
        let alpha = pre(&mut b, &gf, k);
        let beta = b.unary(gate.clone(), alpha)?;
        let gamma = pre(&mut b, &gi, k);
        let delta = b.unary(gate.clone(), gamma)?;
        let eps = pre(&mut b, &gc, k);
        let zeta = b.unary(state.clone(), eps)?;
        let keep = b.mul(beta, c[k])?;
        let write = b.mul(delta, zeta)?;
        let mu = b.add(keep, write);
        let xi = pre(&mut b, &go, k);
        let rho = b.unary(gate.clone(), xi)?;
        let tau = b.unary(state.clone(), mu)?;
        h_out.push(b.mul(rho, tau)?);
        c_out.push(mu);
    }
    for o in h_out {
        b.output(o);
    }
    if spec.output_cell {
        for o in c_out {
            b.output(o);
        }
    }
    let fd = rewrite_products(&b.finish())?;
    Ok(fold_affine(&fd))
}
