//! Decomposition graphs: adjacency, must-visit sets and unary contraction.
//!
//! `A[i][j] = 1` iff `w_i` is an argument of `h_j`. The must-visit set `W_i`
//! holds the vertices every maximal forward walk from `V_i` passes through
//! (the post-dominators of `V_i`), and `M_i` the same for reverse walks (the
//! dominators). Both are computed by dataflow in topological order.

use std::collections::BTreeSet;
use std::sync::Arc;

use thiserror::Error;

use crate::decomp::{FunctionalDecomposition, ObservableExpr};
use crate::obs_name;
use crate::prim::{Composite, UnaryOp};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DagError {
    #[error("a reverse walk from {} bypasses {}", obs_name(*j), obs_name(*i))]
    NotDominated { i: usize, j: usize },
    #[error("vertex index {0} out of range")]
    OutOfRange(usize),
}

#[derive(Debug, Clone)]
pub struct DecompGraph {
    pub fd: FunctionalDecomposition,
    pub preds: Vec<Vec<usize>>,
    pub succs: Vec<Vec<usize>>,
    /// Vertices contraction may not remove; always contains the outputs.
    pub protected: BTreeSet<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MustVisitSets {
    /// Forward sets `W_i`.
    pub w: Vec<BTreeSet<usize>>,
    /// Reverse sets `M_i`.
    pub m: Vec<BTreeSet<usize>>,
}

/// Why a candidate pair `(i, j)` was or was not contracted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PairOutcome {
    /// `V_j ∉ W_i`.
    NotInForwardSet,
    /// `V_i ∉ M_j`.
    NotInReverseSet,
    /// `A_ij = 1` and `d⁺(V_i) = 1`: already a single unary edge.
    DirectEdge,
    /// No vertex lies strictly between the pair.
    EmptyInterior,
    /// A protected vertex lies strictly between the pair.
    ProtectedInterior(usize),
    Contract {
        interior: Vec<usize>,
    },
}

impl DecompGraph {
    pub fn build(fd: &FunctionalDecomposition) -> Self {
        Self::with_protected(fd, &[])
    }

    pub fn with_protected(fd: &FunctionalDecomposition, extra: &[usize]) -> Self {
        let n = fd.len();
        let mut preds = vec![Vec::new(); n];
        let mut succs = vec![Vec::new(); n];
        for (j, obs) in fd.observables.iter().enumerate() {
            for a in obs.args() {
                preds[j].push(a);
                succs[a].push(j);
            }
        }
        let protected = fd.outputs.iter().chain(extra).copied().collect();
        DecompGraph { fd: fd.clone(), preds, succs, protected }
    }

    pub fn n_v(&self) -> usize {
        self.preds.len()
    }

    pub fn n_e(&self) -> usize {
        self.preds.iter().map(Vec::len).sum()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.succs[i].contains(&j)
    }

    pub fn out_degree(&self, i: usize) -> usize {
        self.succs[i].len()
    }

    pub fn in_degree(&self, i: usize) -> usize {
        self.preds[i].len()
    }

    /// Dense 0/1 adjacency, `A[i][j] = 1` iff `w_i` is an argument of `h_j`.
    pub fn adjacency(&self) -> Vec<Vec<u8>> {
        let n = self.n_v();
        let mut a = vec![vec![0u8; n]; n];
        for (i, s) in self.succs.iter().enumerate() {
            for &j in s {
                a[i][j] = 1;
            }
        }
        a
    }

    pub fn must_visit(&self) -> MustVisitSets {
        must_visit_sets(&self.succs)
    }

    /// Composition of the chain from `V_i` to `V_j` with `w_i` as free variable.
    pub fn comp(&self, i: usize, j: usize) -> Result<Composite, DagError> {
        if i >= self.n_v() || j >= self.n_v() {
            return Err(DagError::OutOfRange(i.max(j)));
        }
        self.fd.to_composite(j, i).ok_or(DagError::NotDominated { i, j })
    }

    /// Vertices reachable from `i` and co-reachable to `j`, excluding both.
    pub fn interior(&self, i: usize, j: usize) -> Vec<usize> {
        let fwd = reach(&self.succs, i);
        let bwd = reach(&self.preds, j);
        (0..self.n_v()).filter(|&k| k != i && k != j && fwd[k] && bwd[k]).collect()
    }

    pub fn pair_outcome(&self, sets: &MustVisitSets, i: usize, j: usize) -> PairOutcome {
        if !sets.w[i].contains(&j) {
            return PairOutcome::NotInForwardSet;
        }
        if !sets.m[j].contains(&i) {
            return PairOutcome::NotInReverseSet;
        }
        if self.has_edge(i, j) && self.out_degree(i) <= 1 {
            return PairOutcome::DirectEdge;
        }
        let interior = self.interior(i, j);
        if interior.is_empty() {
            return PairOutcome::EmptyInterior;
        }
        if let Some(&k) = interior.iter().find(|k| self.protected.contains(k)) {
            return PairOutcome::ProtectedInterior(k);
        }
        PairOutcome::Contract { interior }
    }

    /// Replaces `w_j` by `comp(V_i, V_j)` and drops the interior vertices.
    /// Returns the new decomposition and the old-to-new index map.
    pub fn contract(&self, i: usize, j: usize, interior: &[usize]) -> Result<(FunctionalDecomposition, Vec<Option<usize>>), DagError> {
        let body = self.comp(i, j)?.canonical();
        let mut fd = self.fd.clone();
        fd.observables[j] = fused_observable(body, i);
        let mut keep = vec![true; fd.len()];
        for &k in interior {
            keep[k] = false;
        }
        Ok(fd.compact(&keep))
    }

    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph decomposition {\n  rankdir=LR;\n  node [shape=box, fontname=\"Helvetica\"];\n");
        for (j, obs) in self.fd.observables.iter().enumerate() {
            let rhs = match obs {
                ObservableExpr::Input { slot } => self.fd.inputs[*slot].clone(),
                _ => obs.render(&obs_name),
            };
            let label = format!("{} = {}", obs_name(j), rhs).replace('\\', "\\\\").replace('"', "\\\"");
            let style = if self.protected.contains(&j) {
                ", style=filled, fillcolor=\"#d9e8fb\", peripheries=2"
            } else if j < self.fd.n_x() {
                ", shape=ellipse"
            } else {
                ""
            };
            out.push_str(&format!("  {} [label=\"{}\"{}];\n", obs_name(j), label, style));
        }
        for (i, s) in self.succs.iter().enumerate() {
            for &j in s {
                out.push_str(&format!("  {} -> {};\n", obs_name(i), obs_name(j)));
            }
        }
        out.push_str("}\n");
        out
    }

    /// Decomposition JSON extended with `adjacency` and `protected`.
    pub fn to_json(&self) -> String {
        let mut doc: serde_json::Value = serde_json::from_str(&self.fd.to_json()).expect("valid json");
        doc["adjacency"] = serde_json::to_value(self.adjacency()).expect("serializable");
        doc["protected"] = serde_json::to_value(self.protected.iter().map(|p| p + 1).collect::<Vec<_>>()).expect("serializable");
        serde_json::to_string_pretty(&doc).expect("serializable")
    }
}

/// Turns a fused body in `w_i` into the simplest observable form.
fn fused_observable(body: Composite, i: usize) -> ObservableExpr {
    match body {
        Composite::Var => ObservableExpr::Affine { terms: vec![(i, 1.0)], offset: 0.0 },
        Composite::Affine(ref terms, offset) if terms.iter().all(|(t, _)| matches!(t, Composite::Var)) => {
            let c: f64 = terms.iter().map(|t| t.1).sum();
            let terms = if c == 0.0 { Vec::new() } else { vec![(i, c)] };
            ObservableExpr::Affine { terms, offset }
        }
        Composite::Unary(ref op, ref a) if matches!(**a, Composite::Var) && !matches!(op, UnaryOp::Composite(_)) => {
            ObservableExpr::Unary { op: op.clone(), arg: i }
        }
        other => ObservableExpr::Unary { op: UnaryOp::Composite(Arc::new(other)), arg: i },
    }
}

fn reach(adj: &[Vec<usize>], start: usize) -> Vec<bool> {
    let mut seen = vec![false; adj.len()];
    let mut stack = vec![start];
    seen[start] = true;
    while let Some(v) = stack.pop() {
        for &u in &adj[v] {
            if !seen[u] {
                seen[u] = true;
                stack.push(u);
            }
        }
    }
    seen
}

fn topo_order(succs: &[Vec<usize>]) -> Vec<usize> {
    let n = succs.len();
    let mut indeg = vec![0usize; n];
    for s in succs {
        for &j in s {
            indeg[j] += 1;
        }
    }
    let mut ready: Vec<usize> = (0..n).filter(|&v| indeg[v] == 0).rev().collect();
    let mut order = Vec::with_capacity(n);
    while let Some(v) = ready.pop() {
        order.push(v);
        for &j in &succs[v] {
            indeg[j] -= 1;
            if indeg[j] == 0 {
                ready.push(j);
            }
        }
    }
    assert_eq!(order.len(), n, "graph must be acyclic");
    order
}

/// Must-visit sets of an arbitrary DAG given by successor lists.
///
/// `W_i = ∩_{s ∈ succ(i)} ({s} ∪ W_s)` (empty at sinks), and symmetrically for
/// `M_i` over predecessors.
pub fn must_visit_sets(succs: &[Vec<usize>]) -> MustVisitSets {
    let n = succs.len();
    let mut preds = vec![Vec::new(); n];
    for (i, s) in succs.iter().enumerate() {
        for &j in s {
            preds[j].push(i);
        }
    }
    let order = topo_order(succs);
    let meet = |adj: &[usize], sets: &[BTreeSet<usize>]| -> BTreeSet<usize> {
        let mut acc: Option<BTreeSet<usize>> = None;
        for &s in adj {
            let mut with_self = sets[s].clone();
            with_self.insert(s);
            acc = Some(match acc {
                None => with_self,
                Some(a) => a.intersection(&with_self).copied().collect(),
            });
        }
        acc.unwrap_or_default()
    };
    let mut w = vec![BTreeSet::new(); n];
    for &v in order.iter().rev() {
        w[v] = meet(&succs[v], &w);
    }
    let mut m = vec![BTreeSet::new(); n];
    for &v in &order {
        m[v] = meet(&preds[v], &m);
    }
    MustVisitSets { w, m }
}

/// One contraction performed by [`reduce_traced`] (indices before the step).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Contraction {
    pub i: usize,
    pub j: usize,
    pub removed: Vec<usize>,
}

/// Algorithm 3 iterated to a fixpoint.
pub fn reduce(fd: &FunctionalDecomposition, protected: &[usize]) -> FunctionalDecomposition {
    reduce_traced(fd, protected).0
}

/// As [`reduce`], also returning the contractions and the final positions of
/// `protected`.
pub fn reduce_traced(fd: &FunctionalDecomposition, protected: &[usize]) -> (FunctionalDecomposition, Vec<Contraction>, Vec<usize>) {
    let mut current = fd.clone();
    let mut prot: Vec<usize> = protected.to_vec();
    let mut trace = Vec::new();
    'outer: loop {
        let g = DecompGraph::with_protected(&current, &prot);
        let sets = g.must_visit();
        for i in 0..g.n_v() {
            for &j in &sets.w[i] {
                if let PairOutcome::Contract { interior } = g.pair_outcome(&sets, i, j) {
                    let (next, map) = g.contract(i, j, &interior).expect("dominance checked");
                    prot = prot.iter().map(|&p| map[p].expect("protected vertices survive")).collect();
                    trace.push(Contraction { i, j, removed: interior });
                    current = next;
                    continue 'outer;
                }
            }
        }
        break;
    }
    (current, trace, prot)
}
