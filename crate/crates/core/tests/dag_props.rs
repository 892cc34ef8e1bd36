//! Must-visit sets against independent oracles, and graph invariants.

mod common;

use std::collections::BTreeSet;

use common::infix_expr;
use fdecomp::dag::must_visit_sets;
use fdecomp::decomp::{compile, resolve_inputs};
use fdecomp::{DecompGraph, RpnExpr};
use proptest::prelude::*;

/// Random DAG on up to 10 vertices, labelled in a random order so that the
/// labels are not a topological order.
fn dag() -> impl Strategy<Value = Vec<Vec<usize>>> {
    (1usize..=10)
        .prop_flat_map(|n| {
            let pairs = n * (n - 1) / 2;
            (Just(n), prop::collection::vec(any::<bool>(), pairs), Just((0..n).collect::<Vec<usize>>()).prop_shuffle())
        })
        .prop_map(|(n, edges, label)| {
            let mut succs = vec![Vec::new(); n];
            let mut e = edges.into_iter();
            for i in 0..n {
                for j in i + 1..n {
                    if e.next().unwrap() {
                        succs[label[i]].push(label[j]);
                    }
                }
            }
            succs
        })
}

fn transpose(succs: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let mut preds = vec![Vec::new(); succs.len()];
    for (i, s) in succs.iter().enumerate() {
        for &j in s {
            preds[j].push(i);
        }
    }
    preds
}

/// Intersection of the vertex sets of every maximal walk leaving `v`.
fn by_walks(adj: &[Vec<usize>], v: usize) -> BTreeSet<usize> {
    fn go(adj: &[Vec<usize>], v: usize, path: &mut Vec<usize>, acc: &mut Option<BTreeSet<usize>>) {
        if adj[v].is_empty() {
            let here: BTreeSet<usize> = path.iter().copied().collect();
            *acc = Some(match acc.take() {
                None => here,
                Some(a) => a.intersection(&here).copied().collect(),
            });
            return;
        }
        for &s in &adj[v] {
            path.push(s);
            go(adj, s, path, acc);
            path.pop();
        }
    }
    let mut acc = None;
    go(adj, v, &mut Vec::new(), &mut acc);
    acc.unwrap_or_default()
}

/// `j` post-dominates `v` iff deleting `j` leaves `v` with no way to a sink.
fn by_removal(adj: &[Vec<usize>], v: usize) -> BTreeSet<usize> {
    let reaches_sink_without = |j: usize| {
        let mut seen = vec![false; adj.len()];
        let mut stack = vec![v];
        while let Some(u) = stack.pop() {
            if std::mem::replace(&mut seen[u], true) {
                continue;
            }
            if adj[u].is_empty() {
                return true;
            }
            stack.extend(adj[u].iter().copied().filter(|&s| s != j));
        }
        false
    };
    (0..adj.len()).filter(|&j| j != v && !reaches_sink_without(j)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn must_visit_matches_walk_enumeration(succs in dag()) {
        let sets = must_visit_sets(&succs);
        let preds = transpose(&succs);
        for v in 0..succs.len() {
            prop_assert_eq!(&sets.w[v], &by_walks(&succs, v), "W_{} of {:?}", v, succs);
            prop_assert_eq!(&sets.m[v], &by_walks(&preds, v), "M_{} of {:?}", v, succs);
        }
    }

    #[test]
    fn must_visit_is_post_dominance(succs in dag()) {
        let sets = must_visit_sets(&succs);
        let preds = transpose(&succs);
        for v in 0..succs.len() {
            prop_assert_eq!(&sets.w[v], &by_removal(&succs, v));
            prop_assert_eq!(&sets.m[v], &by_removal(&preds, v));
            prop_assert!(!sets.w[v].contains(&v) && !sets.m[v].contains(&v));
        }
    }

    #[test]
    fn graphs_follow_the_argument_rule(src in infix_expr()) {
        let rpns = [RpnExpr::from_infix(&src).unwrap()];
        let names: Vec<String> = ["x", "y", "z"].iter().map(|s| s.to_string()).collect();
        let Ok(fd) = compile(&rpns, resolve_inputs(&rpns, 3, Some(&names)).unwrap(), true) else { return Ok(()) };
        let g = DecompGraph::build(&fd);
        let a = g.adjacency();
        for (j, obs) in fd.observables.iter().enumerate() {
            let args = obs.args();
            for i in 0..fd.len() {
                prop_assert_eq!(a[i][j] == 1, args.contains(&i));
                // acyclic: every edge points to a later observable
                prop_assert!(a[i][j] == 0 || i < j);
            }
        }
        for slot in 0..fd.n_x() {
            prop_assert_eq!(g.in_degree(slot), 0);
        }
        for o in &fd.outputs {
            prop_assert!(g.protected.contains(o));
        }
    }
}
