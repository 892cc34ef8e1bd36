//! Staged simplification: basic → dedup → affine-folded → reduced.
//!
//! Counts reported per stage include the input observables.

use serde::Serialize;

use crate::dag::{reduce_traced, Contraction};
use crate::decomp::{compile, dedup, fold_affine_protected, DecompError, FunctionalDecomposition};
use crate::expr::RpnExpr;

#[derive(Debug, Clone, Default)]
pub struct StageOptions {
    pub fold_affine: bool,
    /// Extra protected observables, 0-based indices into the dedup stage.
    pub protect: Vec<usize>,
}

impl StageOptions {
    pub fn folding() -> Self {
        StageOptions { fold_affine: true, protect: Vec::new() }
    }
}

#[derive(Debug, Clone)]
pub struct Stages {
    /// Absent when the pipeline starts from an existing decomposition.
    pub basic: Option<FunctionalDecomposition>,
    pub dedup: FunctionalDecomposition,
    pub folded: Option<FunctionalDecomposition>,
    pub reduced: FunctionalDecomposition,
    pub contractions: Vec<Contraction>,
    /// Positions of the extra protected observables in `reduced`.
    pub protected: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StageCount {
    pub stage: &'static str,
    pub observables: usize,
}

impl Stages {
    pub fn counts(&self) -> Vec<StageCount> {
        let mut out = Vec::new();
        let mut push = |stage, fd: &FunctionalDecomposition| out.push(StageCount { stage, observables: fd.len() });
        if let Some(b) = &self.basic {
            push("basic", b);
        }
        push("dedup", &self.dedup);
        if let Some(f) = &self.folded {
            push("folded", f);
        }
        push("reduced", &self.reduced);
        out
    }

    /// All stages by name, in pipeline order.
    pub fn named(&self) -> Vec<(&'static str, &FunctionalDecomposition)> {
        let mut out = Vec::new();
        if let Some(b) = &self.basic {
            out.push(("basic", b));
        }
        out.push(("dedup", &self.dedup));
        if let Some(f) = &self.folded {
            out.push(("folded", f));
        }
        out.push(("reduced", &self.reduced));
        out
    }
}

/// Runs every stage on compiled expressions.
pub fn run_stages(rpns: &[RpnExpr], inputs: Vec<String>, opts: &StageOptions) -> Result<Stages, DecompError> {
    let basic = compile(rpns, inputs.clone(), false)?;
    let dedup = compile(rpns, inputs, true)?;
    let mut stages = simplify(&dedup, opts)?;
    stages.basic = Some(basic);
    Ok(stages)
}

/// Runs dedup, optional affine folding and reduction on an existing decomposition.
pub fn simplify(fd: &FunctionalDecomposition, opts: &StageOptions) -> Result<Stages, DecompError> {
    fd.validate()?;
    let dedup = dedup(fd);
    if let Some(&bad) = opts.protect.iter().find(|&&p| p >= dedup.len()) {
        return Err(DecompError::Invalid(format!("protected index {bad} out of range")));
    }
    let (folded, protect) = if opts.fold_affine {
        let (f, map) = fold_affine_protected(&dedup, &opts.protect);
        let p = opts.protect.iter().map(|&p| map[p].expect("protected observables survive folding")).collect();
        (Some(f), p)
    } else {
        (None, opts.protect.clone())
    };
    let (reduced, contractions, protected) = reduce_traced(folded.as_ref().unwrap_or(&dedup), &protect);
    Ok(Stages { basic: None, dedup, folded, reduced, contractions, protected })
}
