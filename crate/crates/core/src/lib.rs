//! Functional decomposition of explicit functions and hybrid zonotope
//! over-approximation of their graphs.
//!
//! The pipeline runs infix text through [`expr`] (tokenizer and shunting-yard
//! conversion), compiles the postfix stream into observables with [`decomp`],
//! contracts excessive unary chains with [`dag`], bounds every observable with
//! [`interval`], and assembles a [`hz::HybridZonotope`] containing the graph of
//! the function with [`graphbuild`].

pub mod dag;
pub mod decomp;
pub mod dha;
pub mod expr;
pub mod graphbuild;
pub mod hz;
pub mod interval;
pub mod lstm;
pub mod pipeline;
pub mod prim;

pub use dag::DecompGraph;
pub use decomp::{FunctionalDecomposition, ObservableExpr};
pub use expr::{RpnExpr, Token, TokenKind};
pub use graphbuild::{ApproxConfig, ProductMode};
pub use hz::{HybridZonotope, PolyUnion};
pub use interval::Interval;
pub use prim::{BinaryOp, Composite, UnaryOp};

/// `w_k` name of a 0-based observable index.
pub fn obs_name(index: usize) -> String {
    format!("w_{}", index + 1)
}
