//! Multi-branch expression trees.
//!
//! A tree is a root unary (with affine scale and bias) over either a single
//! leaf or a binary connector. Each connector joins two or more branches;
//! a branch is a short chain of affine unaries ending in another connector
//! or a leaf, and a leaf is a linear combination of one unary applied to
//! several variables.

pub mod eval;
pub mod fixtures;
mod symbol;
pub mod text;
mod tree;

pub use eval::{evaluate, evaluate_row, Program, Workspace};
pub use symbol::{Binary, PathSymbol, Unary, DIV_FLOOR, LOG_FLOOR, TAN_COS_FLOOR};
pub use text::{canonical_serialize, parse};
pub use tree::{
    Affine, Branch, Connector, ExpressionTree, Leaf, LeafId, Tail, DEFAULT_MAX_DEPTH,
    DEFAULT_MAX_WIDTH,
};
