//! Symbolic covariance-kernel expressions over time.
//!
//! A [`KernelExpr`] is an abstract syntax tree whose leaves are base kernels
//! (linear, periodic, gamma-exponential) and whose interior nodes are binary
//! operators (sum, product, changepoint). Parameters live on the nodes that
//! own them; the flattened parameter vector uses a depth-first preorder
//! (node, then left subtree, then right subtree).

mod eval;
mod expr;
mod text;

pub use eval::{cov_matrix, cross_cov_matrix, eval_kernel};
pub(crate) use eval::weighted_gradient as kernel_weighted_gradient;
pub use expr::{BaseKind, KernelExpr, Operator, ParamDomain, Side, TreePath};
pub use text::parse;
