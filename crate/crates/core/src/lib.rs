//! Zero-inflated binary tree Pólya-splitting (Z-TPS) distributions and
//! regression for multivariate count data.
//!
//! The crate is organised bottom-up:
//!
//! - [`polya`]: generalized factorials, bivariate Pólya split laws and the
//!   univariate global abundance laws (Poisson, negative binomial).
//! - [`tree`]: rooted binary partition trees with ancestor and separator
//!   queries, plus Newick input/output.
//! - [`dist`]: the static-parameter Z-TPS distribution (pmfs, factorial
//!   moments, covariances, sampling).
//! - [`regression`]: per-node and global regression likelihoods with analytic
//!   gradients, the quasi-Newton optimizer, information criteria and per-node
//!   family selection.
//! - [`fit`]: whole-tree fitting, prediction, size effects and model files.
//! - [`eval`]: prediction metrics and fold-based cross-validation.

pub mod data;
pub mod dist;
pub mod error;
pub mod eval;
pub mod fit;
pub mod polya;
pub mod regression;
pub mod tree;

pub use error::{Error, Result};
