//! Sparse inverse problems over signed measures regularized by an unbalanced
//! Kantorovich-Rubinstein norm, solved with an accelerated generalized
//! conditional gradient (AGCG) method.

// `!(x > 0.0)` is used on purpose so that NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agcg;
pub mod certificate;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod experiment;
pub mod kr_oracle;
pub mod lp;
pub mod measures;
pub mod operators;
pub mod par;
pub mod subproblem;

pub use error::{Error, Result};
