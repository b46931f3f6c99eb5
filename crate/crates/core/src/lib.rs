//! Sparsification of generalized linear model objectives
//! `F(x) = sum_i f_i(<a_i, x>)` through multiscale leverage-score
//! overestimates, plus regression front ends built on top.

pub mod cli;
pub mod error;
pub mod leverage;
pub mod losses;
pub mod matrix_io;
pub mod mlso;
pub mod oracles;
pub mod regressors;
pub mod sparsifier;

pub use error::{GlmError, Result};
