//! Conway-Maxwell-Poisson (COM-Poisson) regression for count data with any
//! level of dispersion, together with the Poisson, negative binomial,
//! logistic and restricted generalized Poisson baselines it is usually
//! compared against.
//!
//! The model links covariates to the rate-like parameter through
//! `log λ_i = x_i'β` and estimates a single dispersion parameter `ν`
//! shared by all observations: `ν = 1` is Poisson regression, `ν < 1`
//! captures over-dispersion and `ν > 1` under-dispersion, with logistic
//! regression as the `ν → ∞` limit on binary responses.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

pub mod baselines;
pub mod data;
pub mod diag;
pub mod dist;
pub mod error;
pub mod fit;
pub mod infer;
pub mod optim;
pub mod simulate;

pub use error::{Error, Result};
