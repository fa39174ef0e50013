//! Probabilistic load-margin assessment.
//!
//! Uncertain loads and wind injections are sampled through a vine copula,
//! a handful of continuation power-flow runs train a Gaussian-process
//! emulator, and the emulator's posterior mean stands in for the power flow
//! across a large Monte Carlo sample.
//!
//! Modules, bottom up:
//! - [`case_model`]: MATPOWER case parsing and the admittance matrix
//! - [`powerflow`]: Newton–Raphson AC power flow
//! - [`cpf`]: continuation power flow and load margins
//! - [`uncertainty`]: marginals, pair copulas, C- and D-vines
//! - [`sampling`]: Latin hypercube / Monte Carlo designs and transforms
//! - [`gpe`]: Gaussian-process emulator
//! - [`pipeline`]: scenario configuration and end-to-end assessment

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod case_model;
pub mod cpf;
pub mod powerflow;
pub mod quadrature;
pub mod uncertainty;
pub mod sampling;
pub mod gpe;
pub mod pipeline;
