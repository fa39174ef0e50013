//! Marginal distributions, pair copulas and C-/D-vine constructions.

mod copula;
mod marginal;
mod tau;
mod vine;

pub use copula::{debye1, PairCopula, UNIFORM_CLAMP};
pub use marginal::{norm_cdf, norm_inv, norm_pdf, Marginal};
pub use tau::kendall_tau;
pub use vine::{VineEdge, VineKind, VineSpec};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum UncertaintyError {
    #[error("{what} = {value} is outside the open unit interval")]
    Domain { what: &'static str, value: f64 },
    #[error("{0}")]
    Parameter(String),
    #[error("invalid vine: {0}")]
    InvalidVine(String),
    #[error("Gumbel h-inverse did not converge for w = {w}, v = {v}, theta = {theta}")]
    HInvNonConvergence { w: f64, v: f64, theta: f64 },
}
