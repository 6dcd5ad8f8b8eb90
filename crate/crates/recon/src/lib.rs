//! Reconciliation of multi-release data vintages.
//!
//! Two noisy measurements of one latent quarterly series — each revised
//! through several releases — are combined into a single estimate by a
//! news/noise measurement-error state-space model estimated with a Gibbs
//! sampler. The crate also mechanizes the identification analysis that
//! justifies the model: moment counting, the innovation representation of
//! the univariate two-vintage case, and its observational-equivalence
//! family.
//!
//! The `recon` binary exposes the pipeline as subcommands:
//! `simulate`, `estimate`, `identify`, `decompose` and `gains`.

pub mod analysis;
pub mod cli;
pub mod error;
pub mod filter;
pub mod identify;
pub mod sampler;
pub mod ssm;
pub mod vintages;

pub use error::{Error, Result};

// Keep the guide's code snippets compiling: every chapter of book/ runs
// under `cargo test --doc`.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/vintages.md")]
    mod vintages {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/filtering.md")]
    mod filtering {}
    #[doc = include_str!("../../../book/src/estimation.md")]
    mod estimation {}
    #[doc = include_str!("../../../book/src/identification.md")]
    mod identification {}
    #[doc = include_str!("../../../book/src/analysis.md")]
    mod analysis {}
}
