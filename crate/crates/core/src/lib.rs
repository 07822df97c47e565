//! A desk-scale laboratory for distillation-based continual concept
//! unlearning on small conditional diffusion models.
//!
//! The pieces, bottom up: [`nn`] (a conditional MLP noise predictor with
//! exact gradients and Adam), [`diffusion`] (noise schedule, forward
//! process, DDIM), [`world`] (ground-truth concepts, contexts and the exact
//! oracle classifier), [`engine`] (pretraining, the unlearning losses, the
//! per-step loop, checkpoints), [`eval`] (metrics and reports) and
//! [`experiment`] (configuration and the artifact pipeline behind the CLI).
//! The guide in `book/` walks through them with runnable examples.

pub mod diffusion;
pub mod engine;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod nn;
pub mod rng;
pub mod world;

pub use error::{Error, Result};

/// The guide's code blocks, compiled and run as doctests.
#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/universe.md")]
    mod universe {}
    #[doc = include_str!("../../../book/src/diffusion.md")]
    mod diffusion {}
    #[doc = include_str!("../../../book/src/denoiser.md")]
    mod denoiser {}
    #[doc = include_str!("../../../book/src/unlearning.md")]
    mod unlearning {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
    #[doc = include_str!("../../../book/src/desk-scale.md")]
    mod desk_scale {}
}
