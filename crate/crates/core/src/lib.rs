//! Off-policy actor-critic laboratory for studying overestimation bias.
//!
//! The crate implements Continuous Double Q-learning (a two-component
//! mixture policy whose components are optimized and assessed by different
//! critics), the baselines it is compared against (clipped double critics,
//! truncated quantile critics, and no correction at all), two ablations,
//! and the diagnostics used to compare them: on-policy bias, the
//! component/mixture log-ratio, and a Jensen-gap demonstrator.
//!
//! Everything runs on a small built-in reverse-mode differentiation engine
//! ([`autodiff`]) in `f64`, single-threaded and fully deterministic given a
//! seed.

pub mod autodiff;
pub mod critic;
pub mod diagnostics;
pub mod envs;
pub mod error;
pub mod policy;
pub mod replay;
pub mod rng;
pub mod stats;
pub mod trainer;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/environments.md")]
    mod environments {}
    #[doc = include_str!("../../../book/src/variants.md")]
    mod variants {}
    #[doc = include_str!("../../../book/src/diagnostics.md")]
    mod diagnostics {}
}
