//! Human-aligned skill discovery.
//!
//! A latent-conditioned policy learns diverse, dynamic navigation skills from a
//! distance-maximising intrinsic reward while a preference-trained reward model
//! pulls those skills toward what a (simulated or real) human prefers. The
//! trade-off weight can be fixed or fed to the policy so one network covers the
//! whole diversity/alignment curve.

// `!(x > 0.0)` also rejects NaN; index loops mirror the math in the numeric kernels.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::too_many_arguments)]

pub mod autodiff;
pub mod checkpoint;
pub mod downstream;
pub mod envs;
pub mod evaluation;
mod error;
pub mod parallel;
pub mod preference;
pub mod sac;
pub mod skills;
pub mod trainer;

pub use error::{Error, Result};
