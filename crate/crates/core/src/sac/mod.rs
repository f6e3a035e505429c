//! Soft actor-critic with truncated quantile critics.

mod agent;
pub mod critic;
pub mod policy;
pub mod replay;

pub use agent::{actor_loss_and_grad, EntropyCoef, SacAgent, SacConfig, UpdateMetrics};
pub use critic::QuantileCriticEnsemble;
pub use policy::{ActionMode, PolicySample, SkillPolicy, LOG_STD_MAX, LOG_STD_MIN};
pub use replay::{Batch, EpisodeSpan, ReplayBuffer, TransitionRecord};
