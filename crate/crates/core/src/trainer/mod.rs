//! The training loop: skill sampling, the trade-off schedule, reward
//! composition and relabeling, feedback sessions, and SAC/φ updates.

mod checkpoint;
mod config;
mod run;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::DenseTensor;
use crate::envs::PrimitiveController;
use crate::error::{Error, Result};
use crate::sac::SkillPolicy;

pub use config::{config_hash, AlphaConfig, EvalConfig, Mode, Preset, TeacherConfig, TrainerConfig};
pub use run::{
    eval_csv, relabel_rewards, run_training, MetricsRow, PendingSession, SessionReport, StepEvent, Trainer,
    TrainingOutcome, ABORT_CHECKPOINT_FILE, CHECKPOINT_FILE, EVAL_FILE, METRICS_FILE, PENDING_QUERIES_FILE,
    SESSIONS_FILE,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaMode {
    Fixed,
    Conditioned,
}

/// `α = 0` up to and including step `τ`, then a constant (fixed mode) or a
/// per-episode draw from a finite set (conditioned mode).
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaSchedule {
    pub mode: AlphaMode,
    pub tau: u64,
    pub c: f64,
    pub set: Vec<f64>,
}

impl AlphaSchedule {
    pub fn new(mode: AlphaMode, cfg: &AlphaConfig) -> Result<Self> {
        let values = std::iter::once(cfg.c).chain(cfg.set.iter().copied());
        for v in values {
            if !v.is_finite() {
                return Err(Error::Config(format!("trade-off weight {v} is not finite")));
            }
            if v < 0.0 {
                if !cfg.allow_negative {
                    return Err(Error::Config(format!(
                        "negative trade-off weight {v} needs allow_negative = true"
                    )));
                }
                log::warn!("negative trade-off weight {v} accepted by override");
            }
        }
        if mode == AlphaMode::Conditioned && cfg.set.is_empty() {
            return Err(Error::Config("conditioned mode needs a nonempty alpha set".into()));
        }
        Ok(Self {
            mode,
            tau: cfg.tau,
            c: cfg.c,
            set: cfg.set.clone(),
        })
    }

    /// The weight in force at env step `t` under fixed mode.
    pub fn fixed_alpha(&self, t: u64) -> f64 {
        if t <= self.tau {
            0.0
        } else {
            self.c
        }
    }

    /// Weight for an episode starting at step `t`; conditioned mode draws from
    /// `rng` only after `τ`.
    pub fn alpha_for_step<R: Rng + ?Sized>(&self, t: u64, rng: &mut R) -> f64 {
        match self.mode {
            AlphaMode::Fixed => self.fixed_alpha(t),
            AlphaMode::Conditioned if t <= self.tau => 0.0,
            AlphaMode::Conditioned => self.set[rng.random_range(0..self.set.len())],
        }
    }
}

/// `α·r^Ha + r^DSD`.
pub fn combined_reward(alpha: f64, r_ha: f64, r_dsd: f64) -> Result<f64> {
    if !(alpha.is_finite() && r_ha.is_finite() && r_dsd.is_finite()) {
        return Err(Error::NonFinite(format!(
            "reward terms (alpha {alpha}, r_ha {r_ha}, r_dsd {r_dsd})"
        )));
    }
    Ok(alpha * r_ha + r_dsd)
}

/// How policy inputs are assembled from the environment observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObsLayout {
    pub obs_dim: usize,
    pub skill_dim: usize,
    pub mode: AlphaMode,
}

impl ObsLayout {
    pub fn cond_dim(&self) -> usize {
        self.skill_dim + usize::from(self.mode == AlphaMode::Conditioned)
    }

    pub fn input_dim(&self) -> usize {
        self.obs_dim + self.cond_dim()
    }

    /// Conditioning slots: `z`, then `α` in conditioned mode.
    pub fn cond(&self, z: &[f64], alpha: f64) -> Result<Vec<f64>> {
        if z.len() != self.skill_dim {
            return Err(Error::shape(format!(
                "skill has {} dims, layout expects {}",
                z.len(),
                self.skill_dim
            )));
        }
        let mut c = z.to_vec();
        if self.mode == AlphaMode::Conditioned {
            c.push(alpha);
        }
        Ok(c)
    }
}

/// `s ⊕ z` in fixed mode, `s ⊕ z ⊕ α` in conditioned mode.
pub fn augment_observation(layout: &ObsLayout, s: &[f64], z: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if s.len() != layout.obs_dim {
        return Err(Error::shape(format!(
            "observation has {} dims, layout expects {}",
            s.len(),
            layout.obs_dim
        )));
    }
    let mut out = s.to_vec();
    out.extend(layout.cond(z, alpha)?);
    Ok(out)
}

/// Unit-circle projection of a skill latent; the zero vector maps to `(1, 0)`.
pub fn normalize_skill(z: [f64; 2]) -> [f64; 2] {
    let n = z[0].hypot(z[1]);
    if n > 0.0 && n.is_finite() {
        [z[0] / n, z[1] / n]
    } else {
        [1.0, 0.0]
    }
}

/// A frozen skill policy queried deterministically at a fixed trade-off weight.
#[derive(Debug, Clone)]
pub struct SkillController {
    policy: SkillPolicy,
    layout: ObsLayout,
    alpha: f64,
}

impl SkillController {
    pub fn new(policy: SkillPolicy, layout: ObsLayout, alpha: f64) -> Result<Self> {
        if policy.obs_dim() != layout.input_dim() || policy.act_dim() != 2 || layout.skill_dim != 2 {
            return Err(Error::shape(format!(
                "policy ({} -> {}) does not fit layout {layout:?}",
                policy.obs_dim(),
                policy.act_dim()
            )));
        }
        Ok(Self { policy, layout, alpha })
    }

    pub fn policy(&self) -> &SkillPolicy {
        &self.policy
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn layout(&self) -> ObsLayout {
        self.layout
    }
}

impl PrimitiveController for SkillController {
    fn primitive_action(&self, env_obs: &[f64], z: [f64; 2]) -> Result<[f64; 2]> {
        let x = augment_observation(&self.layout, env_obs, &normalize_skill(z), self.alpha)?;
        let a = self.policy.deterministic(&DenseTensor::matrix(1, x.len(), x)?)?;
        Ok([a.data()[0], a.data()[1]])
    }
}
