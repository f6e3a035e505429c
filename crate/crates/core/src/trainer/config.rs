use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::AlphaMode;
use crate::envs::Nav2dConfig;
use crate::error::{Error, Result};
use crate::preference::{FeedbackSchedule, RewardConfig};
use crate::sac::SacConfig;
use crate::skills::SkillConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Mode {
    /// Fixed trade-off weight after the pre-training phase.
    #[default]
    #[serde(rename = "hasd")]
    Hasd,
    /// Policy and critics conditioned on a per-episode trade-off weight.
    #[serde(rename = "alpha-hasd")]
    AlphaHasd,
    /// Skill discovery reward only; no feedback is collected.
    #[serde(rename = "lsd-baseline", alias = "lsd")]
    Lsd,
}

impl Mode {
    pub fn alpha_mode(self) -> AlphaMode {
        match self {
            Mode::AlphaHasd => AlphaMode::Conditioned,
            Mode::Hasd | Mode::Lsd => AlphaMode::Fixed,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::Hasd => "hasd",
            Mode::AlphaHasd => "alpha-hasd",
            Mode::Lsd => "lsd-baseline",
        }
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hasd" => Ok(Mode::Hasd),
            "alpha-hasd" => Ok(Mode::AlphaHasd),
            "lsd-baseline" | "lsd" => Ok(Mode::Lsd),
            other => Err(Error::Config(format!(
                "unknown mode '{other}' (expected hasd, alpha-hasd or lsd-baseline)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Original table values: 1M steps, 256-wide networks.
    Paper,
    /// 200k steps with the feedback schedule scaled by the same factor.
    #[default]
    Desk,
    /// Small networks and short runs for the automated acceptance suite.
    Acceptance,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Preset::Paper),
            "desk" => Ok(Preset::Desk),
            "acceptance" => Ok(Preset::Acceptance),
            other => Err(Error::Config(format!(
                "unknown preset '{other}' (expected paper, desk or acceptance)"
            ))),
        }
    }
}

/// Who answers preference queries during training.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TeacherConfig {
    /// Labels from the environment's ground-truth reward.
    #[default]
    GroundTruth,
    /// Labels from a saved reward model fitted to human labels.
    Model(PathBuf),
    /// Training stops at each session and waits for imported labels.
    Human,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlphaConfig {
    /// Pre-training length: `α = 0` while `t ≤ tau`.
    pub tau: u64,
    /// Weight used after `tau` in fixed mode.
    pub c: f64,
    /// Per-episode draws in conditioned mode.
    pub set: Vec<f64>,
    pub allow_negative: bool,
}

impl Default for AlphaConfig {
    fn default() -> Self {
        Self {
            tau: 30_000,
            c: 0.2,
            set: vec![1.0, 0.5, 0.2, 0.1, 0.0],
            allow_negative: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Skills rolled out per trade-off weight after training; 0 disables.
    pub skills: usize,
    pub seed: u64,
    /// Weights to evaluate; empty means `c` in fixed mode and the training set
    /// in conditioned mode.
    pub alphas: Vec<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            skills: 500,
            seed: 0,
            alphas: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub preset: Preset,
    pub mode: Mode,
    pub seed: u64,
    pub total_steps: u64,
    /// Metrics row cadence in env steps.
    pub log_every: u64,
    /// Checkpoint cadence in env steps; 0 writes only the final checkpoint.
    pub checkpoint_every: u64,
    pub teacher: TeacherConfig,
    pub env: Nav2dConfig,
    pub sac: SacConfig,
    pub skills: SkillConfig,
    pub reward: RewardConfig,
    pub feedback: FeedbackSchedule,
    pub alpha: AlphaConfig,
    pub eval: EvalConfig,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self::preset(Preset::Desk, Mode::Hasd)
    }
}

impl TrainerConfig {
    pub fn preset(preset: Preset, mode: Mode) -> Self {
        let mut cfg = Self {
            preset,
            mode,
            seed: 0,
            total_steps: 1_000_000,
            log_every: 1_000,
            checkpoint_every: 100_000,
            teacher: TeacherConfig::GroundTruth,
            env: Nav2dConfig::default(),
            sac: SacConfig::default(),
            skills: SkillConfig::default(),
            reward: RewardConfig::default(),
            feedback: FeedbackSchedule::default(),
            alpha: AlphaConfig::default(),
            eval: EvalConfig {
                skills: 2000,
                ..Default::default()
            },
        };
        match preset {
            Preset::Paper => {}
            Preset::Desk => {
                cfg.total_steps = 200_000;
                cfg.checkpoint_every = 20_000;
                cfg.sac.learning_starts = 1_000;
                cfg.feedback.start = 6_000;
                cfg.feedback.frequency = 2_400;
                cfg.alpha.tau = 6_000;
                cfg.eval.skills = 500;
            }
            Preset::Acceptance => {
                cfg.total_steps = 20_000;
                cfg.log_every = 500;
                cfg.checkpoint_every = 0;
                cfg.sac.hidden = vec![64, 64];
                cfg.sac.batch_size = 64;
                cfg.sac.update_to_data = 1;
                cfg.sac.learning_starts = 1_000;
                cfg.sac.replay_capacity = 100_000;
                cfg.sac.lr_actor = 3e-4;
                cfg.skills.hidden = vec![64, 64];
                cfg.reward.hidden = vec![64, 64];
                cfg.feedback.start = 4_000;
                cfg.feedback.frequency = 1_500;
                cfg.alpha.tau = 4_000;
                cfg.eval.skills = 200;
            }
        }
        if mode == Mode::Lsd {
            cfg.alpha.c = 0.0;
            cfg.feedback.budget = Some(0);
        }
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.sac.validate()?;
        self.feedback.validate()?;
        if self.skills.skill_dim != 2 {
            return Err(Error::Config("only 2-dimensional skills are supported".into()));
        }
        if self.total_steps == 0 || self.log_every == 0 {
            return Err(Error::Config("total_steps and log_every must be positive".into()));
        }
        if self.reward.segment_len == 0 || self.reward.segment_len > self.env.max_steps {
            return Err(Error::Config(format!(
                "segment_len {} must lie in 1..={} (episode length)",
                self.reward.segment_len, self.env.max_steps
            )));
        }
        if self.mode == Mode::AlphaHasd && self.alpha.set.is_empty() {
            return Err(Error::Config("alpha-hasd needs a nonempty alpha set".into()));
        }
        if self.eval.alphas.iter().any(|a| !a.is_finite()) {
            return Err(Error::Config("evaluation alphas must be finite".into()));
        }
        Ok(())
    }

    /// Trade-off weights evaluated after training.
    pub fn eval_alphas(&self) -> Vec<f64> {
        if !self.eval.alphas.is_empty() {
            return self.eval.alphas.clone();
        }
        match self.mode {
            Mode::AlphaHasd => self.alpha.set.clone(),
            Mode::Hasd => vec![self.alpha.c],
            Mode::Lsd => vec![0.0],
        }
    }
}

/// Hex SHA-256 of the canonical JSON form.
pub fn config_hash(cfg: &TrainerConfig) -> String {
    let json = serde_json::to_vec(cfg).expect("config serializes");
    Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
}
