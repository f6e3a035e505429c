//! Sparse-reward goal reaching on top of Nav2d, driven through a skill controller.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::nav2d::{EnvState, Nav2d, Nav2dConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GoalTaskConfig {
    pub goal_radius: f64,
    pub max_steps: usize,
    /// Resample goals that would already be reached at the start position.
    pub exclude_start_ball: bool,
}

impl Default for GoalTaskConfig {
    fn default() -> Self {
        Self {
            goal_radius: 0.3,
            max_steps: 75,
            exclude_start_ball: true,
        }
    }
}

/// Maps an environment observation and a skill latent to a primitive action.
pub trait PrimitiveController: Send + Sync {
    fn primitive_action(&self, env_obs: &[f64], z: [f64; 2]) -> Result<[f64; 2]>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct GoalState {
    pub env: EnvState,
    pub goal: [f64; 2],
    pub reached: bool,
}

impl GoalState {
    /// Agent position followed by goal position; nothing about hazards.
    pub fn observation(&self) -> Vec<f64> {
        vec![self.env.pos[0], self.env.pos[1], self.goal[0], self.goal[1]]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GoalStep {
    pub reward: f64,
    pub cost: f64,
    pub done: bool,
    pub reached: bool,
}

#[derive(Clone)]
pub struct GoalEnv {
    cfg: GoalTaskConfig,
    nav: Nav2d,
    controller: Option<Arc<dyn PrimitiveController>>,
}

impl GoalEnv {
    pub fn new(cfg: GoalTaskConfig, mut nav_cfg: Nav2dConfig) -> Result<Self> {
        if !(cfg.goal_radius > 0.0) || cfg.max_steps == 0 {
            return Err(Error::Config("goal_radius and max_steps must be positive".into()));
        }
        nav_cfg.max_steps = cfg.max_steps;
        nav_cfg.random_start = true;
        Ok(Self {
            cfg,
            nav: Nav2d::new(nav_cfg)?,
            controller: None,
        })
    }

    pub fn with_controller(mut self, controller: Arc<dyn PrimitiveController>) -> Self {
        self.controller = Some(controller);
        self
    }

    pub fn config(&self) -> &GoalTaskConfig {
        &self.cfg
    }

    pub fn nav(&self) -> &Nav2d {
        &self.nav
    }

    pub fn obs_dim(&self) -> usize {
        4
    }

    pub fn goal_reset(&self, seed: u64) -> GoalState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.goal_reset_with(&mut rng)
    }

    pub fn goal_reset_with<R: Rng + ?Sized>(&self, rng: &mut R) -> GoalState {
        let cfg = self.nav.config();
        let start = cfg.sample_free_point(rng);
        let goal = loop {
            let g = cfg.sample_free_point(rng);
            let d = (g[0] - start[0]).hypot(g[1] - start[1]);
            if !self.cfg.exclude_start_ball || d > self.cfg.goal_radius {
                break g;
            }
        };
        self.state_at(start, goal)
    }

    /// Episode with an explicit start and goal.
    pub fn state_at(&self, start: [f64; 2], goal: [f64; 2]) -> GoalState {
        GoalState {
            env: EnvState::at(start, self.nav.config().state_stack),
            goal,
            reached: false,
        }
    }

    pub fn is_done(&self, st: &GoalState) -> bool {
        st.reached || self.nav.is_done(&st.env)
    }

    /// One primitive environment step chosen by the skill controller for latent `z`.
    pub fn goal_step(&self, st: &GoalState, z: [f64; 2]) -> Result<(GoalState, GoalStep)> {
        let controller = self
            .controller
            .as_ref()
            .ok_or_else(|| Error::Env("goal task has no skill controller".into()))?;
        if self.is_done(st) {
            return Err(Error::Env("goal step after episode end".into()));
        }
        let action = controller.primitive_action(&st.env.observation(), z)?;
        let (env, tr) = self.nav.step(&st.env, action)?;
        let d = (env.pos[0] - st.goal[0]).hypot(env.pos[1] - st.goal[1]);
        let reached = d <= self.cfg.goal_radius;
        let next = GoalState {
            env,
            goal: st.goal,
            reached,
        };
        let done = self.is_done(&next);
        Ok((
            next,
            GoalStep {
                reward: if reached { 1.0 } else { 0.0 },
                cost: tr.info.cost,
                done,
                reached,
            },
        ))
    }
}
