//! Goal reaching with a meta-controller whose actions are skill latents, each
//! executed for a single environment step by a frozen skill policy.

use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{DenseTensor, Mlp};
use crate::checkpoint::{put_f64, take_f64, Container};
use crate::envs::{GoalEnv, GoalState, GoalTaskConfig, Nav2dConfig};
use crate::error::{Error, Result};
use crate::parallel;
use crate::sac::{ActionMode, ReplayBuffer, SacAgent, SacConfig, SkillPolicy, TransitionRecord};
use crate::trainer::{Mode, ObsLayout, Preset, SkillController, Trainer, TrainerConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetaControllerConfig {
    pub seed: u64,
    pub total_steps: u64,
    /// Trade-off weight the skills are interpreted at; `None` picks `c` for
    /// human-aligned checkpoints and 0 for the baseline.
    pub skill_alpha: Option<f64>,
    pub goal: GoalTaskConfig,
    pub sac: SacConfig,
    pub eval_goals: usize,
    pub eval_seed: u64,
}

impl Default for MetaControllerConfig {
    fn default() -> Self {
        Self::preset(Preset::Desk)
    }
}

impl MetaControllerConfig {
    pub fn preset(preset: Preset) -> Self {
        let mut sac = SacConfig {
            lr_critic: 3e-3,
            lr_actor: 1e-3,
            update_to_data: 1,
            ..Default::default()
        };
        let (total_steps, eval_goals) = match preset {
            Preset::Paper => (500_000, 1000),
            Preset::Desk => {
                sac.learning_starts = 1_000;
                (100_000, 1000)
            }
            Preset::Acceptance => {
                sac.learning_starts = 1_000;
                sac.hidden = vec![64, 64];
                sac.batch_size = 64;
                sac.replay_capacity = 100_000;
                (100_000, 200)
            }
        };
        Self {
            seed: 0,
            total_steps,
            skill_alpha: None,
            goal: GoalTaskConfig::default(),
            sac,
            eval_goals,
            eval_seed: 1,
        }
    }
}

/// `c` for human-aligned runs, 0 for the skill-discovery baseline.
pub fn default_skill_alpha(cfg: &TrainerConfig) -> f64 {
    match cfg.mode {
        Mode::Lsd => 0.0,
        Mode::Hasd | Mode::AlphaHasd => cfg.alpha.c,
    }
}

/// Frozen skills taken from a skill-training checkpoint.
pub fn skills_from_trainer(t: &Trainer, alpha: Option<f64>) -> Result<SkillController> {
    t.controller(alpha.unwrap_or_else(|| default_skill_alpha(t.config())))
}

/// One primitive transition chosen by the skill policy for meta-action `z`.
pub fn meta_step(env: &GoalEnv, st: &GoalState, z: [f64; 2]) -> Result<(GoalState, crate::envs::GoalStep)> {
    env.goal_step(st, z)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetaEval {
    pub goals: usize,
    /// Percentage of episodes that reached the goal.
    pub goal_rate: f64,
    /// Mean hazard steps per episode.
    pub mean_cost: f64,
}

/// A trained meta-controller together with the skills it drives.
#[derive(Debug, Clone)]
pub struct MetaController {
    pub cfg: MetaControllerConfig,
    pub env_cfg: Nav2dConfig,
    pub agent: SacAgent,
    pub skills: SkillController,
    layout: ObsLayout,
}

impl MetaController {
    fn env(&self) -> Result<GoalEnv> {
        Ok(GoalEnv::new(self.cfg.goal.clone(), self.env_cfg.clone())?.with_controller(Arc::new(self.skills.clone())))
    }

    /// Deterministic meta-action for a goal-task observation.
    pub fn meta_action(&self, obs: &[f64]) -> Result<[f64; 2]> {
        let a = self.agent.policy.deterministic(&DenseTensor::matrix(1, obs.len(), obs.to_vec())?)?;
        Ok([a.data()[0], a.data()[1]])
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut c = Container::new();
        c.insert("downstream.config", serde_json::to_vec(&self.cfg)?);
        c.insert("downstream.env", serde_json::to_vec(&self.env_cfg)?);
        self.agent.save_into(&mut c, "meta");
        let mut b = Vec::new();
        self.skills.policy().net().write_fragment(&mut b);
        put_f64(&mut b, self.skills.alpha());
        c.insert("skills.policy", b);
        c.insert("skills.layout", serde_json::to_vec(&self.layout)?);
        c.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c = Container::load(path)?;
        let bad = |e: serde_json::Error| Error::Checkpoint(e.to_string());
        let cfg: MetaControllerConfig = serde_json::from_slice(c.get("downstream.config")?).map_err(bad)?;
        let env_cfg: Nav2dConfig = serde_json::from_slice(c.get("downstream.env")?).map_err(bad)?;
        let layout: ObsLayout = serde_json::from_slice(c.get("skills.layout")?).map_err(bad)?;
        let agent = SacAgent::load_from(&c, "meta")?;
        let mut b = c.get("skills.policy")?;
        let policy = SkillPolicy::from_net(Mlp::read_fragment(&mut b)?)?;
        let alpha = take_f64(&mut b)?;
        Ok(Self {
            cfg,
            env_cfg,
            agent,
            skills: SkillController::new(policy, layout, alpha)?,
            layout,
        })
    }
}

/// Trains a meta-controller on the sparse goal task over frozen `skills`.
///
/// `env_cfg` is the skill environment; the goal task forces random starts.
pub fn train_meta(skills: SkillController, env_cfg: &Nav2dConfig, cfg: &MetaControllerConfig) -> Result<MetaController> {
    let layout = skills.layout();
    let env = GoalEnv::new(cfg.goal.clone(), env_cfg.clone())?.with_controller(Arc::new(skills.clone()));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let obs_dim = env.obs_dim();
    let mut agent = SacAgent::new(obs_dim, 2, cfg.sac.clone(), &mut rng)?;
    let mut replay = ReplayBuffer::new(cfg.sac.replay_capacity, obs_dim, 2, 0)?;
    let mut st = env.goal_reset_with(&mut rng);
    let (mut episodes, mut reached) = (0u64, 0u64);
    for step in 0..cfg.total_steps {
        let obs = st.observation();
        let z = if step < cfg.sac.learning_starts as u64 {
            [rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)]
        } else {
            let (a, _) = agent.policy.sample_action(&obs, ActionMode::Stochastic, &mut rng)?;
            [a[0], a[1]]
        };
        let (next, out) = meta_step(&env, &st, z)?;
        replay.push(TransitionRecord {
            obs,
            action: z.to_vec(),
            next_obs: next.observation(),
            cond: Vec::new(),
            reward: out.reward,
            gt_reward: out.reward,
            cost: out.cost,
            done: out.done,
            terminal: out.reached,
        })?;
        st = next;
        if out.done {
            episodes += 1;
            reached += out.reached as u64;
            st = env.goal_reset_with(&mut rng);
        }
        if step + 1 >= cfg.sac.learning_starts as u64 && replay.len() >= cfg.sac.batch_size {
            agent.train_step(&replay, |b| Ok(b.reward.clone()), &mut rng)?;
        }
    }
    log::info!(
        "meta-controller: {episodes} training episodes, {reached} reached the goal"
    );
    Ok(MetaController {
        cfg: cfg.clone(),
        env_cfg: env_cfg.clone(),
        agent,
        skills,
        layout,
    })
}

/// Deterministic meta-policy on `n` goals; goal `i` depends only on `(seed, i)`.
pub fn eval_meta(meta: &MetaController, n: usize, seed: u64) -> Result<MetaEval> {
    let env = meta.env()?;
    eval_with(&env, n, seed, |obs| meta.meta_action(obs))
}

/// Shared evaluation loop; `policy` maps a goal-task observation to `z`.
pub fn eval_with<F>(env: &GoalEnv, n: usize, seed: u64, policy: F) -> Result<MetaEval>
where
    F: Fn(&[f64]) -> Result<[f64; 2]> + Sync,
{
    let outcomes = parallel::map_range(n, |i| -> Result<(bool, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x2545_f491_4f6c_dd1d) ^ i as u64);
        let mut st = env.goal_reset_with(&mut rng);
        let mut cost = 0.0;
        while !env.is_done(&st) {
            let (next, out) = env.goal_step(&st, policy(&st.observation())?)?;
            cost += out.cost;
            st = next;
        }
        Ok((st.reached, cost))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let k = n.max(1) as f64;
    Ok(MetaEval {
        goals: n,
        goal_rate: 100.0 * outcomes.iter().filter(|o| o.0).count() as f64 / k,
        mean_cost: outcomes.iter().map(|o| o.1).sum::<f64>() / k,
    })
}

/// One row of the downstream results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DownstreamResult {
    pub method: String,
    pub score: f64,
    pub cost: f64,
    pub seed: u64,
}

pub fn results_csv(rows: &[DownstreamResult]) -> String {
    let mut s = String::from("method,score,cost,seed\n");
    for r in rows {
        s.push_str(&format!("{},{},{},{}\n", r.method, r.score, r.cost, r.seed));
    }
    s
}
