use rand::Rng;
use serde::{Deserialize, Serialize};

use super::critic::{critic_loss, kept_atom_count, pool, tqc_target, truncated_mean, QuantileCriticEnsemble};
use super::policy::{PolicySample, SkillPolicy};
use super::replay::{Batch, ReplayBuffer};
use crate::autodiff::{AdamState, DenseTensor, Mlp};
use crate::checkpoint::{put_f64, put_u64, take_f64, take_u64, Container};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SacConfig {
    pub lr_critic: f64,
    pub lr_actor: f64,
    pub policy_frequency: usize,
    pub update_to_data: usize,
    pub batch_size: usize,
    pub gamma: f64,
    pub replay_capacity: usize,
    pub hidden: Vec<usize>,
    /// Polyak coefficient kept on the target: `target ← s·target + (1 − s)·online`.
    pub target_smoothing: f64,
    pub n_quantiles: usize,
    pub n_nets: usize,
    pub top_quantiles_to_drop: usize,
    pub initial_log_entropy_coef: f64,
    /// Uniform-random actions before this many environment steps.
    pub learning_starts: usize,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            lr_critic: 3e-4,
            lr_actor: 1e-4,
            policy_frequency: 2,
            update_to_data: 4,
            batch_size: 256,
            gamma: 0.99,
            replay_capacity: 1_000_000,
            hidden: vec![256, 256],
            target_smoothing: 0.995,
            n_quantiles: 25,
            n_nets: 3,
            top_quantiles_to_drop: 2,
            initial_log_entropy_coef: 0.0,
            learning_starts: 5_000,
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = self.lr_critic > 0.0
            && self.lr_actor > 0.0
            && self.policy_frequency > 0
            && self.update_to_data > 0
            && self.batch_size > 0
            && self.gamma >= 0.0
            && self.gamma <= 1.0
            && self.replay_capacity > 0
            && self.n_quantiles > 0
            && self.n_nets > 0;
        if !positive {
            return Err(Error::Config("SAC hyperparameters must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.target_smoothing) {
            return Err(Error::Config("target_smoothing must lie in [0, 1]".into()));
        }
        if self.top_quantiles_to_drop >= self.n_quantiles {
            return Err(Error::Config("cannot drop every quantile".into()));
        }
        Ok(())
    }

    pub fn kept_atoms(&self) -> usize {
        kept_atom_count(self.n_nets, self.n_quantiles, self.top_quantiles_to_drop)
    }
}

/// Automatically tuned entropy coefficient, stored as its logarithm.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyCoef {
    pub log_coef: f64,
    pub target_entropy: f64,
    opt: AdamState,
}

impl EntropyCoef {
    pub fn new(act_dim: usize, initial_log: f64, lr: f64) -> Self {
        Self {
            log_coef: initial_log,
            target_entropy: -(act_dim as f64),
            opt: AdamState::new("log_entropy_coef", 1, lr),
        }
    }

    pub fn coef(&self) -> f64 {
        self.log_coef.exp()
    }

    /// Loss `−log c · mean(logπ + target)` and its gradient in `log c`.
    pub fn loss_and_grad(&self, log_probs: &[f64]) -> (f64, f64) {
        let mean = log_probs.iter().map(|lp| lp + self.target_entropy).sum::<f64>()
            / log_probs.len().max(1) as f64;
        (-self.log_coef * mean, -mean)
    }

    pub fn step(&mut self, log_probs: &[f64]) -> Result<f64> {
        let (loss, g) = self.loss_and_grad(log_probs);
        let mut p = [self.log_coef];
        self.opt.step(&mut p, &[g])?;
        self.log_coef = p[0];
        Ok(loss)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct UpdateMetrics {
    pub critic_loss: f64,
    pub actor_loss: Option<f64>,
    pub entropy_loss: Option<f64>,
    pub entropy_coef: f64,
    pub mean_reward: f64,
}

/// Actor objective `mean_b[c·logπ − mean(kept atoms of Q(s, a))]` and its parameter gradient.
pub fn actor_loss_and_grad(
    policy: &SkillPolicy,
    critics: &[Mlp],
    obs: &DenseTensor,
    noise: &[f64],
    entropy_coef: f64,
    keep: usize,
) -> Result<(f64, Vec<f64>, PolicySample)> {
    let batch = obs.rows();
    let sample = policy.forward_sample(obs, noise)?;
    let critic_in = obs.hcat(&sample.actions)?;
    let outs = critics
        .iter()
        .map(|c| c.forward(&critic_in))
        .collect::<Result<Vec<_>>>()?;
    let preds: Vec<DenseTensor> = outs.iter().map(|(y, _)| y.clone()).collect();
    let pooled = pool(&preds);
    let (q, mask) = truncated_mean(&pooled, keep);
    let bf = batch as f64;
    let loss = sample
        .log_probs
        .iter()
        .zip(&q)
        .map(|(lp, q)| entropy_coef * lp - q)
        .sum::<f64>()
        / bf;

    let m = preds[0].last_dim();
    let act_dim = policy.act_dim();
    let obs_dim = obs.last_dim();
    let mut d_actions = vec![0.0; batch * act_dim];
    for (n, (c, (_, tape))) in critics.iter().zip(&outs).enumerate() {
        let mut up = vec![0.0; batch * m];
        for b in 0..batch {
            for k in 0..m {
                up[b * m + k] = -mask.row(b)[n * m + k] / bf;
            }
        }
        let g_in = c.input_gradient(tape, &DenseTensor::matrix(batch, m, up)?)?;
        for b in 0..batch {
            for i in 0..act_dim {
                d_actions[b * act_dim + i] += g_in.row(b)[obs_dim + i];
            }
        }
    }
    let mut grad = vec![0.0; policy.net().num_params()];
    policy.backward_sample(
        &sample,
        &DenseTensor::matrix(batch, act_dim, d_actions)?,
        &vec![entropy_coef / bf; batch],
        &mut grad,
    )?;
    Ok((loss, grad, sample))
}

/// Soft actor-critic with truncated quantile critics.
#[derive(Debug, Clone, PartialEq)]
pub struct SacAgent {
    cfg: SacConfig,
    pub policy: SkillPolicy,
    pub critics: QuantileCriticEnsemble,
    pub entropy: EntropyCoef,
    actor_opt: AdamState,
    critic_opts: Vec<AdamState>,
    updates: u64,
}

impl SacAgent {
    /// `obs_dim` is the full policy input width (observation plus conditioning slots).
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, act_dim: usize, cfg: SacConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let policy = SkillPolicy::new(obs_dim, act_dim, &cfg.hidden, rng)?;
        let critics = QuantileCriticEnsemble::new(
            obs_dim + act_dim,
            &cfg.hidden,
            cfg.n_nets,
            cfg.n_quantiles,
            rng,
        )?;
        let actor_opt = AdamState::new("actor", policy.net().num_params(), cfg.lr_actor);
        let critic_opts = critics
            .nets()
            .iter()
            .enumerate()
            .map(|(i, n)| AdamState::new(format!("critic{i}"), n.num_params(), cfg.lr_critic))
            .collect();
        let entropy = EntropyCoef::new(act_dim, cfg.initial_log_entropy_coef, cfg.lr_critic);
        Ok(Self {
            cfg,
            policy,
            critics,
            entropy,
            actor_opt,
            critic_opts,
            updates: 0,
        })
    }

    pub fn config(&self) -> &SacConfig {
        &self.cfg
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// One critic regression step on `batch` with externally computed rewards.
    pub fn critic_update<R: Rng + ?Sized>(
        &mut self,
        batch: &Batch,
        rewards: &[f64],
        rng: &mut R,
    ) -> Result<f64> {
        let obs = batch.policy_input()?;
        let next = batch.next_policy_input()?;
        let noise = self.policy.sample_noise(next.rows(), rng);
        let next_sample = self.policy.forward_sample(&next, &noise)?;
        let next_in = next.hcat(&next_sample.actions)?;
        let pooled = self.critics.target_atoms(&next_in)?;
        let targets = tqc_target(
            &pooled,
            rewards,
            &batch.terminal,
            &next_sample.log_probs,
            self.entropy.coef(),
            self.cfg.gamma,
            self.cfg.n_nets,
            self.cfg.top_quantiles_to_drop,
        )?;
        let critic_in = obs.hcat(&batch.action)?;
        let outs = self.critics.forward(&critic_in)?;
        let preds: Vec<DenseTensor> = outs.iter().map(|(y, _)| y.clone()).collect();
        let (loss, grads) = critic_loss(&preds, &targets)?;
        for (i, ((_, tape), g)) in outs.iter().zip(&grads).enumerate() {
            let net = &mut self.critics.nets_mut()[i];
            let mut pg = vec![0.0; net.num_params()];
            net.backward_into(tape, g, &mut pg)?;
            self.critic_opts[i].step(net.params_mut(), &pg)?;
        }
        Ok(loss)
    }

    /// Actor step followed by an entropy-coefficient step on the same samples.
    pub fn actor_and_entropy_step<R: Rng + ?Sized>(
        &mut self,
        batch: &Batch,
        rng: &mut R,
    ) -> Result<(f64, f64)> {
        let obs = batch.policy_input()?;
        let noise = self.policy.sample_noise(obs.rows(), rng);
        let (loss, grad, sample) = actor_loss_and_grad(
            &self.policy,
            self.critics.nets(),
            &obs,
            &noise,
            self.entropy.coef(),
            self.cfg.kept_atoms(),
        )?;
        self.actor_opt.step(self.policy.net_mut().params_mut(), &grad)?;
        let ent_loss = self.entropy.step(&sample.log_probs)?;
        Ok((loss, ent_loss))
    }

    /// One gradient update: critics always, actor every `policy_frequency` updates.
    pub fn update<R: Rng + ?Sized>(
        &mut self,
        batch: &Batch,
        rewards: &[f64],
        rng: &mut R,
    ) -> Result<UpdateMetrics> {
        if let Some(i) = rewards.iter().position(|r| !r.is_finite()) {
            return Err(Error::NonFinite(format!("reward {i} of sampled batch")));
        }
        let critic_loss = self.critic_update(batch, rewards, rng)?;
        self.updates += 1;
        let (mut actor_loss, mut entropy_loss) = (None, None);
        if self.updates.is_multiple_of(self.cfg.policy_frequency as u64) {
            let (a, e) = self.actor_and_entropy_step(batch, rng)?;
            actor_loss = Some(a);
            entropy_loss = Some(e);
        }
        self.critics.soft_update(self.cfg.target_smoothing);
        Ok(UpdateMetrics {
            critic_loss,
            actor_loss,
            entropy_loss,
            entropy_coef: self.entropy.coef(),
            mean_reward: rewards.iter().sum::<f64>() / rewards.len().max(1) as f64,
        })
    }

    /// `update_to_data` updates on fresh uniform batches; `reward_fn` relabels each batch.
    pub fn train_step<R, F>(
        &mut self,
        replay: &ReplayBuffer,
        mut reward_fn: F,
        rng: &mut R,
    ) -> Result<UpdateMetrics>
    where
        R: Rng + ?Sized,
        F: FnMut(&Batch) -> Result<Vec<f64>>,
    {
        if replay.len() < self.cfg.batch_size {
            return Err(Error::invalid(format!(
                "replay holds {} transitions, batch needs {}",
                replay.len(),
                self.cfg.batch_size
            )));
        }
        let mut last = UpdateMetrics::default();
        let mut actor = None;
        let mut ent = None;
        for _ in 0..self.cfg.update_to_data {
            let batch = replay.sample(self.cfg.batch_size, rng)?;
            let rewards = reward_fn(&batch)?;
            if rewards.len() != batch.len() {
                return Err(Error::shape("reward_fn returned the wrong number of rewards"));
            }
            last = self.update(&batch, &rewards, rng)?;
            actor = last.actor_loss.or(actor);
            ent = last.entropy_loss.or(ent);
        }
        last.actor_loss = actor;
        last.entropy_loss = ent;
        Ok(last)
    }

    pub fn save_into(&self, c: &mut Container, prefix: &str) {
        let mut nets = Vec::new();
        self.policy.net().write_fragment(&mut nets);
        for n in self.critics.nets().iter().chain(self.critics.targets()) {
            n.write_fragment(&mut nets);
        }
        c.insert(format!("{prefix}.nets"), nets);

        let mut opt = Vec::new();
        self.actor_opt.write(&mut opt);
        for o in &self.critic_opts {
            o.write(&mut opt);
        }
        self.entropy.opt.write(&mut opt);
        put_f64(&mut opt, self.entropy.log_coef);
        put_f64(&mut opt, self.entropy.target_entropy);
        put_u64(&mut opt, self.updates);
        c.insert(format!("{prefix}.optim"), opt);
        c.insert(
            format!("{prefix}.config"),
            serde_json::to_vec(&self.cfg).expect("config serializes"),
        );
    }

    pub fn load_from(c: &Container, prefix: &str) -> Result<Self> {
        let cfg: SacConfig = serde_json::from_slice(c.get(&format!("{prefix}.config"))?)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut nets = c.get(&format!("{prefix}.nets"))?;
        let policy = SkillPolicy::from_net(Mlp::read_fragment(&mut nets)?)?;
        let mut online = Vec::new();
        let mut targets = Vec::new();
        for _ in 0..cfg.n_nets {
            online.push(Mlp::read_fragment(&mut nets)?);
        }
        for _ in 0..cfg.n_nets {
            targets.push(Mlp::read_fragment(&mut nets)?);
        }
        let critics = QuantileCriticEnsemble::from_parts(online, targets)?;
        let mut opt = c.get(&format!("{prefix}.optim"))?;
        let actor_opt = AdamState::read(&mut opt)?;
        let critic_opts = (0..cfg.n_nets)
            .map(|_| AdamState::read(&mut opt))
            .collect::<Result<Vec<_>>>()?;
        let ent_opt = AdamState::read(&mut opt)?;
        let log_coef = take_f64(&mut opt)?;
        let target_entropy = take_f64(&mut opt)?;
        let updates = take_u64(&mut opt)?;
        Ok(Self {
            cfg,
            policy,
            critics,
            entropy: EntropyCoef {
                log_coef,
                target_entropy,
                opt: ent_opt,
            },
            actor_opt,
            critic_opts,
            updates,
        })
    }
}
