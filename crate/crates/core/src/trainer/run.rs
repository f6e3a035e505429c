use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    augment_observation, combined_reward, config_hash, AlphaMode, AlphaSchedule, Mode, ObsLayout, SkillController,
    TeacherConfig, TrainerConfig,
};
use crate::envs::{EnvState, Nav2d};
use crate::error::{Error, Result};
use crate::evaluation::{rollout_skills, skill_metrics, SkillMetrics, SkillRollout};
use crate::preference::{
    import_human_labels, sample_queries, simulated_label, PreferenceBuffer, QueryPair, RewardEnsemble, Teacher,
    TrainReport,
};
use crate::sac::{ActionMode, Batch, ReplayBuffer, SacAgent, TransitionRecord};
use crate::skills::{PhiNetwork, SkillSpace};

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Episode {
    pub state: EnvState,
    pub z: Vec<f64>,
    pub alpha: f64,
}

/// Running sums since the last metrics row.
#[derive(Debug, Clone, Default, PartialEq)]
pub(crate) struct Window {
    pub steps: u64,
    pub alpha: f64,
    pub cost: f64,
    pub gt_reward: f64,
    pub reward_rows: u64,
    pub r_dsd: f64,
    pub r_ha: f64,
    pub updates: u64,
    pub critic_loss: f64,
    pub actor_updates: u64,
    pub actor_loss: f64,
    pub entropy_coef: f64,
    pub phi_updates: u64,
    pub phi_objective: f64,
    pub slack: f64,
    pub lambda: f64,
}

impl Window {
    pub(crate) const FIELDS: usize = 16;

    pub(crate) fn as_array(&self) -> [f64; Self::FIELDS] {
        [
            self.steps as f64,
            self.alpha,
            self.cost,
            self.gt_reward,
            self.reward_rows as f64,
            self.r_dsd,
            self.r_ha,
            self.updates as f64,
            self.critic_loss,
            self.actor_updates as f64,
            self.actor_loss,
            self.entropy_coef,
            self.phi_updates as f64,
            self.phi_objective,
            self.slack,
            self.lambda,
        ]
    }

    pub(crate) fn from_array(a: &[f64]) -> Self {
        Self {
            steps: a[0] as u64,
            alpha: a[1],
            cost: a[2],
            gt_reward: a[3],
            reward_rows: a[4] as u64,
            r_dsd: a[5],
            r_ha: a[6],
            updates: a[7] as u64,
            critic_loss: a[8],
            actor_updates: a[9] as u64,
            actor_loss: a[10],
            entropy_coef: a[11],
            phi_updates: a[12] as u64,
            phi_objective: a[13],
            slack: a[14],
            lambda: a[15],
        }
    }
}

/// One metrics log line; NaN marks a quantity with no samples in the window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub step: u64,
    pub alpha: f64,
    pub r_dsd: f64,
    pub r_ha: f64,
    pub lambda: f64,
    pub slack: f64,
    pub phi_objective: f64,
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub entropy_coef: f64,
    pub cost: f64,
    pub gt_reward: f64,
    pub labels: u64,
    pub reward_train_accuracy: f64,
    pub reward_heldout_accuracy: f64,
}

impl MetricsRow {
    pub const HEADER: &'static str = "step,alpha,r_dsd,r_ha,lambda,slack,phi_objective,critic_loss,actor_loss,\
entropy_coef,cost,gt_reward,labels,reward_train_accuracy,reward_heldout_accuracy";
    pub(crate) const FIELDS: usize = 15;

    pub(crate) fn as_array(&self) -> [f64; Self::FIELDS] {
        [
            self.step as f64,
            self.alpha,
            self.r_dsd,
            self.r_ha,
            self.lambda,
            self.slack,
            self.phi_objective,
            self.critic_loss,
            self.actor_loss,
            self.entropy_coef,
            self.cost,
            self.gt_reward,
            self.labels as f64,
            self.reward_train_accuracy,
            self.reward_heldout_accuracy,
        ]
    }

    pub(crate) fn from_array(a: &[f64]) -> Self {
        Self {
            step: a[0] as u64,
            alpha: a[1],
            r_dsd: a[2],
            r_ha: a[3],
            lambda: a[4],
            slack: a[5],
            phi_objective: a[6],
            critic_loss: a[7],
            actor_loss: a[8],
            entropy_coef: a[9],
            cost: a[10],
            gt_reward: a[11],
            labels: a[12] as u64,
            reward_train_accuracy: a[13],
            reward_heldout_accuracy: a[14],
        }
    }

    pub fn csv_line(&self) -> String {
        let a = self.as_array();
        let mut cells = vec![self.step.to_string()];
        cells.extend(a[1..12].iter().map(|&v| fmt_f64(v)));
        cells.push(self.labels.to_string());
        cells.extend(a[13..].iter().map(|&v| fmt_f64(v)));
        cells.join(",")
    }
}

/// Outcome of one feedback session.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SessionReport {
    pub step: u64,
    pub session: u64,
    pub queries: u64,
    pub labeled: u64,
    pub total_labels: u64,
    pub loss: f64,
    pub train_accuracy: f64,
    pub heldout_accuracy: f64,
    pub epochs: u64,
}

impl SessionReport {
    pub const HEADER: &'static str =
        "step,session,queries,labeled,total_labels,loss,train_accuracy,heldout_accuracy,epochs";
    pub(crate) const FIELDS: usize = 9;

    pub(crate) fn as_array(&self) -> [f64; Self::FIELDS] {
        [
            self.step as f64,
            self.session as f64,
            self.queries as f64,
            self.labeled as f64,
            self.total_labels as f64,
            self.loss,
            self.train_accuracy,
            self.heldout_accuracy,
            self.epochs as f64,
        ]
    }

    pub(crate) fn from_array(a: &[f64]) -> Self {
        Self {
            step: a[0] as u64,
            session: a[1] as u64,
            queries: a[2] as u64,
            labeled: a[3] as u64,
            total_labels: a[4] as u64,
            loss: a[5],
            train_accuracy: a[6],
            heldout_accuracy: a[7],
            epochs: a[8] as u64,
        }
    }

    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.step,
            self.session,
            self.queries,
            self.labeled,
            self.total_labels,
            fmt_f64(self.loss),
            fmt_f64(self.train_accuracy),
            fmt_f64(self.heldout_accuracy),
            self.epochs
        )
    }
}

/// Shortest round-trip decimal; NaN becomes an empty cell.
pub(crate) fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v}")
    }
}

fn mean(sum: f64, n: u64) -> f64 {
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

/// A feedback session waiting for human labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PendingSession {
    pub session: u64,
    pub queries: Vec<QueryPair>,
}

/// What the last call to [`Trainer::step_once`] left behind.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepEvent {
    Continue,
    AwaitingLabels,
    Finished,
}

/// Relabeled batch rewards: `(combined, r_dsd, r_ha)`.
///
/// `fixed_alpha` overrides the stored weight slot; the reward model is queried
/// only when some row has a nonzero weight.
pub fn relabel_rewards(
    batch: &Batch,
    layout: &ObsLayout,
    phi: &PhiNetwork,
    model: Option<&RewardEnsemble>,
    fixed_alpha: Option<f64>,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let n = batch.len();
    let (z, rest) = batch.cond.split_cols(layout.skill_dim);
    let alphas: Vec<f64> = match fixed_alpha {
        Some(a) => vec![a; n],
        None if layout.mode == AlphaMode::Conditioned => (0..n).map(|i| rest.row(i)[0]).collect(),
        None => return Err(Error::invalid("fixed layout needs an explicit trade-off weight")),
    };
    let r_dsd = phi.rewards(&batch.obs, &batch.next_obs, &z)?;
    let r_ha = match model {
        Some(m) if alphas.iter().any(|&a| a != 0.0) => m.predict_batch(&batch.obs.hcat(&batch.action)?)?,
        _ => vec![0.0; n],
    };
    let combined = (0..n)
        .map(|i| combined_reward(alphas[i], r_ha[i], r_dsd[i]))
        .collect::<Result<Vec<_>>>()?;
    Ok((combined, r_dsd, r_ha))
}

/// Owns every piece of mutable training state.
#[derive(Debug)]
pub struct Trainer {
    pub(crate) cfg: TrainerConfig,
    pub(crate) hash: String,
    pub(crate) env: Nav2d,
    pub(crate) layout: ObsLayout,
    pub(crate) schedule: AlphaSchedule,
    pub(crate) space: SkillSpace,
    pub(crate) agent: SacAgent,
    pub(crate) phi: PhiNetwork,
    pub(crate) reward_model: RewardEnsemble,
    pub(crate) reward_trained: bool,
    pub(crate) teacher: Option<Teacher>,
    pub(crate) prefs: PreferenceBuffer,
    pub(crate) replay: ReplayBuffer,
    pub(crate) rng: ChaCha8Rng,
    pub(crate) step: u64,
    pub(crate) episode: Episode,
    pub(crate) labels_consumed: u64,
    pub(crate) next_query_id: u64,
    pub(crate) window: Window,
    pub(crate) last_session: Option<SessionReport>,
    pub(crate) pending: Option<PendingSession>,
    pub(crate) metrics: Vec<MetricsRow>,
    pub(crate) sessions: Vec<SessionReport>,
}

impl Trainer {
    pub fn new(cfg: TrainerConfig) -> Result<Self> {
        cfg.validate()?;
        let env = Nav2d::new(cfg.env.clone())?;
        let obs_dim = cfg.env.obs_dim();
        let layout = ObsLayout {
            obs_dim,
            skill_dim: cfg.skills.skill_dim,
            mode: cfg.mode.alpha_mode(),
        };
        let mut alpha_cfg = cfg.alpha.clone();
        if cfg.mode == Mode::Lsd {
            alpha_cfg.c = 0.0;
        }
        let schedule = AlphaSchedule::new(layout.mode, &alpha_cfg)?;
        let teacher = match &cfg.teacher {
            TeacherConfig::GroundTruth => Some(Teacher::GroundTruth),
            TeacherConfig::Model(p) => {
                let m = RewardEnsemble::load(p)?;
                if m.input_dim() != obs_dim + 2 {
                    return Err(Error::Config(format!(
                        "teacher model expects {} inputs, environment gives {}",
                        m.input_dim(),
                        obs_dim + 2
                    )));
                }
                Some(Teacher::Model(Box::new(m)))
            }
            TeacherConfig::Human => None,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let agent = SacAgent::new(layout.input_dim(), 2, cfg.sac.clone(), &mut rng)?;
        let phi = PhiNetwork::new(obs_dim, &cfg.skills, &mut rng)?;
        let reward_model = RewardEnsemble::new(obs_dim + 2, cfg.reward.clone(), &mut rng)?;
        let replay = ReplayBuffer::new(cfg.sac.replay_capacity, obs_dim, 2, layout.cond_dim())?;
        let space = SkillSpace::new(cfg.skills.skill_dim)?;
        let placeholder = Episode {
            state: env.reset_with(&mut rng),
            z: vec![0.0; layout.skill_dim],
            alpha: 0.0,
        };
        let mut t = Self {
            hash: config_hash(&cfg),
            cfg,
            env,
            layout,
            schedule,
            space,
            agent,
            phi,
            reward_model,
            reward_trained: false,
            teacher,
            prefs: PreferenceBuffer::new(),
            replay,
            rng,
            step: 0,
            episode: placeholder,
            labels_consumed: 0,
            next_query_id: 0,
            window: Window::default(),
            last_session: None,
            pending: None,
            metrics: Vec::new(),
            sessions: Vec::new(),
        };
        t.episode = t.new_episode();
        Ok(t)
    }

    pub fn config(&self) -> &TrainerConfig {
        &self.cfg
    }

    pub fn config_hash(&self) -> &str {
        &self.hash
    }

    pub fn layout(&self) -> ObsLayout {
        self.layout
    }

    pub fn schedule(&self) -> &AlphaSchedule {
        &self.schedule
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn agent(&self) -> &SacAgent {
        &self.agent
    }

    pub fn phi(&self) -> &PhiNetwork {
        &self.phi
    }

    pub fn reward_model(&self) -> &RewardEnsemble {
        &self.reward_model
    }

    /// True once at least one feedback session has fitted the reward model.
    pub fn reward_model_trained(&self) -> bool {
        self.reward_trained
    }

    pub fn preferences(&self) -> &PreferenceBuffer {
        &self.prefs
    }

    pub fn replay(&self) -> &ReplayBuffer {
        &self.replay
    }

    pub fn labels_consumed(&self) -> u64 {
        self.labels_consumed
    }

    pub fn metrics(&self) -> &[MetricsRow] {
        &self.metrics
    }

    pub fn sessions(&self) -> &[SessionReport] {
        &self.sessions
    }

    pub fn pending(&self) -> Option<&PendingSession> {
        self.pending.as_ref()
    }

    pub fn is_finished(&self) -> bool {
        self.step >= self.cfg.total_steps
    }

    /// Extends (or shortens) the run; already completed steps are kept.
    pub fn set_total_steps(&mut self, total: u64) {
        self.cfg.total_steps = total;
        self.hash = config_hash(&self.cfg);
    }

    /// Current trade-off weight of the running episode.
    pub fn current_alpha(&self) -> f64 {
        match self.layout.mode {
            AlphaMode::Fixed => self.schedule.fixed_alpha(self.step),
            AlphaMode::Conditioned => self.episode.alpha,
        }
    }

    fn new_episode(&mut self) -> Episode {
        let state = self.env.reset_with(&mut self.rng);
        let z = self.space.sample(&mut self.rng);
        let alpha = self.schedule.alpha_for_step(self.step + 1, &mut self.rng);
        Episode { state, z, alpha }
    }

    /// One environment step plus the updates and feedback scheduled after it.
    pub fn step_once(&mut self) -> Result<StepEvent> {
        if self.pending.is_some() {
            return Ok(StepEvent::AwaitingLabels);
        }
        if self.is_finished() {
            return Ok(StepEvent::Finished);
        }
        if self.env.is_done(&self.episode.state) {
            self.episode = self.new_episode();
        }
        let obs = self.episode.state.observation();
        let cond = self.layout.cond(&self.episode.z, self.episode.alpha)?;
        let action = if self.step < self.cfg.sac.learning_starts as u64 {
            [self.rng.random_range(-1.0..=1.0), self.rng.random_range(-1.0..=1.0)]
        } else {
            let x = augment_observation(&self.layout, &obs, &self.episode.z, self.episode.alpha)?;
            let (a, _) = self.agent.policy.sample_action(&x, ActionMode::Stochastic, &mut self.rng)?;
            [a[0], a[1]]
        };
        let (next, tr) = self.env.step(&self.episode.state, action)?;
        self.replay.push(TransitionRecord {
            obs,
            action: tr.action.to_vec(),
            next_obs: tr.next_obs,
            cond,
            reward: 0.0,
            gt_reward: tr.info.gt_reward,
            cost: tr.info.cost,
            done: tr.done,
            terminal: false,
        })?;
        let alpha = self.current_alpha();
        self.episode.state = next;
        self.step += 1;
        self.window.steps += 1;
        self.window.alpha += alpha;
        self.window.cost += tr.info.cost;
        self.window.gt_reward += tr.info.gt_reward;

        if self.step >= self.cfg.sac.learning_starts as u64 && self.replay.len() >= self.cfg.sac.batch_size {
            self.update()?;
        }
        let mut event = StepEvent::Continue;
        if self.cfg.mode != Mode::Lsd {
            if let Some(k) = self.cfg.feedback.session_at(self.step) {
                if self.run_session(k)? {
                    event = StepEvent::AwaitingLabels;
                }
            }
        }
        if self.step.is_multiple_of(self.cfg.log_every) || self.is_finished() {
            self.log_row();
        }
        if event == StepEvent::Continue && self.is_finished() {
            event = StepEvent::Finished;
        }
        Ok(event)
    }

    /// Steps until the run finishes or a session waits for human labels.
    pub fn run(&mut self) -> Result<StepEvent> {
        loop {
            match self.step_once()? {
                StepEvent::Continue => {}
                e => return Ok(e),
            }
        }
    }

    /// At most `n` steps; stops early on a pause or the end of the run.
    pub fn run_steps(&mut self, n: u64) -> Result<StepEvent> {
        for _ in 0..n {
            match self.step_once()? {
                StepEvent::Continue => {}
                e => return Ok(e),
            }
        }
        Ok(StepEvent::Continue)
    }

    fn update(&mut self) -> Result<()> {
        let fixed = (self.layout.mode == AlphaMode::Fixed).then(|| self.schedule.fixed_alpha(self.step));
        let model = self.reward_trained.then_some(&self.reward_model);
        let layout = self.layout;
        let phi = &self.phi;
        let window = &mut self.window;
        let mut last: Option<Batch> = None;
        let m = self.agent.train_step(
            &self.replay,
            |b| {
                let (r, d, h) = relabel_rewards(b, &layout, phi, model, fixed)?;
                window.reward_rows += b.len() as u64;
                window.r_dsd += d.iter().sum::<f64>();
                window.r_ha += h.iter().sum::<f64>();
                last = Some(b.clone());
                Ok(r)
            },
            &mut self.rng,
        )?;
        self.window.updates += 1;
        self.window.critic_loss += m.critic_loss;
        if let Some(a) = m.actor_loss {
            self.window.actor_updates += 1;
            self.window.actor_loss += a;
        }
        self.window.entropy_coef = m.entropy_coef;

        let batch = last.expect("train_step samples at least one batch");
        let (z, _) = batch.cond.split_cols(self.layout.skill_dim);
        let stats = self.phi.update(&batch.obs, &batch.next_obs, &z)?;
        self.window.phi_updates += 1;
        self.window.phi_objective += stats.objective;
        self.window.slack += stats.slack;
        self.window.lambda = stats.lambda;
        Ok(())
    }

    /// Returns true when the session waits for human labels.
    fn run_session(&mut self, k: usize) -> Result<bool> {
        let n = self.cfg.feedback.queries_for_session(k, self.labels_consumed as usize);
        if n == 0 {
            return Ok(false);
        }
        let mut pairs = sample_queries(&self.replay, self.cfg.reward.segment_len, n, self.next_query_id, &mut self.rng);
        if pairs.is_empty() {
            return Ok(false);
        }
        self.next_query_id += pairs.len() as u64;
        let Some(teacher) = &self.teacher else {
            log::info!("session {k} at step {}: waiting for {} human labels", self.step, pairs.len());
            self.pending = Some(PendingSession {
                session: k as u64,
                queries: pairs,
            });
            return Ok(true);
        };
        for p in &mut pairs {
            p.label = Some(simulated_label(p, teacher)?);
        }
        let queries = pairs.len() as u64;
        for p in pairs {
            self.prefs.push(p)?;
        }
        self.labels_consumed += queries;
        self.fit_reward(k as u64, queries, queries)?;
        Ok(false)
    }

    fn fit_reward(&mut self, session: u64, queries: u64, labeled: u64) -> Result<()> {
        let report = if self.prefs.is_empty() {
            TrainReport::default()
        } else {
            let r = self.reward_model.train(&self.prefs)?;
            self.reward_trained = true;
            r
        };
        let s = SessionReport {
            step: self.step,
            session,
            queries,
            labeled,
            total_labels: self.prefs.len() as u64,
            loss: report.loss,
            train_accuracy: report.train_accuracy,
            heldout_accuracy: report.heldout_accuracy.unwrap_or(f64::NAN),
            epochs: report.epochs as u64,
        };
        log::info!(
            "session {session} at step {}: {labeled}/{queries} labels, train acc {:.3}",
            self.step,
            s.train_accuracy
        );
        self.sessions.push(s);
        self.last_session = Some(s);
        Ok(())
    }

    /// Applies a JSON Lines label file to the waiting session and fits the
    /// reward model. Skipped queries still count against the budget.
    pub fn submit_label_file(&mut self, path: &Path) -> Result<SessionReport> {
        let pending = self
            .pending
            .as_ref()
            .ok_or_else(|| Error::invalid("no feedback session is waiting for labels"))?;
        let labeled = import_human_labels(&pending.queries, path, &mut self.prefs)? as u64;
        let pending = self.pending.take().expect("checked above");
        self.labels_consumed += pending.queries.len() as u64;
        self.fit_reward(pending.session, pending.queries.len() as u64, labeled)?;
        Ok(*self.sessions.last().expect("just pushed"))
    }

    fn log_row(&mut self) {
        let w = std::mem::take(&mut self.window);
        let (acc, held) = self
            .last_session
            .map_or((f64::NAN, f64::NAN), |s| (s.train_accuracy, s.heldout_accuracy));
        self.metrics.push(MetricsRow {
            step: self.step,
            alpha: mean(w.alpha, w.steps),
            r_dsd: mean(w.r_dsd, w.reward_rows),
            r_ha: mean(w.r_ha, w.reward_rows),
            lambda: if w.phi_updates > 0 { w.lambda } else { self.phi.dual.lambda },
            slack: mean(w.slack, w.phi_updates),
            phi_objective: mean(w.phi_objective, w.phi_updates),
            critic_loss: mean(w.critic_loss, w.updates),
            actor_loss: mean(w.actor_loss, w.actor_updates),
            entropy_coef: if w.updates > 0 { w.entropy_coef } else { self.agent.entropy.coef() },
            cost: mean(w.cost, w.steps),
            gt_reward: mean(w.gt_reward, w.steps),
            labels: self.labels_consumed,
            reward_train_accuracy: acc,
            reward_heldout_accuracy: held,
        });
    }

    pub fn metrics_csv(&self) -> String {
        let mut s = String::from(MetricsRow::HEADER);
        s.push('\n');
        for r in &self.metrics {
            s.push_str(&r.csv_line());
            s.push('\n');
        }
        s
    }

    pub fn sessions_csv(&self) -> String {
        let mut s = String::from(SessionReport::HEADER);
        s.push('\n');
        for r in &self.sessions {
            s.push_str(&r.csv_line());
            s.push('\n');
        }
        s
    }

    /// Deterministic skill controller at trade-off weight `alpha`.
    pub fn controller(&self, alpha: f64) -> Result<SkillController> {
        SkillController::new(self.agent.policy.clone(), self.layout, alpha)
    }

    /// Rolls out `cfg.eval.skills` skills at each evaluation weight.
    pub fn evaluate(&self) -> Result<Vec<SkillMetrics>> {
        let cfg = &self.cfg.eval;
        Ok(self
            .rollouts(&self.cfg.eval_alphas(), cfg.skills, cfg.seed)?
            .iter()
            .map(|(a, r)| skill_metrics(r, *a))
            .collect())
    }

    /// Skill rollouts at each weight in `alphas`, sharing skill and start draws.
    pub fn rollouts(&self, alphas: &[f64], skills: usize, seed: u64) -> Result<Vec<(f64, Vec<SkillRollout>)>> {
        alphas
            .iter()
            .map(|&a| {
                let c = self.controller(a)?;
                Ok((a, rollout_skills(&c, &self.cfg.env, skills, a, seed)?))
            })
            .collect()
    }
}

pub fn eval_csv(metrics: &[SkillMetrics]) -> String {
    let mut s = String::from("alpha,coverage,alignment,cost\n");
    for m in metrics {
        s.push_str(&format!(
            "{},{},{},{}\n",
            fmt_f64(m.alpha),
            m.coverage,
            fmt_f64(m.alignment),
            fmt_f64(m.cost)
        ));
    }
    s
}

/// Everything a finished (or paused) run produced.
#[derive(Debug)]
pub struct TrainingOutcome {
    pub trainer: Trainer,
    pub event: StepEvent,
    /// Empty when the run paused for labels or evaluation is disabled.
    pub eval: Vec<SkillMetrics>,
}

/// Names of the files a run directory holds.
pub const CHECKPOINT_FILE: &str = "checkpoint.hasd";
pub const ABORT_CHECKPOINT_FILE: &str = "abort.hasd";
pub const METRICS_FILE: &str = "metrics.csv";
pub const SESSIONS_FILE: &str = "sessions.csv";
pub const EVAL_FILE: &str = "eval.csv";
pub const PENDING_QUERIES_FILE: &str = "pending_queries.jsonl";

/// Runs `trainer` to completion or to a human-feedback pause.
///
/// With `out_dir`, periodic checkpoints, the metrics and session logs and the
/// final evaluation are written there, and any error leaves an abort
/// checkpoint behind.
pub fn run_training(mut trainer: Trainer, out_dir: Option<&Path>) -> Result<TrainingOutcome> {
    if let Some(d) = out_dir {
        std::fs::create_dir_all(d)?;
    }
    let every = trainer.cfg.checkpoint_every;
    let result = (|| -> Result<StepEvent> {
        loop {
            let chunk = if every == 0 {
                trainer.cfg.total_steps.saturating_sub(trainer.step).max(1)
            } else {
                every - trainer.step % every
            };
            let event = trainer.run_steps(chunk)?;
            if let Some(d) = out_dir {
                write_logs(&trainer, d)?;
                trainer.save(&d.join(CHECKPOINT_FILE))?;
            }
            if event != StepEvent::Continue {
                return Ok(event);
            }
        }
    })();
    let event = match result {
        Ok(e) => e,
        Err(e) => {
            if let Some(d) = out_dir {
                let p = d.join(ABORT_CHECKPOINT_FILE);
                match trainer.save(&p) {
                    Ok(()) => log::error!("training aborted at step {}; state saved to {}", trainer.step, p.display()),
                    Err(se) => log::error!("could not save abort checkpoint: {se}"),
                }
            }
            return Err(e);
        }
    };
    let mut eval = Vec::new();
    match event {
        StepEvent::AwaitingLabels => {
            if let (Some(d), Some(p)) = (out_dir, trainer.pending()) {
                crate::preference::export_queries(&p.queries, &d.join(PENDING_QUERIES_FILE))?;
            }
        }
        _ if trainer.cfg.eval.skills > 0 => {
            eval = trainer.evaluate()?;
            if let Some(d) = out_dir {
                std::fs::write(d.join(EVAL_FILE), eval_csv(&eval))?;
            }
        }
        _ => {}
    }
    Ok(TrainingOutcome { trainer, event, eval })
}

fn write_logs(t: &Trainer, dir: &Path) -> Result<()> {
    std::fs::write(dir.join(METRICS_FILE), t.metrics_csv())?;
    std::fs::write(dir.join(SESSIONS_FILE), t.sessions_csv())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::DenseTensor;
    use crate::trainer::Preset;

    pub(crate) fn tiny(mode: Mode) -> TrainerConfig {
        let mut c = TrainerConfig::preset(Preset::Acceptance, mode);
        c.total_steps = 600;
        c.log_every = 100;
        c.sac.hidden = vec![16];
        c.sac.batch_size = 32;
        c.sac.learning_starts = 100;
        c.sac.n_quantiles = 5;
        c.skills.hidden = vec![16];
        c.reward.hidden = vec![16];
        c.reward.epochs = 5;
        c.reward.segment_len = 10;
        c.feedback.start = 300;
        c.feedback.frequency = 100;
        c.feedback.sessions = 3;
        c.feedback.queries_per_session = 8;
        c.alpha.tau = 300;
        c.eval.skills = 4;
        c
    }

    #[test]
    fn budget_zero_never_queries_reward_model() {
        let mut c = tiny(Mode::Hasd);
        c.feedback.budget = Some(0);
        let mut t = Trainer::new(c).unwrap();
        t.run().unwrap();
        assert_eq!(t.reward_model().call_count(), 0);
        assert_eq!(t.labels_consumed(), 0);
        assert!(t.sessions().is_empty());
    }

    #[test]
    fn lsd_mode_collects_no_feedback() {
        let mut t = Trainer::new(tiny(Mode::Lsd)).unwrap();
        t.run().unwrap();
        assert_eq!(t.reward_model().call_count(), 0);
        assert!(t.metrics().iter().all(|r| r.alpha == 0.0));
    }

    #[test]
    fn schedule_consumes_full_budget() {
        let mut t = Trainer::new(tiny(Mode::Hasd)).unwrap();
        assert_eq!(t.run().unwrap(), StepEvent::Finished);
        assert_eq!(t.labels_consumed(), 24);
        assert_eq!(t.preferences().len(), 24);
        assert_eq!(t.sessions().iter().map(|s| s.step).collect::<Vec<_>>(), vec![300, 400, 500]);
        assert!(t.reward_model().call_count() > 0);
        let last = t.metrics().last().unwrap();
        assert_eq!(last.step, 600);
        assert!((last.alpha - 0.2).abs() < 1e-12);
    }

    #[test]
    fn conditioned_episodes_hold_alpha() {
        let mut t = Trainer::new(tiny(Mode::AlphaHasd)).unwrap();
        t.run().unwrap();
        let r = t.replay();
        let mut seen = std::collections::BTreeSet::new();
        for e in r.episodes() {
            let a0 = r.cond_at(r.slot_of(e.first))[2];
            for k in 0..e.len as u64 {
                assert_eq!(r.cond_at(r.slot_of(e.first + k))[2], a0);
            }
            // the first episodes fall inside pre-training
            if e.first + (e.len as u64) <= 300 {
                assert_eq!(a0, 0.0);
            }
            seen.insert(a0.to_bits());
        }
        assert!(seen.len() > 1);
    }

    #[test]
    fn same_seed_same_metrics() {
        let run = || {
            let mut t = Trainer::new(tiny(Mode::AlphaHasd)).unwrap();
            t.run().unwrap();
            (t.metrics_csv(), t.sessions_csv())
        };
        let (a, b) = (run(), run());
        assert_eq!(a, b);
        assert!(a.0.lines().count() == 7, "{}", a.0);
    }

    #[test]
    fn relabeling_matches_combined_reward() {
        let mut t = Trainer::new(tiny(Mode::AlphaHasd)).unwrap();
        t.run().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = t.replay().sample(64, &mut rng).unwrap();
        let (r, d, h) = relabel_rewards(&b, &t.layout(), t.phi(), Some(t.reward_model()), None).unwrap();
        for i in 0..b.len() {
            let c = b.cond.row(i);
            let phi_s = t.phi().net.predict(&DenseTensor::from_rows(&[b.obs.row(i)]).unwrap()).unwrap();
            let phi_n = t.phi().net.predict(&DenseTensor::from_rows(&[b.next_obs.row(i)]).unwrap()).unwrap();
            let dsd = crate::skills::dsd_reward(phi_s.row(0), phi_n.row(0), &c[..2]);
            assert!((d[i] - dsd).abs() < 1e-12);
            let ha = t.reward_model().predict_reward(b.obs.row(i), b.action.row(i)).unwrap();
            assert!((h[i] - ha).abs() < 1e-12);
            assert_eq!(r[i], combined_reward(c[2], h[i], d[i]).unwrap());
        }
    }

    #[test]
    fn human_teacher_pauses_and_resumes() {
        let mut c = tiny(Mode::Hasd);
        c.teacher = TeacherConfig::Human;
        let mut t = Trainer::new(c).unwrap();
        assert_eq!(t.run().unwrap(), StepEvent::AwaitingLabels);
        assert_eq!(t.step(), 300);
        let q = t.pending().unwrap().queries.clone();
        assert_eq!(q.len(), 8);
        let dir = tempfile::tempdir().unwrap();
        let lp = dir.path().join("labels.jsonl");
        let labels: Vec<_> = q
            .iter()
            .enumerate()
            .map(|(i, p)| crate::preference::LabelRecord {
                id: p.id,
                choice: if i % 4 == 0 {
                    crate::preference::Choice::Skip
                } else {
                    crate::preference::Choice::First
                },
            })
            .collect();
        crate::preference::write_labels(&labels, &lp).unwrap();
        let s = t.submit_label_file(&lp).unwrap();
        assert_eq!((s.queries, s.labeled), (8, 6));
        assert_eq!(t.labels_consumed(), 8);
        assert!(t.reward_model_trained());
        assert_eq!(t.run().unwrap(), StepEvent::AwaitingLabels);
        assert_eq!(t.step(), 400);
    }
}
