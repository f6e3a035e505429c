//! FIFO replay storage with uniform sampling and episode bookkeeping.
//!
//! Rewards are not trusted at sampling time: the stored `reward` field is what
//! the environment emitted, but learners recompute rewards from the sampled
//! `(s, a, s′, cond)` so a changing reward model relabels old data for free.

use std::collections::VecDeque;

use rand::Rng;

use crate::autodiff::DenseTensor;
use crate::error::{Error, Result};

/// One transition as handed to [`ReplayBuffer::push`].
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionRecord {
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub next_obs: Vec<f64>,
    /// Conditioning slots appended to the observation (skill, trade-off weight).
    pub cond: Vec<f64>,
    pub reward: f64,
    pub gt_reward: f64,
    pub cost: f64,
    /// Episode boundary (time limit or termination).
    pub done: bool,
    /// True termination; time-limit ends still bootstrap.
    pub terminal: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpisodeSpan {
    pub id: u64,
    /// Global insertion index of the first transition.
    pub first: u64,
    pub len: usize,
}

#[derive(Debug, Clone)]
pub struct Batch {
    pub obs: DenseTensor,
    pub action: DenseTensor,
    pub next_obs: DenseTensor,
    pub cond: DenseTensor,
    pub reward: Vec<f64>,
    pub gt_reward: Vec<f64>,
    pub terminal: Vec<bool>,
    pub indices: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Observation with conditioning slots appended.
    pub fn policy_input(&self) -> Result<DenseTensor> {
        self.obs.hcat(&self.cond)
    }

    pub fn next_policy_input(&self) -> Result<DenseTensor> {
        self.next_obs.hcat(&self.cond)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    obs_dim: usize,
    act_dim: usize,
    cond_dim: usize,
    obs: Vec<f64>,
    action: Vec<f64>,
    next_obs: Vec<f64>,
    cond: Vec<f64>,
    reward: Vec<f64>,
    gt_reward: Vec<f64>,
    cost: Vec<f64>,
    done: Vec<bool>,
    terminal: Vec<bool>,
    len: usize,
    total: u64,
    episodes: VecDeque<EpisodeSpan>,
    open_episode: Option<EpisodeSpan>,
    next_episode_id: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, obs_dim: usize, act_dim: usize, cond_dim: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::invalid("replay capacity must be positive"));
        }
        Ok(Self {
            capacity,
            obs_dim,
            act_dim,
            cond_dim,
            obs: Vec::new(),
            action: Vec::new(),
            next_obs: Vec::new(),
            cond: Vec::new(),
            reward: Vec::new(),
            gt_reward: Vec::new(),
            cost: Vec::new(),
            done: Vec::new(),
            terminal: Vec::new(),
            len: 0,
            total: 0,
            episodes: VecDeque::new(),
            open_episode: None,
            next_episode_id: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn total_inserted(&self) -> u64 {
        self.total
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.obs_dim, self.act_dim, self.cond_dim)
    }

    fn write_slot<T: Copy>(v: &mut Vec<T>, slot: usize, width: usize, data: &[T]) {
        if v.len() < (slot + 1) * width {
            v.extend_from_slice(data);
        } else {
            v[slot * width..(slot + 1) * width].copy_from_slice(data);
        }
    }

    pub fn push(&mut self, t: TransitionRecord) -> Result<()> {
        if t.obs.len() != self.obs_dim
            || t.next_obs.len() != self.obs_dim
            || t.action.len() != self.act_dim
            || t.cond.len() != self.cond_dim
        {
            return Err(Error::shape(format!(
                "transition dims ({}, {}, {}) do not match buffer ({}, {}, {})",
                t.obs.len(),
                t.action.len(),
                t.cond.len(),
                self.obs_dim,
                self.act_dim,
                self.cond_dim
            )));
        }
        let slot = (self.total % self.capacity as u64) as usize;
        Self::write_slot(&mut self.obs, slot, self.obs_dim, &t.obs);
        Self::write_slot(&mut self.action, slot, self.act_dim, &t.action);
        Self::write_slot(&mut self.next_obs, slot, self.obs_dim, &t.next_obs);
        Self::write_slot(&mut self.cond, slot, self.cond_dim, &t.cond);
        Self::write_slot(&mut self.reward, slot, 1, &[t.reward]);
        Self::write_slot(&mut self.gt_reward, slot, 1, &[t.gt_reward]);
        Self::write_slot(&mut self.cost, slot, 1, &[t.cost]);
        Self::write_slot(&mut self.done, slot, 1, &[t.done]);
        Self::write_slot(&mut self.terminal, slot, 1, &[t.terminal]);

        let span = self.open_episode.get_or_insert_with(|| {
            let id = self.next_episode_id;
            self.next_episode_id += 1;
            EpisodeSpan {
                id,
                first: self.total,
                len: 0,
            }
        });
        span.len += 1;
        self.total += 1;
        self.len = (self.len + 1).min(self.capacity);
        if t.done {
            let span = self.open_episode.take().unwrap();
            self.episodes.push_back(span);
        }
        // forget episodes whose first transition has been overwritten
        let oldest = self.total.saturating_sub(self.capacity as u64);
        while self.episodes.front().is_some_and(|e| e.first < oldest) {
            self.episodes.pop_front();
        }
        Ok(())
    }

    /// Completed episodes whose transitions are all still stored, oldest first.
    pub fn episodes(&self) -> impl Iterator<Item = &EpisodeSpan> {
        self.episodes.iter()
    }

    pub fn slot_of(&self, global: u64) -> usize {
        (global % self.capacity as u64) as usize
    }

    pub fn obs_at(&self, slot: usize) -> &[f64] {
        &self.obs[slot * self.obs_dim..(slot + 1) * self.obs_dim]
    }

    pub fn next_obs_at(&self, slot: usize) -> &[f64] {
        &self.next_obs[slot * self.obs_dim..(slot + 1) * self.obs_dim]
    }

    pub fn action_at(&self, slot: usize) -> &[f64] {
        &self.action[slot * self.act_dim..(slot + 1) * self.act_dim]
    }

    pub fn cond_at(&self, slot: usize) -> &[f64] {
        &self.cond[slot * self.cond_dim..(slot + 1) * self.cond_dim]
    }

    pub fn gt_reward_at(&self, slot: usize) -> f64 {
        self.gt_reward[slot]
    }

    pub fn cost_at(&self, slot: usize) -> f64 {
        self.cost[slot]
    }

    pub fn reward_at(&self, slot: usize) -> f64 {
        self.reward[slot]
    }

    pub fn gather(&self, indices: &[usize]) -> Result<Batch> {
        let n = indices.len();
        let mut obs = Vec::with_capacity(n * self.obs_dim);
        let mut action = Vec::with_capacity(n * self.act_dim);
        let mut next_obs = Vec::with_capacity(n * self.obs_dim);
        let mut cond = Vec::with_capacity(n * self.cond_dim);
        let mut reward = Vec::with_capacity(n);
        let mut gt_reward = Vec::with_capacity(n);
        let mut terminal = Vec::with_capacity(n);
        for &i in indices {
            if i >= self.len {
                return Err(Error::invalid(format!("replay index {i} >= len {}", self.len)));
            }
            obs.extend_from_slice(self.obs_at(i));
            action.extend_from_slice(self.action_at(i));
            next_obs.extend_from_slice(self.next_obs_at(i));
            cond.extend_from_slice(self.cond_at(i));
            reward.push(self.reward[i]);
            gt_reward.push(self.gt_reward[i]);
            terminal.push(self.terminal[i]);
        }
        Ok(Batch {
            obs: DenseTensor::matrix(n, self.obs_dim, obs)?,
            action: DenseTensor::matrix(n, self.act_dim, action)?,
            next_obs: DenseTensor::matrix(n, self.obs_dim, next_obs)?,
            cond: DenseTensor::matrix(n, self.cond_dim, cond)?,
            reward,
            gt_reward,
            terminal,
            indices: indices.to_vec(),
        })
    }

    /// Uniform sample with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Batch> {
        if self.len == 0 {
            return Err(Error::invalid("sampling from an empty replay buffer"));
        }
        let idx: Vec<usize> = (0..batch).map(|_| rng.random_range(0..self.len)).collect();
        self.gather(&idx)
    }

    pub(crate) fn write(&self, out: &mut Vec<u8>) {
        use crate::checkpoint::{put_f64s, put_u64, put_u8};
        for v in [self.capacity, self.obs_dim, self.act_dim, self.cond_dim, self.len] {
            put_u64(out, v as u64);
        }
        put_u64(out, self.total);
        put_u64(out, self.next_episode_id);
        for v in [
            &self.obs,
            &self.action,
            &self.next_obs,
            &self.cond,
            &self.reward,
            &self.gt_reward,
            &self.cost,
        ] {
            put_f64s(out, v);
        }
        for v in [&self.done, &self.terminal] {
            put_u64(out, v.len() as u64);
            out.extend(v.iter().map(|&b| b as u8));
        }
        let spans: Vec<EpisodeSpan> = self.episodes.iter().copied().collect();
        put_u64(out, spans.len() as u64);
        for s in spans {
            put_u64(out, s.id);
            put_u64(out, s.first);
            put_u64(out, s.len as u64);
        }
        match self.open_episode {
            Some(s) => {
                put_u8(out, 1);
                put_u64(out, s.id);
                put_u64(out, s.first);
                put_u64(out, s.len as u64);
            }
            None => put_u8(out, 0),
        }
    }

    pub(crate) fn read(bytes: &mut &[u8]) -> Result<Self> {
        use crate::checkpoint::{take_f64s, take_u64, take_u8};
        let mut dims = [0usize; 5];
        for d in dims.iter_mut() {
            *d = take_u64(bytes)? as usize;
        }
        let mut rb = ReplayBuffer::new(dims[0], dims[1], dims[2], dims[3])?;
        rb.len = dims[4];
        rb.total = take_u64(bytes)?;
        rb.next_episode_id = take_u64(bytes)?;
        rb.obs = take_f64s(bytes)?;
        rb.action = take_f64s(bytes)?;
        rb.next_obs = take_f64s(bytes)?;
        rb.cond = take_f64s(bytes)?;
        rb.reward = take_f64s(bytes)?;
        rb.gt_reward = take_f64s(bytes)?;
        rb.cost = take_f64s(bytes)?;
        for target in [&mut rb.done, &mut rb.terminal] {
            let n = take_u64(bytes)? as usize;
            for _ in 0..n {
                target.push(take_u8(bytes)? != 0);
            }
        }
        let spans = take_u64(bytes)?;
        for _ in 0..spans {
            rb.episodes.push_back(EpisodeSpan {
                id: take_u64(bytes)?,
                first: take_u64(bytes)?,
                len: take_u64(bytes)? as usize,
            });
        }
        if take_u8(bytes)? == 1 {
            rb.open_episode = Some(EpisodeSpan {
                id: take_u64(bytes)?,
                first: take_u64(bytes)?,
                len: take_u64(bytes)? as usize,
            });
        }
        if rb.reward.len() != rb.len || rb.obs.len() != rb.len * rb.obs_dim {
            return Err(Error::Checkpoint("replay arrays inconsistent with length".into()));
        }
        Ok(rb)
    }
}
