//! Preference-based reward learning: segments, query scheduling, a simulated
//! teacher, Bradley-Terry ensembles and the JSON Lines labeling interchange.

mod io;
mod model;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{put_f64s, put_u64, put_u8, take_f64s, take_u64, take_u8};
use crate::error::{Error, Result};
use crate::sac::ReplayBuffer;

pub use io::{
    export_queries, fit_reward_from_labels, import_human_labels, read_labels, read_queries, write_labels, Choice, LabelRecord,
    QueryMeta, QueryRecord, SegmentRecord,
};
pub use model::{bt_probability, reward_loss, RewardEnsemble, TrainReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub lr: f64,
    pub minibatch: usize,
    pub ensemble_size: usize,
    pub segment_len: usize,
    pub hidden: Vec<usize>,
    /// Upper bound on epochs per feedback session.
    pub epochs: usize,
    /// Stop a member early once its training accuracy reaches this.
    pub early_stop_accuracy: f64,
    pub heldout_fraction: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            minibatch: 128,
            ensemble_size: 3,
            segment_len: 25,
            hidden: vec![256, 256],
            epochs: 50,
            early_stop_accuracy: 0.97,
            heldout_fraction: 0.1,
        }
    }
}

/// A fixed-length window of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    /// Per-step ground-truth rewards; empty for segments read back from disk.
    pub gt_rewards: Vec<f64>,
    pub episode: u64,
    pub start: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn gt_return(&self) -> f64 {
        self.gt_rewards.iter().sum()
    }

    /// Rows of `state ⊕ action`.
    pub fn inputs(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        self.states.iter().zip(&self.actions).map(|(s, a)| {
            let mut row = s.clone();
            row.extend_from_slice(a);
            row
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Label {
    First,
    Second,
    Tie,
}

impl Label {
    /// Target distribution `(y₁, y₂)`.
    pub fn target(self) -> (f64, f64) {
        match self {
            Label::First => (1.0, 0.0),
            Label::Second => (0.0, 1.0),
            Label::Tie => (0.5, 0.5),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    Simulated,
    Human,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryPair {
    pub id: u64,
    pub seg1: Segment,
    pub seg2: Segment,
    pub label: Option<Label>,
    pub source: LabelSource,
}

impl QueryPair {
    pub fn new(id: u64, seg1: Segment, seg2: Segment) -> Result<Self> {
        if seg1.len() != seg2.len() {
            return Err(Error::invalid(format!(
                "query {id}: segment lengths {} and {} differ",
                seg1.len(),
                seg2.len()
            )));
        }
        Ok(Self {
            id,
            seg1,
            seg2,
            label: None,
            source: LabelSource::Simulated,
        })
    }

    pub fn swapped(&self) -> Self {
        Self {
            id: self.id,
            seg1: self.seg2.clone(),
            seg2: self.seg1.clone(),
            label: self.label.map(|l| match l {
                Label::First => Label::Second,
                Label::Second => Label::First,
                Label::Tie => Label::Tie,
            }),
            source: self.source,
        }
    }
}

/// Append-only store of labeled pairs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PreferenceBuffer {
    pairs: Vec<QueryPair>,
}

impl PreferenceBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, pair: QueryPair) -> Result<()> {
        if pair.label.is_none() {
            return Err(Error::invalid(format!("query {} has no label", pair.id)));
        }
        self.pairs.push(pair);
        Ok(())
    }

    pub fn pairs(&self) -> &[QueryPair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub(crate) fn write(&self, out: &mut Vec<u8>) {
        fn seg(out: &mut Vec<u8>, s: &Segment) {
            put_u64(out, s.episode);
            put_u64(out, s.start as u64);
            put_u64(out, s.states.len() as u64);
            for (st, a) in s.states.iter().zip(&s.actions) {
                put_f64s(out, st);
                put_f64s(out, a);
            }
            put_f64s(out, &s.gt_rewards);
        }
        put_u64(out, self.pairs.len() as u64);
        for p in &self.pairs {
            put_u64(out, p.id);
            seg(out, &p.seg1);
            seg(out, &p.seg2);
            put_u8(
                out,
                match p.label {
                    Some(Label::First) => 1,
                    Some(Label::Second) => 2,
                    Some(Label::Tie) => 3,
                    None => 0,
                },
            );
            put_u8(out, matches!(p.source, LabelSource::Human) as u8);
        }
    }

    pub(crate) fn read(bytes: &mut &[u8]) -> Result<Self> {
        fn seg(bytes: &mut &[u8]) -> Result<Segment> {
            let episode = take_u64(bytes)?;
            let start = take_u64(bytes)? as usize;
            let n = take_u64(bytes)? as usize;
            let mut states = Vec::new();
            let mut actions = Vec::new();
            for _ in 0..n {
                states.push(take_f64s(bytes)?);
                actions.push(take_f64s(bytes)?);
            }
            Ok(Segment {
                states,
                actions,
                gt_rewards: take_f64s(bytes)?,
                episode,
                start,
            })
        }
        let n = take_u64(bytes)? as usize;
        let mut pairs = Vec::new();
        for _ in 0..n {
            let id = take_u64(bytes)?;
            let seg1 = seg(bytes)?;
            let seg2 = seg(bytes)?;
            let label = match take_u8(bytes)? {
                1 => Some(Label::First),
                2 => Some(Label::Second),
                3 => Some(Label::Tie),
                0 => None,
                x => return Err(Error::Checkpoint(format!("bad label code {x}"))),
            };
            let source = if take_u8(bytes)? == 1 {
                LabelSource::Human
            } else {
                LabelSource::Simulated
            };
            pairs.push(QueryPair {
                id,
                seg1,
                seg2,
                label,
                source,
            });
        }
        Ok(Self { pairs })
    }
}

/// Binary form of a list of pairs that may still be unlabeled.
pub(crate) fn write_pairs(out: &mut Vec<u8>, pairs: &[QueryPair]) {
    PreferenceBuffer { pairs: pairs.to_vec() }.write(out)
}

pub(crate) fn read_pairs(bytes: &mut &[u8]) -> Result<Vec<QueryPair>> {
    Ok(PreferenceBuffer::read(bytes)?.pairs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeedbackSchedule {
    pub queries_per_session: usize,
    pub sessions: usize,
    pub frequency: u64,
    pub start: u64,
    /// Total label budget; `None` means `queries_per_session · sessions`.
    pub budget: Option<usize>,
}

impl Default for FeedbackSchedule {
    fn default() -> Self {
        Self {
            queries_per_session: 128,
            sessions: 10,
            frequency: 12_000,
            start: 30_000,
            budget: None,
        }
    }
}

impl FeedbackSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.sessions > 1 && self.frequency == 0 {
            return Err(Error::Config("feedback frequency must be positive".into()));
        }
        Ok(())
    }

    pub fn total_budget(&self) -> usize {
        self.budget
            .unwrap_or(self.queries_per_session * self.sessions)
            .min(self.queries_per_session * self.sessions)
    }

    /// Index of the session that runs at env step `t`, if any.
    pub fn session_at(&self, t: u64) -> Option<usize> {
        if t < self.start || self.sessions == 0 {
            return None;
        }
        let off = t - self.start;
        if self.frequency == 0 {
            return (off == 0).then_some(0);
        }
        if !off.is_multiple_of(self.frequency) {
            return None;
        }
        let k = (off / self.frequency) as usize;
        (k < self.sessions).then_some(k)
    }

    pub fn session_steps(&self) -> Vec<u64> {
        (0..self.sessions as u64)
            .map(|k| self.start + k * self.frequency)
            .collect()
    }

    /// Queries to request in `session` given `consumed` labels so far; a
    /// reduced budget is spread evenly over the sessions.
    pub fn queries_for_session(&self, session: usize, consumed: usize) -> usize {
        if session >= self.sessions {
            return 0;
        }
        let remaining = self.total_budget().saturating_sub(consumed);
        let sessions_left = self.sessions - session;
        remaining
            .div_ceil(sessions_left)
            .min(self.queries_per_session)
            .min(remaining)
    }
}

/// Cuts `segment_len` windows from stored complete episodes.
pub fn extract_segment(replay: &ReplayBuffer, episode: u64, first: u64, start: usize, len: usize) -> Segment {
    let mut seg = Segment {
        states: Vec::with_capacity(len),
        actions: Vec::with_capacity(len),
        gt_rewards: Vec::with_capacity(len),
        episode,
        start,
    };
    for k in 0..len {
        let slot = replay.slot_of(first + (start + k) as u64);
        seg.states.push(replay.obs_at(slot).to_vec());
        seg.actions.push(replay.action_at(slot).to_vec());
        seg.gt_rewards.push(replay.gt_reward_at(slot));
    }
    seg
}

/// Uniformly samples `count` segment pairs over every valid (episode, start).
/// Ids are `first_id, first_id + 1, ...`.
pub fn sample_queries<R: Rng + ?Sized>(
    replay: &ReplayBuffer,
    segment_len: usize,
    count: usize,
    first_id: u64,
    rng: &mut R,
) -> Vec<QueryPair> {
    if count == 0 || segment_len == 0 {
        return Vec::new();
    }
    let spans: Vec<_> = replay
        .episodes()
        .filter(|e| e.len >= segment_len)
        .copied()
        .collect();
    let starts: Vec<usize> = spans.iter().map(|e| e.len - segment_len + 1).collect();
    let total: usize = starts.iter().sum();
    if total < 2 {
        log::warn!("not enough stored episodes to cut {count} query pairs of length {segment_len}");
        return Vec::new();
    }
    let draw = |rng: &mut R| {
        let mut k = rng.random_range(0..total);
        for (e, n) in spans.iter().zip(&starts) {
            if k < *n {
                return extract_segment(replay, e.id, e.first, k, segment_len);
            }
            k -= n;
        }
        unreachable!("index within total")
    };
    (0..count)
        .map(|i| {
            let a = draw(rng);
            let b = draw(rng);
            QueryPair::new(first_id + i as u64, a, b).expect("equal segment lengths")
        })
        .collect()
}

/// The rational teacher: prefers the segment with the larger summed reward.
pub fn label_from_returns(r1: f64, r2: f64) -> Label {
    if (r1 - r2).abs() <= 1e-9 {
        Label::Tie
    } else if r1 > r2 {
        Label::First
    } else {
        Label::Second
    }
}

/// Who answers queries during training.
#[derive(Debug, Clone)]
pub enum Teacher {
    /// Ground-truth rewards recorded by the environment.
    GroundTruth,
    /// A reward model fitted offline to human labels.
    Model(Box<RewardEnsemble>),
}

pub fn simulated_label(pair: &QueryPair, teacher: &Teacher) -> Result<Label> {
    match teacher {
        Teacher::GroundTruth => {
            if pair.seg1.gt_rewards.len() != pair.seg1.len() || pair.seg2.gt_rewards.len() != pair.seg2.len() {
                return Err(Error::invalid(format!(
                    "query {} lacks ground-truth rewards",
                    pair.id
                )));
            }
            Ok(label_from_returns(pair.seg1.gt_return(), pair.seg2.gt_return()))
        }
        Teacher::Model(m) => {
            let (r1, r2) = (m.segment_return(&pair.seg1)?, m.segment_return(&pair.seg2)?);
            Ok(label_from_returns(r1, r2))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{Nav2d, Nav2dConfig};
    use crate::sac::TransitionRecord;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn seg(gt: &[f64]) -> Segment {
        Segment {
            states: vec![vec![0.0, 0.0]; gt.len()],
            actions: vec![vec![0.0, 0.0]; gt.len()],
            gt_rewards: gt.to_vec(),
            episode: 0,
            start: 0,
        }
    }

    #[test]
    fn teacher_examples() {
        let t = Teacher::GroundTruth;
        let p = QueryPair::new(0, seg(&[2.0, 3.0]), seg(&[1.0, 2.0])).unwrap();
        assert_eq!(simulated_label(&p, &t).unwrap(), Label::First);
        assert_eq!(simulated_label(&p.swapped(), &t).unwrap(), Label::Second);
        let same = QueryPair::new(1, seg(&[1.0, 2.0]), seg(&[1.0, 2.0])).unwrap();
        assert_eq!(simulated_label(&same, &t).unwrap(), Label::Tie);
    }

    #[test]
    fn hazard_avoider_is_preferred() {
        let env = Nav2d::new(Nav2dConfig::default()).unwrap();
        let run = |dir: [f64; 2]| {
            let mut st = env.reset(0);
            let mut gt = Vec::new();
            for _ in 0..25 {
                let (next, tr) = env.step(&st, dir).unwrap();
                gt.push(tr.info.gt_reward);
                st = next;
            }
            gt
        };
        // same speed; the diagonal runs into the (1.75, 1.75) hazard, the axis does not
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let crosser = run([h, h]);
        let avoider = run([1.0, 0.0]);
        let p = QueryPair::new(0, seg(&crosser), seg(&avoider)).unwrap();
        assert_eq!(simulated_label(&p, &Teacher::GroundTruth).unwrap(), Label::Second);
    }

    #[test]
    fn unequal_segments_rejected() {
        assert!(QueryPair::new(0, seg(&[1.0]), seg(&[1.0, 2.0])).is_err());
    }

    #[test]
    fn schedule_counts() {
        let s = FeedbackSchedule::default();
        assert_eq!(s.session_at(30_000), Some(0));
        assert_eq!(s.session_at(29_999), None);
        assert_eq!(s.session_at(42_000), Some(1));
        assert_eq!(s.session_at(30_000 + 12_000 * 10), None);
        let mut consumed = 0;
        for k in 0..10 {
            consumed += s.queries_for_session(k, consumed);
        }
        assert_eq!(consumed, 1280);
        for budget in [0, 40, 160, 320, 640, 1280, 5000] {
            let s = FeedbackSchedule {
                budget: Some(budget),
                ..Default::default()
            };
            let mut consumed = 0;
            for k in 0..10 {
                let q = s.queries_for_session(k, consumed);
                assert!(q <= 128);
                consumed += q;
            }
            assert_eq!(consumed, budget.min(1280));
        }
    }

    fn filled_replay(episodes: usize, len: usize) -> ReplayBuffer {
        let mut rb = ReplayBuffer::new(10_000, 2, 2, 0).unwrap();
        for e in 0..episodes {
            for t in 0..len {
                rb.push(TransitionRecord {
                    obs: vec![e as f64, t as f64],
                    action: vec![0.0, 0.0],
                    next_obs: vec![e as f64, t as f64 + 1.0],
                    cond: vec![],
                    reward: 0.0,
                    gt_reward: t as f64,
                    cost: 0.0,
                    done: t + 1 == len,
                    terminal: false,
                })
                .unwrap();
            }
        }
        rb
    }

    #[test]
    fn sampling_respects_episode_bounds() {
        let rb = filled_replay(1, 75);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let qs = sample_queries(&rb, 25, 500, 0, &mut rng);
        assert_eq!(qs.len(), 500);
        let mut seen = [false; 51];
        for q in &qs {
            for s in [&q.seg1, &q.seg2] {
                assert!(s.start <= 50);
                seen[s.start] = true;
                assert_eq!(s.len(), 25);
                for (k, st) in s.states.iter().enumerate() {
                    assert_eq!(st[1], (s.start + k) as f64);
                }
            }
        }
        assert!(seen.iter().all(|&b| b));
        assert!(sample_queries(&rb, 25, 0, 0, &mut rng).is_empty());
    }

    #[test]
    fn sampling_is_seeded() {
        let rb = filled_replay(4, 75);
        let a = sample_queries(&rb, 25, 10, 7, &mut ChaCha8Rng::seed_from_u64(3));
        let b = sample_queries(&rb, 25, 10, 7, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
        assert_eq!(a.iter().map(|q| q.id).collect::<Vec<_>>(), (7..17).collect::<Vec<_>>());
    }

    #[test]
    fn too_little_data_yields_nothing() {
        let rb = filled_replay(1, 10);
        assert!(sample_queries(&rb, 25, 4, 0, &mut ChaCha8Rng::seed_from_u64(0)).is_empty());
    }

    #[test]
    fn buffer_rejects_unlabeled() {
        let mut b = PreferenceBuffer::new();
        let p = QueryPair::new(0, seg(&[1.0]), seg(&[2.0])).unwrap();
        assert!(b.push(p.clone()).is_err());
        b.push(QueryPair {
            label: Some(Label::Tie),
            ..p
        })
        .unwrap();
        assert_eq!(b.len(), 1);
        let mut bytes = Vec::new();
        b.write(&mut bytes);
        assert_eq!(PreferenceBuffer::read(&mut bytes.as_slice()).unwrap(), b);
    }
}
