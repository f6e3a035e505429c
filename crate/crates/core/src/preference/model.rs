//! Bradley-Terry reward ensemble.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{PreferenceBuffer, QueryPair, RewardConfig, Segment};
use crate::autodiff::{Activation, AdamState, DenseTensor, Mlp};
use crate::checkpoint::{put_u64, take_u64};
use crate::error::{Error, Result};
use crate::parallel::{self, Strategy};

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Whether query `id` belongs to the held-out split.
pub(crate) fn is_heldout(id: u64, fraction: f64) -> bool {
    let u = (splitmix64(id) >> 11) as f64 / (1u64 << 53) as f64;
    u < fraction
}

fn segment_rows(pairs: &[&QueryPair]) -> Result<DenseTensor> {
    let rows: Vec<Vec<f64>> = pairs
        .iter()
        .flat_map(|p| p.seg1.inputs().chain(p.seg2.inputs()))
        .collect();
    DenseTensor::from_rows(&rows)
}

/// Summed predictions per segment, `[(R₁, R₂)]`, for pairs laid out as in `segment_rows`.
fn pair_returns(out: &DenseTensor, pairs: &[&QueryPair]) -> Vec<(f64, f64)> {
    let d = out.data();
    let mut k = 0;
    pairs
        .iter()
        .map(|p| {
            let (l1, l2) = (p.seg1.len(), p.seg2.len());
            let r1: f64 = d[k..k + l1].iter().sum();
            let r2: f64 = d[k + l1..k + l1 + l2].iter().sum();
            k += l1 + l2;
            (r1, r2)
        })
        .collect()
}

/// `P[σ¹ ≻ σ²]` from summed returns, max-subtracted.
fn bt_from_returns(r1: f64, r2: f64) -> f64 {
    let m = r1.max(r2);
    let (e1, e2) = ((r1 - m).exp(), (r2 - m).exp());
    e1 / (e1 + e2)
}

pub fn bt_probability(member: &Mlp, pair: &QueryPair) -> Result<f64> {
    let out = member.predict(&segment_rows(&[pair])?)?;
    let (r1, r2) = pair_returns(&out, &[pair])[0];
    Ok(bt_from_returns(r1, r2))
}

/// Cross-entropy of the preference model on labeled pairs and its parameter gradient.
pub fn reward_loss(member: &Mlp, pairs: &[&QueryPair]) -> Result<(f64, Vec<f64>)> {
    if pairs.is_empty() {
        return Err(Error::invalid("reward_loss needs a nonempty batch"));
    }
    let x = segment_rows(pairs)?;
    let (out, tape) = member.forward(&x)?;
    let returns = pair_returns(&out, pairs);
    let n = pairs.len() as f64;
    let mut loss = 0.0;
    let mut up = Vec::with_capacity(out.numel());
    for (p, &(r1, r2)) in pairs.iter().zip(&returns) {
        let label = p
            .label
            .ok_or_else(|| Error::invalid(format!("query {} is unlabeled", p.id)))?;
        let (y1, y2) = label.target();
        let m = r1.max(r2);
        let lse = m + ((r1 - m).exp() + (r2 - m).exp()).ln();
        let (lp1, lp2) = (r1 - lse, r2 - lse);
        loss -= (y1 * lp1 + y2 * lp2) / n;
        let (g1, g2) = ((lp1.exp() - y1) / n, (lp2.exp() - y2) / n);
        up.extend(std::iter::repeat_n(g1, p.seg1.len()));
        up.extend(std::iter::repeat_n(g2, p.seg2.len()));
    }
    let mut grad = vec![0.0; member.num_params()];
    member.backward_into(&tape, &DenseTensor::matrix(out.rows(), 1, up)?, &mut grad)?;
    Ok((loss, grad))
}

fn accuracy(member: &Mlp, pairs: &[&QueryPair]) -> Result<Option<f64>> {
    let decisive: Vec<&QueryPair> = pairs
        .iter()
        .copied()
        .filter(|p| matches!(p.label, Some(l) if l != super::Label::Tie))
        .collect();
    if decisive.is_empty() {
        return Ok(None);
    }
    let mut correct = 0usize;
    for chunk in decisive.chunks(256) {
        let out = member.predict(&segment_rows(chunk)?)?;
        for (p, (r1, r2)) in chunk.iter().zip(pair_returns(&out, chunk)) {
            let want_first = p.label == Some(super::Label::First);
            if (r1 > r2 && want_first) || (r2 > r1 && !want_first) {
                correct += 1;
            }
        }
    }
    Ok(Some(correct as f64 / decisive.len() as f64))
}

#[derive(Default)]
struct MemberFit {
    loss: f64,
    epochs: usize,
    train_accuracy: f64,
    heldout_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct TrainReport {
    pub train_pairs: usize,
    pub heldout_pairs: usize,
    pub loss: f64,
    pub train_accuracy: f64,
    /// Mean member accuracy on held-out decisive pairs; `None` without any.
    pub heldout_accuracy: Option<f64>,
    pub epochs: usize,
}

/// Independently initialized reward models `r̂(s, a)` averaged at prediction time.
#[derive(Debug)]
pub struct RewardEnsemble {
    members: Vec<Mlp>,
    opts: Vec<AdamState>,
    seeds: Vec<u64>,
    train_calls: u64,
    pub cfg: RewardConfig,
    calls: AtomicU64,
}

impl Clone for RewardEnsemble {
    fn clone(&self) -> Self {
        Self {
            members: self.members.clone(),
            opts: self.opts.clone(),
            seeds: self.seeds.clone(),
            train_calls: self.train_calls,
            cfg: self.cfg.clone(),
            calls: AtomicU64::new(self.calls.load(Ordering::Relaxed)),
        }
    }
}

impl PartialEq for RewardEnsemble {
    fn eq(&self, o: &Self) -> bool {
        self.members == o.members
            && self.opts == o.opts
            && self.seeds == o.seeds
            && self.train_calls == o.train_calls
            && self.cfg == o.cfg
    }
}

impl RewardEnsemble {
    pub fn new<R: Rng + ?Sized>(input_dim: usize, cfg: RewardConfig, rng: &mut R) -> Result<Self> {
        if cfg.ensemble_size == 0 || cfg.minibatch == 0 {
            return Err(Error::Config("reward ensemble size and minibatch must be positive".into()));
        }
        let mut sizes = vec![input_dim];
        sizes.extend_from_slice(&cfg.hidden);
        sizes.push(1);
        let mut members = Vec::new();
        let mut opts = Vec::new();
        let mut seeds = Vec::new();
        for i in 0..cfg.ensemble_size {
            members.push(Mlp::new(&sizes, Activation::Identity, rng)?);
            opts.push(AdamState::new(format!("reward{i}"), members[i].num_params(), cfg.lr));
            seeds.push(rng.random());
        }
        Ok(Self {
            members,
            opts,
            seeds,
            train_calls: 0,
            cfg,
            calls: AtomicU64::new(0),
        })
    }

    pub fn from_members(members: Vec<Mlp>, cfg: RewardConfig) -> Result<Self> {
        if members.is_empty() || members.iter().any(|m| m.output_dim() != 1) {
            return Err(Error::invalid("reward members must be scalar-output and nonempty"));
        }
        let opts = members
            .iter()
            .enumerate()
            .map(|(i, m)| AdamState::new(format!("reward{i}"), m.num_params(), cfg.lr))
            .collect();
        let seeds = (0..members.len() as u64).collect();
        Ok(Self {
            members,
            opts,
            seeds,
            train_calls: 0,
            cfg,
            calls: AtomicU64::new(0),
        })
    }

    pub fn members(&self) -> &[Mlp] {
        &self.members
    }

    pub fn input_dim(&self) -> usize {
        self.members[0].input_dim()
    }

    /// Number of prediction calls served so far.
    pub fn call_count(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    /// Mean member prediction for each row of `state ⊕ action`.
    pub fn predict_batch(&self, x: &DenseTensor) -> Result<Vec<f64>> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let outs = self
            .members
            .iter()
            .map(|m| m.predict(x))
            .collect::<Result<Vec<_>>>()?;
        let k = self.members.len() as f64;
        // summing in sorted order keeps the mean independent of member order
        let mut vals = vec![0.0; self.members.len()];
        Ok((0..x.rows())
            .map(|i| {
                for (v, o) in vals.iter_mut().zip(&outs) {
                    *v = o.data()[i];
                }
                vals.sort_by(f64::total_cmp);
                vals.iter().sum::<f64>() / k
            })
            .collect())
    }

    pub fn predict_reward(&self, state: &[f64], action: &[f64]) -> Result<f64> {
        let mut row = state.to_vec();
        row.extend_from_slice(action);
        Ok(self.predict_batch(&DenseTensor::matrix(1, row.len(), row)?)?[0])
    }

    pub fn segment_return(&self, seg: &Segment) -> Result<f64> {
        let rows: Vec<Vec<f64>> = seg.inputs().collect();
        Ok(self.predict_batch(&DenseTensor::from_rows(&rows)?)?.iter().sum())
    }

    /// Trains every member on shuffled minibatches of the non-held-out pairs.
    ///
    /// Pairs are ordered by id before shuffling, so the result does not
    /// depend on the buffer's insertion order.
    pub fn train(&mut self, buffer: &PreferenceBuffer) -> Result<TrainReport> {
        self.train_with(Strategy::default(), buffer)
    }

    /// [`RewardEnsemble::train`] with an explicit work distribution over members.
    pub fn train_with(&mut self, strategy: Strategy, buffer: &PreferenceBuffer) -> Result<TrainReport> {
        if buffer.is_empty() {
            return Err(Error::invalid("preference buffer is empty"));
        }
        let mut all: Vec<&QueryPair> = buffer.pairs().iter().collect();
        all.sort_by_key(|p| p.id);
        let (mut heldout, mut train): (Vec<&QueryPair>, Vec<&QueryPair>) = all
            .iter()
            .partition(|p| is_heldout(p.id, self.cfg.heldout_fraction));
        if train.is_empty() {
            train = std::mem::take(&mut heldout);
        }
        self.train_calls += 1;
        let mut report = TrainReport {
            train_pairs: train.len(),
            heldout_pairs: heldout.len(),
            ..Default::default()
        };
        let k = self.members.len() as f64;
        let cfg = &self.cfg;
        let calls = self.train_calls;
        let seeds = &self.seeds;
        let mut slots: Vec<(&mut Mlp, &mut AdamState)> = self.members.iter_mut().zip(self.opts.iter_mut()).collect();
        // members draw from their own seeded streams, so the schedule cannot change results
        let fits = parallel::map_mut_with(strategy, &mut slots, |i, (member, opt)| -> Result<MemberFit> {
            let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seeds[i] ^ calls));
            let mut order = train.clone();
            let mut fit = MemberFit::default();
            for _ in 0..cfg.epochs {
                order.shuffle(&mut rng);
                let mut total = 0.0;
                for batch in order.chunks(cfg.minibatch) {
                    let (loss, grad) = reward_loss(member, batch)?;
                    opt.step(member.params_mut(), &grad)?;
                    total += loss * batch.len() as f64;
                }
                fit.loss = total / order.len() as f64;
                fit.epochs += 1;
                if accuracy(member, &train)?.unwrap_or(1.0) >= cfg.early_stop_accuracy {
                    break;
                }
            }
            fit.train_accuracy = accuracy(member, &train)?.unwrap_or(1.0);
            fit.heldout_accuracy = accuracy(member, &heldout)?;
            Ok(fit)
        });
        let mut held_acc = Vec::new();
        for fit in fits {
            let fit = fit?;
            report.loss += fit.loss / k;
            report.epochs = report.epochs.max(fit.epochs);
            report.train_accuracy += fit.train_accuracy / k;
            held_acc.extend(fit.heldout_accuracy);
        }
        if !held_acc.is_empty() {
            report.heldout_accuracy = Some(held_acc.iter().sum::<f64>() / held_acc.len() as f64);
        }
        Ok(report)
    }

    /// Standalone reward-model file in the checkpoint container format.
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let mut c = crate::checkpoint::Container::new();
        let mut bytes = Vec::new();
        self.write(&mut bytes);
        c.insert("reward_model", bytes);
        c.save(path)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let c = crate::checkpoint::Container::load(path)?;
        Self::read(&mut c.get("reward_model")?)
    }

    pub(crate) fn write(&self, out: &mut Vec<u8>) {
        put_u64(out, self.members.len() as u64);
        for ((m, o), s) in self.members.iter().zip(&self.opts).zip(&self.seeds) {
            m.write_fragment(out);
            o.write(out);
            put_u64(out, *s);
        }
        put_u64(out, self.train_calls);
        let cfg = serde_json::to_vec(&self.cfg).expect("config serializes");
        put_u64(out, cfg.len() as u64);
        out.extend_from_slice(&cfg);
    }

    pub(crate) fn read(bytes: &mut &[u8]) -> Result<Self> {
        let n = take_u64(bytes)? as usize;
        let mut members = Vec::with_capacity(n);
        let mut opts = Vec::with_capacity(n);
        let mut seeds = Vec::with_capacity(n);
        for _ in 0..n {
            members.push(Mlp::read_fragment(bytes)?);
            opts.push(AdamState::read(bytes)?);
            seeds.push(take_u64(bytes)?);
        }
        let train_calls = take_u64(bytes)?;
        let len = take_u64(bytes)? as usize;
        if bytes.len() < len {
            return Err(Error::Checkpoint("truncated reward config".into()));
        }
        let cfg = serde_json::from_slice(&bytes[..len]).map_err(|e| Error::Checkpoint(e.to_string()))?;
        *bytes = &bytes[len..];
        Ok(Self {
            members,
            opts,
            seeds,
            train_calls,
            cfg,
            calls: AtomicU64::new(0),
        })
    }
}
