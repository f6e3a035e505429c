//! Tanh-squashed diagonal Gaussian policy head.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{Activation, DenseTensor, Mlp, Tape};
use crate::error::{Error, Result};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionMode {
    Stochastic,
    Deterministic,
}

/// `log(1 − tanh(u)²)` without cancellation.
fn log_one_minus_tanh_sq(u: f64) -> f64 {
    let x = -2.0 * u;
    // softplus(x) = max(x,0) + ln(1 + e^{-|x|})
    let softplus = x.max(0.0) + (-x.abs()).exp().ln_1p();
    2.0 * (std::f64::consts::LN_2 - u - softplus)
}

/// Latent-conditioned stochastic policy: observation (with skill and trade-off
/// slots appended by the caller) to a squashed Gaussian over actions.
#[derive(Debug, Clone, PartialEq)]
pub struct SkillPolicy {
    net: Mlp,
    act_dim: usize,
}

/// A reparameterized batch of actions with what the backward pass needs.
#[derive(Debug, Clone)]
pub struct PolicySample {
    pub actions: DenseTensor,
    pub log_probs: Vec<f64>,
    tape: Tape,
    noise: Vec<f64>,
    std: Vec<f64>,
    /// Whether the raw log-std was inside the clamp range.
    log_std_free: Vec<bool>,
}

impl SkillPolicy {
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        act_dim: usize,
        hidden: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        let mut sizes = vec![obs_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(2 * act_dim);
        Ok(Self {
            net: Mlp::new(&sizes, Activation::Identity, rng)?,
            act_dim,
        })
    }

    pub fn from_net(net: Mlp) -> Result<Self> {
        if !net.output_dim().is_multiple_of(2) {
            return Err(Error::shape("policy head needs an even output width"));
        }
        let act_dim = net.output_dim() / 2;
        Ok(Self { net, act_dim })
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn obs_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn act_dim(&self) -> usize {
        self.act_dim
    }

    /// Reparameterized sample for a batch given standard-normal `noise` `[B, act_dim]`.
    /// Zero noise gives the deterministic action `tanh(mean)`.
    pub fn forward_sample(&self, obs: &DenseTensor, noise: &[f64]) -> Result<PolicySample> {
        let (head, tape) = self.net.forward(obs)?;
        let batch = obs.rows();
        let d = self.act_dim;
        if noise.len() != batch * d {
            return Err(Error::shape(format!(
                "noise has {} values, expected {}",
                noise.len(),
                batch * d
            )));
        }
        let mut actions = vec![0.0; batch * d];
        let mut log_probs = vec![0.0; batch];
        let mut std = vec![0.0; batch * d];
        let mut free = vec![true; batch * d];
        for b in 0..batch {
            let row = head.row(b);
            let mut lp = 0.0;
            for i in 0..d {
                let k = b * d + i;
                let raw = row[d + i];
                let log_std = raw.clamp(LOG_STD_MIN, LOG_STD_MAX);
                free[k] = raw > LOG_STD_MIN && raw < LOG_STD_MAX;
                let s = log_std.exp();
                let eps = noise[k];
                let u = row[i] + s * eps;
                actions[k] = u.tanh();
                std[k] = s;
                lp += -0.5 * eps * eps - log_std - HALF_LN_2PI - log_one_minus_tanh_sq(u);
            }
            log_probs[b] = lp;
        }
        Ok(PolicySample {
            actions: DenseTensor::matrix(batch, d, actions)?,
            log_probs,
            tape,
            noise: noise.to_vec(),
            std,
            log_std_free: free,
        })
    }

    pub fn sample_noise<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Vec<f64> {
        (0..batch * self.act_dim)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    /// Batch of actions and log-probabilities.
    pub fn act_batch<R: Rng + ?Sized>(
        &self,
        obs: &DenseTensor,
        mode: ActionMode,
        rng: &mut R,
    ) -> Result<(DenseTensor, Vec<f64>)> {
        let noise = match mode {
            ActionMode::Stochastic => self.sample_noise(obs.rows(), rng),
            ActionMode::Deterministic => vec![0.0; obs.rows() * self.act_dim],
        };
        let s = self.forward_sample(obs, &noise)?;
        Ok((s.actions, s.log_probs))
    }

    /// Single-observation action.
    pub fn sample_action<R: Rng + ?Sized>(
        &self,
        obs: &[f64],
        mode: ActionMode,
        rng: &mut R,
    ) -> Result<(Vec<f64>, f64)> {
        let x = DenseTensor::matrix(1, obs.len(), obs.to_vec())?;
        let (a, lp) = self.act_batch(&x, mode, rng)?;
        Ok((a.into_data(), lp[0]))
    }

    /// Deterministic actions without recording a tape.
    pub fn deterministic(&self, obs: &DenseTensor) -> Result<DenseTensor> {
        let head = self.net.predict(obs)?;
        let d = self.act_dim;
        let mut out = Vec::with_capacity(obs.rows() * d);
        for b in 0..obs.rows() {
            out.extend(head.row(b)[..d].iter().map(|m| m.tanh()));
        }
        DenseTensor::matrix(obs.rows(), d, out)
    }

    /// Accumulates parameter gradients of a loss given `dL/da` `[B, act_dim]`
    /// and `dL/dlogπ` `[B]`.
    pub fn backward_sample(
        &self,
        sample: &PolicySample,
        d_actions: &DenseTensor,
        d_log_probs: &[f64],
        grad: &mut [f64],
    ) -> Result<()> {
        let batch = sample.tape.batch();
        let d = self.act_dim;
        if d_actions.numel() != batch * d || d_log_probs.len() != batch {
            return Err(Error::shape("policy upstream gradient shape mismatch"));
        }
        let mut d_head = vec![0.0; batch * 2 * d];
        for b in 0..batch {
            for i in 0..d {
                let k = b * d + i;
                let a = sample.actions.data()[k];
                let dlp = d_log_probs[b];
                // d logπ / du = 2a through the squash correction
                let du = d_actions.data()[k] * (1.0 - a * a) + dlp * 2.0 * a;
                d_head[b * 2 * d + i] = du;
                if sample.log_std_free[k] {
                    d_head[b * 2 * d + d + i] = du * sample.std[k] * sample.noise[k] - dlp;
                }
            }
        }
        let up = DenseTensor::matrix(batch, 2 * d, d_head)?;
        self.net.backward_into(&sample.tape, &up, grad)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::finite_diff_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn squash_correction_matches_naive_formula() {
        for u in [-3.0, -0.5, 0.0, 0.2, 1.7] {
            let naive = (1.0 - f64::tanh(u).powi(2)).ln();
            assert!((log_one_minus_tanh_sq(u) - naive).abs() < 1e-12);
        }
        assert!(log_one_minus_tanh_sq(40.0).is_finite());
    }

    #[test]
    fn zero_net_is_centered() {
        let p = SkillPolicy::from_net(Mlp::zeros(&[3, 8, 4], Activation::Identity).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (a, _) = p.sample_action(&[1.0, 2.0, 3.0], ActionMode::Deterministic, &mut rng).unwrap();
        assert_eq!(a, vec![0.0, 0.0]);
    }

    #[test]
    fn pinned_log_std_removes_noise() {
        let mut net = Mlp::zeros(&[2, 2], Activation::Identity).unwrap();
        // bias: mean 0.3, log-std far below the clamp
        let (_, b) = net.layer_offsets(0);
        net.params_mut()[b] = 0.3;
        net.params_mut()[b + 1] = -50.0;
        let p = SkillPolicy::from_net(net).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (det, _) = p.sample_action(&[0.0, 0.0], ActionMode::Deterministic, &mut rng).unwrap();
        for _ in 0..100 {
            let (sto, _) = p.sample_action(&[0.0, 0.0], ActionMode::Stochastic, &mut rng).unwrap();
            assert!((sto[0] - det[0]).abs() < 1e-6);
        }
    }

    #[test]
    fn log_prob_matches_histogram_density() {
        // 1-D head: mean 0.4, log-std -0.3
        let mut net = Mlp::zeros(&[1, 2], Activation::Identity).unwrap();
        let (_, b) = net.layer_offsets(0);
        net.params_mut()[b] = 0.4;
        net.params_mut()[b + 1] = -0.3;
        let p = SkillPolicy::from_net(net).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 100_000;
        let obs = DenseTensor::zeros(vec![n, 1]);
        let (a, _) = p.act_batch(&obs, ActionMode::Stochastic, &mut rng).unwrap();
        let bins = 50;
        let mut counts = vec![0usize; bins];
        for &x in a.data() {
            let k = (((x + 1.0) / 2.0) * bins as f64).floor() as usize;
            counts[k.min(bins - 1)] += 1;
        }
        // analytic density at bin centers, normalized over the bins
        let width = 2.0 / bins as f64;
        let mut q = vec![0.0; bins];
        for (k, qk) in q.iter_mut().enumerate() {
            let x: f64 = -1.0 + (k as f64 + 0.5) * width;
            let u = x.atanh();
            let s: f64 = (-0.3f64).exp();
            let z = (u - 0.4) / s;
            let logpdf = -0.5 * z * z - s.ln() - HALF_LN_2PI - (1.0 - x * x).ln();
            *qk = logpdf.exp() * width;
        }
        let qs: f64 = q.iter().sum();
        let mut kl = 0.0;
        for k in 0..bins {
            let pk = counts[k] as f64 / n as f64;
            if pk > 0.0 {
                kl += pk * (pk / (q[k] / qs)).ln();
            }
        }
        assert!(kl < 1e-2, "KL {kl}");

        // and the reported log-prob agrees with the same formula
        let (x, lp) = p.sample_action(&[0.0], ActionMode::Stochastic, &mut rng).unwrap();
        let u = x[0].atanh();
        let s: f64 = (-0.3f64).exp();
        let z = (u - 0.4) / s;
        let want = -0.5 * z * z - s.ln() - HALF_LN_2PI - (1.0 - x[0] * x[0]).ln();
        assert!((lp - want).abs() < 1e-6, "{lp} vs {want}");
    }

    #[test]
    fn reparameterized_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = SkillPolicy::new(3, 2, &[16, 16], &mut rng).unwrap();
        let obs = DenseTensor::matrix(4, 3, (0..12).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let noise = p.sample_noise(4, &mut rng);
        let w: Vec<f64> = (0..8).map(|i| (i as f64 * 0.91).cos()).collect();
        let c = 0.7;
        // L = Σ w·a + c Σ logπ
        let loss = |pol: &SkillPolicy| {
            let s = pol.forward_sample(&obs, &noise).unwrap();
            s.actions.data().iter().zip(&w).map(|(a, w)| a * w).sum::<f64>()
                + c * s.log_probs.iter().sum::<f64>()
        };
        let s = p.forward_sample(&obs, &noise).unwrap();
        let mut g = vec![0.0; p.net().num_params()];
        p.backward_sample(&s, &DenseTensor::matrix(4, 2, w.clone()).unwrap(), &[c; 4], &mut g)
            .unwrap();
        let mut probe = p.clone();
        let err = finite_diff_check(
            |q| {
                probe.net_mut().set_params(q).unwrap();
                DenseTensor::scalar(loss(&probe))
            },
            p.net().params(),
            &g,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }
}
