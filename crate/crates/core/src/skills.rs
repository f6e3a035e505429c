//! Distance-maximising skill discovery: a Lipschitz-constrained state
//! representation φ, its dual variable, the intrinsic reward and skill sampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, AdamState, DenseTensor, Mlp};
use crate::checkpoint::{put_f64, take_f64};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SkillConfig {
    pub skill_dim: usize,
    pub lr_phi: f64,
    pub hidden: Vec<usize>,
    pub initial_lambda: f64,
    pub epsilon: f64,
    pub lr_lambda: f64,
}

impl Default for SkillConfig {
    fn default() -> Self {
        Self {
            skill_dim: 2,
            lr_phi: 3e-4,
            hidden: vec![256, 256],
            initial_lambda: 3000.0,
            epsilon: 1e-6,
            lr_lambda: 1e-4,
        }
    }
}

/// Continuous skills drawn uniformly from the unit sphere of `dim` dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkillSpace {
    pub dim: usize,
}

impl SkillSpace {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("skill dimension must be positive"));
        }
        Ok(Self { dim })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        if self.dim == 1 {
            return vec![if rng.random::<bool>() { 1.0 } else { -1.0 }];
        }
        if self.dim == 2 {
            let theta = rng.random_range(0.0..std::f64::consts::TAU);
            return vec![theta.cos(), theta.sin()];
        }
        loop {
            let v: Vec<f64> = (0..self.dim).map(|_| rng.sample(StandardNormal)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 1e-12 {
                return v.into_iter().map(|x| x / n).collect();
            }
        }
    }
}

pub fn sample_skill(space: &SkillSpace, seed: u64) -> Vec<f64> {
    space.sample(&mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn dsd_reward(phi_s: &[f64], phi_next: &[f64], z: &[f64]) -> f64 {
    phi_next
        .iter()
        .zip(phi_s)
        .zip(z)
        .map(|((b, a), z)| (b - a) * z)
        .sum()
}

/// Lagrange multiplier for the Lipschitz constraint, kept nonnegative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualLambda {
    pub lambda: f64,
    pub epsilon: f64,
    pub lr: f64,
}

impl DualLambda {
    pub fn new(initial: f64, epsilon: f64, lr: f64) -> Result<Self> {
        if !(initial >= 0.0) {
            return Err(Error::invalid("initial lambda must be nonnegative"));
        }
        Ok(Self {
            lambda: initial,
            epsilon,
            lr,
        })
    }

    /// `λ ← max(0, λ − lr · mean_slack)`.
    pub fn update(&mut self, mean_slack: f64) -> f64 {
        self.lambda = (self.lambda - self.lr * mean_slack).max(0.0);
        self.lambda
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct PhiStats {
    /// `E[(φ(s′) − φ(s))ᵀ z]`
    pub objective: f64,
    /// `E[min(ε, d(s, s′) − ‖Δφ‖)]`
    pub slack: f64,
    /// `E[max(0, ‖Δφ‖ − d(s, s′))]`
    pub violation: f64,
    pub lambda: f64,
}

/// Loss `−(objective + λ·slack)` and its gradient in φ's parameters.
pub fn phi_loss(
    phi: &Mlp,
    lambda: f64,
    epsilon: f64,
    obs: &DenseTensor,
    next_obs: &DenseTensor,
    z: &DenseTensor,
) -> Result<(f64, Vec<f64>, PhiStats)> {
    let b = obs.rows();
    if b == 0 {
        return Err(Error::invalid("phi_loss needs a nonempty batch"));
    }
    if next_obs.shape() != obs.shape() || z.rows() != b || z.last_dim() != phi.output_dim() {
        return Err(Error::shape(format!(
            "phi batch shapes {:?} {:?} {:?}",
            obs.shape(),
            next_obs.shape(),
            z.shape()
        )));
    }
    let both = DenseTensor::new(
        vec![2 * b, obs.last_dim()],
        obs.data().iter().chain(next_obs.data()).copied().collect(),
    )?;
    let (out, tape) = phi.forward(&both)?;
    let k = phi.output_dim();
    let bf = b as f64;
    let mut up = vec![0.0; 2 * b * k];
    let mut stats = PhiStats {
        lambda,
        ..Default::default()
    };
    for i in 0..b {
        let (p0, p1) = (out.row(i), out.row(b + i));
        let zi = z.row(i);
        let delta: Vec<f64> = p1.iter().zip(p0).map(|(a, b)| a - b).collect();
        let norm = delta.iter().map(|d| d * d).sum::<f64>().sqrt();
        let dist = obs
            .row(i)
            .iter()
            .zip(next_obs.row(i))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        stats.objective += dsd_reward(p0, p1, zi) / bf;
        let raw = dist - norm;
        stats.slack += raw.min(epsilon) / bf;
        stats.violation += (-raw).max(0.0) / bf;
        // d(loss)/d(Δφ) = −z/B + λ/B · Δφ/‖Δφ‖ where the slack is active
        for j in 0..k {
            let mut g = -zi[j] / bf;
            if raw < epsilon && norm > 0.0 {
                g += lambda * delta[j] / (norm * bf);
            }
            up[(b + i) * k + j] = g;
            up[i * k + j] = -g;
        }
    }
    let loss = -(stats.objective + lambda * stats.slack);
    let mut grad = vec![0.0; phi.num_params()];
    phi.backward_into(&tape, &DenseTensor::matrix(2 * b, k, up)?, &mut grad)?;
    Ok((loss, grad, stats))
}

/// State representation φ: S → Z with its optimizer and dual variable.
#[derive(Debug, Clone, PartialEq)]
pub struct PhiNetwork {
    pub net: Mlp,
    opt: AdamState,
    pub dual: DualLambda,
}

impl PhiNetwork {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, cfg: &SkillConfig, rng: &mut R) -> Result<Self> {
        let mut sizes = vec![obs_dim];
        sizes.extend_from_slice(&cfg.hidden);
        sizes.push(cfg.skill_dim);
        let net = Mlp::new(&sizes, Activation::Identity, rng)?;
        let opt = AdamState::new("phi", net.num_params(), cfg.lr_phi);
        Ok(Self {
            net,
            opt,
            dual: DualLambda::new(cfg.initial_lambda, cfg.epsilon, cfg.lr_lambda)?,
        })
    }

    /// Intrinsic rewards `(φ(s′) − φ(s))ᵀ z` for a batch.
    pub fn rewards(&self, obs: &DenseTensor, next_obs: &DenseTensor, z: &DenseTensor) -> Result<Vec<f64>> {
        let a = self.net.predict(obs)?;
        let b = self.net.predict(next_obs)?;
        Ok((0..obs.rows())
            .map(|i| dsd_reward(a.row(i), b.row(i), z.row(i)))
            .collect())
    }

    /// One φ gradient step followed by one dual step.
    pub fn update(&mut self, obs: &DenseTensor, next_obs: &DenseTensor, z: &DenseTensor) -> Result<PhiStats> {
        let (_, grad, mut stats) =
            phi_loss(&self.net, self.dual.lambda, self.dual.epsilon, obs, next_obs, z)?;
        self.opt.step(self.net.params_mut(), &grad)?;
        stats.lambda = self.dual.update(stats.slack);
        Ok(stats)
    }

    pub(crate) fn write(&self, out: &mut Vec<u8>) {
        self.net.write_fragment(out);
        self.opt.write(out);
        for x in [self.dual.lambda, self.dual.epsilon, self.dual.lr] {
            put_f64(out, x);
        }
    }

    pub(crate) fn read(bytes: &mut &[u8]) -> Result<Self> {
        let net = Mlp::read_fragment(bytes)?;
        let opt = AdamState::read(bytes)?;
        let dual = DualLambda {
            lambda: take_f64(bytes)?,
            epsilon: take_f64(bytes)?,
            lr: take_f64(bytes)?,
        };
        Ok(Self { net, opt, dual })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::finite_diff_check;

    #[test]
    fn reward_examples() {
        assert!((dsd_reward(&[0.0, 0.0], &[0.3, 0.4], &[0.6, 0.8]) - 0.5).abs() < 1e-15);
        assert_eq!(dsd_reward(&[0.2, 0.1], &[0.2, 0.1], &[0.6, 0.8]), 0.0);
        assert_eq!(dsd_reward(&[0.0, 0.0], &[1.0, 1.0], &[1.0, -1.0]), 0.0);
    }

    #[test]
    fn dual_update_examples() {
        let mut d = DualLambda::new(3000.0, 1e-6, 1e-4).unwrap();
        d.update(1e-6);
        assert!((d.lambda - (3000.0 - 1e-10)).abs() < 1e-9);
        let mut d = DualLambda::new(3000.0, 1e-6, 1e-4).unwrap();
        d.update(-1.0);
        assert!((d.lambda - 3000.0001).abs() < 1e-9);
        let mut d = DualLambda::new(0.0, 1e-6, 1e-4).unwrap();
        d.update(0.5);
        assert_eq!(d.lambda, 0.0);
    }

    #[test]
    fn skills_lie_on_unit_circle() {
        let space = SkillSpace::new(2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut mean = [0.0; 2];
        let n = 100_000;
        for _ in 0..n {
            let z = space.sample(&mut rng);
            assert!((z[0].hypot(z[1]) - 1.0).abs() < 1e-12);
            mean[0] += z[0] / n as f64;
            mean[1] += z[1] / n as f64;
        }
        assert!(mean[0].abs() < 0.02 && mean[1].abs() < 0.02, "{mean:?}");
        assert_eq!(sample_skill(&space, 9), sample_skill(&space, 9));
    }

    #[test]
    fn zero_phi_has_zero_objective() {
        let phi = Mlp::zeros(&[2, 8, 2], Activation::Identity).unwrap();
        let obs = DenseTensor::from_rows(&[[0.0, 0.0], [1.0, 1.0]]).unwrap();
        let next = DenseTensor::from_rows(&[[0.1, 0.0], [1.0, 1.2]]).unwrap();
        let z = DenseTensor::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let (_, _, s) = phi_loss(&phi, 3000.0, 1e-6, &obs, &next, &z).unwrap();
        assert_eq!(s.objective, 0.0);
        assert!((s.slack - 1e-6).abs() < 1e-18);
    }

    #[test]
    fn isometry_is_tight() {
        // 1-D φ(x) = x
        let mut phi = Mlp::zeros(&[1, 1], Activation::Identity).unwrap();
        phi.params_mut()[0] = 1.0;
        let obs = DenseTensor::from_rows(&[[0.3]]).unwrap();
        let next = DenseTensor::from_rows(&[[0.55]]).unwrap();
        let z = DenseTensor::from_rows(&[[1.0]]).unwrap();
        let (_, _, s) = phi_loss(&phi, 1.0, 1e-6, &obs, &next, &z).unwrap();
        assert!((s.objective - 0.25).abs() < 1e-15);
        assert!(s.slack.abs() < 1e-15);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut phi = Mlp::new(&[3, 12, 2], Activation::Identity, &mut rng).unwrap();
        // scale up so part of the batch violates the constraint
        for p in phi.params_mut() {
            *p *= 3.0;
        }
        let obs = DenseTensor::matrix(6, 3, (0..18).map(|i| (i as f64 * 0.7).sin()).collect()).unwrap();
        let next = DenseTensor::matrix(6, 3, (0..18).map(|i| (i as f64 * 0.7).sin() + 0.05 * (i as f64).cos()).collect()).unwrap();
        let space = SkillSpace::new(2).unwrap();
        let z = DenseTensor::from_rows(&(0..6).map(|_| space.sample(&mut rng)).collect::<Vec<_>>()).unwrap();
        let (_, grad, stats) = phi_loss(&phi, 2.0, 1e-6, &obs, &next, &z).unwrap();
        assert!(stats.violation > 0.0);
        let mut probe = phi.clone();
        let err = finite_diff_check(
            |p| {
                probe.set_params(p).unwrap();
                DenseTensor::scalar(phi_loss(&probe, 2.0, 1e-6, &obs, &next, &z).unwrap().0)
            },
            phi.params(),
            &grad,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn violation_shrinks_under_dual_training() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = SkillConfig {
            hidden: vec![32, 32],
            lr_phi: 1e-3,
            ..Default::default()
        };
        let mut phi = PhiNetwork::new(2, &cfg, &mut rng).unwrap();
        for p in phi.net.params_mut() {
            *p *= 4.0;
        }
        let n = 128;
        let obs: Vec<[f64; 2]> = (0..n).map(|_| [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)]).collect();
        let next: Vec<[f64; 2]> = obs
            .iter()
            .map(|o| [o[0] + rng.random_range(-0.12..0.12), o[1] + rng.random_range(-0.12..0.12)])
            .collect();
        let space = SkillSpace::new(2).unwrap();
        let z: Vec<Vec<f64>> = (0..n).map(|_| space.sample(&mut rng)).collect();
        let (obs, next, z) = (
            DenseTensor::from_rows(&obs).unwrap(),
            DenseTensor::from_rows(&next).unwrap(),
            DenseTensor::from_rows(&z).unwrap(),
        );
        let first = phi.update(&obs, &next, &z).unwrap();
        let mut last = first;
        for _ in 0..500 {
            last = phi.update(&obs, &next, &z).unwrap();
            assert!(last.lambda >= 0.0);
        }
        assert!(first.violation > 0.0);
        assert!(last.violation < 0.5 * first.violation, "{} -> {}", first.violation, last.violation);
    }

    #[test]
    fn reward_is_bilinear_in_z() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let phi = PhiNetwork::new(2, &SkillConfig { hidden: vec![8], ..Default::default() }, &mut rng).unwrap();
        let obs = DenseTensor::from_rows(&[[0.1, 0.2]]).unwrap();
        let next = DenseTensor::from_rows(&[[0.2, 0.1]]).unwrap();
        let r1 = phi.rewards(&obs, &next, &DenseTensor::from_rows(&[[0.6, 0.8]]).unwrap()).unwrap()[0];
        // scaling by a power of two is exact in floating point
        let r4 = phi.rewards(&obs, &next, &DenseTensor::from_rows(&[[2.4, 3.2]]).unwrap()).unwrap()[0];
        assert_eq!(r4, 4.0 * r1);
        let r3 = phi.rewards(&obs, &next, &DenseTensor::from_rows(&[[1.8, 2.4]]).unwrap()).unwrap()[0];
        assert!((r3 - 3.0 * r1).abs() <= 1e-15 * r3.abs().max(1.0));
    }

    #[test]
    fn checkpoint_fragment_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let phi = PhiNetwork::new(2, &SkillConfig { hidden: vec![4], ..Default::default() }, &mut rng).unwrap();
        let mut buf = Vec::new();
        phi.write(&mut buf);
        let back = PhiNetwork::read(&mut buf.as_slice()).unwrap();
        assert_eq!(back, phi);
    }
}
