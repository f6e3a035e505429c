//! Ensemble of distributional critics with top-quantile truncation.

use rand::Rng;

use crate::autodiff::{Activation, DenseTensor, Mlp, Tape};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct QuantileCriticEnsemble {
    nets: Vec<Mlp>,
    targets: Vec<Mlp>,
    n_quantiles: usize,
}

impl QuantileCriticEnsemble {
    pub fn new<R: Rng + ?Sized>(
        input_dim: usize,
        hidden: &[usize],
        n_nets: usize,
        n_quantiles: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if n_nets == 0 || n_quantiles == 0 {
            return Err(Error::invalid("critic ensemble needs nets and quantiles"));
        }
        let mut sizes = vec![input_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(n_quantiles);
        let nets = (0..n_nets)
            .map(|_| Mlp::new(&sizes, Activation::Identity, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            targets: nets.clone(),
            nets,
            n_quantiles,
        })
    }

    pub fn from_parts(nets: Vec<Mlp>, targets: Vec<Mlp>) -> Result<Self> {
        if nets.is_empty() || nets.len() != targets.len() {
            return Err(Error::invalid("online and target ensembles differ in size"));
        }
        let m = nets[0].output_dim();
        if nets.iter().chain(&targets).any(|n| n.sizes() != nets[0].sizes()) {
            return Err(Error::invalid("critic networks differ in shape"));
        }
        Ok(Self {
            nets,
            targets,
            n_quantiles: m,
        })
    }

    pub fn n_nets(&self) -> usize {
        self.nets.len()
    }

    pub fn n_quantiles(&self) -> usize {
        self.n_quantiles
    }

    pub fn nets(&self) -> &[Mlp] {
        &self.nets
    }

    pub fn nets_mut(&mut self) -> &mut [Mlp] {
        &mut self.nets
    }

    pub fn targets(&self) -> &[Mlp] {
        &self.targets
    }

    pub fn forward(&self, x: &DenseTensor) -> Result<Vec<(DenseTensor, Tape)>> {
        self.nets.iter().map(|n| n.forward(x)).collect()
    }

    /// Target-network atoms pooled per row: `[B, N·M]`.
    pub fn target_atoms(&self, x: &DenseTensor) -> Result<DenseTensor> {
        let outs = self
            .targets
            .iter()
            .map(|n| n.predict(x))
            .collect::<Result<Vec<_>>>()?;
        Ok(pool(&outs))
    }

    /// Polyak averaging: `target ← s·target + (1 − s)·online`.
    pub fn soft_update(&mut self, smoothing: f64) {
        for (t, o) in self.targets.iter_mut().zip(&self.nets) {
            for (tp, op) in t.params_mut().iter_mut().zip(o.params()) {
                *tp = smoothing * *tp + (1.0 - smoothing) * op;
            }
        }
    }
}

/// Concatenates `[B, M]` outputs of every net into `[B, N·M]`.
pub fn pool(outs: &[DenseTensor]) -> DenseTensor {
    let batch = outs[0].rows();
    let m = outs[0].last_dim();
    let mut data = Vec::with_capacity(batch * m * outs.len());
    for b in 0..batch {
        for o in outs {
            data.extend_from_slice(o.row(b));
        }
    }
    DenseTensor::matrix(batch, m * outs.len(), data).expect("pooled shape")
}

pub fn kept_atom_count(n_nets: usize, n_quantiles: usize, drop_per_net: usize) -> usize {
    n_nets * n_quantiles.saturating_sub(drop_per_net)
}

/// Midpoint quantile fractions `τ_m = (2m − 1) / 2M`, `m = 1..M`.
pub fn quantile_fractions(m: usize) -> Vec<f64> {
    (1..=m)
        .map(|i| (2 * i - 1) as f64 / (2 * m) as f64)
        .collect()
}

/// Sorts each pooled row ascending and keeps the `keep` smallest atoms.
pub fn truncate_atoms(pooled: &DenseTensor, keep: usize) -> DenseTensor {
    let batch = pooled.rows();
    let mut data = Vec::with_capacity(batch * keep);
    let mut row = Vec::new();
    for b in 0..batch {
        row.clear();
        row.extend_from_slice(pooled.row(b));
        row.sort_by(|a, b| a.total_cmp(b));
        data.extend_from_slice(&row[..keep]);
    }
    DenseTensor::matrix(batch, keep, data).expect("truncated shape")
}

/// Truncated distributional bootstrap target.
///
/// `target_i = r + γ·(1 − terminal)·(atom_i − c·logπ(a′|s′))` over the kept atoms.
pub fn tqc_target(
    pooled_next: &DenseTensor,
    rewards: &[f64],
    terminal: &[bool],
    next_log_probs: &[f64],
    entropy_coef: f64,
    gamma: f64,
    n_nets: usize,
    drop_per_net: usize,
) -> Result<DenseTensor> {
    let batch = pooled_next.rows();
    if rewards.len() != batch || terminal.len() != batch || next_log_probs.len() != batch {
        return Err(Error::shape("target inputs differ in batch size"));
    }
    let total = pooled_next.last_dim();
    let drop = drop_per_net * n_nets;
    if drop >= total {
        return Err(Error::invalid(format!("cannot drop {drop} of {total} atoms")));
    }
    let mut kept = truncate_atoms(pooled_next, total - drop);
    for b in 0..batch {
        let cont = if terminal[b] { 0.0 } else { gamma };
        let ent = entropy_coef * next_log_probs[b];
        for v in kept.row_mut(b) {
            *v = rewards[b] + cont * (*v - ent);
        }
    }
    Ok(kept)
}

fn huber(u: f64) -> (f64, f64) {
    if u.abs() <= 1.0 {
        (0.5 * u * u, u)
    } else {
        (u.abs() - 0.5, u.signum())
    }
}

/// Quantile Huber loss averaged over batch, nets, quantiles and target atoms.
///
/// Returns the loss and `dL/dpred` for every net.
pub fn critic_loss(preds: &[DenseTensor], targets: &DenseTensor) -> Result<(f64, Vec<DenseTensor>)> {
    if preds.is_empty() {
        return Err(Error::invalid("no critic predictions"));
    }
    let batch = targets.rows();
    let m = preds[0].last_dim();
    let j = targets.last_dim();
    if preds.iter().any(|p| p.rows() != batch || p.last_dim() != m) {
        return Err(Error::shape("critic predictions disagree in shape"));
    }
    let taus = quantile_fractions(m);
    let norm = (batch * preds.len() * m * j) as f64;
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(preds.len());
    for p in preds {
        let mut g = vec![0.0; batch * m];
        for b in 0..batch {
            let t = targets.row(b);
            let pr = p.row(b);
            for (q, (&pred, &tau)) in pr.iter().zip(&taus).enumerate() {
                let mut gq = 0.0;
                for &target in t {
                    let u = target - pred;
                    let w = if u < 0.0 { 1.0 - tau } else { tau };
                    let (h, dh) = huber(u);
                    loss += w * h;
                    gq -= w * dh;
                }
                g[b * m + q] = gq / norm;
            }
        }
        grads.push(DenseTensor::matrix(batch, m, g)?);
    }
    Ok((loss / norm, grads))
}

/// Mean of the `keep` smallest pooled atoms per row and its gradient mask.
pub fn truncated_mean(pooled: &DenseTensor, keep: usize) -> (Vec<f64>, DenseTensor) {
    let batch = pooled.rows();
    let total = pooled.last_dim();
    let mut means = Vec::with_capacity(batch);
    let mut mask = vec![0.0; batch * total];
    let mut idx: Vec<usize> = Vec::with_capacity(total);
    for b in 0..batch {
        let row = pooled.row(b);
        idx.clear();
        idx.extend(0..total);
        idx.sort_by(|&x, &y| row[x].total_cmp(&row[y]));
        let mut s = 0.0;
        for &i in &idx[..keep] {
            s += row[i];
            mask[b * total + i] = 1.0 / keep as f64;
        }
        means.push(s / keep as f64);
    }
    (
        means,
        DenseTensor::matrix(batch, total, mask).expect("mask shape"),
    )
}
