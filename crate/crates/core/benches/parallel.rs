//! Parallel versus sequential execution of the data-parallel paths: skill
//! evaluation sweeps and reward-ensemble fitting.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use hasd::envs::Nav2dConfig;
use hasd::evaluation::rollout_skills_with;
use hasd::parallel::Strategy;
use hasd::preference::{PreferenceBuffer, QueryPair, RewardConfig, RewardEnsemble, Segment};
use hasd::sac::SkillPolicy;
use hasd::trainer::{AlphaMode, ObsLayout, SkillController};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STRATEGIES: [(&str, Strategy); 2] = [("sequential", Strategy::Sequential), ("parallel", Strategy::Parallel)];

fn controller() -> SkillController {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let layout = ObsLayout {
        obs_dim: 2,
        skill_dim: 2,
        mode: AlphaMode::Conditioned,
    };
    let policy = SkillPolicy::new(layout.input_dim(), 2, &[64, 64], &mut rng).unwrap();
    SkillController::new(policy, layout, 0.2).unwrap()
}

fn rollouts(c: &mut Criterion) {
    let ctl = controller();
    let env = Nav2dConfig::default();
    let mut g = c.benchmark_group("skill_rollouts");
    g.sample_size(10);
    for (name, s) in STRATEGIES {
        g.bench_with_input(BenchmarkId::new(name, 200), &s, |b, &s| {
            b.iter(|| rollout_skills_with(s, &ctl, &env, 200, 0.2, 1).unwrap())
        });
    }
    g.finish();
}

fn preference_buffer(n: u64) -> PreferenceBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut seg = |id: u64| {
        let states: Vec<Vec<f64>> = (0..25).map(|_| vec![rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)]).collect();
        Segment {
            actions: (0..25).map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect(),
            gt_rewards: states.iter().map(|s| s[0]).collect(),
            states,
            episode: id,
            start: 0,
        }
    };
    let mut buf = PreferenceBuffer::new();
    for id in 0..n {
        let mut q = QueryPair::new(id, seg(2 * id), seg(2 * id + 1)).unwrap();
        q.label = Some(hasd::preference::label_from_returns(q.seg1.gt_return(), q.seg2.gt_return()));
        buf.push(q).unwrap();
    }
    buf
}

fn reward_fit(c: &mut Criterion) {
    let buf = preference_buffer(256);
    let cfg = RewardConfig {
        hidden: vec![64, 64],
        ensemble_size: 4,
        epochs: 3,
        early_stop_accuracy: 1.1,
        ..Default::default()
    };
    let mut g = c.benchmark_group("reward_ensemble_fit");
    g.sample_size(10);
    for (name, s) in STRATEGIES {
        g.bench_with_input(BenchmarkId::new(name, 256), &s, |b, &s| {
            b.iter_batched(
                || RewardEnsemble::new(4, cfg.clone(), &mut ChaCha8Rng::seed_from_u64(5)).unwrap(),
                |mut m| m.train_with(s, &buf).unwrap(),
                criterion::BatchSize::LargeInput,
            )
        });
    }
    g.finish();
}

criterion_group!(benches, rollouts, reward_fit);
criterion_main!(benches);
