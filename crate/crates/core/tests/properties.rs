use hasd::autodiff::{finite_diff_check, Activation, AdamState, DenseTensor, Mlp};
use hasd::envs::{Nav2d, Nav2dConfig};
use hasd::evaluation::{coverage, hypervolume_2d, pareto_filter, SkillRollout, SolutionPoint};
use hasd::preference::{bt_probability, reward_loss, FeedbackSchedule, Label, QueryPair, RewardConfig, RewardEnsemble, Segment};
use hasd::sac::critic::kept_atom_count;
use hasd::sac::QuantileCriticEnsemble;
use hasd::skills::{dsd_reward, DualLambda};
use hasd::trainer::{AlphaConfig, AlphaMode, AlphaSchedule};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn seg(rng: &mut ChaCha8Rng, len: usize) -> Segment {
    let states: Vec<Vec<f64>> = (0..len).map(|_| vec![rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)]).collect();
    Segment {
        actions: (0..len).map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect(),
        gt_rewards: vec![0.0; len],
        states,
        episode: 0,
        start: 0,
    }
}

fn point(x: f64, y: f64) -> SolutionPoint {
    SolutionPoint {
        label: String::new(),
        coverage: x,
        alignment: y,
        raw_coverage: 0,
        raw_alignment: y,
        coverage_bins: 1,
        alignment_min: 0.0,
        alignment_max: 1.0,
    }
}

fn unit_points() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((0.0f64..=1.0, 0.0f64..=1.0), 1..25)
}

fn rollout(positions: Vec<[f64; 2]>) -> SkillRollout {
    SkillRollout {
        z: [1.0, 0.0],
        alpha: 0.0,
        costs: vec![0.0; positions.len()],
        gt_rewards: vec![0.0; positions.len()],
        positions,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn mlp_gradients_match_finite_differences(
        widths in prop::collection::vec(1usize..=32, 0..=2),
        input in 1usize..6,
        output in 1usize..4,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sizes = vec![input];
        sizes.extend(&widths);
        sizes.push(output);
        let net = Mlp::new(&sizes, Activation::Identity, &mut rng).unwrap();
        let x = DenseTensor::matrix(3, input, (0..3 * input).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        // loss = sum of squared outputs
        let (y, tape) = net.forward(&x).unwrap();
        let up = DenseTensor::matrix(3, output, y.data().iter().map(|v| 2.0 * v).collect()).unwrap();
        let grad = net.backward(&tape, &up).unwrap().params;
        let mut probe = net.clone();
        let err = finite_diff_check(
            |p| {
                probe.set_params(p).unwrap();
                DenseTensor::scalar(probe.predict(&x).unwrap().data().iter().map(|v| v * v).sum())
            },
            net.params(),
            &grad,
            1e-6,
        ).unwrap();
        prop_assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn same_seed_same_parameters(seed in any::<u64>(), steps in 1usize..20) {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut net = Mlp::new(&[3, 8, 2], Activation::Identity, &mut rng).unwrap();
            let mut opt = AdamState::new("net", net.num_params(), 1e-2);
            for _ in 0..steps {
                let g: Vec<f64> = (0..net.num_params()).map(|_| rng.random_range(-1.0..1.0)).collect();
                opt.step(net.params_mut(), &g).unwrap();
            }
            net.params().to_vec()
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn episodes_last_max_steps(max_steps in 1usize..120, seed in any::<u64>()) {
        let e = Nav2d::new(Nav2dConfig { max_steps, ..Default::default() }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut st = e.reset(seed);
        let mut n = 0;
        loop {
            let (next, tr) = e.step(&st, [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).unwrap();
            n += 1;
            st = next;
            if tr.done {
                break;
            }
            prop_assert!(n < max_steps);
        }
        prop_assert_eq!(n, max_steps);
        prop_assert!(e.is_done(&st));
    }

    #[test]
    fn cost_equals_hazard_recount(seed in any::<u64>()) {
        let e = Nav2d::new(Nav2dConfig { random_start: true, ..Default::default() }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut st = e.reset(seed);
        let (mut cost, mut positions) = (0.0, Vec::new());
        while !e.is_done(&st) {
            let (next, tr) = e.step(&st, [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).unwrap();
            cost += tr.info.cost;
            positions.push(next.pos);
            st = next;
        }
        let recount = positions.iter().filter(|p| e.config().in_hazard(**p)).count();
        prop_assert_eq!(cost, recount as f64);
    }

    #[test]
    fn truncation_keeps_n_times_m_minus_k(n in 1usize..8, m in 1usize..50, k in 0usize..50) {
        prop_assume!(k < m);
        prop_assert_eq!(kept_atom_count(n, m, k), n * (m - k));
    }

    #[test]
    fn targets_approach_frozen_online(smoothing in 0.0f64..0.999, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ens = QuantileCriticEnsemble::new(3, &[8], 2, 4, &mut rng).unwrap();
        for p in ens.nets_mut()[0].params_mut() {
            *p += 1.0;
        }
        let gap = |e: &QuantileCriticEnsemble| -> f64 {
            e.nets().iter().zip(e.targets()).flat_map(|(o, t)| o.params().iter().zip(t.params()).map(|(a, b)| (a - b).powi(2))).sum::<f64>().sqrt()
        };
        let first = gap(&ens);
        let mut last = first;
        for k in 1..=10 {
            ens.soft_update(smoothing);
            let now = gap(&ens);
            // the gap shrinks geometrically down to rounding level
            prop_assert!(now <= last, "{now} > {last}");
            prop_assert!((now - smoothing.powi(k) * first).abs() <= 1e-12 * first, "step {k}: {now}");
            last = now;
        }
    }

    #[test]
    fn dsd_reward_scales_with_z(
        a in prop::collection::vec(-5.0f64..5.0, 2),
        b in prop::collection::vec(-5.0f64..5.0, 2),
        c in prop::sample::select(vec![-2.0, -1.0, 0.0, 0.5, 2.0, 4.0]),
        theta in 0.0f64..6.3,
    ) {
        let z = [theta.cos(), theta.sin()];
        let scaled = [c * z[0], c * z[1]];
        // powers of two keep the scaling exact in floating point
        prop_assert_eq!(dsd_reward(&a, &b, &scaled), c * dsd_reward(&a, &b, &z));
    }

    #[test]
    fn lambda_never_negative(
        initial in 0.0f64..10.0,
        lr in 0.0f64..1.0,
        slacks in prop::collection::vec(-100.0f64..100.0, 1..50),
    ) {
        let mut d = DualLambda::new(initial, 1e-3, lr).unwrap();
        for s in slacks {
            prop_assert!(d.update(s) >= 0.0);
            prop_assert!(d.lambda >= 0.0);
        }
    }

    #[test]
    fn bt_is_antisymmetric(seed in any::<u64>(), len in 1usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Mlp::new(&[4, 16, 1], Activation::Identity, &mut rng).unwrap();
        let (a, b) = (seg(&mut rng, len), seg(&mut rng, len));
        let p = bt_probability(&net, &QueryPair::new(0, a.clone(), b.clone()).unwrap()).unwrap();
        let q = bt_probability(&net, &QueryPair::new(0, b, a).unwrap()).unwrap();
        prop_assert!((p + q - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn reward_loss_nonnegative(seed in any::<u64>(), labels in prop::collection::vec(0u8..3, 1..8)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Mlp::new(&[4, 8, 1], Activation::Identity, &mut rng).unwrap();
        let pairs: Vec<QueryPair> = labels.iter().enumerate().map(|(i, &l)| {
            let mut q = QueryPair::new(i as u64, seg(&mut rng, 4), seg(&mut rng, 4)).unwrap();
            q.label = Some([Label::First, Label::Second, Label::Tie][l as usize]);
            q
        }).collect();
        let refs: Vec<&QueryPair> = pairs.iter().collect();
        prop_assert!(reward_loss(&net, &refs).unwrap().0 >= 0.0);
    }

    #[test]
    fn ensemble_mean_ignores_member_order(seed in any::<u64>(), shift in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let members: Vec<Mlp> = (0..4).map(|_| Mlp::new(&[4, 8, 1], Activation::Identity, &mut rng).unwrap()).collect();
        let mut rotated = members.clone();
        rotated.rotate_left(shift);
        let a = RewardEnsemble::from_members(members, RewardConfig::default()).unwrap();
        let b = RewardEnsemble::from_members(rotated, RewardConfig::default()).unwrap();
        let (s, act) = ([rng.random_range(-4.0..4.0), 0.5], [0.3, -0.2]);
        let (ra, rb) = (a.predict_reward(&s, &act).unwrap(), b.predict_reward(&s, &act).unwrap());
        prop_assert!((ra - rb).abs() <= 1e-12 * ra.abs().max(1.0));
    }

    #[test]
    fn sessions_respect_budget(
        budget in prop::sample::select(vec![0usize, 40, 160, 640, 1280]),
        sessions in 1usize..20,
        per in 1usize..200,
    ) {
        let f = FeedbackSchedule { queries_per_session: per, sessions, frequency: 100, start: 0, budget: Some(budget) };
        let mut consumed = 0;
        for k in 0..sessions {
            consumed += f.queries_for_session(k, consumed);
        }
        prop_assert!(consumed <= budget);
        prop_assert_eq!(consumed, budget.min(per * sessions));
        let steps = f.session_steps();
        prop_assert!(steps.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn negative_alpha_needs_override(v in -5.0f64..-1e-9) {
        let mut cfg = AlphaConfig { c: v, ..Default::default() };
        prop_assert!(AlphaSchedule::new(AlphaMode::Fixed, &cfg).is_err());
        cfg.allow_negative = true;
        prop_assert!(AlphaSchedule::new(AlphaMode::Fixed, &cfg).is_ok());
    }

    #[test]
    fn dominated_point_leaves_hv_unchanged(xy in unit_points(), pick in any::<prop::sample::Index>(), sx in 0.0f64..=1.0, sy in 0.0f64..=1.0) {
        let base = hypervolume_2d(&xy, (0.0, 0.0)).unwrap();
        let p = xy[pick.index(xy.len())];
        let mut more = xy.clone();
        more.push((p.0 * sx, p.1 * sy));
        prop_assert_eq!(hypervolume_2d(&more, (0.0, 0.0)).unwrap(), base);
    }

    #[test]
    fn dominating_point_increases_hv(xy in unit_points(), pick in any::<prop::sample::Index>(), dx in 1e-3f64..0.5, dy in 0.0f64..0.5) {
        let base = hypervolume_2d(&xy, (0.0, 0.0)).unwrap();
        let front: Vec<(f64, f64)> = pareto_filter(&xy.iter().map(|&(x, y)| point(x, y)).collect::<Vec<_>>()).iter().map(SolutionPoint::xy).collect();
        let p = front[pick.index(front.len())];
        prop_assume!(p.1 > 0.0);
        let mut more = xy.clone();
        more.push((p.0 + dx, p.1 + dy));
        prop_assert!(hypervolume_2d(&more, (0.0, 0.0)).unwrap() > base);
    }

    #[test]
    fn pareto_filter_is_idempotent(xy in unit_points()) {
        let pts: Vec<SolutionPoint> = xy.iter().map(|&(x, y)| point(x, y)).collect();
        let once = pareto_filter(&pts);
        prop_assert_eq!(pareto_filter(&once), once);
    }

    #[test]
    fn coverage_ignores_order_and_duplicates(
        trajs in prop::collection::vec(prop::collection::vec((-4.0f64..4.0, -4.0f64..4.0), 1..30), 1..6),
        dup in any::<prop::sample::Index>(),
    ) {
        let rollouts: Vec<SkillRollout> = trajs.iter().map(|t| rollout(t.iter().map(|&(x, y)| [x, y]).collect())).collect();
        let base = coverage(&rollouts);
        let mut shuffled = rollouts.clone();
        shuffled.reverse();
        shuffled.push(rollouts[dup.index(rollouts.len())].clone());
        prop_assert_eq!(coverage(&shuffled), base);
    }
}
