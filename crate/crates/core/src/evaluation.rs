//! Skill-set evaluation: deterministic rollouts, coverage, alignment, cost,
//! Pareto filtering, 2-D hypervolume and plot-data export.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::envs::{write_trajectories, Nav2d, Nav2dConfig, PrimitiveController, TrajectoryRecord};
use crate::error::{Error, Result};
use crate::parallel::{self, Strategy};
use crate::skills::SkillSpace;

pub type SkillRollout = TrajectoryRecord;

pub const BIN_SIZE: f64 = 0.1;

/// Rolls out `n` skills drawn from the unit circle, each with deterministic actions.
///
/// Skill `i` and its start state depend only on `(seed, i)`, so results do not
/// depend on scheduling.
pub fn rollout_skills(
    controller: &dyn PrimitiveController,
    env_cfg: &Nav2dConfig,
    n: usize,
    alpha: f64,
    seed: u64,
) -> Result<Vec<SkillRollout>> {
    rollout_skills_with(Strategy::default(), controller, env_cfg, n, alpha, seed)
}

/// [`rollout_skills`] with an explicit work distribution.
pub fn rollout_skills_with(
    strategy: Strategy,
    controller: &dyn PrimitiveController,
    env_cfg: &Nav2dConfig,
    n: usize,
    alpha: f64,
    seed: u64,
) -> Result<Vec<SkillRollout>> {
    let env = Nav2d::new(env_cfg.clone())?;
    let space = SkillSpace::new(2)?;
    parallel::map_range_with(strategy, n, |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ i as u64);
        let zv = space.sample(&mut rng);
        let z = [zv[0], zv[1]];
        let mut st = env.reset_with(&mut rng);
        let mut rec = TrajectoryRecord {
            z,
            alpha,
            positions: Vec::with_capacity(env_cfg.max_steps),
            costs: Vec::with_capacity(env_cfg.max_steps),
            gt_rewards: Vec::with_capacity(env_cfg.max_steps),
        };
        while !env.is_done(&st) {
            let a = controller.primitive_action(&st.observation(), z)?;
            let (next, tr) = env.step(&st, a)?;
            rec.positions.push(next.pos);
            rec.costs.push(tr.info.cost);
            rec.gt_rewards.push(tr.info.gt_reward);
            st = next;
        }
        Ok(rec)
    })
    .into_iter()
    .collect()
}

/// Half-open bin index; a coordinate within 1e-9 bins of an edge counts as on it,
/// so decimal grid points like 0.3 land in the bin they start.
fn bin_index(x: f64) -> i64 {
    let q = x / BIN_SIZE;
    let r = q.round();
    if (q - r).abs() < 1e-9 {
        r as i64
    } else {
        q.floor() as i64
    }
}

pub fn bin_of(p: [f64; 2]) -> (i64, i64) {
    (bin_index(p[0]), bin_index(p[1]))
}

/// Distinct 0.1 × 0.1 bins touched by any position.
pub fn coverage(rollouts: &[SkillRollout]) -> usize {
    rollouts
        .iter()
        .flat_map(|r| r.positions.iter().map(|&p| bin_of(p)))
        .collect::<HashSet<_>>()
        .len()
}

/// Bins whose square intersects the closed room disc.
pub fn in_room_bins(room_radius: f64) -> usize {
    let k = (room_radius / BIN_SIZE).ceil() as i64 + 1;
    let mut n = 0;
    for i in -k..k {
        for j in -k..k {
            let (x0, y0) = (i as f64 * BIN_SIZE, j as f64 * BIN_SIZE);
            let cx = 0f64.clamp(x0, x0 + BIN_SIZE);
            let cy = 0f64.clamp(y0, y0 + BIN_SIZE);
            if cx.hypot(cy) <= room_radius {
                n += 1;
            }
        }
    }
    n
}

/// Mean over skills of the summed ground-truth reward.
pub fn alignment(rollouts: &[SkillRollout]) -> f64 {
    if rollouts.is_empty() {
        return 0.0;
    }
    rollouts
        .iter()
        .map(|r| r.gt_rewards.iter().sum::<f64>())
        .sum::<f64>()
        / rollouts.len() as f64
}

/// Mean hazard-occupied steps per skill.
pub fn cost(rollouts: &[SkillRollout]) -> f64 {
    if rollouts.is_empty() {
        return 0.0;
    }
    rollouts
        .iter()
        .map(|r| r.costs.iter().sum::<f64>())
        .sum::<f64>()
        / rollouts.len() as f64
}

/// Min-max scaling clamped to `[0, 1]`; a degenerate range maps to 0.
pub fn min_max(value: f64, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        ((value - lo) / (hi - lo)).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkillMetrics {
    pub alpha: f64,
    pub coverage: usize,
    pub alignment: f64,
    pub cost: f64,
}

pub fn skill_metrics(rollouts: &[SkillRollout], alpha: f64) -> SkillMetrics {
    SkillMetrics {
        alpha,
        coverage: coverage(rollouts),
        alignment: alignment(rollouts),
        cost: cost(rollouts),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionPoint {
    pub label: String,
    /// Occupied bins over in-room bins.
    pub coverage: f64,
    /// Min-max scaled mean return.
    pub alignment: f64,
    pub raw_coverage: usize,
    pub raw_alignment: f64,
    pub coverage_bins: usize,
    pub alignment_min: f64,
    pub alignment_max: f64,
}

impl SolutionPoint {
    pub fn new(label: impl Into<String>, m: &SkillMetrics, in_room: usize, lo: f64, hi: f64) -> Self {
        Self {
            label: label.into(),
            coverage: m.coverage as f64 / in_room.max(1) as f64,
            alignment: min_max(m.alignment, lo, hi),
            raw_coverage: m.coverage,
            raw_alignment: m.alignment,
            coverage_bins: in_room,
            alignment_min: lo,
            alignment_max: hi,
        }
    }

    pub fn xy(&self) -> (f64, f64) {
        (self.coverage, self.alignment)
    }
}

/// Alignment anchors for one experiment batch: the lowest `α = 0` and the
/// highest `α = 1` alignment. Falls back to the batch extremes when either
/// weight was not evaluated.
pub fn alignment_anchors(metrics: &[SkillMetrics]) -> (f64, f64) {
    let pick = |a: f64| metrics.iter().filter(move |m| m.alpha == a).map(|m| m.alignment);
    let all = || metrics.iter().map(|m| m.alignment);
    let lo = pick(0.0).reduce(f64::min).or_else(|| all().reduce(f64::min));
    let hi = pick(1.0).reduce(f64::max).or_else(|| all().reduce(f64::max));
    (lo.unwrap_or(0.0), hi.unwrap_or(0.0))
}

/// Normalized points for a batch sharing one set of anchors.
pub fn solution_points(
    label: &str,
    metrics: &[SkillMetrics],
    env: &Nav2dConfig,
    anchors: (f64, f64),
) -> Vec<SolutionPoint> {
    let bins = in_room_bins(env.room_radius);
    metrics
        .iter()
        .map(|m| SolutionPoint::new(format!("{label} alpha={}", m.alpha), m, bins, anchors.0, anchors.1))
        .collect()
}

/// Indices of non-dominated points (both axes maximized), in input order.
pub fn pareto_indices(points: &[(f64, f64)]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    // sweep by first axis descending, then second descending
    order.sort_by(|&a, &b| {
        points[b]
            .0
            .total_cmp(&points[a].0)
            .then(points[b].1.total_cmp(&points[a].1))
    });
    let mut keep = vec![false; points.len()];
    let mut best_y = f64::NEG_INFINITY;
    let mut i = 0;
    while i < order.len() {
        // points sharing the same x form a group; only its top y can survive
        let x = points[order[i]].0;
        let top = points[order[i]].1;
        let mut j = i;
        while j < order.len() && points[order[j]].0 == x {
            let p = points[order[j]];
            if p.1 == top && p.1 > best_y {
                keep[order[j]] = true;
            }
            j += 1;
        }
        best_y = best_y.max(top);
        i = j;
    }
    (0..points.len()).filter(|&k| keep[k]).collect()
}

pub fn pareto_filter(points: &[SolutionPoint]) -> Vec<SolutionPoint> {
    let xy: Vec<(f64, f64)> = points.iter().map(SolutionPoint::xy).collect();
    pareto_indices(&xy).into_iter().map(|i| points[i].clone()).collect()
}

/// Area dominated by `points` and bounded below by `reference`.
pub fn hypervolume_2d(points: &[(f64, f64)], reference: (f64, f64)) -> Result<f64> {
    if let Some(p) = points.iter().find(|p| !(p.0 >= reference.0 && p.1 >= reference.1)) {
        return Err(Error::invalid(format!(
            "point {p:?} does not dominate reference {reference:?}"
        )));
    }
    let mut front: Vec<(f64, f64)> = pareto_indices(points).into_iter().map(|i| points[i]).collect();
    front.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut area = 0.0;
    let mut y_prev = reference.1;
    for (x, y) in front {
        if y > y_prev {
            area += (x - reference.0) * (y - y_prev);
            y_prev = y;
        }
    }
    Ok(area)
}

fn fmt_label(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn solutions_csv(points: &[SolutionPoint]) -> String {
    let mut out = String::from(
        "label,coverage,alignment,raw_coverage,raw_alignment,coverage_bins,alignment_min,alignment_max\n",
    );
    for p in points {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            fmt_label(&p.label),
            p.coverage,
            p.alignment,
            p.raw_coverage,
            p.raw_alignment,
            p.coverage_bins,
            p.alignment_min,
            p.alignment_max
        );
    }
    out
}

/// SVG of the room, hazards and one polyline per rollout.
pub fn skills_svg(rollouts: &[SkillRollout], env: &Nav2dConfig) -> String {
    let r = env.room_radius;
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"{} {} {} {}\" width=\"600\" height=\"600\">\n",
        -r,
        -r,
        2.0 * r,
        2.0 * r
    );
    s.push_str("<g transform=\"scale(1,-1)\">\n");
    let _ = writeln!(
        s,
        "<circle cx=\"0\" cy=\"0\" r=\"{r}\" fill=\"none\" stroke=\"black\" stroke-width=\"0.02\"/>"
    );
    for h in &env.hazards {
        let _ = writeln!(
            s,
            "<circle class=\"hazard\" cx=\"{}\" cy=\"{}\" r=\"{}\" fill=\"red\" fill-opacity=\"0.3\"/>",
            h.center[0], h.center[1], h.radius
        );
    }
    for ro in rollouts {
        let hue = (ro.z[1].atan2(ro.z[0]).to_degrees() + 360.0) % 360.0;
        let pts: Vec<String> = ro.positions.iter().map(|p| format!("{:.4},{:.4}", p[0], p[1])).collect();
        let _ = writeln!(
            s,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"hsl({hue:.0},70%,45%)\" stroke-width=\"0.02\"/>",
            pts.join(" ")
        );
    }
    s.push_str("</g>\n</svg>\n");
    s
}

/// Writes `trajectories.jsonl`, `solutions.csv`, `front.csv`, `hypervolume.txt` and `skills.svg`.
pub fn export_plot_data(
    dir: &Path,
    rollouts: &[SkillRollout],
    points: &[SolutionPoint],
    env: &Nav2dConfig,
) -> Result<f64> {
    std::fs::create_dir_all(dir)?;
    write_trajectories(&dir.join("trajectories.jsonl"), rollouts)?;
    std::fs::write(dir.join("solutions.csv"), solutions_csv(points))?;
    let front = pareto_filter(points);
    std::fs::write(dir.join("front.csv"), solutions_csv(&front))?;
    let xy: Vec<(f64, f64)> = front.iter().map(SolutionPoint::xy).collect();
    let hv = hypervolume_2d(&xy, (0.0, 0.0))?;
    let mut f = std::fs::File::create(dir.join("hypervolume.txt"))?;
    writeln!(f, "{hv}")?;
    std::fs::write(dir.join("skills.svg"), skills_svg(rollouts, env))?;
    Ok(hv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::read_trajectories;

    struct Still;
    impl PrimitiveController for Still {
        fn primitive_action(&self, _obs: &[f64], _z: [f64; 2]) -> Result<[f64; 2]> {
            Ok([0.0, 0.0])
        }
    }

    struct Follow;
    impl PrimitiveController for Follow {
        fn primitive_action(&self, _obs: &[f64], z: [f64; 2]) -> Result<[f64; 2]> {
            Ok(z)
        }
    }

    fn record(positions: Vec<[f64; 2]>) -> SkillRollout {
        let n = positions.len();
        TrajectoryRecord {
            z: [1.0, 0.0],
            alpha: 0.0,
            positions,
            costs: vec![0.0; n],
            gt_rewards: vec![0.0; n],
        }
    }

    #[test]
    fn rollout_basics() {
        let cfg = Nav2dConfig::default();
        assert!(rollout_skills(&Still, &cfg, 0, 0.0, 1).unwrap().is_empty());
        let still = rollout_skills(&Still, &cfg, 5, 0.0, 1).unwrap();
        for r in &still {
            assert_eq!(r.positions.len(), 75);
            assert!(r.positions.iter().all(|p| *p == [0.0, 0.0]));
        }
        assert_eq!(coverage(&still), 1);
        assert_eq!(alignment(&still), 0.0);
        assert_eq!(cost(&still), 0.0);
        let a = rollout_skills(&Follow, &cfg, 8, 0.2, 3).unwrap();
        let b = rollout_skills(&Follow, &cfg, 8, 0.2, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn straight_line_covers_eleven_bins() {
        let line: Vec<[f64; 2]> = (0..=10).map(|k| [k as f64 / 10.0, 0.0]).collect();
        assert_eq!(coverage(&[record(line)]), 11);
    }

    #[test]
    fn pinned_in_hazard_costs_every_step() {
        let mut r = record(vec![[1.75, 1.75]; 75]);
        r.costs = vec![1.0; 75];
        r.gt_rewards = vec![-1.0; 75];
        assert_eq!(cost(&[r.clone()]), 75.0);
        assert_eq!(alignment(&[r]), -75.0);
    }

    #[test]
    fn pareto_examples() {
        assert_eq!(pareto_indices(&[(0.3, 0.3)]), vec![0]);
        assert_eq!(pareto_indices(&[(1.0, 0.0), (0.0, 1.0), (0.5, 0.5)]), vec![0, 1, 2]);
        assert_eq!(pareto_indices(&[(1.0, 1.0), (0.5, 0.5), (1.0, 0.5)]), vec![0]);
        assert_eq!(pareto_indices(&[(1.0, 1.0), (1.0, 1.0)]), vec![0, 1]);
    }

    #[test]
    fn hypervolume_examples() {
        assert_eq!(hypervolume_2d(&[(1.0, 1.0)], (0.0, 0.0)).unwrap(), 1.0);
        assert_eq!(hypervolume_2d(&[], (0.0, 0.0)).unwrap(), 0.0);
        assert!((hypervolume_2d(&[(0.5, 1.0), (1.0, 0.5)], (0.0, 0.0)).unwrap() - 0.75).abs() < 1e-15);
        assert!(hypervolume_2d(&[(-0.1, 0.5)], (0.0, 0.0)).is_err());
    }

    #[test]
    fn in_room_bin_count_is_plausible() {
        let n = in_room_bins(4.0) as f64;
        let area = std::f64::consts::PI * 16.0 / 0.01;
        assert!(n > area && n < area * 1.1, "{n}");
    }

    #[test]
    fn export_writes_all_files() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = Nav2dConfig::default();
        let hv = export_plot_data(dir.path(), &[], &[], &cfg).unwrap();
        assert_eq!(hv, 0.0);
        for f in ["trajectories.jsonl", "solutions.csv", "front.csv", "hypervolume.txt", "skills.svg"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let ro = rollout_skills(&Follow, &cfg, 6, 0.0, 9).unwrap();
        let m = skill_metrics(&ro, 0.0);
        let p = SolutionPoint::new("lsd,a=0", &m, in_room_bins(4.0), -10.0, 100.0);
        export_plot_data(dir.path(), &ro, &[p], &cfg).unwrap();
        let svg = std::fs::read_to_string(dir.path().join("skills.svg")).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 6);
        let back = read_trajectories(&dir.path().join("trajectories.jsonl")).unwrap();
        assert_eq!(skill_metrics(&back, 0.0), m);
        let csv = std::fs::read_to_string(dir.path().join("solutions.csv")).unwrap();
        assert!(csv.lines().nth(1).unwrap().starts_with("\"lsd,a=0\","));
    }

    #[test]
    fn anchors_use_extreme_weights() {
        let m = |alpha, alignment| SkillMetrics {
            alpha,
            coverage: 0,
            alignment,
            cost: 0.0,
        };
        let batch = [m(0.0, 10.0), m(0.0, 12.0), m(0.2, 30.0), m(1.0, 40.0), m(1.0, 38.0)];
        assert_eq!(alignment_anchors(&batch), (10.0, 40.0));
        assert_eq!(alignment_anchors(&batch[2..3]), (30.0, 30.0));
        let pts = solution_points("x", &batch, &Nav2dConfig::default(), (10.0, 40.0));
        assert_eq!(pts[2].alignment, 20.0 / 30.0);
        assert_eq!(pts[0].label, "x alpha=0");
    }
}
