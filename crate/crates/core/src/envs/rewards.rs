//! Ground-truth rewards that stand in for a human teacher.

use serde::{Deserialize, Serialize};

use super::nav2d::HazardCircle;

/// Which hand-written preference the simulated teacher follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GtSpec {
    /// Travel far from the start while avoiding hazards.
    #[default]
    DistanceSafe,
    /// Travel far from the start inside the open first quadrant.
    NorthEast,
    /// Turn by a right angle across the last three positions.
    LShape,
}

impl std::str::FromStr for GtSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "distance_safe" => Ok(GtSpec::DistanceSafe),
            "north_east" => Ok(GtSpec::NorthEast),
            "l_shape" => Ok(GtSpec::LShape),
            other => Err(format!("unknown ground-truth reward '{other}'")),
        }
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

pub fn in_any_hazard(pos: [f64; 2], hazards: &[HazardCircle]) -> bool {
    hazards.iter().any(|h| h.contains(pos))
}

/// `‖a_t − a_0‖ + ‖a_t − a_{t−1}‖ − 1[a_t in a hazard]`.
pub fn gt_reward_distance_safe(
    pos: [f64; 2],
    prev: [f64; 2],
    start: [f64; 2],
    hazards: &[HazardCircle],
) -> f64 {
    let penalty = if in_any_hazard(pos, hazards) { 1.0 } else { 0.0 };
    dist(pos, start) + dist(pos, prev) - penalty
}

/// `‖a_t − a_0‖` when `a_t` lies in the open first quadrant, else −1.
pub fn gt_reward_north_east(pos: [f64; 2], start: [f64; 2]) -> f64 {
    if pos[0] > 0.0 && pos[1] > 0.0 {
        dist(pos, start)
    } else {
        -1.0
    }
}

/// `1 − |θ − 90|` with θ in degrees between the two most recent displacements.
///
/// `positions` is oldest first: `(a_{t−2}, a_{t−1}, a_t)`. A zero-length
/// displacement counts as θ = 0.
pub fn gt_reward_l_shape(positions: [[f64; 2]; 3]) -> f64 {
    let d1 = [
        positions[1][0] - positions[0][0],
        positions[1][1] - positions[0][1],
    ];
    let d2 = [
        positions[2][0] - positions[1][0],
        positions[2][1] - positions[1][1],
    ];
    let n1 = d1[0].hypot(d1[1]);
    let n2 = d2[0].hypot(d2[1]);
    let theta = if n1 < 1e-9 || n2 < 1e-9 {
        0.0
    } else {
        let cos = ((d1[0] * d2[0] + d1[1] * d2[1]) / (n1 * n2)).clamp(-1.0, 1.0);
        cos.acos().to_degrees()
    };
    1.0 - (theta - 90.0).abs()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn default_hazards() -> Vec<HazardCircle> {
        super::super::Nav2dConfig::default().hazards
    }

    #[test]
    fn distance_safe_examples() {
        let hz = default_hazards();
        let r = gt_reward_distance_safe([0.5, 0.0], [0.4, 0.0], [0.0, 0.0], &hz);
        assert!((r - 0.6).abs() < 1e-12);
        assert_eq!(gt_reward_distance_safe([0.2, 0.1], [0.2, 0.1], [0.2, 0.1], &hz), 0.0);
        let c = hz[0].center;
        assert_eq!(gt_reward_distance_safe(c, c, c, &hz), -1.0);
    }

    #[test]
    fn north_east_examples() {
        assert!((gt_reward_north_east([0.3, 0.4], [0.0, 0.0]) - 0.5).abs() < 1e-12);
        assert_eq!(gt_reward_north_east([-0.3, 0.4], [0.0, 0.0]), -1.0);
        assert_eq!(gt_reward_north_east([0.1, 0.1], [0.1, 0.1]), 0.0);
        // axes are not part of the open quadrant
        assert_eq!(gt_reward_north_east([0.0, 1.0], [0.0, 0.0]), -1.0);
    }

    #[test]
    fn l_shape_examples() {
        assert!((gt_reward_l_shape([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]]) - 1.0).abs() < 1e-12);
        assert!((gt_reward_l_shape([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]) + 89.0).abs() < 1e-12);
        let a = 60f64.to_radians();
        let r = gt_reward_l_shape([[0.0, 0.0], [1.0, 0.0], [1.0 + a.cos(), a.sin()]]);
        // closed form: θ = 60 → 1 − 30
        assert!((r + 29.0).abs() < 1e-9, "{r}");
        assert_eq!(gt_reward_l_shape([[0.0, 0.0], [0.0, 0.0], [1.0, 0.0]]), -89.0);
    }

    #[test]
    fn l_shape_reversal_is_worst() {
        let r = gt_reward_l_shape([[0.0, 0.0], [1.0, 0.0], [0.0, 0.0]]);
        assert!((r + 89.0).abs() < 1e-9);
    }
}
