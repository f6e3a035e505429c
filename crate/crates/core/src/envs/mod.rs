//! The Nav2d environment family and its ground-truth rewards.

mod goal;
mod nav2d;
mod rewards;
mod trajectory;

pub use goal::{GoalEnv, GoalState, GoalStep, GoalTaskConfig, PrimitiveController};
pub use nav2d::{EnvState, HazardCircle, Nav2d, Nav2dConfig, StepInfo, Transition};
pub use rewards::{
    gt_reward_distance_safe, gt_reward_l_shape, gt_reward_north_east, in_any_hazard, GtSpec,
};
pub use trajectory::{read_trajectories, write_trajectories, TrajectoryRecord};
