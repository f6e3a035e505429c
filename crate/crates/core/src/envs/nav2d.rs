use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::rewards::{
    gt_reward_distance_safe, gt_reward_l_shape, gt_reward_north_east, in_any_hazard, GtSpec,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HazardCircle {
    pub center: [f64; 2],
    pub radius: f64,
}

impl HazardCircle {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        (p[0] - self.center[0]).hypot(p[1] - self.center[1]) <= self.radius
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Nav2dConfig {
    pub room_radius: f64,
    pub hazards: Vec<HazardCircle>,
    pub max_steps: usize,
    pub step_scale: f64,
    pub state_stack: usize,
    pub random_start: bool,
    pub gt_spec: GtSpec,
}

impl Default for Nav2dConfig {
    fn default() -> Self {
        let hazards = [(1.75, 1.75), (-1.75, 1.75), (-1.75, -1.75), (1.75, -1.75)]
            .into_iter()
            .map(|(x, y)| HazardCircle {
                center: [x, y],
                radius: 0.6,
            })
            .collect();
        Self {
            room_radius: 4.0,
            hazards,
            max_steps: 75,
            step_scale: 0.12,
            state_stack: 1,
            random_start: false,
            gt_spec: GtSpec::DistanceSafe,
        }
    }
}

impl Nav2dConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.room_radius > 0.0 && self.step_scale > 0.0) {
            return Err(Error::Config("room_radius and step_scale must be positive".into()));
        }
        if self.max_steps == 0 {
            return Err(Error::Config("max_steps must be positive".into()));
        }
        if !matches!(self.state_stack, 1 | 3) {
            return Err(Error::Config(format!(
                "state_stack must be 1 or 3, got {}",
                self.state_stack
            )));
        }
        if self.gt_spec == GtSpec::LShape && self.state_stack != 3 {
            return Err(Error::Config("l_shape rewards need state_stack = 3".into()));
        }
        for h in &self.hazards {
            let c = h.center[0].hypot(h.center[1]);
            if !(h.radius > 0.0) || c + h.radius > self.room_radius {
                return Err(Error::Config(format!("hazard {h:?} not inside the room")));
            }
        }
        Ok(())
    }

    pub fn obs_dim(&self) -> usize {
        2 * self.state_stack
    }

    pub fn in_hazard(&self, p: [f64; 2]) -> bool {
        in_any_hazard(p, &self.hazards)
    }

    /// Radial projection onto the room disc.
    pub fn clip_to_room(&self, p: [f64; 2]) -> [f64; 2] {
        let n = p[0].hypot(p[1]);
        if n > self.room_radius {
            let s = self.room_radius / n;
            [p[0] * s, p[1] * s]
        } else {
            p
        }
    }

    /// Uniform point in the room outside every hazard.
    pub fn sample_free_point<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; 2] {
        loop {
            let r = self.room_radius * rng.random::<f64>().sqrt();
            let a = rng.random::<f64>() * std::f64::consts::TAU;
            let p = [r * a.cos(), r * a.sin()];
            if !self.in_hazard(p) {
                return p;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub pos: [f64; 2],
    pub t: usize,
    /// Last `state_stack` positions, oldest first.
    pub history: Vec<[f64; 2]>,
    pub start_pos: [f64; 2],
    /// Last three positions regardless of stacking, oldest first.
    pub(crate) recent: [[f64; 2]; 3],
}

impl EnvState {
    pub fn at(pos: [f64; 2], state_stack: usize) -> Self {
        Self {
            pos,
            t: 0,
            history: vec![pos; state_stack],
            start_pos: pos,
            recent: [pos; 3],
        }
    }

    pub fn observation(&self) -> Vec<f64> {
        self.history.iter().flatten().copied().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StepInfo {
    pub hazard: bool,
    pub gt_reward: f64,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: [f64; 2],
    pub next_obs: Vec<f64>,
    pub done: bool,
    pub info: StepInfo,
}

#[derive(Debug, Clone)]
pub struct Nav2d {
    cfg: Nav2dConfig,
}

impl Nav2d {
    pub fn new(cfg: Nav2dConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg })
    }

    pub fn config(&self) -> &Nav2dConfig {
        &self.cfg
    }

    pub fn reset(&self, seed: u64) -> EnvState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.reset_with(&mut rng)
    }

    pub fn reset_with<R: Rng + ?Sized>(&self, rng: &mut R) -> EnvState {
        let pos = if self.cfg.random_start {
            self.cfg.sample_free_point(rng)
        } else {
            [0.0, 0.0]
        };
        EnvState::at(pos, self.cfg.state_stack)
    }

    pub fn is_done(&self, st: &EnvState) -> bool {
        st.t >= self.cfg.max_steps
    }

    pub fn step(&self, st: &EnvState, action: [f64; 2]) -> Result<(EnvState, Transition)> {
        if self.is_done(st) {
            return Err(Error::Env(format!("step after episode end (t = {})", st.t)));
        }
        if !action.iter().all(|a| a.is_finite()) {
            return Err(Error::NonFinite("action".into()));
        }
        let a = [action[0].clamp(-1.0, 1.0), action[1].clamp(-1.0, 1.0)];
        let pos = self.cfg.clip_to_room([
            st.pos[0] + self.cfg.step_scale * a[0],
            st.pos[1] + self.cfg.step_scale * a[1],
        ]);
        let mut next = st.clone();
        next.pos = pos;
        next.t = st.t + 1;
        next.history.remove(0);
        next.history.push(pos);
        next.recent = [st.recent[1], st.recent[2], pos];

        let hazard = self.cfg.in_hazard(pos);
        let gt_reward = match self.cfg.gt_spec {
            GtSpec::DistanceSafe => {
                gt_reward_distance_safe(pos, st.pos, st.start_pos, &self.cfg.hazards)
            }
            GtSpec::NorthEast => gt_reward_north_east(pos, st.start_pos),
            GtSpec::LShape => gt_reward_l_shape(next.recent),
        };
        let tr = Transition {
            obs: st.observation(),
            action: a,
            next_obs: next.observation(),
            done: self.is_done(&next),
            info: StepInfo {
                hazard,
                gt_reward,
                cost: if hazard { 1.0 } else { 0.0 },
            },
        };
        Ok((next, tr))
    }
}
