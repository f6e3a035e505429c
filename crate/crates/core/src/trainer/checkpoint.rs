//! Whole-trainer checkpoints: everything needed to continue a run bit-identically.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::run::{Episode, MetricsRow, PendingSession, SessionReport, Trainer, Window};
use super::{config_hash, AlphaSchedule, Mode, ObsLayout, TeacherConfig, TrainerConfig};
use crate::checkpoint::{put_f64, put_f64s, put_u64, put_u8, take_f64, take_f64s, take_u64, take_u8, Container};
use crate::envs::{EnvState, Nav2d};
use crate::error::{Error, Result};
use crate::preference::{read_pairs, write_pairs, PreferenceBuffer, RewardEnsemble, Teacher};
use crate::sac::{ReplayBuffer, SacAgent};
use crate::skills::{PhiNetwork, SkillSpace};

const FORMAT: &str = "hasd-trainer-1";

fn put_xy(out: &mut Vec<u8>, p: [f64; 2]) {
    put_f64(out, p[0]);
    put_f64(out, p[1]);
}

fn take_xy(b: &mut &[u8]) -> Result<[f64; 2]> {
    Ok([take_f64(b)?, take_f64(b)?])
}

fn write_env_state(out: &mut Vec<u8>, s: &EnvState) {
    put_xy(out, s.pos);
    put_u64(out, s.t as u64);
    put_u64(out, s.history.len() as u64);
    for p in &s.history {
        put_xy(out, *p);
    }
    put_xy(out, s.start_pos);
    for p in s.recent {
        put_xy(out, p);
    }
}

fn read_env_state(b: &mut &[u8]) -> Result<EnvState> {
    let pos = take_xy(b)?;
    let t = take_u64(b)? as usize;
    let n = take_u64(b)? as usize;
    let history = (0..n).map(|_| take_xy(b)).collect::<Result<Vec<_>>>()?;
    let start_pos = take_xy(b)?;
    let recent = [take_xy(b)?, take_xy(b)?, take_xy(b)?];
    let mut s = EnvState::at(start_pos, n);
    s.pos = pos;
    s.t = t;
    s.history = history;
    s.recent = recent;
    Ok(s)
}

fn write_rng(out: &mut Vec<u8>, rng: &ChaCha8Rng) {
    out.extend_from_slice(&rng.get_seed());
    put_u64(out, rng.get_stream());
    let pos = rng.get_word_pos();
    put_u64(out, (pos >> 64) as u64);
    put_u64(out, pos as u64);
}

fn read_rng(b: &mut &[u8]) -> Result<ChaCha8Rng> {
    if b.len() < 32 {
        return Err(Error::Checkpoint("truncated rng state".into()));
    }
    let (seed, rest) = b.split_at(32);
    *b = rest;
    let mut rng = ChaCha8Rng::from_seed(seed.try_into().expect("32 bytes"));
    rng.set_stream(take_u64(b)?);
    let hi = take_u64(b)? as u128;
    let lo = take_u64(b)? as u128;
    rng.set_word_pos((hi << 64) | lo);
    Ok(rng)
}

fn put_opt(out: &mut Vec<u8>, v: Option<&[f64]>) {
    match v {
        Some(a) => {
            put_u8(out, 1);
            put_f64s(out, a);
        }
        None => put_u8(out, 0),
    }
}

fn take_opt(b: &mut &[u8]) -> Result<Option<Vec<f64>>> {
    Ok(match take_u8(b)? {
        0 => None,
        _ => Some(take_f64s(b)?),
    })
}

fn rows_bytes<const N: usize>(rows: impl Iterator<Item = [f64; N]>) -> Vec<u8> {
    let flat: Vec<f64> = rows.flatten().collect();
    let mut out = Vec::new();
    put_f64s(&mut out, &flat);
    out
}

fn rows_from<T>(bytes: &[u8], width: usize, f: impl Fn(&[f64]) -> T) -> Result<Vec<T>> {
    let mut b = bytes;
    let flat = take_f64s(&mut b)?;
    if flat.len() % width != 0 {
        return Err(Error::Checkpoint("log table has a ragged row".into()));
    }
    Ok(flat.chunks(width).map(f).collect())
}

impl Trainer {
    pub fn to_container(&self) -> Container {
        let mut c = Container::new();
        c.insert("format", FORMAT.as_bytes().to_vec());
        c.insert("config", serde_json::to_vec(&self.cfg).expect("config serializes"));
        c.insert("config_hash", self.hash.as_bytes().to_vec());
        self.agent.save_into(&mut c, "agent");
        let mut b = Vec::new();
        self.phi.write(&mut b);
        c.insert("phi", b);
        let mut b = Vec::new();
        self.reward_model.write(&mut b);
        c.insert("reward_model", b);
        if let Some(Teacher::Model(m)) = &self.teacher {
            let mut b = Vec::new();
            m.write(&mut b);
            c.insert("teacher", b);
        }
        let mut b = Vec::new();
        self.prefs.write(&mut b);
        c.insert("preferences", b);
        let mut b = Vec::new();
        self.replay.write(&mut b);
        c.insert("replay", b);

        let mut s = Vec::new();
        put_u64(&mut s, self.step);
        write_rng(&mut s, &self.rng);
        write_env_state(&mut s, &self.episode.state);
        put_f64s(&mut s, &self.episode.z);
        put_f64(&mut s, self.episode.alpha);
        put_u64(&mut s, self.labels_consumed);
        put_u64(&mut s, self.next_query_id);
        put_u8(&mut s, self.reward_trained as u8);
        put_f64s(&mut s, &self.window.as_array());
        put_opt(&mut s, self.last_session.map(|r| r.as_array()).as_ref().map(|a| &a[..]));
        match &self.pending {
            Some(p) => {
                put_u8(&mut s, 1);
                put_u64(&mut s, p.session);
                write_pairs(&mut s, &p.queries);
            }
            None => put_u8(&mut s, 0),
        }
        c.insert("state", s);
        c.insert("metrics", rows_bytes(self.metrics.iter().map(MetricsRow::as_array)));
        c.insert("sessions", rows_bytes(self.sessions.iter().map(SessionReport::as_array)));
        c
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        // write then rename so a crash never leaves a half-written checkpoint
        let tmp = path.with_extension("tmp");
        self.to_container().save(&tmp)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let format = String::from_utf8_lossy(c.get("format")?);
        if format != FORMAT {
            return Err(Error::Checkpoint(format!("unsupported trainer format '{format}'")));
        }
        let cfg: TrainerConfig =
            serde_json::from_slice(c.get("config")?).map_err(|e| Error::Checkpoint(format!("config: {e}")))?;
        let stored = String::from_utf8_lossy(c.get("config_hash")?).into_owned();
        let hash = config_hash(&cfg);
        if stored != hash {
            return Err(Error::Checkpoint(format!(
                "config hash mismatch: stored {stored}, computed {hash}"
            )));
        }
        let env = Nav2d::new(cfg.env.clone())?;
        let layout = ObsLayout {
            obs_dim: cfg.env.obs_dim(),
            skill_dim: cfg.skills.skill_dim,
            mode: cfg.mode.alpha_mode(),
        };
        let mut alpha_cfg = cfg.alpha.clone();
        if cfg.mode == Mode::Lsd {
            alpha_cfg.c = 0.0;
        }
        let schedule = AlphaSchedule::new(layout.mode, &alpha_cfg)?;
        let agent = SacAgent::load_from(c, "agent")?;
        let phi = PhiNetwork::read(&mut c.get("phi")?)?;
        let reward_model = RewardEnsemble::read(&mut c.get("reward_model")?)?;
        let teacher = match &cfg.teacher {
            TeacherConfig::GroundTruth => Some(Teacher::GroundTruth),
            TeacherConfig::Model(_) => Some(Teacher::Model(Box::new(RewardEnsemble::read(&mut c.get("teacher")?)?))),
            TeacherConfig::Human => None,
        };
        let prefs = PreferenceBuffer::read(&mut c.get("preferences")?)?;
        let replay = ReplayBuffer::read(&mut c.get("replay")?)?;
        if replay.dims() != (layout.obs_dim, 2, layout.cond_dim()) {
            return Err(Error::Checkpoint("replay dimensions do not match the config".into()));
        }

        let mut s = c.get("state")?;
        let step = take_u64(&mut s)?;
        let rng = read_rng(&mut s)?;
        let state = read_env_state(&mut s)?;
        let z = take_f64s(&mut s)?;
        let alpha = take_f64(&mut s)?;
        let labels_consumed = take_u64(&mut s)?;
        let next_query_id = take_u64(&mut s)?;
        let reward_trained = take_u8(&mut s)? == 1;
        let w = take_f64s(&mut s)?;
        if w.len() != Window::FIELDS {
            return Err(Error::Checkpoint("bad metrics window".into()));
        }
        let window = Window::from_array(&w);
        let last_session = take_opt(&mut s)?
            .filter(|a| a.len() == SessionReport::FIELDS)
            .map(|a| SessionReport::from_array(&a));
        let pending = match take_u8(&mut s)? {
            0 => None,
            _ => Some(PendingSession {
                session: take_u64(&mut s)?,
                queries: read_pairs(&mut s)?,
            }),
        };
        let metrics = rows_from(c.get("metrics")?, MetricsRow::FIELDS, MetricsRow::from_array)?;
        let sessions = rows_from(c.get("sessions")?, SessionReport::FIELDS, SessionReport::from_array)?;
        Ok(Self {
            space: SkillSpace::new(cfg.skills.skill_dim)?,
            cfg,
            hash,
            env,
            layout,
            schedule,
            agent,
            phi,
            reward_model,
            reward_trained,
            teacher,
            prefs,
            replay,
            rng,
            step,
            episode: Episode { state, z, alpha },
            labels_consumed,
            next_query_id,
            window,
            last_session,
            pending,
            metrics,
            sessions,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::load(path)?)
    }
}
