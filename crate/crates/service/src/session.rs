use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use hasd::envs::{HazardCircle, Nav2dConfig};
use hasd::preference::{read_queries, write_labels, Choice, LabelRecord, QueryPair, Segment};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum LabelError {
    #[error("no query with id {0}")]
    UnknownId(u64),
    #[error("query {0} already labeled")]
    AlreadyLabeled(u64),
}

/// Room outline shown behind both segments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub room_radius: f64,
    pub hazards: Vec<HazardCircle>,
}

impl From<&Nav2dConfig> for Geometry {
    fn from(c: &Nav2dConfig) -> Self {
        Self {
            room_radius: c.room_radius,
            hazards: c.hazards.clone(),
        }
    }
}

/// What `GET /api/queries/next` returns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryView {
    pub id: u64,
    pub seg1: Vec<[f64; 2]>,
    pub seg2: Vec<[f64; 2]>,
    pub env: Geometry,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub labeled: usize,
    pub skipped: usize,
    pub remaining: usize,
}

/// Agent positions of a segment: the newest position in each stacked state.
pub fn polyline(seg: &Segment) -> Vec<[f64; 2]> {
    seg.states
        .iter()
        .filter(|s| s.len() >= 2)
        .map(|s| [s[s.len() - 2], s[s.len() - 1]])
        .collect()
}

/// Labeling state for one exported query file.
#[derive(Debug)]
pub struct FeedbackSession {
    queries: Vec<QueryPair>,
    geometry: Geometry,
    /// Skips are stored too so a query is answered at most once.
    answers: BTreeMap<u64, Choice>,
    export_path: PathBuf,
}

impl FeedbackSession {
    pub fn new(mut queries: Vec<QueryPair>, env: &Nav2dConfig, export_path: PathBuf) -> Self {
        queries.sort_by_key(|q| q.id);
        Self {
            queries,
            geometry: env.into(),
            answers: BTreeMap::new(),
            export_path,
        }
    }

    pub fn load(queries: &Path, env: &Nav2dConfig, export_path: PathBuf) -> hasd::Result<Self> {
        Ok(Self::new(read_queries(queries)?, env, export_path))
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    /// Lowest-id query without an answer.
    pub fn next(&self) -> Option<QueryView> {
        self.queries
            .iter()
            .find(|q| !self.answers.contains_key(&q.id))
            .map(|q| QueryView {
                id: q.id,
                seg1: polyline(&q.seg1),
                seg2: polyline(&q.seg2),
                env: self.geometry.clone(),
            })
    }

    pub fn label(&mut self, id: u64, choice: Choice) -> Result<(), LabelError> {
        if self.queries.binary_search_by_key(&id, |q| q.id).is_err() {
            return Err(LabelError::UnknownId(id));
        }
        if self.answers.contains_key(&id) {
            return Err(LabelError::AlreadyLabeled(id));
        }
        self.answers.insert(id, choice);
        Ok(())
    }

    pub fn progress(&self) -> Progress {
        let skipped = self.answers.values().filter(|c| **c == Choice::Skip).count();
        Progress {
            labeled: self.answers.len() - skipped,
            skipped,
            remaining: self.queries.len() - self.answers.len(),
        }
    }

    /// Writes every answer so far, skips included, in id order.
    pub fn export(&self) -> hasd::Result<(PathBuf, usize)> {
        if let Some(dir) = self.export_path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let records: Vec<LabelRecord> = self
            .answers
            .iter()
            .map(|(&id, &choice)| LabelRecord { id, choice })
            .collect();
        let n = write_labels(&records, &self.export_path)?;
        Ok((self.export_path.clone(), n))
    }
}
