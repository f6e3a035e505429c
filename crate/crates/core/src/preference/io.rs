//! JSON Lines query export and human label import.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Label, LabelSource, PreferenceBuffer, QueryPair, RewardConfig, RewardEnsemble, Segment, TrainReport};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentRecord {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryMeta {
    pub episodes: [u64; 2],
    pub starts: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryRecord {
    pub id: u64,
    pub seg1: SegmentRecord,
    pub seg2: SegmentRecord,
    pub meta: QueryMeta,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Choice {
    #[serde(rename = "1")]
    First,
    #[serde(rename = "2")]
    Second,
    #[serde(rename = "tie")]
    Tie,
    #[serde(rename = "skip")]
    Skip,
}

impl Choice {
    pub fn label(self) -> Option<Label> {
        match self {
            Choice::First => Some(Label::First),
            Choice::Second => Some(Label::Second),
            Choice::Tie => Some(Label::Tie),
            Choice::Skip => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelRecord {
    pub id: u64,
    pub choice: Choice,
}

impl QueryRecord {
    pub fn from_pair(p: &QueryPair) -> Self {
        let seg = |s: &Segment| SegmentRecord {
            states: s.states.clone(),
            actions: s.actions.clone(),
        };
        Self {
            id: p.id,
            seg1: seg(&p.seg1),
            seg2: seg(&p.seg2),
            meta: QueryMeta {
                episodes: [p.seg1.episode, p.seg2.episode],
                starts: [p.seg1.start, p.seg2.start],
            },
        }
    }

    pub fn to_pair(&self) -> Result<QueryPair> {
        let seg = |s: &SegmentRecord, k: usize| -> Result<Segment> {
            if s.states.len() != s.actions.len() {
                return Err(Error::invalid(format!(
                    "query {}: {} states but {} actions",
                    self.id,
                    s.states.len(),
                    s.actions.len()
                )));
            }
            Ok(Segment {
                states: s.states.clone(),
                actions: s.actions.clone(),
                gt_rewards: Vec::new(),
                episode: self.meta.episodes[k],
                start: self.meta.starts[k],
            })
        };
        QueryPair::new(self.id, seg(&self.seg1, 0)?, seg(&self.seg2, 1)?)
    }
}

fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<usize> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    let mut n = 0;
    for it in items {
        serde_json::to_writer(&mut w, &it)?;
        w.write_all(b"\n")?;
        n += 1;
    }
    w.flush()?;
    Ok(n)
}

/// Parses every non-blank line or fails on the first bad one.
fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Malformed {
            path: path.to_path_buf(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        out.push((i + 1, rec));
    }
    Ok(out)
}

pub fn export_queries(pairs: &[QueryPair], path: &Path) -> Result<usize> {
    write_jsonl(path, pairs.iter().map(QueryRecord::from_pair))
}

pub fn read_queries(path: &Path) -> Result<Vec<QueryPair>> {
    let mut seen = HashSet::new();
    read_jsonl::<QueryRecord>(path)?
        .into_iter()
        .map(|(line, r)| {
            let malformed = |reason: String| Error::Malformed {
                path: path.to_path_buf(),
                line,
                reason,
            };
            if !seen.insert(r.id) {
                return Err(malformed(format!("duplicate query id {}", r.id)));
            }
            r.to_pair().map_err(|e| malformed(e.to_string()))
        })
        .collect()
}

pub fn write_labels(labels: &[LabelRecord], path: &Path) -> Result<usize> {
    write_jsonl(path, labels.iter())
}

pub fn read_labels(path: &Path) -> Result<Vec<LabelRecord>> {
    Ok(read_jsonl(path)?.into_iter().map(|(_, r)| r).collect())
}

/// Appends human-labeled copies of `queries` to `buffer`; skips are dropped.
///
/// The whole file is validated before anything is appended.
pub fn import_human_labels(queries: &[QueryPair], path: &Path, buffer: &mut PreferenceBuffer) -> Result<usize> {
    let by_id: HashMap<u64, &QueryPair> = queries.iter().map(|q| (q.id, q)).collect();
    let mut seen = HashSet::new();
    let mut accepted = Vec::new();
    for (line, rec) in read_jsonl::<LabelRecord>(path)? {
        let malformed = |reason: String| Error::Malformed {
            path: path.to_path_buf(),
            line,
            reason,
        };
        let q = by_id
            .get(&rec.id)
            .ok_or_else(|| malformed(format!("unknown query id {}", rec.id)))?;
        if !seen.insert(rec.id) {
            return Err(malformed(format!("query {} labeled twice", rec.id)));
        }
        if let Some(label) = rec.choice.label() {
            let mut p = (*q).clone();
            p.label = Some(label);
            p.source = LabelSource::Human;
            accepted.push(p);
        }
    }
    let n = accepted.len();
    for p in accepted {
        buffer.push(p)?;
    }
    Ok(n)
}

/// Fits a fresh reward model to a labeled query file, for use as a teacher.
///
/// Returns the model, its training report and the number of usable labels.
pub fn fit_reward_from_labels(
    queries: &[QueryPair],
    labels: &Path,
    cfg: RewardConfig,
    seed: u64,
) -> Result<(RewardEnsemble, TrainReport, usize)> {
    let mut buffer = PreferenceBuffer::new();
    let n = import_human_labels(queries, labels, &mut buffer)?;
    let first = buffer
        .pairs()
        .first()
        .ok_or_else(|| Error::invalid("label file holds no usable (non-skip) labels"))?;
    let input_dim = first.seg1.states[0].len() + first.seg1.actions[0].len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = RewardEnsemble::new(input_dim, cfg, &mut rng)?;
    let report = model.train(&buffer)?;
    Ok((model, report, n))
}
