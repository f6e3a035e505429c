//! JSON Lines trajectory export, one record per episode.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub z: [f64; 2],
    pub alpha: f64,
    pub positions: Vec<[f64; 2]>,
    pub costs: Vec<f64>,
    pub gt_rewards: Vec<f64>,
}

pub fn write_trajectories(path: &Path, records: &[TrajectoryRecord]) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trajectories(path: &Path) -> Result<Vec<TrajectoryRecord>> {
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
        out.push(rec);
    }
    Ok(out)
}
