//! Versioned binary container for checkpoints.
//!
//! Layout: the 5-byte magic `HASD1`, a `u32` section count, then for every
//! section a length-prefixed UTF-8 name and a `u64` length-prefixed payload.
//! All integers and floats are little-endian.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 5] = b"HASD1";

#[derive(Debug, Default, Clone, PartialEq)]
pub struct Container {
    sections: BTreeMap<String, Vec<u8>>,
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, payload: Vec<u8>) {
        self.sections.insert(name.into(), payload);
    }

    pub fn get(&self, name: &str) -> Result<&[u8]> {
        self.sections
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Checkpoint(format!("missing section '{name}'")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.sections.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.sections.keys().map(String::as_str)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.sections.len() as u32).to_le_bytes());
        for (name, payload) in &self.sections {
            put_str(&mut out, name);
            put_u64(&mut out, payload.len() as u64);
            out.extend_from_slice(payload);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::Checkpoint("bad magic header".into()));
        }
        let mut rest = &bytes[MAGIC.len()..];
        let count = take_u32(&mut rest)?;
        let mut sections = BTreeMap::new();
        for _ in 0..count {
            let name = take_str(&mut rest)?;
            let len = take_u64(&mut rest)? as usize;
            let payload = take_bytes(&mut rest, len)?;
            sections.insert(name, payload.to_vec());
        }
        if !rest.is_empty() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", rest.len())));
        }
        Ok(Self { sections })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

pub(crate) fn put_u8(out: &mut Vec<u8>, v: u8) {
    out.push(v);
}

pub(crate) fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_f64s(out: &mut Vec<u8>, v: &[f64]) {
    put_u64(out, v.len() as u64);
    for x in v {
        put_f64(out, *x);
    }
}

pub(crate) fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

fn take_bytes<'a>(bytes: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(Error::Checkpoint(format!(
            "truncated: wanted {n} bytes, {} left",
            bytes.len()
        )));
    }
    let (head, tail) = bytes.split_at(n);
    *bytes = tail;
    Ok(head)
}

pub(crate) fn take_u8(bytes: &mut &[u8]) -> Result<u8> {
    Ok(take_bytes(bytes, 1)?[0])
}

pub(crate) fn take_u32(bytes: &mut &[u8]) -> Result<u32> {
    Ok(u32::from_le_bytes(take_bytes(bytes, 4)?.try_into().unwrap()))
}

pub(crate) fn take_u64(bytes: &mut &[u8]) -> Result<u64> {
    Ok(u64::from_le_bytes(take_bytes(bytes, 8)?.try_into().unwrap()))
}

pub(crate) fn take_f64(bytes: &mut &[u8]) -> Result<f64> {
    Ok(f64::from_le_bytes(take_bytes(bytes, 8)?.try_into().unwrap()))
}

pub(crate) fn take_f64s(bytes: &mut &[u8]) -> Result<Vec<f64>> {
    let n = take_u64(bytes)? as usize;
    if n.saturating_mul(8) > bytes.len() {
        return Err(Error::Checkpoint(format!("array of {n} floats overruns input")));
    }
    (0..n).map(|_| take_f64(bytes)).collect()
}

pub(crate) fn take_str(bytes: &mut &[u8]) -> Result<String> {
    let n = take_u32(bytes)? as usize;
    let raw = take_bytes(bytes, n)?;
    String::from_utf8(raw.to_vec()).map_err(|e| Error::Checkpoint(e.to_string()))
}
