//! Columnar dataset file: magic, a length-prefixed JSON header, then the
//! columns `s: u32`, `a: u32`, `r: f64`, `s_next: u32`, little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DataError, OfflineDataset, Provenance, Transition};

const MAGIC: &[u8; 8] = b"SOFTQDS1";

#[derive(Serialize, Deserialize)]
struct Header {
    n: usize,
    n_states: usize,
    n_actions: usize,
    provenance: Provenance,
}

pub fn write_dataset(data: &OfflineDataset, path: &Path) -> Result<(), DataError> {
    let mut w = BufWriter::new(File::create(path)?);
    let header = Header { n: data.len(), n_states: data.n_states, n_actions: data.n_actions, provenance: data.provenance.clone() };
    let json = serde_json::to_vec(&header).map_err(|e| DataError::Format(e.to_string()))?;
    w.write_all(MAGIC)?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for t in &data.tuples {
        w.write_all(&t.s.to_le_bytes())?;
    }
    for t in &data.tuples {
        w.write_all(&t.a.to_le_bytes())?;
    }
    for t in &data.tuples {
        w.write_all(&t.r.to_le_bytes())?;
    }
    for t in &data.tuples {
        w.write_all(&t.s_next.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn read_u32s(r: &mut impl Read, n: usize) -> Result<Vec<u32>, DataError> {
    let mut buf = vec![0u8; n * 4];
    r.read_exact(&mut buf)?;
    Ok(buf.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect())
}

pub fn read_dataset(path: &Path) -> Result<OfflineDataset, DataError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(DataError::Format("bad magic".into()));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let mut json = vec![0u8; u64::from_le_bytes(len) as usize];
    r.read_exact(&mut json)?;
    let h: Header = serde_json::from_slice(&json).map_err(|e| DataError::Format(e.to_string()))?;
    let s = read_u32s(&mut r, h.n)?;
    let a = read_u32s(&mut r, h.n)?;
    let mut rb = vec![0u8; h.n * 8];
    r.read_exact(&mut rb)?;
    let rewards: Vec<f64> = rb.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    let s_next = read_u32s(&mut r, h.n)?;
    let tuples: Vec<Transition> =
        (0..h.n).map(|i| Transition { s: s[i], a: a[i], r: rewards[i], s_next: s_next[i] }).collect();
    for (i, t) in tuples.iter().enumerate() {
        if t.s as usize >= h.n_states || t.a as usize >= h.n_actions || t.s_next as usize >= h.n_states {
            return Err(DataError::Format(format!("tuple {i} out of range")));
        }
    }
    Ok(OfflineDataset { n_states: h.n_states, n_actions: h.n_actions, tuples, provenance: h.provenance })
}

/// CSV export with columns `s,a,r,s_next`.
pub fn write_csv(data: &OfflineDataset, path: &Path) -> Result<(), DataError> {
    let mut w = csv::Writer::from_path(path)?;
    for t in &data.tuples {
        w.serialize(t)?;
    }
    w.flush()?;
    Ok(())
}
