//! The `UED1` dataset container and train/test splits.
//!
//! ```text
//! header (18 bytes): "UED1" | u16 version | u32 n_traces | u32 trace_len | u32 n_emitters
//! record:            i32 emitter_id | u16 day | trace_len x (f32 I, f32 Q)
//! ```
//! All integers and floats are little-endian.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modality::IQTrace;
use crate::nn::Cursor;

const MAGIC: &[u8; 4] = b"UED1";
const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 18;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub trace_len: usize,
    pub n_emitters: usize,
    pub traces: Vec<IQTrace>,
}

impl Dataset {
    pub fn new(trace_len: usize, n_emitters: usize, traces: Vec<IQTrace>) -> Result<Self> {
        for (k, t) in traces.iter().enumerate() {
            if t.len() != trace_len {
                return Err(Error::validation(format!(
                    "trace {k} has {} samples, expected {trace_len}",
                    t.len()
                )));
            }
            if t.emitter_id < 0 || t.emitter_id as usize >= n_emitters {
                return Err(Error::validation(format!(
                    "trace {k} has emitter id {} outside [0, {n_emitters})",
                    t.emitter_id
                )));
            }
        }
        Ok(Dataset {
            trace_len,
            n_emitters,
            traces,
        })
    }

    pub fn len(&self) -> usize {
        self.traces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traces.is_empty()
    }

    /// Emitter ids that actually occur, ascending.
    pub fn emitters(&self) -> Vec<i32> {
        self.traces
            .iter()
            .map(|t| t.emitter_id)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn record_len(&self) -> usize {
        6 + 8 * self.trace_len
    }
}

pub fn encode_dataset(ds: &Dataset) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + ds.len() * ds.record_len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(ds.len() as u32).to_le_bytes());
    out.extend_from_slice(&(ds.trace_len as u32).to_le_bytes());
    out.extend_from_slice(&(ds.n_emitters as u32).to_le_bytes());
    for t in &ds.traces {
        out.extend_from_slice(&t.emitter_id.to_le_bytes());
        out.extend_from_slice(&t.day.to_le_bytes());
        for (i, q) in t.i.iter().zip(&t.q) {
            out.extend_from_slice(&(*i as f32).to_le_bytes());
            out.extend_from_slice(&(*q as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    let mut c = Cursor::new(bytes);
    c.magic(MAGIC)?;
    let version = c.u16("version")?;
    if version != VERSION {
        return Err(Error::format(4, format!("unsupported dataset version {version}")));
    }
    let n = c.u32("trace count")? as usize;
    let trace_len = c.u32("trace length")? as usize;
    let n_emitters = c.u32("emitter count")? as usize;
    let record = 6 + 8 * trace_len;
    let mut traces = Vec::with_capacity(n.min(bytes.len() / record.max(1)));
    for k in 0..n {
        let start = c.pos;
        let what = format!("record of trace {k}");
        let rec = c.take(record, &what)?;
        let emitter_id = i32::from_le_bytes(rec[0..4].try_into().unwrap());
        if emitter_id < 0 || emitter_id as usize >= n_emitters {
            return Err(Error::format(
                start as u64,
                format!("trace {k}: emitter id {emitter_id} outside [0, {n_emitters})"),
            ));
        }
        let day = u16::from_le_bytes(rec[4..6].try_into().unwrap());
        let mut i = Vec::with_capacity(trace_len);
        let mut q = Vec::with_capacity(trace_len);
        for (s, pair) in rec[6..].chunks_exact(8).enumerate() {
            let a = f32::from_le_bytes(pair[0..4].try_into().unwrap());
            let b = f32::from_le_bytes(pair[4..8].try_into().unwrap());
            if !a.is_finite() || !b.is_finite() {
                return Err(Error::format(
                    (start + 6 + 8 * s) as u64,
                    format!("trace {k}: non-finite sample {s}"),
                ));
            }
            i.push(a as f64);
            q.push(b as f64);
        }
        traces.push(IQTrace { i, q, emitter_id, day });
    }
    c.finish()?;
    Ok(Dataset {
        trace_len,
        n_emitters,
        traces,
    })
}

pub fn write_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    std::fs::File::create(path)?.write_all(&encode_dataset(ds))?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_dataset(&bytes)
}

pub const MIN_TRACES_PER_DAY: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction_per_day: f64,
    pub unknown_emitters: Vec<i32>,
    pub fold_id: usize,
}

/// Indices into the dataset. `labels[k]` is 1 when `test[k]` comes from an
/// unknown emitter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub fold_id: usize,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub labels: Vec<u8>,
}

/// Per (emitter, day): the first fraction of traces in stored order are
/// training candidates, the rest are test traces. Unknown emitters contribute
/// only to the test set.
pub fn make_split(ds: &Dataset, spec: &SplitSpec) -> Result<Split> {
    let f = spec.train_fraction_per_day;
    if !(f > 0.0 && f < 1.0) {
        return Err(Error::validation(format!("train fraction {f} outside (0, 1)")));
    }
    let emitters = ds.emitters();
    let unknown: BTreeSet<i32> = spec.unknown_emitters.iter().copied().collect();
    if unknown.is_empty() {
        return Err(Error::validation("no unknown emitters"));
    }
    if let Some(u) = unknown.iter().find(|u| !emitters.contains(u)) {
        return Err(Error::validation(format!("unknown emitter {u} is not in the dataset")));
    }
    if unknown.len() == emitters.len() {
        return Err(Error::validation("every emitter is unknown; nothing to train on"));
    }
    let mut groups: BTreeMap<(i32, u16), Vec<usize>> = BTreeMap::new();
    for (k, t) in ds.traces.iter().enumerate() {
        groups.entry((t.emitter_id, t.day)).or_default().push(k);
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for ((e, day), idx) in &groups {
        if idx.len() < MIN_TRACES_PER_DAY {
            return Err(Error::validation(format!(
                "emitter {e} has {} traces on day {day}, need at least {MIN_TRACES_PER_DAY}",
                idx.len()
            )));
        }
        let cut = (f * idx.len() as f64 + 1e-9).floor() as usize;
        if !unknown.contains(e) {
            train.extend_from_slice(&idx[..cut]);
        }
        test.extend_from_slice(&idx[cut..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    let labels = test
        .iter()
        .map(|&k| u8::from(unknown.contains(&ds.traces[k].emitter_id)))
        .collect();
    Ok(Split {
        fold_id: spec.fold_id,
        train,
        test,
        labels,
    })
}
