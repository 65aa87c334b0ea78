//! Gradient traces and loss histories: the on-disk inputs of the engine.
//!
//! Trace layout (little-endian):
//!
//! ```text
//! "GTRC" | version u32 = 1 | dim u32 | record_count u32
//! record_count × ( sample_id u32 | domain_hint i32 | dim × f32 )
//! ```
//!
//! Loss histories are UTF-8 CSV with the header `task,step,loss`.

use std::collections::{BTreeMap, HashSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{LossHistoryError, TraceError};

pub const TRACE_MAGIC: [u8; 4] = *b"GTRC";
pub const TRACE_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 16;

/// Size in bytes of one serialized record of the given dim.
pub fn record_len(dim: usize) -> usize {
    8 + 4 * dim
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub sample_id: u32,
    /// Initial source/category label, `-1` when absent.
    pub domain_hint: i32,
    pub vector: Vec<f32>,
}

impl TraceRecord {
    pub fn new(sample_id: u32, domain_hint: i32, vector: Vec<f32>) -> Self {
        Self {
            sample_id,
            domain_hint,
            vector,
        }
    }
}

/// An ordered set of per-sample gradient vectors of a common length.
///
/// `source_tag` identifies the producing model or run. It is carried in memory
/// only; the binary format has no slot for it.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GradientTrace {
    pub dim: usize,
    pub records: Vec<TraceRecord>,
    pub source_tag: String,
}

impl GradientTrace {
    pub fn new(dim: usize, source_tag: impl Into<String>) -> Self {
        Self {
            dim,
            records: Vec::new(),
            source_tag: source_tag.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn push(&mut self, record: TraceRecord) {
        self.records.push(record);
    }

    /// Checks dim, finiteness, hint range and id uniqueness.
    pub fn validate(&self) -> Result<(), TraceError> {
        if self.dim == 0 || self.dim > u32::MAX as usize {
            return Err(TraceError::ZeroDim);
        }
        let mut seen = HashSet::with_capacity(self.records.len());
        for r in &self.records {
            if r.vector.len() != self.dim {
                return Err(TraceError::RecordDim {
                    sample_id: r.sample_id,
                    expected: self.dim,
                    found: r.vector.len(),
                });
            }
            if r.domain_hint < -1 {
                return Err(TraceError::BadDomainHint {
                    sample_id: r.sample_id,
                    hint: r.domain_hint,
                });
            }
            if r.vector.iter().any(|v| !v.is_finite()) {
                return Err(TraceError::NonFinite {
                    sample_id: r.sample_id,
                });
            }
            if !seen.insert(r.sample_id) {
                return Err(TraceError::DuplicateSampleId(r.sample_id));
            }
        }
        Ok(())
    }

    /// Vectors widened to f64, in record order.
    pub fn vectors_f64(&self) -> Vec<Vec<f64>> {
        self.records
            .iter()
            .map(|r| r.vector.iter().map(|&v| f64::from(v)).collect())
            .collect()
    }
}

/// Serializes `trace` and returns the number of bytes written.
pub fn write_trace<W: Write>(trace: &GradientTrace, mut sink: W) -> Result<usize, TraceError> {
    trace.validate()?;
    let count = u32::try_from(trace.records.len())
        .map_err(|_| TraceError::TooManyRecords(trace.records.len()))?;

    let total = HEADER_LEN + record_len(trace.dim) * trace.records.len();
    let mut buf = Vec::with_capacity(total);
    buf.extend_from_slice(&TRACE_MAGIC);
    buf.extend_from_slice(&TRACE_VERSION.to_le_bytes());
    buf.extend_from_slice(&(trace.dim as u32).to_le_bytes());
    buf.extend_from_slice(&count.to_le_bytes());
    for r in &trace.records {
        buf.extend_from_slice(&r.sample_id.to_le_bytes());
        buf.extend_from_slice(&r.domain_hint.to_le_bytes());
        for v in &r.vector {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    debug_assert_eq!(buf.len(), total);
    sink.write_all(&buf)?;
    Ok(buf.len())
}

/// Reads a whole trace from `source`.
pub fn read_trace<R: Read>(mut source: R) -> Result<GradientTrace, TraceError> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    decode_trace(&bytes)
}

fn le_u32(b: &[u8]) -> u32 {
    u32::from_le_bytes([b[0], b[1], b[2], b[3]])
}

/// Parses a complete trace image. Every failure maps to a distinct error
/// category; no partially decoded trace is ever returned.
pub fn decode_trace(bytes: &[u8]) -> Result<GradientTrace, TraceError> {
    if bytes.len() < 4 {
        return Err(TraceError::TruncatedHeader);
    }
    let magic = [bytes[0], bytes[1], bytes[2], bytes[3]];
    if magic != TRACE_MAGIC {
        return Err(TraceError::BadMagic(magic));
    }
    if bytes.len() < HEADER_LEN {
        return Err(TraceError::TruncatedHeader);
    }
    let version = le_u32(&bytes[4..8]);
    if version != TRACE_VERSION {
        return Err(TraceError::VersionMismatch(version));
    }
    let dim = le_u32(&bytes[8..12]) as usize;
    if dim == 0 {
        return Err(TraceError::ZeroDim);
    }
    let count = le_u32(&bytes[12..16]) as usize;
    let rec_len = record_len(dim);

    let body = &bytes[HEADER_LEN..];
    let complete = body.len() / rec_len;
    if complete < count {
        return Err(TraceError::TruncatedRecord(complete));
    }
    let expected = rec_len * count;
    if body.len() > expected {
        return Err(TraceError::TrailingBytes(body.len() - expected));
    }

    let mut records = Vec::with_capacity(count);
    let mut seen = HashSet::with_capacity(count);
    for chunk in body.chunks_exact(rec_len) {
        let sample_id = le_u32(&chunk[0..4]);
        let domain_hint = le_u32(&chunk[4..8]) as i32;
        if domain_hint < -1 {
            return Err(TraceError::BadDomainHint {
                sample_id,
                hint: domain_hint,
            });
        }
        let vector: Vec<f32> = chunk[8..]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(TraceError::NonFinite { sample_id });
        }
        if !seen.insert(sample_id) {
            return Err(TraceError::DuplicateSampleId(sample_id));
        }
        records.push(TraceRecord {
            sample_id,
            domain_hint,
            vector,
        });
    }

    Ok(GradientTrace {
        dim,
        records,
        source_tag: String::new(),
    })
}

/// Parameters of `loss(t) = a·exp(-b·t) + c` fitted to a loss history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    /// Root-mean-square fit error.
    pub residual: f64,
}

impl DecayFit {
    pub fn constant(c: f64, residual: f64) -> Self {
        Self {
            a: 0.0,
            b: 0.0,
            c,
            residual,
        }
    }

    pub fn predict(&self, t: f64) -> f64 {
        self.a * (-self.b * t).exp() + self.c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub step: u64,
    pub loss: f64,
}

/// Loss observations of one downstream task, strictly increasing in step.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LossHistory {
    pub task_id: u32,
    pub points: Vec<LossPoint>,
    pub fit: Option<DecayFit>,
}

impl LossHistory {
    pub fn new(task_id: u32) -> Self {
        Self {
            task_id,
            points: Vec::new(),
            fit: None,
        }
    }

    /// Appends an observation, enforcing the history invariants.
    pub fn push(&mut self, step: u64, loss: f64) -> Result<(), LossHistoryError> {
        if !loss.is_finite() || loss < 0.0 {
            return Err(LossHistoryError::BadLoss {
                task: self.task_id,
                step,
                loss,
            });
        }
        if let Some(last) = self.points.last() {
            if step == last.step {
                return Err(LossHistoryError::DuplicateStep {
                    task: self.task_id,
                    step,
                });
            }
            if step < last.step {
                return Err(LossHistoryError::NonMonotoneStep {
                    task: self.task_id,
                    step,
                    previous: last.step,
                });
            }
        }
        self.points.push(LossPoint { step, loss });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn last_loss(&self) -> Option<f64> {
        self.points.last().map(|p| p.loss)
    }
}

#[derive(Debug, Deserialize)]
struct LossRow {
    task: String,
    step: String,
    loss: String,
}

/// Parses a `task,step,loss` CSV into one history per task id, ordered by id.
///
/// Within a task, rows must appear with strictly increasing steps; a repeated
/// `(task, step)` pair is rejected rather than overwritten.
pub fn read_loss_history<R: Read>(source: R) -> Result<Vec<LossHistory>, LossHistoryError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(source);

    let headers = reader.headers()?.clone();
    let names: Vec<&str> = headers.iter().collect();
    if names != ["task", "step", "loss"] {
        return Err(LossHistoryError::BadHeader(names.join(",")));
    }

    let mut by_task: BTreeMap<u32, LossHistory> = BTreeMap::new();
    for (i, row) in reader.deserialize::<LossRow>().enumerate() {
        let row_no = i + 2;
        let row = row?;
        let malformed = |what: &str, value: &str| LossHistoryError::Malformed {
            row: row_no,
            message: format!("bad {what} `{value}`"),
        };
        let task: u32 = row.task.parse().map_err(|_| malformed("task", &row.task))?;
        let step: u64 = row.step.parse().map_err(|_| malformed("step", &row.step))?;
        let loss: f64 = row.loss.parse().map_err(|_| malformed("loss", &row.loss))?;
        by_task
            .entry(task)
            .or_insert_with(|| LossHistory::new(task))
            .push(step, loss)?;
    }
    Ok(by_task.into_values().collect())
}

/// Writes histories in the CSV layout accepted by [`read_loss_history`].
pub fn write_loss_history<W: Write>(
    histories: &[LossHistory],
    sink: W,
) -> Result<(), LossHistoryError> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["task", "step", "loss"])?;
    for h in histories {
        for p in &h.points {
            w.write_record([h.task_id.to_string(), p.step.to_string(), p.loss.to_string()])?;
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
