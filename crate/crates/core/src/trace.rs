//! Server-side view of the protocol: every exchange the storage host sees.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use crate::error::{Error, Result};

/// Message kinds as they appear on the wire. The discriminants are the
/// frame `msg_type` codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum MsgKind {
    ReadPath = 0x01,
    PathData = 0x02,
    WritePath = 0x03,
    Ack = 0x04,
    EnclaveRequest = 0x05,
    EnclaveResponse = 0x06,
    UploadTree = 0x07,
    Error = 0x7f,
}

impl MsgKind {
    pub const ALL: [MsgKind; 8] = [
        MsgKind::ReadPath,
        MsgKind::PathData,
        MsgKind::WritePath,
        MsgKind::Ack,
        MsgKind::EnclaveRequest,
        MsgKind::EnclaveResponse,
        MsgKind::UploadTree,
        MsgKind::Error,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.code() == code)
    }

    pub fn name(self) -> &'static str {
        match self {
            MsgKind::ReadPath => "ReadPath",
            MsgKind::PathData => "PathData",
            MsgKind::WritePath => "WritePath",
            MsgKind::Ack => "Ack",
            MsgKind::EnclaveRequest => "EnclaveRequest",
            MsgKind::EnclaveResponse => "EnclaveResponse",
            MsgKind::UploadTree => "UploadTree",
            MsgKind::Error => "Error",
        }
    }
}

impl fmt::Display for MsgKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MsgKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Format(format!("unknown message kind {s:?}")))
    }
}

/// One observed exchange. `tree` names the ORAM instance touched (0 is the
/// data tree, 1.. are position-map levels).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRecord {
    pub seq: u64,
    pub micros: u64,
    pub tree: u16,
    pub kind: MsgKind,
    pub leaf: Option<u64>,
    pub bytes: u64,
}

/// Append-only, shareable log. Clones share the same underlying log.
#[derive(Debug, Clone)]
pub struct AccessTrace {
    records: Arc<Mutex<Vec<TraceRecord>>>,
    origin: Instant,
}

impl Default for AccessTrace {
    fn default() -> Self {
        Self::new()
    }
}

pub const TRACE_HEADER: &str = "seq,micros,tree,msg_type,leaf,bytes";

impl AccessTrace {
    pub fn new() -> Self {
        Self { records: Arc::new(Mutex::new(Vec::new())), origin: Instant::now() }
    }

    pub fn record(&self, tree: u16, kind: MsgKind, leaf: Option<u64>, bytes: u64) {
        let micros = self.origin.elapsed().as_micros() as u64;
        let mut log = self.records.lock().expect("trace lock poisoned");
        let seq = log.len() as u64;
        log.push(TraceRecord { seq, micros, tree, kind, leaf, bytes });
    }

    pub fn len(&self) -> usize {
        self.records.lock().expect("trace lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn snapshot(&self) -> Vec<TraceRecord> {
        self.records.lock().expect("trace lock poisoned").clone()
    }

    /// Records appended at or after position `from`.
    pub fn since(&self, from: usize) -> Vec<TraceRecord> {
        self.records.lock().expect("trace lock poisoned")[from..].to_vec()
    }

    pub fn clear(&self) {
        self.records.lock().expect("trace lock poisoned").clear();
    }
}

pub fn write_trace_csv<W: Write>(records: &[TraceRecord], mut out: W) -> Result<()> {
    writeln!(out, "{TRACE_HEADER}")?;
    for r in records {
        let leaf = r.leaf.map(|l| l.to_string()).unwrap_or_default();
        writeln!(out, "{},{},{},{},{},{}", r.seq, r.micros, r.tree, r.kind, leaf, r.bytes)?;
    }
    Ok(())
}

pub fn read_trace_csv<R: BufRead>(input: R) -> Result<Vec<TraceRecord>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let line_no = i + 1;
        if i == 0 {
            if line.trim() != TRACE_HEADER {
                return Err(Error::Parse { line: 1, detail: "missing trace header".into() });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 6 {
            return Err(Error::Parse { line: line_no, detail: "expected 6 fields".into() });
        }
        let num = |s: &str| {
            s.parse::<u64>()
                .map_err(|_| Error::Parse { line: line_no, detail: format!("bad number {s:?}") })
        };
        out.push(TraceRecord {
            seq: num(f[0])?,
            micros: num(f[1])?,
            tree: num(f[2])?
                .try_into()
                .map_err(|_| Error::Parse { line: line_no, detail: "tree id too large".into() })?,
            kind: f[3].parse().map_err(|e: Error| Error::Parse {
                line: line_no,
                detail: e.to_string(),
            })?,
            leaf: if f[4].is_empty() { None } else { Some(num(f[4])?) },
            bytes: num(f[5])?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let t = AccessTrace::new();
        t.record(0, MsgKind::ReadPath, Some(3), 1130);
        t.record(0, MsgKind::WritePath, Some(3), 1130);
        t.record(0, MsgKind::EnclaveRequest, None, 60);
        let recs = t.snapshot();
        let mut buf = Vec::new();
        write_trace_csv(&recs, &mut buf).unwrap();
        assert_eq!(read_trace_csv(buf.as_slice()).unwrap(), recs);
    }

    #[test]
    fn rejects_bad_rows() {
        assert!(read_trace_csv("nope\n".as_bytes()).is_err());
        let bad = format!("{TRACE_HEADER}\n0,0,0,Bogus,,1\n");
        assert!(matches!(read_trace_csv(bad.as_bytes()), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn clones_share_the_log() {
        let a = AccessTrace::new();
        let b = a.clone();
        b.record(1, MsgKind::Ack, None, 0);
        assert_eq!(a.len(), 1);
        assert_eq!(a.snapshot()[0].seq, 0);
    }
}
