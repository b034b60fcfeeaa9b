use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{self, Write};

use sha2::{Digest, Sha256};

use crate::dissemination::Payload;
use crate::encoding::Encode;

pub const CSV_HEADER: &str =
    "tick,sender,receiver,payload_kind,variable_id,bytes,instrumented,phase";

/// One sent payload.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MetricsRecord {
    pub tick: u64,
    pub sender: String,
    pub receiver: String,
    pub payload_kind: &'static str,
    /// Empty for membership traffic.
    pub variable_id: String,
    pub bytes: usize,
    pub instrumented: bool,
    /// Workflow position of the sender: 0 before the experiment starts,
    /// `k + 1` while on task `k`, one past the last task once done.
    pub phase: u8,
}

impl MetricsRecord {
    pub fn from_payload(tick: u64, payload: &Payload, phase: u8) -> Self {
        Self {
            tick,
            sender: payload.sender.to_string(),
            receiver: payload.receiver.to_string(),
            payload_kind: payload.kind(),
            variable_id: payload
                .body
                .variable()
                .map(ToString::to_string)
                .unwrap_or_default(),
            bytes: payload.encoded_len(),
            instrumented: payload.instrumented,
            phase,
        }
    }

    fn write_csv(&self, line: &mut String) {
        line.clear();
        let _ = writeln!(
            line,
            "{},{},{},{},{},{},{},{}",
            self.tick,
            self.sender,
            self.receiver,
            self.payload_kind,
            self.variable_id,
            self.bytes,
            self.instrumented,
            self.phase
        );
    }
}

/// Byte and payload totals for one payload kind.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct KindTotals {
    pub payloads: u64,
    pub bytes: u64,
}

/// Streams records as CSV while keeping running totals and a checksum of
/// the exact CSV bytes.
pub struct MetricsSink {
    writer: Option<Box<dyn Write + Send>>,
    hasher: Sha256,
    line: String,
    rows: u64,
    instrumented_bytes: u64,
    control_bytes: u64,
    by_kind: BTreeMap<&'static str, KindTotals>,
    /// Cumulative instrumented bytes at the end of each tick that sent any.
    cumulative: Vec<(u64, u64)>,
    first_tick_of_phase: BTreeMap<u8, u64>,
    retained: Option<Vec<MetricsRecord>>,
}

impl MetricsSink {
    pub fn new(writer: Option<Box<dyn Write + Send>>, retain: bool) -> io::Result<Self> {
        let mut sink = Self {
            writer,
            hasher: Sha256::new(),
            line: String::new(),
            rows: 0,
            instrumented_bytes: 0,
            control_bytes: 0,
            by_kind: BTreeMap::new(),
            cumulative: Vec::new(),
            first_tick_of_phase: BTreeMap::new(),
            retained: retain.then(Vec::new),
        };
        let header = format!("{CSV_HEADER}\n");
        sink.emit(&header)?;
        Ok(sink)
    }

    fn emit(&mut self, text: &str) -> io::Result<()> {
        self.hasher.update(text.as_bytes());
        if let Some(w) = self.writer.as_mut() {
            w.write_all(text.as_bytes())?;
        }
        Ok(())
    }

    pub fn record(&mut self, record: MetricsRecord) -> io::Result<()> {
        let mut line = std::mem::take(&mut self.line);
        record.write_csv(&mut line);
        let result = self.emit(&line);
        self.line = line;
        result?;

        self.rows += 1;
        let bytes = record.bytes as u64;
        let kind = self.by_kind.entry(record.payload_kind).or_default();
        kind.payloads += 1;
        kind.bytes += bytes;
        if record.instrumented {
            self.instrumented_bytes += bytes;
            match self.cumulative.last_mut() {
                Some((tick, total)) if *tick == record.tick => *total = self.instrumented_bytes,
                _ => self.cumulative.push((record.tick, self.instrumented_bytes)),
            }
        } else {
            self.control_bytes += bytes;
        }
        self.first_tick_of_phase
            .entry(record.phase)
            .or_insert(record.tick);
        if let Some(kept) = self.retained.as_mut() {
            kept.push(record);
        }
        Ok(())
    }

    pub fn rows(&self) -> u64 {
        self.rows
    }

    pub fn instrumented_bytes(&self) -> u64 {
        self.instrumented_bytes
    }

    pub fn control_bytes(&self) -> u64 {
        self.control_bytes
    }

    pub fn by_kind(&self) -> &BTreeMap<&'static str, KindTotals> {
        &self.by_kind
    }

    pub fn cumulative(&self) -> &[(u64, u64)] {
        &self.cumulative
    }

    pub fn first_tick_of_phase(&self) -> &BTreeMap<u8, u64> {
        &self.first_tick_of_phase
    }

    /// Flushes the writer and returns the hex SHA-256 of everything written,
    /// plus the retained records if retention was requested.
    pub fn finish(mut self) -> io::Result<(String, Option<Vec<MetricsRecord>>)> {
        if let Some(w) = self.writer.as_mut() {
            w.flush()?;
        }
        Ok((hex::encode(self.hasher.finalize()), self.retained))
    }
}
