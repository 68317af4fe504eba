//! Run-log sinks: step and epoch records streamed as JSON lines.

use std::io::Write;

use serde::Serialize;

use crate::losses::LossBreakdown;

use super::run::EpochSnapshot;

/// One optimizer step. `breakdown` is attached to the record that completes
/// a batch tuple's per-teacher trio.
#[derive(Debug, Clone, Serialize)]
pub struct StepRecord<'a> {
    pub step: u64,
    pub epoch: u32,
    pub teacher: usize,
    pub kind: &'a str,
    pub beta: f64,
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub breakdown: Option<LossBreakdown>,
}

/// Receiver for training telemetry.
pub trait RunSink {
    fn on_step(&mut self, _record: &StepRecord<'_>) {}
    fn on_epoch(&mut self, _snapshot: &EpochSnapshot) {}
}

/// Discards everything.
pub struct NullSink;

impl RunSink for NullSink {}

#[derive(Serialize)]
struct EpochLine<'a> {
    record: &'a str,
    #[serde(flatten)]
    snapshot: &'a EpochSnapshot,
}

#[derive(Serialize)]
struct StepLine<'a, 'b> {
    record: &'a str,
    #[serde(flatten)]
    step: &'a StepRecord<'b>,
}

/// Append-only JSONL writer: one object per step and per epoch snapshot.
pub struct JsonlSink<W: Write> {
    writer: W,
}

impl<W: Write> JsonlSink<W> {
    pub fn new(writer: W) -> Self {
        Self { writer }
    }

    pub fn into_inner(self) -> W {
        self.writer
    }
}

impl<W: Write> RunSink for JsonlSink<W> {
    fn on_step(&mut self, record: &StepRecord<'_>) {
        let line = StepLine { record: "step", step: record };
        if let Ok(text) = serde_json::to_string(&line) {
            let _ = writeln!(self.writer, "{text}");
        }
    }

    fn on_epoch(&mut self, snapshot: &EpochSnapshot) {
        let line = EpochLine { record: "epoch", snapshot };
        if let Ok(text) = serde_json::to_string(&line) {
            let _ = writeln!(self.writer, "{text}");
        }
    }
}
