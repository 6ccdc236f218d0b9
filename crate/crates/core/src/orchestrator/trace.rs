//! One JSON line per tick.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::interaction::Intent;
use crate::manipulation::ArmSide;
use crate::nav::teb::cost::CostBreakdown;
use crate::protocol::ClientCommand;
use crate::{Pose2D, Result, Twist2D};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceEvent {
    Command { command: ClientCommand },
    Transition { from: String, to: String, cause: String },
    Say { text: String },
    Warning { text: String },
    Face { identity: Option<String>, distance: Option<f64> },
    Intent { intent: Option<Intent> },
    Replan { reason: String },
    GlobalPlan { length: f64 },
    GraspPlan { arm: ArmSide },
    Release,
    Collision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub tick: u64,
    pub time_s: f64,
    pub state: String,
    /// Ground-truth base pose after the tick.
    pub pose: Pose2D,
    /// Localization estimate after the tick.
    pub estimate: Pose2D,
    pub twist: Twist2D,
    pub events: Vec<TraceEvent>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub cost_breakdown: Option<CostBreakdown>,
}

impl TraceRecord {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("trace records serialize")
    }
}

/// Appends records and flushes after each one.
pub struct TraceWriter<W: Write> {
    out: W,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    pub fn write(&mut self, record: &TraceRecord) -> Result<()> {
        let io = |e| crate::Error::io("trace", e);
        writeln!(self.out, "{}", record.to_line()).map_err(io)?;
        self.out.flush().map_err(io)
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

/// Commands recorded in a trace, with the tick at which they were applied.
pub fn command_log(records: &[TraceRecord]) -> Vec<(u64, ClientCommand)> {
    records
        .iter()
        .flat_map(|r| {
            r.events.iter().filter_map(move |e| match e {
                TraceEvent::Command { command } => Some((r.tick, command.clone())),
                _ => None,
            })
        })
        .collect()
}

pub fn parse_trace(text: &str) -> Result<Vec<TraceRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| crate::Error::Config(format!("trace line: {e}"))))
        .collect()
}
