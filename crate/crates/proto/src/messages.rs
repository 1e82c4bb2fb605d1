use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::ProtoError;

/// Largest log message in bytes, marker included.
pub const LOG_MESSAGE_MAX: usize = 4096;
pub const TRUNCATION_MARKER: &str = "...[truncated]";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    StartRecording,
    StopRecording,
    Mark,
}

impl ActionKind {
    pub fn name(self) -> &'static str {
        match self {
            ActionKind::StartRecording => "start_recording",
            ActionKind::StopRecording => "stop_recording",
            ActionKind::Mark => "mark",
        }
    }
}

impl FromStr for ActionKind {
    type Err = ProtoError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "start_recording" => Ok(ActionKind::StartRecording),
            "stop_recording" => Ok(ActionKind::StopRecording),
            "mark" => Ok(ActionKind::Mark),
            _ => Err(ProtoError::Malformed(format!("unknown action {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TriggerAction {
    pub action: ActionKind,
    pub label: String,
    pub decision_ts: u64,
    pub function: String,
    pub cause_seq: Option<u64>,
}

/// One input/decision timestamp pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RttRecord {
    pub function: String,
    pub cause_seq: u64,
    pub t_in: u64,
    pub t_out: u64,
}

impl RttRecord {
    pub fn rtt_ns(&self) -> u64 {
        self.t_out.saturating_sub(self.t_in)
    }

    pub fn rtt_ms(&self) -> f64 {
        self.rtt_ns() as f64 / 1e6
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogLevel {
    Debug,
    Info,
    Warn,
    Error,
}

impl fmt::Display for LogLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LogLevel::Debug => "debug",
            LogLevel::Info => "info",
            LogLevel::Warn => "warn",
            LogLevel::Error => "error",
        })
    }
}

impl FromStr for LogLevel {
    type Err = ProtoError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "debug" => Ok(LogLevel::Debug),
            "info" => Ok(LogLevel::Info),
            "warn" | "warning" => Ok(LogLevel::Warn),
            "error" => Ok(LogLevel::Error),
            _ => Err(ProtoError::Malformed(format!("unknown log level {s:?}"))),
        }
    }
}

/// Cuts `msg` to at most `max` bytes on a char boundary, ending with
/// [`TRUNCATION_MARKER`] when anything was removed.
pub fn cap_message(msg: &str, max: usize) -> String {
    if msg.len() <= max {
        return msg.to_string();
    }
    let mut end = max.saturating_sub(TRUNCATION_MARKER.len());
    while !msg.is_char_boundary(end) {
        end -= 1;
    }
    let mut out = String::with_capacity(max);
    out.push_str(&msg[..end]);
    out.push_str(TRUNCATION_MARKER);
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogRecord {
    pub level: LogLevel,
    pub ts: u64,
    pub function: String,
    pub message: String,
}

impl LogRecord {
    /// Builds a record with the message capped at [`LOG_MESSAGE_MAX`].
    pub fn new(level: LogLevel, ts: u64, function: &str, message: &str) -> Self {
        Self { level, ts, function: function.to_string(), message: cap_message(message, LOG_MESSAGE_MAX) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HostState {
    Starting,
    Running,
    Failed,
    Stopped,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct IngressStats {
    pub topic: String,
    pub received: u64,
    pub transport_dropped: u64,
    pub rejected: u64,
    pub leases_granted: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HostStatus {
    pub function: String,
    pub state: HostState,
    pub invocations: u64,
    pub failures: u64,
    pub coalesced: u64,
    pub ingress: Vec<IngressStats>,
    pub log_dropped: u64,
    pub last_error: Option<String>,
}

impl HostStatus {
    pub fn new(function: &str, state: HostState) -> Self {
        Self {
            function: function.to_string(),
            state,
            invocations: 0,
            failures: 0,
            coalesced: 0,
            ingress: Vec::new(),
            log_dropped: 0,
            last_error: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProcessState {
    Spawning,
    Up,
    BackingOff,
    Stopped,
    FailedPermanent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProcessReport {
    pub function: String,
    pub state: ProcessState,
    pub pid: Option<u32>,
    pub restarts: u32,
    pub last_error: Option<String>,
}

/// Orchestrator status sent upstream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct VehicleStatus {
    pub vehicle_id: String,
    pub applied_revision: u64,
    pub processes: Vec<ProcessReport>,
    pub hosts: Vec<HostStatus>,
    /// Records dropped from the upstream backlog since start.
    pub relay_dropped: u64,
}

macro_rules! json_payload {
    ($($t:ty),*) => {$(
        impl $t {
            pub fn to_payload(&self) -> Vec<u8> {
                serde_json::to_vec(self).expect("serializable")
            }

            pub fn from_payload(bytes: &[u8]) -> Result<Self, ProtoError> {
                Ok(serde_json::from_slice(bytes)?)
            }
        }
    )*};
}

json_payload!(TriggerAction, RttRecord, LogRecord, HostStatus);

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn long_message_capped_with_marker() {
        let msg = "x".repeat(8 * 1024);
        let rec = LogRecord::new(LogLevel::Info, 1, "f", &msg);
        assert_eq!(rec.message.len(), LOG_MESSAGE_MAX);
        assert!(rec.message.ends_with(TRUNCATION_MARKER));
        assert_eq!(LogRecord::new(LogLevel::Info, 1, "f", "short").message, "short");
    }

    #[test]
    fn cap_respects_char_boundaries() {
        let msg = "é".repeat(3000);
        let capped = cap_message(&msg, LOG_MESSAGE_MAX);
        assert!(capped.len() <= LOG_MESSAGE_MAX);
        assert!(capped.ends_with(TRUNCATION_MARKER));
    }

    #[test]
    fn action_round_trip() {
        let a = TriggerAction {
            action: ActionKind::StartRecording,
            label: "rough".into(),
            decision_ts: 5,
            function: "f".into(),
            cause_seq: Some(9),
        };
        assert_eq!(TriggerAction::from_payload(&a.to_payload()).unwrap(), a);
        assert!(String::from_utf8(a.to_payload()).unwrap().contains("\"start_recording\""));
    }

    #[test]
    fn rtt_ms() {
        let r = RttRecord { function: "f".into(), cause_seq: 1, t_in: 1_000_000, t_out: 3_500_000 };
        assert_eq!(r.rtt_ms(), 2.5);
    }

    #[test]
    fn level_order_and_parse() {
        assert!(LogLevel::Debug < LogLevel::Error);
        assert_eq!("WARN".parse::<LogLevel>().unwrap(), LogLevel::Warn);
        assert!("loud".parse::<LogLevel>().is_err());
    }
}
