use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use lambda_transport::{Durability, QosProfile, Reliability};
use serde::{Deserialize, Serialize};

use crate::ProtoError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Periodic { period_ms: u64 },
    Event { trigger_topic: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataClass {
    HighVolume,
    LowVolume,
}

/// Manifest spelling of a [`QosProfile`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QosSpec {
    pub history_depth: usize,
    pub reliability: ReliabilitySpec,
    pub durability: DurabilitySpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ReliabilitySpec {
    #[default]
    Reliable,
    BestEffort,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DurabilitySpec {
    #[default]
    Volatile,
}

impl Default for QosSpec {
    fn default() -> Self {
        Self { history_depth: 10, reliability: ReliabilitySpec::Reliable, durability: DurabilitySpec::Volatile }
    }
}

impl QosSpec {
    pub fn to_profile(self) -> QosProfile {
        QosProfile {
            history_depth: self.history_depth,
            reliability: match self.reliability {
                ReliabilitySpec::Reliable => Reliability::Reliable,
                ReliabilitySpec::BestEffort => Reliability::BestEffort,
            },
            durability: Durability::Volatile,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubscriptionSpec {
    pub topic: String,
    pub class: DataClass,
    /// Ring depth for low-volume topics, slot count for high-volume ones.
    pub depth_or_slots: usize,
    #[serde(default)]
    pub qos: QosSpec,
    /// Bytes per slot (high volume) or per record (low volume).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slot_size: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Entry {
    /// Builtin id such as `imu_fft`.
    Native(String),
    /// Guest package reference.
    Guest(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionManifest {
    pub name: String,
    pub version: String,
    pub mode: Mode,
    pub subscriptions: Vec<SubscriptionSpec>,
    #[serde(default)]
    pub params: BTreeMap<String, String>,
    #[serde(default)]
    pub autostart: bool,
    pub entry: Entry,
}

fn is_identifier(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

impl FunctionManifest {
    pub fn validate(&self) -> Result<(), ProtoError> {
        let bad = |m: String| Err(ProtoError::InvalidManifest(m));
        if !is_identifier(&self.name) {
            return bad(format!("name {:?} is not an identifier", self.name));
        }
        if self.version.is_empty() {
            return bad("version is empty".into());
        }
        let mut seen = HashSet::new();
        for s in &self.subscriptions {
            if s.topic.is_empty() {
                return bad("subscription with empty topic".into());
            }
            if !seen.insert(s.topic.as_str()) {
                return bad(format!("topic {:?} subscribed twice", s.topic));
            }
            if s.depth_or_slots == 0 {
                return bad(format!("topic {:?}: depth_or_slots must be >= 1", s.topic));
            }
            if s.qos.history_depth == 0 {
                return bad(format!("topic {:?}: history_depth must be >= 1", s.topic));
            }
            if s.slot_size == Some(0) {
                return bad(format!("topic {:?}: slot_size must be >= 1", s.topic));
            }
        }
        match &self.mode {
            Mode::Periodic { period_ms } if *period_ms < 1 => bad("period must be >= 1 ms".into()),
            Mode::Event { trigger_topic } if !seen.contains(trigger_topic.as_str()) => {
                bad(format!("trigger topic {trigger_topic:?} is not among the subscriptions"))
            }
            _ => Ok(()),
        }
    }

    pub fn trigger_topic(&self) -> Option<&str> {
        match &self.mode {
            Mode::Event { trigger_topic } => Some(trigger_topic),
            Mode::Periodic { .. } => None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ProtoError> {
        let m: Self = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self, ProtoError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}
