use std::sync::Arc;

/// Default upper bound on a single payload: 16 MiB.
pub const DEFAULT_MAX_PAYLOAD: usize = 16 * 1024 * 1024;

/// Payload kind tag; the discriminant is the on-wire `u8`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum ContentType {
    RawBytes = 0,
    ImuSample = 1,
    ImageFrame = 2,
    TriggerAction = 3,
    RttRecord = 4,
    LogRecord = 5,
}

impl ContentType {
    pub fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            0 => Self::RawBytes,
            1 => Self::ImuSample,
            2 => Self::ImageFrame,
            3 => Self::TriggerAction,
            4 => Self::RttRecord,
            5 => Self::LogRecord,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::RawBytes => "raw_bytes",
            Self::ImuSample => "imu_sample",
            Self::ImageFrame => "image_frame",
            Self::TriggerAction => "trigger_action",
            Self::RttRecord => "rtt_record",
            Self::LogRecord => "log_record",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        (0..=5).filter_map(Self::from_u8).find(|c| c.name() == name)
    }
}

/// One published message. The payload is shared between all subscribers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Envelope {
    pub topic: Arc<str>,
    pub seq: u64,
    pub source_ts: u64,
    pub publish_ts: u64,
    pub content_type: ContentType,
    pub payload: Arc<[u8]>,
}
