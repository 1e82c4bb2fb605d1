//! Data staging between transport receivers and a function's single
//! execution thread.
//!
//! Low-volume topics (IMU and similar) land in a [`RingBuffer`]; every read
//! returns a copy. High-volume topics (camera frames) are copied once into a
//! pre-allocated [`SlotPool`] slot and shared through [`SlotLease`]s. The
//! [`IngressHub`] owns one receiver thread per attached topic and raises the
//! [`TriggerSignal`] for the configured trigger topic.

pub mod hub;
pub mod pool;
pub mod ring;
pub mod trigger;

use thiserror::Error;

pub use hub::{ChannelClass, ChannelCounters, ChannelId, ChannelSpec, IngressHub, Item};
pub use pool::{FrameView, PoolCounters, PoolWriter, SlotLease, SlotPool};
pub use ring::{RingBuffer, RingRecord, RingWriter};
pub use trigger::{TriggerOutcome, TriggerSignal};

/// Default low-volume ring depth.
pub const DEFAULT_RING_DEPTH: usize = 256;
/// Default largest low-volume record payload.
pub const DEFAULT_RECORD_MAX: usize = 256;
/// Default number of frame slots.
pub const DEFAULT_SLOT_COUNT: usize = 8;
/// Default frame slot size: 8 MiB.
pub const DEFAULT_SLOT_SIZE: usize = 8 * 1024 * 1024;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IngressError {
    #[error("topic {0:?} is already attached")]
    DuplicateTopic(String),
    #[error("topic {0:?} is not attached")]
    UnknownTopic(String),
    #[error("topic {0:?} is high-volume; only latest() is available")]
    WrongClass(String),
    #[error("no trigger topic configured")]
    NoTriggerTopic,
    #[error("record of {len} bytes exceeds capacity {max}")]
    TooLarge { len: usize, max: usize },
    #[error("pool exhausted")]
    PoolExhausted,
    #[error("invalid channel spec: {0}")]
    InvalidSpec(String),
}
