//! Publish/subscribe data plane.
//!
//! [`Bus`] is the in-process implementation. [`server::BusServer`] exposes a
//! bus over a TCP or Unix socket and [`client::RemoteBus`] talks to it using
//! the length-prefixed frames in [`wire`]. Both sides implement
//! [`Transport`].

pub mod bus;
pub mod client;
pub mod clock;
pub mod endpoint;
pub mod envelope;
pub mod qos;
pub mod server;
pub mod wire;

use std::sync::Arc;

use thiserror::Error;

pub use bus::{Bus, Subscription};
pub use clock::monotonic_ns;
pub use endpoint::Endpoint;
pub use envelope::{ContentType, Envelope, DEFAULT_MAX_PAYLOAD};
pub use qos::{Durability, QosProfile, Reliability};

/// Topic carrying recording decisions emitted by lambda functions.
pub const ACTIONS_TOPIC: &str = "/lambda/actions";
/// Topic carrying round-trip-time instrumentation records.
pub const RTT_TOPIC: &str = "/lambda/rtt";

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("topic name must be non-empty")]
    EmptyTopic,
    #[error("payload of {len} bytes exceeds limit of {max}")]
    PayloadTooLarge { len: usize, max: usize },
    #[error("invalid qos: {0}")]
    InvalidQos(String),
    #[error("transport is shut down")]
    ShutDown,
    #[error("invalid endpoint {0:?}")]
    InvalidEndpoint(String),
    #[error(transparent)]
    Wire(#[from] wire::WireError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TransportError>;

/// Outcome of one publish.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PublishReceipt {
    pub seq: u64,
    /// Subscriber queues the envelope was enqueued to. Always 0 for remote
    /// publishers, which do not learn the fan-out.
    pub delivered: usize,
}

/// Common surface of the in-process and socket transports.
pub trait Transport: Send + Sync {
    fn publish(&self, topic: &str, payload: &[u8], content_type: ContentType, source_ts: u64) -> Result<PublishReceipt>;

    fn subscribe(&self, topic: &str, qos: QosProfile) -> Result<Subscription>;

    fn shutdown(&self);

    fn is_shut_down(&self) -> bool;
}

/// Opens a transport for `endpoint`. `inproc` yields a fresh private bus.
pub fn connect(endpoint: &Endpoint) -> Result<Arc<dyn Transport>> {
    match endpoint {
        Endpoint::InProc => Ok(Arc::new(Bus::new())),
        other => Ok(Arc::new(client::RemoteBus::connect(other)?)),
    }
}
