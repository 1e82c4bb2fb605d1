//! The cloud side: package repository, per-vehicle desired state with
//! revisions, token authentication and an append-only log store, served
//! over the length-prefixed JSON control channel.

pub mod client;
pub mod server;
pub mod store;
pub mod tokens;

use lambda_proto::ErrorCode;
use thiserror::Error;

pub use client::OpsClient;
pub use server::RegistryServer;
pub use store::{Store, VehicleState};
pub use tokens::Tokens;

#[derive(Debug, Error)]
pub enum RegistryError {
    /// A request refused with a protocol error code.
    #[error("{0:?}: {1}")]
    Rejected(ErrorCode, String),
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Proto(#[from] lambda_proto::ProtoError),
}

impl RegistryError {
    pub fn code(&self) -> Option<ErrorCode> {
        match self {
            RegistryError::Rejected(c, _) => Some(*c),
            _ => None,
        }
    }
}
