//! Types shared by the function host, orchestrator, registry and tools:
//! function manifests, trigger actions, logs, status and RTT records, the
//! IMU sample codec and the length-prefixed JSON control channel.

pub mod control;
pub mod imu;
pub mod manifest;
pub mod messages;
pub mod package;

use thiserror::Error;

pub use control::{
    read_control, write_control, ControlEnvelope, ControlType, DeployedFunction, DeploymentItem, DesiredState,
    ErrorCode, ErrorPayload, FetchPackage, Hello, Listing, LogAck, LogBatch, LogsResponse, PackageKind, PackageMeta,
    PutPackage, QueryLogs, RevisionAck, Role, SetDeployment, Stored, VehicleSummary, MAX_CONTROL_FRAME,
};
pub use imu::{ImageMeta, ImuSample, IMU_PAYLOAD_LEN};
pub use manifest::{DataClass, Entry, FunctionManifest, Mode, QosSpec, SubscriptionSpec};
pub use package::{decode_blob, encode_blob, sha256_hex};
pub use messages::{
    cap_message, ActionKind, HostState, HostStatus, IngressStats, LogLevel, LogRecord, ProcessReport, ProcessState,
    RttRecord, TriggerAction, VehicleStatus, LOG_MESSAGE_MAX, TRUNCATION_MARKER,
};

#[derive(Debug, Error)]
pub enum ProtoError {
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
    #[error("malformed payload: {0}")]
    Malformed(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
