//! Control channel: u32 LE length prefix, then a UTF-8 JSON
//! [`ControlEnvelope`].
//!
//! The vehicle link uses hello, desired_state, ack, log, status and
//! heartbeat. The operator link adds put_package, set_deployment,
//! query_logs, list and fetch_package, answered by ack, package or error.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use lambda_transport::wire::{read_frame, write_frame, WireError};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::{FunctionManifest, ProtoError};

/// Upper bound on one control frame (packages travel inline).
pub const MAX_CONTROL_FRAME: usize = 64 * 1024 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlType {
    Hello,
    DesiredState,
    Ack,
    Log,
    Status,
    Heartbeat,
    PutPackage,
    SetDeployment,
    QueryLogs,
    List,
    FetchPackage,
    Package,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlEnvelope {
    #[serde(rename = "type")]
    pub kind: ControlType,
    pub id: u64,
    #[serde(default)]
    pub payload: Value,
}

impl ControlEnvelope {
    pub fn new<T: Serialize>(kind: ControlType, id: u64, payload: &T) -> Self {
        Self { kind, id, payload: serde_json::to_value(payload).expect("serializable payload") }
    }

    pub fn parse<T: for<'de> Deserialize<'de>>(&self) -> Result<T, ProtoError> {
        Ok(T::deserialize(&self.payload)?)
    }

    pub fn error(id: u64, code: ErrorCode, message: impl Into<String>) -> Self {
        Self::new(ControlType::Error, id, &ErrorPayload { code, message: message.into() })
    }
}

pub fn write_control<W: Write>(w: &mut W, env: &ControlEnvelope) -> Result<(), ProtoError> {
    let body = serde_json::to_vec(env)?;
    write_frame(w, &body)?;
    Ok(())
}

/// `Ok(None)` on clean end of stream.
pub fn read_control<R: Read>(r: &mut R) -> Result<Option<ControlEnvelope>, ProtoError> {
    match read_frame(r, MAX_CONTROL_FRAME) {
        Ok(Some(body)) => Ok(Some(serde_json::from_slice(&body)?)),
        Ok(None) => Ok(None),
        Err(WireError::Io(e)) => Err(ProtoError::Io(e)),
        Err(e) => Err(ProtoError::Malformed(e.to_string())),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Vehicle,
    Operator,
}

/// First message on every connection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hello {
    pub role: Role,
    pub token: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vehicle_id: Option<String>,
    /// Vehicle only: revision it currently runs.
    #[serde(default)]
    pub applied_revision: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    AuthFailed,
    ChecksumMismatch,
    VersionConflict,
    UnknownPackage,
    UnknownVehicle,
    MalformedBatch,
    BadRequest,
    Internal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorPayload {
    pub code: ErrorCode,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeployedFunction {
    pub manifest: FunctionManifest,
    /// SHA-256 hex of the package the manifest came from.
    pub checksum: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct DesiredState {
    pub vehicle_id: String,
    pub revision: u64,
    pub functions: Vec<DeployedFunction>,
}

impl DesiredState {
    pub fn validate(&self) -> Result<(), ProtoError> {
        let mut names = std::collections::HashSet::new();
        for f in &self.functions {
            f.manifest.validate()?;
            if !names.insert(f.manifest.name.as_str()) {
                return Err(ProtoError::InvalidManifest(format!("function {:?} listed twice", f.manifest.name)));
            }
        }
        Ok(())
    }

    /// Only the autostart functions, for offline boot.
    pub fn autostart_only(&self) -> DesiredState {
        DesiredState {
            functions: self.functions.iter().filter(|f| f.manifest.autostart).cloned().collect(),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PackageKind {
    NativeRef,
    GuestArchive,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackageMeta {
    pub name: String,
    pub version: String,
    pub checksum: String,
    pub kind: PackageKind,
    pub manifest: FunctionManifest,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PutPackage {
    pub meta: PackageMeta,
    /// Base64 blob; guest archives only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blob: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeploymentItem {
    pub name: String,
    pub version: String,
    /// Merged over the package's manifest params.
    #[serde(default)]
    pub params: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub autostart: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SetDeployment {
    pub vehicle_id: String,
    pub functions: Vec<DeploymentItem>,
}

/// All filters optional; `level` is a minimum.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct QueryLogs {
    #[serde(default)]
    pub vehicle_id: Option<String>,
    #[serde(default)]
    pub function: Option<String>,
    #[serde(default)]
    pub level: Option<crate::LogLevel>,
    #[serde(default)]
    pub since: Option<u64>,
    #[serde(default)]
    pub until: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FetchPackage {
    pub checksum: String,
}

/// Upstream log batch. Records are parsed one by one on receipt so a
/// malformed record does not sink the batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct LogBatch {
    pub records: Vec<Value>,
}

/// Ack for a log batch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct LogAck {
    pub accepted: u64,
    #[serde(default)]
    pub rejected: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

/// Ack carrying a deployment revision (set_deployment reply, vehicle ack of
/// desired_state, hello reply).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct RevisionAck {
    pub revision: u64,
}

/// put_package reply.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stored {
    pub name: String,
    pub version: String,
    pub checksum: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct LogsResponse {
    pub records: Vec<crate::LogRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VehicleSummary {
    pub vehicle_id: String,
    pub revision: u64,
    pub connected: bool,
    /// Registry wall-clock milliseconds of the last message, 0 if never.
    pub last_seen_ms: u64,
    pub functions: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<crate::VehicleStatus>,
}

/// list reply.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Listing {
    pub packages: Vec<PackageMeta>,
    pub vehicles: Vec<VehicleSummary>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn frame_round_trip() {
        let env = ControlEnvelope { kind: ControlType::Heartbeat, id: 3, payload: json!({"n": 1}) };
        let mut buf = Vec::new();
        write_control(&mut buf, &env).unwrap();
        write_control(&mut buf, &env).unwrap();
        assert_eq!(u32::from_le_bytes(buf[..4].try_into().unwrap()) as usize, buf.len() / 2 - 4);
        let mut r = &buf[..];
        assert_eq!(read_control(&mut r).unwrap().unwrap(), env);
        assert_eq!(read_control(&mut r).unwrap().unwrap(), env);
        assert!(read_control(&mut r).unwrap().is_none());
    }

    #[test]
    fn type_field_spelling() {
        let env = ControlEnvelope::new(ControlType::DesiredState, 1, &DesiredState::default());
        let text = serde_json::to_string(&env).unwrap();
        assert!(text.contains("\"type\":\"desired_state\""), "{text}");
    }

    #[test]
    fn garbage_is_malformed() {
        let mut buf = Vec::new();
        write_frame(&mut buf, b"{nope").unwrap();
        assert!(read_control(&mut &buf[..]).is_err());
    }
}
