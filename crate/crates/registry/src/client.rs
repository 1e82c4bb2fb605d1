//! Operator client for the registry's ops listener.

use lambda_proto::{
    read_control, write_control, ControlEnvelope, ControlType, ErrorPayload, FetchPackage, Hello, Listing, LogRecord,
    LogsResponse, PutPackage, QueryLogs, RevisionAck, Role, SetDeployment, Stored,
};
use lambda_transport::endpoint::Stream;
use lambda_transport::Endpoint;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::RegistryError;

pub struct OpsClient {
    stream: Stream,
    next_id: u64,
}

impl OpsClient {
    pub fn connect(ep: &Endpoint, token: &str) -> Result<OpsClient, RegistryError> {
        let stream = Stream::connect(ep)?;
        let mut c = OpsClient { stream, next_id: 1 };
        let hello = Hello { role: Role::Operator, token: token.to_string(), vehicle_id: None, applied_revision: 0 };
        c.call::<_, serde_json::Value>(ControlType::Hello, &hello)?;
        Ok(c)
    }

    fn call<T: Serialize, R: DeserializeOwned>(&mut self, kind: ControlType, payload: &T) -> Result<R, RegistryError> {
        let id = self.next_id;
        self.next_id += 1;
        write_control(&mut self.stream, &ControlEnvelope::new(kind, id, payload))?;
        let reply = read_control(&mut self.stream)?.ok_or_else(|| {
            RegistryError::Io(std::io::Error::new(std::io::ErrorKind::UnexpectedEof, "registry closed the connection"))
        })?;
        if reply.kind == ControlType::Error {
            let e: ErrorPayload = reply.parse()?;
            return Err(RegistryError::Rejected(e.code, e.message));
        }
        Ok(reply.parse()?)
    }

    pub fn put_package(&mut self, pkg: &PutPackage) -> Result<Stored, RegistryError> {
        self.call(ControlType::PutPackage, pkg)
    }

    /// Returns the new revision.
    pub fn set_deployment(&mut self, req: &SetDeployment) -> Result<u64, RegistryError> {
        Ok(self.call::<_, RevisionAck>(ControlType::SetDeployment, req)?.revision)
    }

    pub fn query_logs(&mut self, q: &QueryLogs) -> Result<Vec<LogRecord>, RegistryError> {
        Ok(self.call::<_, LogsResponse>(ControlType::QueryLogs, q)?.records)
    }

    pub fn list(&mut self) -> Result<Listing, RegistryError> {
        self.call(ControlType::List, &serde_json::json!({}))
    }

    pub fn fetch_package(&mut self, checksum: &str) -> Result<PutPackage, RegistryError> {
        self.call(ControlType::FetchPackage, &FetchPackage { checksum: checksum.to_string() })
    }
}
