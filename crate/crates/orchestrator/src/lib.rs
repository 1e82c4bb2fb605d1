//! Edge-side lifecycle manager. Converges the set of host processes to the
//! desired state held by the registry, restarts crashed hosts with
//! exponential backoff and relays host logs and status upstream.

pub mod agent;
pub mod backoff;
pub mod launcher;
pub mod plan;
pub mod relay;
pub mod staging;
pub mod supervisor;

use thiserror::Error;

pub use agent::{Agent, AgentConfig, AgentHandle};
pub use backoff::{BackoffPolicy, RestartBudget};
pub use launcher::{fake, ChildProcess, HostEvent, LaunchSpec, OsLauncher, ProcessLauncher};
pub use plan::{sync, Deployed, Plan, StaleRevision};
pub use relay::{Relay, RelayConfig};
pub use supervisor::{Supervisor, SupervisorConfig};

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("registry rejected the vehicle credentials")]
    AuthRejected,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Proto(#[from] lambda_proto::ProtoError),
}
