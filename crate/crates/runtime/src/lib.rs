//! The function host. One host runs one lambda: it subscribes to the
//! manifest's topics, stages data through an [`lambda_ingress::IngressHub`]
//! and drives the body from a single execution thread, either on a fixed
//! period or once per trigger-topic wakeup.

pub mod builtins;
pub mod context;
pub mod guest;
pub mod host;
pub mod inference;
pub mod lambda;
pub mod logsink;

pub use context::{Cause, Context, ContextError};
pub use guest::GuestRuntime;
pub use host::{resolve_entry, Host, HostConfig, HostError, StopHandle};
pub use inference::{InferenceBackend, InferenceError, MockBackend, Tensor};
pub use lambda::{Lambda, LambdaError, Params};
pub use logsink::{LogSender, LogSink, LogWriter, Outbound};
