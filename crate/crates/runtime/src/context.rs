//! The API a function body sees: data access, triggering, inference and
//! logging. Only usable on the host's execution thread.

use lambda_ingress::{IngressError, IngressHub, Item, RingRecord};
use lambda_proto::{ActionKind, ImuSample, LogLevel, RttRecord, TriggerAction};
use lambda_transport::{monotonic_ns, ContentType, Transport, TransportError, ACTIONS_TOPIC, RTT_TOPIC};
use thiserror::Error;

use crate::inference::{InferenceError, ModelCache, Tensor};
use crate::logsink::LogSender;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ContextError {
    #[error("trigger called outside an invocation")]
    OutsideInvocation,
    #[error(transparent)]
    Ingress(#[from] IngressError),
    #[error("transport: {0}")]
    Transport(String),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error("bad record on {topic}: {reason}")]
    BadRecord { topic: String, reason: String },
}

impl From<TransportError> for ContextError {
    fn from(e: TransportError) -> Self {
        ContextError::Transport(e.to_string())
    }
}

/// What woke the current invocation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cause {
    /// Seq and source_ts of the newest trigger-topic arrival (event mode).
    pub envelope: Option<(u64, u64)>,
    /// Arrivals folded into this wakeup.
    pub count: u64,
    /// Tick index (periodic mode).
    pub tick: Option<u64>,
}

pub struct Context<'h> {
    pub(crate) function: &'h str,
    pub(crate) hub: &'h IngressHub,
    pub(crate) transport: &'h dyn Transport,
    pub(crate) models: &'h mut ModelCache,
    pub(crate) log: &'h LogSender,
    pub(crate) instrument_rtt: bool,
    pub(crate) cause: Option<Cause>,
    pub(crate) emitted: Vec<TriggerAction>,
}

impl<'h> Context<'h> {
    pub fn function(&self) -> &str {
        self.function
    }

    /// `None` during setup.
    pub fn cause(&self) -> Option<Cause> {
        self.cause
    }

    pub fn trigger_topic(&self) -> Option<&str> {
        self.hub.trigger_topic()
    }

    pub fn latest(&self, topic: &str) -> Result<Option<Item>, ContextError> {
        Ok(self.hub.latest(topic)?)
    }

    pub fn window(&self, topic: &str, n: usize) -> Result<Vec<RingRecord>, ContextError> {
        Ok(self.hub.window(topic, n)?)
    }

    /// Window of decoded IMU samples, oldest first.
    pub fn imu_window(&self, topic: &str, n: usize) -> Result<Vec<ImuSample>, ContextError> {
        self.window(topic, n)?
            .iter()
            .map(|r| {
                ImuSample::decode(r.source_ts, &r.payload)
                    .map_err(|e| ContextError::BadRecord { topic: topic.into(), reason: e.to_string() })
            })
            .collect()
    }

    /// Emits a recording decision caused by the current invocation.
    pub fn trigger(&mut self, action: ActionKind, label: &str) -> Result<(), ContextError> {
        let seq = self.cause.ok_or(ContextError::OutsideInvocation)?.envelope.map(|(s, _)| s);
        self.emit(action, label, seq)
    }

    /// Like [`Context::trigger`] but names the envelope the decision refers
    /// to, e.g. the frame that was inspected.
    pub fn trigger_for(&mut self, action: ActionKind, label: &str, cause_seq: u64) -> Result<(), ContextError> {
        self.emit(action, label, Some(cause_seq))
    }

    fn emit(&mut self, action: ActionKind, label: &str, cause_seq: Option<u64>) -> Result<(), ContextError> {
        let cause = self.cause.ok_or(ContextError::OutsideInvocation)?;
        let decision_ts = monotonic_ns();
        let act = TriggerAction { action, label: label.into(), decision_ts, function: self.function.into(), cause_seq };
        self.transport.publish(ACTIONS_TOPIC, &act.to_payload(), ContentType::TriggerAction, decision_ts)?;
        if self.instrument_rtt {
            if let Some((seq, t_in)) = cause.envelope {
                let rec = RttRecord { function: self.function.into(), cause_seq: seq, t_in, t_out: decision_ts };
                self.transport.publish(RTT_TOPIC, &rec.to_payload(), ContentType::RttRecord, decision_ts)?;
            }
        }
        self.emitted.push(act);
        Ok(())
    }

    pub fn infer(&mut self, model: &str, inputs: &[Tensor<'_>]) -> Result<Vec<Tensor<'static>>, ContextError> {
        Ok(self.models.run(model, inputs)?)
    }

    /// Loads a model ahead of first use.
    pub fn load_model(&mut self, model: &str) -> Result<(), ContextError> {
        self.models.preload(model)?;
        Ok(())
    }

    pub fn log(&self, level: LogLevel, message: &str) {
        self.log.log(level, message);
    }

    /// Actions emitted during this invocation so far.
    pub fn emitted(&self) -> &[TriggerAction] {
        &self.emitted
    }
}
