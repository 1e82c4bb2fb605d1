use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use lambda_ingress::{ChannelSpec, IngressHub, TriggerOutcome, DEFAULT_RECORD_MAX, DEFAULT_SLOT_SIZE};
use lambda_proto::{DataClass, Entry, FunctionManifest, HostState, HostStatus, IngressStats, LogLevel, Mode};
use lambda_transport::{monotonic_ns, Transport};
use log::{info, warn};
use thiserror::Error;

use crate::builtins::builtin;
use crate::context::{Cause, Context};
use crate::guest::GuestRuntime;
use crate::inference::{InferenceBackend, MockBackend, ModelCache};
use crate::logsink::{LogSender, LogSink, LogWriter, DEFAULT_LOG_QUEUE};
use crate::{Lambda, LambdaError, Params};

const TRIGGER_POLL: Duration = Duration::from_millis(50);
const INGRESS_REFRESH_NS: u64 = 200_000_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HostError {
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
    #[error("unknown builtin {0:?}")]
    UnknownBuiltin(String),
    #[error("guest load failure: {0}")]
    GuestLoad(String),
    #[error("setup failed: {0}")]
    Setup(String),
    #[error("transport: {0}")]
    Transport(String),
    #[error("ingress: {0}")]
    Ingress(String),
    #[error("orchestrator channel: {0}")]
    Channel(String),
    #[error("aborted: {0}")]
    Aborted(String),
    #[error("transport lost")]
    TransportLost,
}

pub struct HostConfig {
    /// Publish an RTT record next to every triggered action.
    pub instrument_rtt: bool,
    /// Core ids for the execution thread; empty leaves scheduling alone.
    pub affinity: Vec<usize>,
    pub sink: LogSink,
    pub log_queue: usize,
    pub status_interval: Duration,
    pub guest: Option<Arc<dyn GuestRuntime>>,
    pub backend: Box<dyn InferenceBackend>,
}

impl Default for HostConfig {
    fn default() -> Self {
        Self {
            instrument_rtt: false,
            affinity: Vec::new(),
            sink: LogSink::Stdout,
            log_queue: DEFAULT_LOG_QUEUE,
            status_interval: Duration::from_secs(1),
            guest: None,
            backend: Box::new(MockBackend),
        }
    }
}

/// Cooperative stop flag with an interruptible sleep.
#[derive(Clone, Default)]
pub struct StopHandle(Arc<(Mutex<bool>, Condvar)>);

impl StopHandle {
    pub fn stop(&self) {
        *self.0 .0.lock().unwrap() = true;
        self.0 .1.notify_all();
    }

    pub fn is_stopped(&self) -> bool {
        *self.0 .0.lock().unwrap()
    }

    /// Sleeps up to `d`; returns true if stopped.
    pub fn wait(&self, d: Duration) -> bool {
        let g = self.0 .0.lock().unwrap();
        *self.0 .1.wait_timeout_while(g, d, |s| !*s).unwrap().0
    }
}

pub struct Host {
    manifest: FunctionManifest,
    transport: Arc<dyn Transport>,
    hub: IngressHub,
    lambda: Box<dyn Lambda>,
    models: ModelCache,
    writer: LogWriter,
    log: LogSender,
    status: Arc<Mutex<HostStatus>>,
    stop: StopHandle,
    instrument_rtt: bool,
    affinity: Vec<usize>,
    last_refresh: u64,
}

/// Resolves the manifest entry to a body.
pub fn resolve_entry(entry: &Entry, guest: Option<&Arc<dyn GuestRuntime>>) -> Result<Box<dyn Lambda>, HostError> {
    match entry {
        Entry::Native(id) => builtin(id).ok_or_else(|| HostError::UnknownBuiltin(id.clone())),
        Entry::Guest(pkg) => match guest {
            Some(rt) => rt.load(pkg).map_err(HostError::GuestLoad),
            None => Err(HostError::GuestLoad(format!("package {pkg:?}: no guest runtime in this host"))),
        },
    }
}

fn channel_spec(class: DataClass, depth_or_slots: usize, size: Option<usize>) -> ChannelSpec {
    match class {
        DataClass::LowVolume => ChannelSpec::low_volume(depth_or_slots).with_record_max(size.unwrap_or(DEFAULT_RECORD_MAX)),
        DataClass::HighVolume => ChannelSpec::high_volume(depth_or_slots).with_slot_size(size.unwrap_or(DEFAULT_SLOT_SIZE)),
    }
}

impl Host {
    /// Loads the body named by the manifest entry.
    pub fn load(manifest: FunctionManifest, transport: Arc<dyn Transport>, config: HostConfig) -> Result<Host, HostError> {
        let body = resolve_entry(&manifest.entry, config.guest.as_ref());
        Self::load_body(manifest, transport, config, body)
    }

    /// Loads with an explicit body instead of the manifest entry.
    pub fn load_with(
        manifest: FunctionManifest,
        transport: Arc<dyn Transport>,
        config: HostConfig,
        body: Box<dyn Lambda>,
    ) -> Result<Host, HostError> {
        Self::load_body(manifest, transport, config, Ok(body))
    }

    fn load_body(
        manifest: FunctionManifest,
        transport: Arc<dyn Transport>,
        config: HostConfig,
        body: Result<Box<dyn Lambda>, HostError>,
    ) -> Result<Host, HostError> {
        manifest.validate().map_err(|e| HostError::InvalidManifest(e.to_string()))?;
        let status = Arc::new(Mutex::new(HostStatus::new(&manifest.name, HostState::Starting)));
        let heartbeat = {
            let status = status.clone();
            Box::new(move || Some(status.lock().unwrap().clone()))
        };
        let writer = LogWriter::start(&manifest.name, config.sink, config.log_queue, config.status_interval, heartbeat)
            .map_err(|e| HostError::Channel(e.to_string()))?;
        let log = writer.sender();
        let fail = |err: HostError| {
            let mut st = status.lock().unwrap();
            st.state = HostState::Failed;
            st.last_error = Some(err.to_string());
            log.log(LogLevel::Error, &err.to_string());
            log.status(st.clone());
            err
        };

        let lambda = body.map_err(&fail)?;
        let mut hub = IngressHub::new(manifest.trigger_topic().map(str::to_string));
        for s in &manifest.subscriptions {
            let sub = transport.subscribe(&s.topic, s.qos.to_profile()).map_err(|e| fail(HostError::Transport(e.to_string())))?;
            hub.attach(sub, channel_spec(s.class, s.depth_or_slots, s.slot_size))
                .map_err(|e| fail(HostError::Ingress(e.to_string())))?;
        }
        let mut host = Host {
            transport,
            hub,
            lambda,
            models: ModelCache::new(config.backend),
            log: log.clone(),
            writer,
            status: status.clone(),
            stop: StopHandle::default(),
            instrument_rtt: config.instrument_rtt,
            affinity: config.affinity,
            last_refresh: 0,
            manifest,
        };
        let params = Params(host.manifest.params.clone());
        let mut ctx = Context {
            function: &host.manifest.name,
            hub: &host.hub,
            transport: &*host.transport,
            models: &mut host.models,
            log: &host.log,
            instrument_rtt: host.instrument_rtt,
            cause: None,
            emitted: Vec::new(),
        };
        let setup = catch_unwind(AssertUnwindSafe(|| host.lambda.setup(&params, &mut ctx)))
            .unwrap_or_else(|p| Err(LambdaError::Failed(panic_message(&p))));
        if let Err(e) = setup {
            return Err(fail(HostError::Setup(e.to_string())));
        }
        host.set_state(HostState::Running);
        info!("{} running", host.manifest.name);
        Ok(host)
    }

    pub fn manifest(&self) -> &FunctionManifest {
        &self.manifest
    }

    pub fn hub(&self) -> &IngressHub {
        &self.hub
    }

    pub fn stop_handle(&self) -> StopHandle {
        self.stop.clone()
    }

    pub fn status(&self) -> HostStatus {
        self.status.lock().unwrap().clone()
    }

    pub fn status_handle(&self) -> Arc<Mutex<HostStatus>> {
        self.status.clone()
    }

    fn set_state(&self, state: HostState) {
        let snapshot = {
            let mut st = self.status.lock().unwrap();
            st.state = state;
            st.clone()
        };
        self.log.status(snapshot);
    }

    fn refresh_ingress(&mut self, force: bool) {
        let now = monotonic_ns();
        if !force && now.saturating_sub(self.last_refresh) < INGRESS_REFRESH_NS {
            return;
        }
        self.last_refresh = now;
        let ingress = self
            .hub
            .counters()
            .into_iter()
            .map(|c| IngressStats {
                topic: c.topic,
                received: c.received,
                transport_dropped: c.transport_dropped,
                rejected: c.rejected,
                leases_granted: c.leases_granted,
            })
            .collect();
        let mut st = self.status.lock().unwrap();
        st.ingress = ingress;
        st.log_dropped = self.log.dropped();
    }

    /// Runs until stopped (Ok) or a fatal error.
    pub fn run(&mut self) -> Result<(), HostError> {
        if !self.affinity.is_empty() {
            if let Err(e) = set_affinity(&self.affinity) {
                warn!("cpu affinity {:?} not applied: {e}", self.affinity);
            }
        }
        let result = match self.manifest.mode.clone() {
            Mode::Event { .. } => self.run_event(),
            Mode::Periodic { period_ms } => self.run_periodic(period_ms),
        };
        self.refresh_ingress(true);
        match &result {
            Ok(()) => self.set_state(HostState::Stopped),
            Err(e) => {
                self.status.lock().unwrap().last_error = Some(e.to_string());
                self.log.log(LogLevel::Error, &e.to_string());
                self.set_state(HostState::Failed);
            }
        }
        result
    }

    fn run_event(&mut self) -> Result<(), HostError> {
        loop {
            if self.stop.is_stopped() {
                return Ok(());
            }
            match self.hub.await_trigger(TRIGGER_POLL).map_err(|e| HostError::Ingress(e.to_string()))? {
                TriggerOutcome::Triggered { count, cause_seq, cause_source_ts } => {
                    self.status.lock().unwrap().coalesced += count - 1;
                    self.invoke(Cause { envelope: Some((cause_seq, cause_source_ts)), count, tick: None })?;
                }
                TriggerOutcome::TimedOut => self.refresh_ingress(false),
                TriggerOutcome::Closed if self.stop.is_stopped() => return Ok(()),
                TriggerOutcome::Closed => return Err(HostError::TransportLost),
            }
        }
    }

    fn run_periodic(&mut self, period_ms: u64) -> Result<(), HostError> {
        let period = period_ms * 1_000_000;
        let t0 = monotonic_ns();
        let mut k = 1u64;
        loop {
            let target = t0 + k * period;
            loop {
                let now = monotonic_ns();
                if now >= target {
                    break;
                }
                if self.stop.wait(Duration::from_nanos(target - now)) {
                    return Ok(());
                }
            }
            if self.stop.is_stopped() {
                return Ok(());
            }
            if self.hub.transport_lost() {
                return Err(HostError::TransportLost);
            }
            self.invoke(Cause { envelope: None, count: 1, tick: Some(k) })?;
            // Skip ticks that passed during the invocation.
            let elapsed = monotonic_ns() - t0;
            k = (k + 1).max(elapsed / period + 1);
        }
    }

    fn invoke(&mut self, cause: Cause) -> Result<(), HostError> {
        let mut ctx = Context {
            function: &self.manifest.name,
            hub: &self.hub,
            transport: &*self.transport,
            models: &mut self.models,
            log: &self.log,
            instrument_rtt: self.instrument_rtt,
            cause: Some(cause),
            emitted: Vec::new(),
        };
        let lambda = &mut self.lambda;
        let result = catch_unwind(AssertUnwindSafe(|| lambda.invoke(&mut ctx)))
            .unwrap_or_else(|p| Err(LambdaError::Failed(format!("panic: {}", panic_message(&p)))));
        {
            let mut st = self.status.lock().unwrap();
            st.invocations += 1;
            if let Err(e) = &result {
                st.failures += 1;
                st.last_error = Some(e.to_string());
            }
        }
        self.refresh_ingress(false);
        match result {
            Ok(()) => Ok(()),
            Err(LambdaError::Failed(msg)) => {
                self.log.log(LogLevel::Error, &format!("invocation failed: {msg}"));
                Ok(())
            }
            Err(LambdaError::Abort(msg)) => Err(HostError::Aborted(msg)),
        }
    }

    /// Stops receivers and flushes the orchestrator channel.
    pub fn shutdown(mut self) -> HostStatus {
        self.hub.shutdown();
        let status = self.status();
        self.writer.close();
        status
    }
}

fn panic_message(p: &Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| p.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "non-string panic".into())
}

#[cfg(target_os = "linux")]
fn set_affinity(cores: &[usize]) -> std::io::Result<()> {
    // SAFETY: cpu_set_t is plain data; CPU_SET bounds-checks against its size
    // and sched_setaffinity only reads the set.
    unsafe {
        let mut set: libc::cpu_set_t = std::mem::zeroed();
        for &c in cores {
            libc::CPU_SET(c, &mut set);
        }
        if libc::sched_setaffinity(0, std::mem::size_of::<libc::cpu_set_t>(), &set) != 0 {
            return Err(std::io::Error::last_os_error());
        }
    }
    Ok(())
}

#[cfg(not(target_os = "linux"))]
fn set_affinity(_cores: &[usize]) -> std::io::Result<()> {
    Ok(())
}

