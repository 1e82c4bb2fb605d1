//! The orchestrator process: a supervision loop plus an upstream thread
//! holding the registry connection.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, SyncSender};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use lambda_proto::{
    read_control, write_control, ControlEnvelope, ControlType, DesiredState, ErrorCode, ErrorPayload, FetchPackage,
    Hello, HostStatus, LogBatch, LogLevel, LogRecord, PutPackage, RevisionAck, Role, VehicleStatus,
};
use lambda_transport::endpoint::Stream;
use lambda_transport::{monotonic_ns, Endpoint};
use log::{debug, info, warn};

use crate::backoff::BackoffPolicy;
use crate::launcher::{HostEvent, ProcessLauncher};
use crate::relay::{Relay, RelayConfig};
use crate::staging;
use crate::supervisor::{Supervisor, SupervisorConfig};
use crate::OrchestratorError;

/// Name used for the orchestrator's own log records.
pub const SELF_NAME: &str = "orchestrator";

#[derive(Debug, Clone)]
pub struct AgentConfig {
    pub registry: Endpoint,
    pub vehicle_id: String,
    pub token: String,
    pub supervisor: SupervisorConfig,
    pub relay: RelayConfig,
    /// Reconnect delays (only `initial`, `factor` and `cap` are used).
    pub reconnect: BackoffPolicy,
    pub heartbeat: Duration,
    pub status_interval: Duration,
    pub tick: Duration,
    /// How long to wait for the registry's reply to hello.
    pub hello_timeout: Duration,
}

impl AgentConfig {
    pub fn new(registry: Endpoint, vehicle_id: &str, token: &str, supervisor: SupervisorConfig) -> Self {
        Self {
            registry,
            vehicle_id: vehicle_id.to_string(),
            token: token.to_string(),
            supervisor,
            relay: RelayConfig::default(),
            reconnect: BackoffPolicy::default(),
            heartbeat: Duration::from_secs(5),
            status_interval: Duration::from_secs(1),
            tick: Duration::from_millis(50),
            hello_timeout: Duration::from_secs(5),
        }
    }
}

struct Shared {
    start: Instant,
    relay: Mutex<Relay>,
    status: Mutex<VehicleStatus>,
    applied: AtomicU64,
    connected: AtomicBool,
    auth_rejected: AtomicBool,
    stop: AtomicBool,
    sessions: AtomicU64,
}

impl Shared {
    fn now(&self) -> Duration {
        self.start.elapsed()
    }
}

/// Cheap handle for observing and stopping a running agent.
#[derive(Clone)]
pub struct AgentHandle(Arc<Shared>);

impl AgentHandle {
    pub fn stop(&self) {
        self.0.stop.store(true, Ordering::SeqCst);
    }

    pub fn connected(&self) -> bool {
        self.0.connected.load(Ordering::SeqCst)
    }

    pub fn applied_revision(&self) -> u64 {
        self.0.applied.load(Ordering::SeqCst)
    }

    /// Completed hello handshakes.
    pub fn sessions(&self) -> u64 {
        self.0.sessions.load(Ordering::SeqCst)
    }

    pub fn status(&self) -> VehicleStatus {
        self.0.status.lock().unwrap().clone()
    }

    /// Queues a record for upstream as if a host had logged it.
    pub fn log(&self, rec: LogRecord) {
        self.0.relay.lock().unwrap().push(rec);
    }
}

pub struct Agent {
    cfg: AgentConfig,
    shared: Arc<Shared>,
    supervisor: Supervisor,
    host_events: Receiver<(String, HostEvent)>,
}

impl Agent {
    pub fn new(cfg: AgentConfig, launcher: Box<dyn ProcessLauncher>, host_events: Receiver<(String, HostEvent)>) -> Self {
        let shared = Arc::new(Shared {
            start: Instant::now(),
            relay: Mutex::new(Relay::new(cfg.relay)),
            status: Mutex::new(VehicleStatus { vehicle_id: cfg.vehicle_id.clone(), ..Default::default() }),
            applied: AtomicU64::new(0),
            connected: AtomicBool::new(false),
            auth_rejected: AtomicBool::new(false),
            stop: AtomicBool::new(false),
            sessions: AtomicU64::new(0),
        });
        let supervisor = Supervisor::new(cfg.supervisor.clone(), launcher);
        Self { cfg, shared, supervisor, host_events }
    }

    pub fn handle(&self) -> AgentHandle {
        AgentHandle(self.shared.clone())
    }

    fn self_log(&self, level: LogLevel, msg: &str) {
        self.shared.relay.lock().unwrap().push(LogRecord::new(level, monotonic_ns(), SELF_NAME, msg));
    }

    fn apply(&mut self, desired: &DesiredState) {
        match self.supervisor.apply(desired, self.shared.now()) {
            Ok(plan) => {
                info!(
                    "revision {}: spawn {:?} stop {:?} restart {:?}",
                    desired.revision, plan.spawn, plan.stop, plan.restart_changed
                );
                self.shared.applied.store(desired.revision, Ordering::SeqCst);
            }
            Err(e) => {
                warn!("ignoring desired state: {e}");
                self.self_log(LogLevel::Warn, &format!("ignoring desired state: {e}"));
            }
        }
    }

    /// Runs until stopped or the registry rejects the token.
    pub fn run(mut self) -> Result<(), OrchestratorError> {
        let root = self.cfg.supervisor.data_root.clone();
        match staging::load_desired(&root) {
            Ok(Some(cached)) if cached.vehicle_id == self.cfg.vehicle_id => {
                info!("booting autostart functions from cached revision {}", cached.revision);
                self.apply(&cached.autostart_only());
            }
            Ok(_) => {}
            Err(e) => warn!("cannot read cached desired state: {e}"),
        }
        let (desired_tx, desired_rx) = mpsc::sync_channel::<DesiredState>(8);
        let upstream = {
            let (cfg, shared) = (self.cfg.clone(), self.shared.clone());
            thread::Builder::new().name("upstream".into()).spawn(move || upstream_loop(cfg, shared, desired_tx))?
        };
        let mut hosts: BTreeMap<String, HostStatus> = BTreeMap::new();
        while !self.shared.stop.load(Ordering::SeqCst) && !self.shared.auth_rejected.load(Ordering::SeqCst) {
            match desired_rx.recv_timeout(self.cfg.tick) {
                Ok(d) => self.apply(&d),
                Err(RecvTimeoutError::Timeout) => {}
                Err(RecvTimeoutError::Disconnected) => break,
            }
            self.supervisor.tick(self.shared.now());
            self.drain_events(&mut hosts);
        }
        self.shared.stop.store(true, Ordering::SeqCst);
        let deadline = self.shared.now() + self.cfg.supervisor.grace + Duration::from_secs(1);
        self.supervisor.stop_all(self.shared.now());
        while !self.supervisor.is_empty() && self.shared.now() < deadline {
            self.supervisor.tick(self.shared.now());
            thread::sleep(Duration::from_millis(20));
        }
        let _ = upstream.join();
        if self.shared.auth_rejected.load(Ordering::SeqCst) {
            return Err(OrchestratorError::AuthRejected);
        }
        Ok(())
    }

    fn drain_events(&mut self, hosts: &mut BTreeMap<String, HostStatus>) {
        while let Ok((function, ev)) = self.host_events.try_recv() {
            match ev {
                HostEvent::Log(rec) => self.shared.relay.lock().unwrap().push(rec),
                HostEvent::Status(s) => {
                    hosts.insert(function, s);
                }
            }
        }
        let reports = self.supervisor.reports();
        hosts.retain(|name, _| reports.iter().any(|r| &r.function == name));
        let dropped = self.shared.relay.lock().unwrap().dropped();
        let mut st = self.shared.status.lock().unwrap();
        st.applied_revision = self.supervisor.applied_revision();
        st.processes = reports;
        st.hosts = hosts.values().cloned().collect();
        st.relay_dropped = dropped;
    }
}

fn sleep_unless_stopped(shared: &Shared, d: Duration) {
    let until = Instant::now() + d;
    while !shared.stop.load(Ordering::SeqCst) {
        let now = Instant::now();
        if now >= until {
            break;
        }
        thread::sleep((until - now).min(Duration::from_millis(20)));
    }
}

fn upstream_loop(cfg: AgentConfig, shared: Arc<Shared>, desired_tx: SyncSender<DesiredState>) {
    let mut attempt = 0u32;
    while !shared.stop.load(Ordering::SeqCst) {
        let mut session = Session::new(&cfg, &shared, &desired_tx);
        let result = session.run();
        let established = session.established;
        drop(session);
        shared.connected.store(false, Ordering::SeqCst);
        shared.relay.lock().unwrap().requeue_in_flight();
        match result {
            Ok(()) => {}
            Err(SessionEnd::AuthRejected(msg)) => {
                warn!("registry rejected credentials: {msg}");
                shared.auth_rejected.store(true, Ordering::SeqCst);
                return;
            }
            Err(SessionEnd::Failed(msg)) => debug!("upstream session ended: {msg}"),
        }
        if established {
            attempt = 0;
        }
        sleep_unless_stopped(&shared, cfg.reconnect.delay(attempt));
        attempt = attempt.saturating_add(1);
    }
}

enum SessionEnd {
    AuthRejected(String),
    Failed(String),
}

impl<E: std::fmt::Display> From<E> for SessionEnd {
    fn from(e: E) -> Self {
        SessionEnd::Failed(e.to_string())
    }
}

struct Session<'a> {
    cfg: &'a AgentConfig,
    shared: &'a Shared,
    desired_tx: &'a SyncSender<DesiredState>,
    established: bool,
    next_id: u64,
    /// Fetch request ids still outstanding, by checksum.
    fetching: BTreeMap<u64, String>,
    held: Option<DesiredState>,
}

impl<'a> Session<'a> {
    fn new(cfg: &'a AgentConfig, shared: &'a Shared, desired_tx: &'a SyncSender<DesiredState>) -> Self {
        Self { cfg, shared, desired_tx, established: false, next_id: 1, fetching: BTreeMap::new(), held: None }
    }

    fn id(&mut self) -> u64 {
        self.next_id += 1;
        self.next_id
    }

    fn run(&mut self) -> Result<(), SessionEnd> {
        let stream = Stream::connect(&self.cfg.registry)?;
        let mut writer = stream.try_clone()?;
        let (in_tx, in_rx) = mpsc::sync_channel::<ControlEnvelope>(64);
        let mut reader = stream;
        let reader_thread = thread::Builder::new().name("upstream-rx".into()).spawn(move || {
            while let Ok(Some(env)) = read_control(&mut reader) {
                if in_tx.send(env).is_err() {
                    break;
                }
            }
        })?;
        let result = self.converse(&mut writer, &in_rx);
        writer.shutdown();
        let _ = reader_thread.join();
        result
    }

    fn converse(&mut self, w: &mut Stream, inbox: &Receiver<ControlEnvelope>) -> Result<(), SessionEnd> {
        let hello = Hello {
            role: Role::Vehicle,
            token: self.cfg.token.clone(),
            vehicle_id: Some(self.cfg.vehicle_id.clone()),
            applied_revision: self.shared.applied.load(Ordering::SeqCst),
        };
        write_control(w, &ControlEnvelope::new(ControlType::Hello, 1, &hello))?;
        let reply = inbox
            .recv_timeout(self.cfg.hello_timeout)
            .map_err(|_| SessionEnd::Failed("no reply to hello".into()))?;
        match reply.kind {
            ControlType::Ack => {}
            ControlType::Error => {
                let e: ErrorPayload = reply.parse()?;
                return Err(match e.code {
                    ErrorCode::AuthFailed | ErrorCode::UnknownVehicle => SessionEnd::AuthRejected(e.message),
                    _ => SessionEnd::Failed(e.message),
                });
            }
            other => return Err(SessionEnd::Failed(format!("unexpected {other:?} before hello ack"))),
        }
        self.established = true;
        self.shared.connected.store(true, Ordering::SeqCst);
        self.shared.sessions.fetch_add(1, Ordering::SeqCst);
        info!("connected to registry at {}", self.cfg.registry);

        let mut last_acked = None;
        let mut last_status = Duration::ZERO;
        let mut last_beat = self.shared.now();
        let poll = Duration::from_millis(20);
        while !self.shared.stop.load(Ordering::SeqCst) {
            match inbox.recv_timeout(poll) {
                Ok(env) => self.handle(w, env)?,
                Err(RecvTimeoutError::Timeout) => {}
                Err(RecvTimeoutError::Disconnected) => return Err(SessionEnd::Failed("registry closed the connection".into())),
            }
            let applied = self.shared.applied.load(Ordering::SeqCst);
            if last_acked != Some(applied) {
                let id = self.id();
                write_control(w, &ControlEnvelope::new(ControlType::Ack, id, &RevisionAck { revision: applied }))?;
                last_acked = Some(applied);
            }
            let now = self.shared.now();
            loop {
                let batch = {
                    let mut relay = self.shared.relay.lock().unwrap();
                    if !relay.due(now) {
                        break;
                    }
                    let id = self.id();
                    (id, relay.take_batch(id, now))
                };
                let records = batch.1.iter().map(|r| serde_json::to_value(r).expect("record serializes")).collect();
                write_control(w, &ControlEnvelope::new(ControlType::Log, batch.0, &LogBatch { records }))?;
            }
            if now.saturating_sub(last_status) >= self.cfg.status_interval {
                let st = self.shared.status.lock().unwrap().clone();
                let id = self.id();
                write_control(w, &ControlEnvelope::new(ControlType::Status, id, &st))?;
                last_status = now;
            }
            if now.saturating_sub(last_beat) >= self.cfg.heartbeat {
                let id = self.id();
                write_control(w, &ControlEnvelope::new(ControlType::Heartbeat, id, &serde_json::json!({})))?;
                last_beat = now;
            }
        }
        Ok(())
    }

    fn handle(&mut self, w: &mut Stream, env: ControlEnvelope) -> Result<(), SessionEnd> {
        let root = self.cfg.supervisor.data_root.clone();
        match env.kind {
            ControlType::DesiredState => {
                let d: DesiredState = match env.parse::<DesiredState>().and_then(|d| d.validate().map(|_| d)) {
                    Ok(d) if d.vehicle_id == self.cfg.vehicle_id => d,
                    Ok(d) => {
                        warn!("desired state for vehicle {:?} ignored", d.vehicle_id);
                        return Ok(());
                    }
                    Err(e) => {
                        warn!("bad desired state: {e}");
                        return Ok(());
                    }
                };
                if let Err(e) = staging::save_desired(&root, &d) {
                    warn!("cannot cache desired state: {e}");
                }
                let already: BTreeSet<String> = self.fetching.values().cloned().collect();
                for checksum in staging::missing(&root, &d) {
                    if !already.contains(&checksum) {
                        let id = self.id();
                        write_control(w, &ControlEnvelope::new(ControlType::FetchPackage, id, &FetchPackage { checksum: checksum.clone() }))?;
                        self.fetching.insert(id, checksum);
                    }
                }
                self.held = Some(d);
                self.release();
            }
            ControlType::Package => {
                self.fetching.remove(&env.id);
                match env.parse::<PutPackage>() {
                    Ok(pkg) => {
                        if let Err(e) = staging::stage(&root, &pkg) {
                            warn!("cannot stage {}: {e}", pkg.meta.checksum);
                        }
                    }
                    Err(e) => warn!("bad package reply: {e}"),
                }
                self.release();
            }
            ControlType::Ack => {
                self.shared.relay.lock().unwrap().ack(env.id);
            }
            ControlType::Error => {
                let detail = env.parse::<ErrorPayload>().map(|e| e.message).unwrap_or_default();
                if let Some(checksum) = self.fetching.remove(&env.id) {
                    warn!("fetch of {checksum} failed: {detail}");
                    self.release();
                } else {
                    warn!("registry error for message {}: {detail}", env.id);
                }
            }
            ControlType::Heartbeat => {}
            other => debug!("ignoring {other:?} from registry"),
        }
        Ok(())
    }

    /// Hands the held desired state to the supervisor once fetches settle.
    fn release(&mut self) {
        if self.fetching.is_empty() {
            if let Some(d) = self.held.take() {
                let _ = self.desired_tx.send(d);
            }
        }
    }
}
