//! Vehicle and operator listeners. One thread per connection; all store
//! mutations go through one lock, so per-vehicle changes are serialized.

use std::collections::BTreeMap;
use std::io;
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use lambda_proto::{
    read_control, write_control, ControlEnvelope, ControlType, DesiredState, ErrorCode, FetchPackage, Hello, Listing,
    LogAck, LogBatch, LogRecord, LogsResponse, PutPackage, QueryLogs, RevisionAck, Role, SetDeployment,
    VehicleStatus, VehicleSummary,
};
use lambda_transport::endpoint::{Listener, Stream};
use lambda_transport::Endpoint;
use log::{debug, info, warn};

use crate::store::Store;
use crate::tokens::Tokens;
use crate::RegistryError;

const HELLO_TIMEOUT: Duration = Duration::from_secs(10);
const ACCEPT_POLL: Duration = Duration::from_millis(20);

fn now_ms() -> u64 {
    chrono::Utc::now().timestamp_millis().max(0) as u64
}

fn today() -> String {
    chrono::Utc::now().format("%Y-%m-%d").to_string()
}

struct Link {
    id: u64,
    writer: Arc<Mutex<Stream>>,
}

struct Inner {
    store: Mutex<Store>,
    tokens: Tokens,
    links: Mutex<BTreeMap<String, Link>>,
    status: Mutex<BTreeMap<String, VehicleStatus>>,
    stop: AtomicBool,
    /// Clones of every open connection, shut down on stop.
    open: Mutex<BTreeMap<u64, Stream>>,
    next_conn: AtomicU64,
    next_msg: AtomicU64,
}

impl Inner {
    fn msg_id(&self) -> u64 {
        self.next_msg.fetch_add(1, Ordering::Relaxed) + 1
    }

    /// Sends `desired` to the vehicle if it is connected.
    fn push(&self, desired: &DesiredState) {
        let links = self.links.lock().unwrap();
        if let Some(link) = links.get(&desired.vehicle_id) {
            let env = ControlEnvelope::new(ControlType::DesiredState, self.msg_id(), desired);
            if let Err(e) = write_control(&mut *link.writer.lock().unwrap(), &env) {
                debug!("push to {} failed: {e}", desired.vehicle_id);
            }
        }
    }
}

pub struct RegistryServer {
    inner: Arc<Inner>,
    vehicles: Endpoint,
    ops: Endpoint,
    threads: Vec<JoinHandle<()>>,
}

impl RegistryServer {
    /// Opens the store and starts both listeners. Port 0 binds an ephemeral port.
    pub fn start(data_dir: &Path, tokens: Tokens, vehicles: &Endpoint, ops: &Endpoint) -> Result<Self, RegistryError> {
        let store = Store::open(data_dir)?;
        let inner = Arc::new(Inner {
            store: Mutex::new(store),
            tokens,
            links: Mutex::new(BTreeMap::new()),
            status: Mutex::new(BTreeMap::new()),
            stop: AtomicBool::new(false),
            open: Mutex::new(BTreeMap::new()),
            next_conn: AtomicU64::new(0),
            next_msg: AtomicU64::new(0),
        });
        let vl = Listener::bind(vehicles)?;
        let ol = Listener::bind(ops)?;
        let (vehicles, ops) = (vl.local_endpoint()?, ol.local_endpoint()?);
        let mut threads = Vec::new();
        for (listener, role) in [(vl, Role::Vehicle), (ol, Role::Operator)] {
            listener.set_nonblocking(true)?;
            let inner = inner.clone();
            threads.push(thread::Builder::new().name(format!("accept:{role:?}")).spawn(move || accept_loop(inner, listener, role))?);
        }
        info!("registry listening: vehicles {vehicles}, operators {ops}");
        Ok(Self { inner, vehicles, ops, threads })
    }

    pub fn vehicles_endpoint(&self) -> &Endpoint {
        &self.vehicles
    }

    pub fn ops_endpoint(&self) -> &Endpoint {
        &self.ops
    }

    pub fn is_connected(&self, vehicle: &str) -> bool {
        self.inner.links.lock().unwrap().contains_key(vehicle)
    }

    /// Latest status report received from `vehicle`.
    pub fn vehicle_status(&self, vehicle: &str) -> Option<VehicleStatus> {
        self.inner.status.lock().unwrap().get(vehicle).cloned()
    }

    pub fn acked_revision(&self, vehicle: &str) -> u64 {
        self.inner.store.lock().unwrap().vehicle(vehicle).map_or(0, |v| v.acked_revision)
    }

    /// Drops every connection, e.g. to simulate a network cut.
    pub fn disconnect_all(&self) {
        for s in self.inner.open.lock().unwrap().values() {
            s.shutdown();
        }
    }

    pub fn stop(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        self.inner.stop.store(true, Ordering::SeqCst);
        self.disconnect_all();
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

impl Drop for RegistryServer {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn accept_loop(inner: Arc<Inner>, listener: Listener, role: Role) {
    let mut conns: Vec<JoinHandle<()>> = Vec::new();
    while !inner.stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok(stream) => {
                if let Err(e) = stream.set_nonblocking(false) {
                    warn!("cannot configure connection: {e}");
                    continue;
                }
                let inner = inner.clone();
                match thread::Builder::new().name(format!("conn:{role:?}")).spawn(move || serve(inner, stream, role)) {
                    Ok(h) => conns.push(h),
                    Err(e) => warn!("cannot spawn connection thread: {e}"),
                }
                conns.retain(|h| !h.is_finished());
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(ACCEPT_POLL),
            Err(e) => {
                warn!("accept failed: {e}");
                thread::sleep(ACCEPT_POLL);
            }
        }
    }
    for h in conns {
        let _ = h.join();
    }
}

fn serve(inner: Arc<Inner>, stream: Stream, role: Role) {
    let conn = inner.next_conn.fetch_add(1, Ordering::Relaxed);
    match stream.try_clone() {
        Ok(c) => {
            inner.open.lock().unwrap().insert(conn, c);
        }
        Err(e) => {
            warn!("cannot track connection: {e}");
            return;
        }
    }
    // Re-check after registering so a concurrent stop cannot miss this stream.
    if inner.stop.load(Ordering::SeqCst) {
        stream.shutdown();
    }
    let result = match role {
        Role::Vehicle => serve_vehicle(&inner, stream, conn),
        Role::Operator => serve_operator(&inner, stream),
    };
    if let Err(e) = result {
        debug!("connection {conn} ended: {e}");
    }
    inner.open.lock().unwrap().remove(&conn);
}

fn send(w: &Mutex<Stream>, env: &ControlEnvelope) -> Result<(), RegistryError> {
    write_control(&mut *w.lock().unwrap(), env)?;
    Ok(())
}

fn reply_err(e: &RegistryError, id: u64) -> ControlEnvelope {
    match e {
        RegistryError::Rejected(code, msg) => ControlEnvelope::error(id, *code, msg.clone()),
        other => ControlEnvelope::error(id, ErrorCode::Internal, other.to_string()),
    }
}

/// Reads and checks hello. Replies with an error and returns `None` on failure.
fn handshake(inner: &Inner, reader: &mut Stream, writer: &Mutex<Stream>, role: Role) -> Result<Option<Hello>, RegistryError> {
    reader.set_read_timeout(Some(HELLO_TIMEOUT))?;
    let Some(env) = read_control(reader)? else { return Ok(None) };
    reader.set_read_timeout(None)?;
    let hello = match env.kind {
        ControlType::Hello => env.parse::<Hello>().ok(),
        _ => None,
    };
    let ok = hello.as_ref().is_some_and(|h| {
        h.role == role
            && match role {
                Role::Operator => inner.tokens.operator(&h.token).is_some(),
                Role::Vehicle => h.vehicle_id.as_deref().is_some_and(|v| inner.tokens.vehicle_ok(v, &h.token)),
            }
    });
    if !ok {
        send(writer, &ControlEnvelope::error(env.id, ErrorCode::AuthFailed, "invalid credentials"))?;
        return Ok(None);
    }
    Ok(hello)
}

fn serve_vehicle(inner: &Arc<Inner>, stream: Stream, conn: u64) -> Result<(), RegistryError> {
    let mut reader = stream.try_clone()?;
    let writer = Arc::new(Mutex::new(stream));
    let Some(hello) = handshake(inner, &mut reader, &writer, Role::Vehicle)? else { return Ok(()) };
    let vid = hello.vehicle_id.expect("checked in handshake");
    info!("vehicle {vid} connected (applied revision {})", hello.applied_revision);
    {
        // Hold the store lock so no deployment slips between the snapshot and registration.
        let store = inner.store.lock().unwrap();
        let desired = store.desired(&vid).cloned();
        let revision = desired.as_ref().map_or(0, |d| d.revision);
        send(&writer, &ControlEnvelope::new(ControlType::Ack, 1, &RevisionAck { revision }))?;
        if let Some(d) = desired.filter(|d| d.revision > 0) {
            send(&writer, &ControlEnvelope::new(ControlType::DesiredState, inner.msg_id(), &d))?;
        }
        if let Some(old) = inner.links.lock().unwrap().insert(vid.clone(), Link { id: conn, writer: writer.clone() }) {
            old.writer.lock().unwrap().shutdown();
        }
    }
    let result = vehicle_loop(inner, &mut reader, &writer, &vid);
    let mut links = inner.links.lock().unwrap();
    if links.get(&vid).is_some_and(|l| l.id == conn) {
        links.remove(&vid);
        info!("vehicle {vid} disconnected");
    }
    result
}

fn vehicle_loop(inner: &Inner, reader: &mut Stream, writer: &Mutex<Stream>, vid: &str) -> Result<(), RegistryError> {
    while let Some(env) = read_control(reader)? {
        inner.store.lock().unwrap().touch(vid, now_ms());
        match env.kind {
            ControlType::Log => {
                let reply = match ingest(inner, vid, &env) {
                    Ok(ack) => ControlEnvelope::new(ControlType::Ack, env.id, &ack),
                    Err(e) => reply_err(&e, env.id),
                };
                send(writer, &reply)?;
            }
            ControlType::Status => match env.parse::<VehicleStatus>() {
                Ok(s) => {
                    inner.status.lock().unwrap().insert(vid.to_string(), s);
                }
                Err(e) => debug!("{vid}: bad status: {e}"),
            },
            ControlType::Ack => {
                if let Ok(a) = env.parse::<RevisionAck>() {
                    inner.store.lock().unwrap().record_ack(vid, a.revision, now_ms())?;
                }
            }
            ControlType::FetchPackage => send(writer, &fetch(inner, &env))?,
            ControlType::Heartbeat => {}
            other => send(writer, &ControlEnvelope::error(env.id, ErrorCode::BadRequest, format!("{other:?} not accepted from vehicles")))?,
        }
    }
    Ok(())
}

/// Stores the well-formed records of a batch and reports the rest.
fn ingest(inner: &Inner, vid: &str, env: &ControlEnvelope) -> Result<LogAck, RegistryError> {
    let batch: LogBatch = env
        .parse()
        .map_err(|e| RegistryError::Rejected(ErrorCode::MalformedBatch, e.to_string()))?;
    let mut good: Vec<LogRecord> = Vec::with_capacity(batch.records.len());
    let mut errors = Vec::new();
    for (i, v) in batch.records.into_iter().enumerate() {
        match serde_json::from_value::<LogRecord>(v) {
            Ok(r) => good.push(r),
            Err(e) => errors.push(format!("record {i}: {e}")),
        }
    }
    inner.store.lock().unwrap().append_logs(vid, &good, &today())?;
    Ok(LogAck {
        accepted: good.len() as u64,
        rejected: errors.len() as u64,
        detail: (!errors.is_empty()).then(|| errors.join("; ")),
    })
}

fn fetch(inner: &Inner, env: &ControlEnvelope) -> ControlEnvelope {
    let result = env
        .parse::<FetchPackage>()
        .map_err(|e| RegistryError::Rejected(ErrorCode::BadRequest, e.to_string()))
        .and_then(|f| inner.store.lock().unwrap().package(&f.checksum));
    match result {
        Ok(p) => ControlEnvelope::new(ControlType::Package, env.id, &p),
        Err(e) => reply_err(&e, env.id),
    }
}

fn serve_operator(inner: &Arc<Inner>, stream: Stream) -> Result<(), RegistryError> {
    let mut reader = stream.try_clone()?;
    let writer = Mutex::new(stream);
    if handshake(inner, &mut reader, &writer, Role::Operator)?.is_none() {
        return Ok(());
    }
    send(&writer, &ControlEnvelope::new(ControlType::Ack, 1, &serde_json::json!({})))?;
    while let Some(env) = read_control(&mut reader)? {
        let reply = match operate(inner, &env) {
            Ok(r) => r,
            Err(e) => reply_err(&e, env.id),
        };
        send(&writer, &reply)?;
    }
    Ok(())
}

fn bad(e: impl std::fmt::Display) -> RegistryError {
    RegistryError::Rejected(ErrorCode::BadRequest, e.to_string())
}

fn operate(inner: &Inner, env: &ControlEnvelope) -> Result<ControlEnvelope, RegistryError> {
    match env.kind {
        ControlType::PutPackage => {
            let p: PutPackage = env.parse().map_err(bad)?;
            let stored = inner.store.lock().unwrap().put_package(&p)?;
            Ok(ControlEnvelope::new(ControlType::Ack, env.id, &stored))
        }
        ControlType::SetDeployment => {
            let req: SetDeployment = env.parse().map_err(bad)?;
            if !inner.tokens.is_vehicle(&req.vehicle_id) {
                return Err(RegistryError::Rejected(ErrorCode::UnknownVehicle, format!("no vehicle {:?}", req.vehicle_id)));
            }
            let store = &mut *inner.store.lock().unwrap();
            let desired = store.set_deployment(&req)?;
            info!("vehicle {} now at revision {}", desired.vehicle_id, desired.revision);
            inner.push(&desired);
            Ok(ControlEnvelope::new(ControlType::Ack, env.id, &RevisionAck { revision: desired.revision }))
        }
        ControlType::QueryLogs => {
            let q: QueryLogs = env.parse().map_err(bad)?;
            let records = inner.store.lock().unwrap().query_logs(&q)?;
            Ok(ControlEnvelope::new(ControlType::Ack, env.id, &LogsResponse { records }))
        }
        ControlType::List => {
            let store = inner.store.lock().unwrap();
            let links = inner.links.lock().unwrap();
            let status = inner.status.lock().unwrap();
            let mut ids: Vec<String> = inner.tokens.vehicles.keys().cloned().collect();
            ids.extend(store.vehicle_ids().map(String::from));
            ids.sort();
            ids.dedup();
            let vehicles = ids
                .into_iter()
                .map(|id| {
                    let st = store.vehicle(&id);
                    VehicleSummary {
                        revision: st.map_or(0, |s| s.desired.revision),
                        connected: links.contains_key(&id),
                        last_seen_ms: st.map_or(0, |s| s.last_seen_ms),
                        functions: st.map_or_else(Vec::new, |s| {
                            s.desired.functions.iter().map(|f| f.manifest.name.clone()).collect()
                        }),
                        status: status.get(&id).cloned(),
                        vehicle_id: id,
                    }
                })
                .collect();
            Ok(ControlEnvelope::new(ControlType::Ack, env.id, &Listing { packages: store.packages(), vehicles }))
        }
        ControlType::FetchPackage => Ok(fetch(inner, env)),
        other => Err(RegistryError::Rejected(ErrorCode::BadRequest, format!("{other:?} is not an operator request"))),
    }
}
