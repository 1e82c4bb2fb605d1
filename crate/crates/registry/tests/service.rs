//! Registry served over sockets, exercised by the operator client and by a
//! real orchestrator agent driving fake processes.

use std::path::Path;
use std::sync::mpsc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use lambda_orchestrator::fake::FakeLauncher;
use lambda_orchestrator::{Agent, AgentConfig, AgentHandle, OrchestratorError, SupervisorConfig};
use lambda_proto::{
    read_control, write_control, ControlEnvelope, ControlType, DeploymentItem, Entry, ErrorCode, FunctionManifest,
    Hello, LogAck, LogBatch, LogLevel, LogRecord, Mode, PackageKind, PutPackage, QueryLogs, Role, SetDeployment,
};
use lambda_registry::{OpsClient, RegistryServer, Tokens};
use lambda_transport::endpoint::Stream;
use lambda_transport::Endpoint;

const OP: &str = "op-token";
const CAR: &str = "car-token";

fn manifest(name: &str, version: &str) -> FunctionManifest {
    FunctionManifest {
        name: name.into(),
        version: version.into(),
        mode: Mode::Periodic { period_ms: 100 },
        subscriptions: vec![],
        params: Default::default(),
        autostart: false,
        entry: Entry::Native("echo".into()),
    }
}

fn native(name: &str, version: &str) -> PutPackage {
    PutPackage::build(PackageKind::NativeRef, manifest(name, version), None).unwrap()
}

fn item(name: &str, version: &str) -> DeploymentItem {
    DeploymentItem { name: name.into(), version: version.into(), params: Default::default(), autostart: None }
}

fn deploy(items: Vec<DeploymentItem>) -> SetDeployment {
    SetDeployment { vehicle_id: "car".into(), functions: items }
}

fn tokens() -> Tokens {
    let mut t = Tokens::default();
    t.add_operator("op", OP);
    t.add_vehicle("car", CAR);
    t
}

fn sock(dir: &Path, name: &str) -> Endpoint {
    Endpoint::Unix(dir.join(name))
}

fn start(dir: &Path) -> RegistryServer {
    RegistryServer::start(&dir.join("data"), tokens(), &sock(dir, "veh.sock"), &sock(dir, "ops.sock")).unwrap()
}

fn ops(reg: &RegistryServer) -> OpsClient {
    OpsClient::connect(reg.ops_endpoint(), OP).unwrap()
}

fn wait_for(limit: Duration, mut f: impl FnMut() -> bool) -> bool {
    let t = Instant::now();
    while t.elapsed() < limit {
        if f() {
            return true;
        }
        thread::sleep(Duration::from_millis(10));
    }
    false
}

struct Vehicle {
    handle: AgentHandle,
    launcher: FakeLauncher,
    thread: JoinHandle<Result<(), OrchestratorError>>,
}

impl Vehicle {
    fn stop(self) -> Result<(), OrchestratorError> {
        self.handle.stop();
        self.thread.join().unwrap()
    }
}

fn vehicle(dir: &Path, token: &str) -> Vehicle {
    let mut sup = SupervisorConfig::new(dir.join("edge"), "inproc");
    sup.grace = Duration::from_millis(200);
    let mut cfg = AgentConfig::new(sock(dir, "veh.sock"), "car", token, sup);
    cfg.reconnect.initial = Duration::from_millis(100);
    cfg.reconnect.cap = Duration::from_millis(400);
    cfg.status_interval = Duration::from_millis(100);
    let launcher = FakeLauncher::default();
    let (_tx, rx) = mpsc::sync_channel(16);
    let agent = Agent::new(cfg, Box::new(launcher.clone()), rx);
    let handle = agent.handle();
    let thread = thread::spawn(move || agent.run());
    Vehicle { handle, launcher, thread }
}

#[test]
fn operator_auth_fails_closed() {
    let dir = tempfile::tempdir().unwrap();
    let reg = start(dir.path());
    let err = OpsClient::connect(reg.ops_endpoint(), "nope").err().unwrap();
    assert_eq!(err.code(), Some(ErrorCode::AuthFailed));
    // Vehicle credentials are not operator credentials.
    assert_eq!(OpsClient::connect(reg.ops_endpoint(), CAR).err().unwrap().code(), Some(ErrorCode::AuthFailed));
    // A request without hello is refused.
    let mut s = Stream::connect(reg.ops_endpoint()).unwrap();
    write_control(&mut s, &ControlEnvelope::new(ControlType::List, 1, &serde_json::json!({}))).unwrap();
    assert_eq!(read_control(&mut s).unwrap().unwrap().kind, ControlType::Error);
}

#[test]
fn packages_and_deployments() {
    let dir = tempfile::tempdir().unwrap();
    let reg = start(dir.path());
    let mut c = ops(&reg);
    let a = c.put_package(&native("a", "1")).unwrap();
    assert_eq!(c.put_package(&native("a", "1")).unwrap(), a);
    let mut changed = native("a", "1");
    changed.meta.manifest.params.insert("x".into(), "1".into());
    changed.meta.checksum = lambda_proto::sha256_hex(&changed.content().unwrap());
    assert_eq!(c.put_package(&changed).unwrap_err().code(), Some(ErrorCode::VersionConflict));
    assert_eq!(c.list().unwrap().packages.len(), 1);

    let r1 = c.set_deployment(&deploy(vec![item("a", "1")])).unwrap();
    let err = c.set_deployment(&deploy(vec![item("a", "1"), item("ghost", "9")])).unwrap_err();
    assert_eq!(err.code(), Some(ErrorCode::UnknownPackage));
    let mut other = deploy(vec![]);
    other.vehicle_id = "bus".into();
    assert_eq!(c.set_deployment(&other).unwrap_err().code(), Some(ErrorCode::UnknownVehicle));
    let listing = c.list().unwrap();
    assert_eq!(listing.vehicles[0].revision, r1);
    assert_eq!(c.fetch_package(&a.checksum).unwrap().meta.name, "a");
}

#[test]
fn connected_vehicle_receives_each_revision() {
    let dir = tempfile::tempdir().unwrap();
    let reg = start(dir.path());
    let mut c = ops(&reg);
    c.put_package(&native("a", "1")).unwrap();
    c.put_package(&native("b", "2")).unwrap();
    let v = vehicle(dir.path(), CAR);
    assert!(wait_for(Duration::from_secs(5), || reg.is_connected("car")));

    let r1 = c.set_deployment(&deploy(vec![item("a", "1")])).unwrap();
    assert!(wait_for(Duration::from_secs(5), || reg.acked_revision("car") == r1));
    let r2 = c.set_deployment(&deploy(vec![item("a", "1"), item("b", "2")])).unwrap();
    assert_eq!(r2, r1 + 1);
    assert!(wait_for(Duration::from_secs(5), || reg.acked_revision("car") == r2));
    assert!(wait_for(Duration::from_secs(5), || v.launcher.world.lock().unwrap().running().len() == 2));

    // Identical redeploy: new revision, nothing restarted.
    let spawned = v.launcher.world.lock().unwrap().spawn_log.len();
    let r3 = c.set_deployment(&deploy(vec![item("a", "1"), item("b", "2")])).unwrap();
    assert!(wait_for(Duration::from_secs(5), || reg.acked_revision("car") == r3));
    assert_eq!(v.launcher.world.lock().unwrap().spawn_log.len(), spawned);

    // Packages were staged by fetching them from the registry.
    assert!(dir.path().join("edge/packages").read_dir().unwrap().count() >= 2);
    assert!(wait_for(Duration::from_secs(5), || reg
        .vehicle_status("car")
        .is_some_and(|s| s.applied_revision == r3 && s.processes.len() == 2)));
    v.stop().unwrap();
}

#[test]
fn logs_flow_upstream_and_query_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let reg = start(dir.path());
    let v = vehicle(dir.path(), CAR);
    for ts in [30, 10, 20] {
        v.handle.log(LogRecord::new(LogLevel::Info, ts, "imu_fft", "hello"));
    }
    v.handle.log(LogRecord::new(LogLevel::Info, 5, "other", "x"));
    let mut c = ops(&reg);
    let q = QueryLogs { vehicle_id: Some("car".into()), function: Some("imu_fft".into()), ..Default::default() };
    assert!(wait_for(Duration::from_secs(5), || c.query_logs(&q).unwrap().len() == 3));
    let got: Vec<u64> = c.query_logs(&q).unwrap().iter().map(|r| r.ts).collect();
    assert_eq!(got, vec![10, 20, 30]);
    let none = QueryLogs { since: Some(100), until: Some(200), ..Default::default() };
    assert!(c.query_logs(&none).unwrap().is_empty());
    v.stop().unwrap();
}

#[test]
fn malformed_record_is_partially_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let reg = start(dir.path());
    let mut s = Stream::connect(reg.vehicles_endpoint()).unwrap();
    let hello = Hello { role: Role::Vehicle, token: CAR.into(), vehicle_id: Some("car".into()), applied_revision: 0 };
    write_control(&mut s, &ControlEnvelope::new(ControlType::Hello, 1, &hello)).unwrap();
    assert_eq!(read_control(&mut s).unwrap().unwrap().kind, ControlType::Ack);
    let good = |ts| serde_json::to_value(LogRecord::new(LogLevel::Info, ts, "f", "ok")).unwrap();
    let batch = LogBatch { records: vec![good(1), serde_json::json!({"level": "loud"}), good(2)] };
    write_control(&mut s, &ControlEnvelope::new(ControlType::Log, 9, &batch)).unwrap();
    let reply = read_control(&mut s).unwrap().unwrap();
    assert_eq!((reply.kind, reply.id), (ControlType::Ack, 9));
    let ack: LogAck = reply.parse().unwrap();
    assert_eq!((ack.accepted, ack.rejected), (2, 1));
    assert!(ack.detail.unwrap().contains("record 1"));
}

#[test]
fn bad_vehicle_token_stops_the_agent() {
    let dir = tempfile::tempdir().unwrap();
    let _reg = start(dir.path());
    let v = vehicle(dir.path(), "wrong");
    let r = v.thread.join().unwrap();
    assert!(matches!(r, Err(OrchestratorError::AuthRejected)), "{r:?}");
}

#[test]
fn restart_preserves_everything() {
    let dir = tempfile::tempdir().unwrap();
    let (checksum, revision);
    {
        let reg = start(dir.path());
        let mut c = ops(&reg);
        checksum = c.put_package(&native("a", "1")).unwrap().checksum;
        c.put_package(&PutPackage::build(PackageKind::GuestArchive, manifest("g", "1"), Some(b"\x00bytes")).unwrap()).unwrap();
        c.set_deployment(&deploy(vec![item("a", "1")])).unwrap();
        revision = c.set_deployment(&deploy(vec![item("a", "1"), item("g", "1")])).unwrap();
        let v = vehicle(dir.path(), CAR);
        for i in 0..5 {
            v.handle.log(LogRecord::new(LogLevel::Warn, i, "a", "persist me"));
        }
        assert!(wait_for(Duration::from_secs(5), || c.query_logs(&QueryLogs::default()).unwrap().len() == 5));
        v.stop().unwrap();
        reg.stop();
    }
    let reg = start(dir.path());
    let mut c = ops(&reg);
    let listing = c.list().unwrap();
    assert_eq!(listing.packages.len(), 2);
    assert_eq!(listing.vehicles[0].revision, revision);
    assert_eq!(c.fetch_package(&checksum).unwrap().meta.name, "a");
    let g = listing.packages.iter().find(|p| p.name == "g").unwrap();
    assert!(c.fetch_package(&g.checksum).unwrap().verify().unwrap());
    assert_eq!(c.query_logs(&QueryLogs::default()).unwrap().len(), 5);
    // Revisions continue from the persisted value.
    assert_eq!(c.set_deployment(&deploy(vec![])).unwrap(), revision + 1);
}

#[test]
fn logs_survive_a_ten_second_outage_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let reg = start(dir.path());
    let v = vehicle(dir.path(), CAR);
    assert!(wait_for(Duration::from_secs(5), || reg.is_connected("car")));
    reg.stop();
    assert!(wait_for(Duration::from_secs(5), || !v.handle.connected()));
    for i in 0..100u64 {
        v.handle.log(LogRecord::new(LogLevel::Info, 1000 + i, "f", &format!("m{i}")));
    }
    thread::sleep(Duration::from_secs(10));
    let reg = start(dir.path());
    let mut c = ops(&reg);
    assert!(wait_for(Duration::from_secs(10), || c.query_logs(&QueryLogs::default()).unwrap().len() >= 100));
    let got = c.query_logs(&QueryLogs::default()).unwrap();
    assert_eq!(got.len(), 100);
    let msgs: Vec<String> = got.iter().map(|r| r.message.clone()).collect();
    assert_eq!(msgs, (0..100).map(|i| format!("m{i}")).collect::<Vec<_>>());
    assert!(v.handle.sessions() >= 2);
    v.stop().unwrap();
}
