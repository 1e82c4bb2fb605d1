//! Supervision of real OS processes (shell scripts standing in for hosts).

use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

use lambda_orchestrator::{OsLauncher, Supervisor, SupervisorConfig};
use lambda_proto::{DeployedFunction, DesiredState, Entry, FunctionManifest, Mode, ProcessState};

const LOOP: &str = "trap 'exit 0' TERM; while true; do sleep 0.02; done";

fn desired(rev: u64, names: &[&str]) -> DesiredState {
    DesiredState {
        vehicle_id: "v".into(),
        revision: rev,
        functions: names
            .iter()
            .map(|n| DeployedFunction {
                manifest: FunctionManifest {
                    name: n.to_string(),
                    version: "1".into(),
                    mode: Mode::Periodic { period_ms: 10 },
                    subscriptions: vec![],
                    params: Default::default(),
                    autostart: false,
                    entry: Entry::Native("echo".into()),
                },
                checksum: "c".into(),
            })
            .collect(),
    }
}

fn supervisor(script: &str, dir: &std::path::Path) -> Supervisor {
    let (tx, _rx) = mpsc::sync_channel(16);
    let launcher = OsLauncher::new("/bin/sh".into(), vec!["-c".into(), script.into(), "host".into()], tx);
    let mut cfg = SupervisorConfig::new(dir, "inproc");
    cfg.require_staging = false;
    Supervisor::new(cfg, Box::new(launcher))
}

fn run_until(sup: &mut Supervisor, start: Instant, limit: Duration, mut done: impl FnMut(&Supervisor) -> bool) -> bool {
    while start.elapsed() < limit {
        sup.tick(start.elapsed());
        if done(sup) {
            return true;
        }
        thread::sleep(Duration::from_millis(10));
    }
    false
}

fn sigkill(pid: u32) {
    assert!(std::process::Command::new("kill").arg("-9").arg(pid.to_string()).status().unwrap().success());
}

#[test]
fn kill_one_host_leaves_siblings_alone() {
    let dir = tempfile::tempdir().unwrap();
    let mut sup = supervisor(LOOP, dir.path());
    let start = Instant::now();
    sup.apply(&desired(1, &["a", "b", "c"]), start.elapsed()).unwrap();
    assert!(run_until(&mut sup, start, Duration::from_secs(5), |s| s.reports().iter().all(|r| r.state == ProcessState::Up)));
    let before: Vec<_> = ["a", "b", "c"].iter().map(|n| sup.pid_of(n).unwrap()).collect();
    sigkill(before[1]);
    assert!(run_until(&mut sup, start, Duration::from_secs(5), |s| s.state_of("b") == Some(ProcessState::BackingOff)));
    assert_eq!(sup.pid_of("a"), Some(before[0]));
    assert_eq!(sup.pid_of("c"), Some(before[2]));
    assert_eq!(sup.state_of("a"), Some(ProcessState::Up));
    // Restarted after the initial backoff.
    let crashed = Instant::now();
    assert!(run_until(&mut sup, start, Duration::from_secs(10), |s| s.pid_of("b").is_some()));
    let waited = crashed.elapsed();
    assert!(waited >= Duration::from_millis(400) && waited < Duration::from_secs(2), "{waited:?}");
    assert_ne!(sup.pid_of("b"), Some(before[1]));
    assert_eq!(sup.reports().iter().find(|r| r.function == "b").unwrap().restarts, 1);
    sup.stop_all(start.elapsed());
    assert!(run_until(&mut sup, start, Duration::from_secs(20), |s| s.is_empty()));
}

#[test]
fn healthy_host_stops_within_grace() {
    let dir = tempfile::tempdir().unwrap();
    let mut sup = supervisor(LOOP, dir.path());
    let start = Instant::now();
    sup.apply(&desired(1, &["a"]), start.elapsed()).unwrap();
    assert!(run_until(&mut sup, start, Duration::from_secs(5), |s| s.state_of("a") == Some(ProcessState::Up)));
    let t = Instant::now();
    sup.apply(&desired(2, &[]), start.elapsed()).unwrap();
    assert!(run_until(&mut sup, start, Duration::from_secs(10), |s| s.is_empty()));
    assert!(t.elapsed() < Duration::from_secs(5));
}

#[test]
fn term_ignoring_host_is_killed() {
    let dir = tempfile::tempdir().unwrap();
    // The ready file appears only once the trap is installed.
    let ready = dir.path().join("ready");
    let script = format!("trap '' TERM; touch {}; while true; do sleep 0.02; done", ready.display());
    let mut sup = supervisor(&script, dir.path());
    let start = Instant::now();
    sup.apply(&desired(1, &["a"]), start.elapsed()).unwrap();
    assert!(run_until(&mut sup, start, Duration::from_secs(5), |s| {
        s.state_of("a") == Some(ProcessState::Up) && ready.exists()
    }));
    let t = Instant::now();
    sup.apply(&desired(2, &[]), start.elapsed()).unwrap();
    assert!(run_until(&mut sup, start, Duration::from_secs(10), |s| s.is_empty()));
    let took = t.elapsed();
    assert!(took >= Duration::from_millis(4900) && took < Duration::from_secs(7), "{took:?}");
}

#[test]
fn manifest_file_is_passed_to_host() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("args.txt");
    let script = format!("echo \"$@\" > {}; {LOOP}", out.display());
    let mut sup = supervisor(&script, dir.path());
    let start = Instant::now();
    sup.apply(&desired(1, &["a"]), start.elapsed()).unwrap();
    assert!(run_until(&mut sup, start, Duration::from_secs(5), |_| out.exists() && std::fs::metadata(&out).unwrap().len() > 0));
    let args = std::fs::read_to_string(&out).unwrap();
    let manifest = dir.path().join("run/a.json");
    assert!(args.contains(&format!("--manifest {}", manifest.display())), "{args}");
    assert!(args.contains("--orchestrator-channel stdio"));
    let m = FunctionManifest::load(&manifest).unwrap();
    assert_eq!(m.name, "a");
}
