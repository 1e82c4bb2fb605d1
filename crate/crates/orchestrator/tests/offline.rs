//! Booting from the cached desired state with no registry reachable.

use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

use lambda_orchestrator::fake::FakeLauncher;
use lambda_orchestrator::{staging, Agent, AgentConfig, SupervisorConfig};
use lambda_proto::{DeployedFunction, DesiredState, Entry, FunctionManifest, Mode};
use lambda_transport::Endpoint;

fn f(name: &str, autostart: bool) -> DeployedFunction {
    DeployedFunction {
        manifest: FunctionManifest {
            name: name.into(),
            version: "1".into(),
            mode: Mode::Periodic { period_ms: 100 },
            subscriptions: vec![],
            params: Default::default(),
            autostart,
            entry: Entry::Native("echo".into()),
        },
        checksum: format!("sum-{name}"),
    }
}

#[test]
fn autostart_functions_run_without_registry() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("edge");
    let cached = DesiredState { vehicle_id: "car".into(), revision: 4, functions: vec![f("a", true), f("b", false)] };
    staging::save_desired(&root, &cached).unwrap();
    for c in ["sum-a", "sum-b"] {
        std::fs::create_dir_all(root.join("packages").join(c)).unwrap();
    }
    let cfg = AgentConfig::new(Endpoint::Unix(dir.path().join("absent.sock")), "car", "t", SupervisorConfig::new(&root, "inproc"));
    let launcher = FakeLauncher::default();
    let world = launcher.world.clone();
    let (_tx, rx) = mpsc::sync_channel(4);
    let agent = Agent::new(cfg, Box::new(launcher), rx);
    let h = agent.handle();
    let run = thread::spawn(move || agent.run());
    let t = Instant::now();
    while world.lock().unwrap().running().is_empty() {
        assert!(t.elapsed() < Duration::from_secs(5));
        thread::sleep(Duration::from_millis(10));
    }
    thread::sleep(Duration::from_millis(200));
    let running: Vec<String> = world.lock().unwrap().running().iter().map(|(_, n)| n.to_string()).collect();
    assert_eq!(running, vec!["a".to_string()]);
    assert_eq!(h.applied_revision(), 4);
    assert!(!h.connected());
    h.stop();
    run.join().unwrap().unwrap();
    assert!(world.lock().unwrap().running().is_empty());
}
