//! Supervisor behavior against the fake launcher in virtual time.

use std::sync::{Arc, Mutex};
use std::time::Duration;

use lambda_orchestrator::fake::{FakeLauncher, World};
use lambda_orchestrator::{BackoffPolicy, Supervisor, SupervisorConfig};
use lambda_proto::{DeployedFunction, DesiredState, Entry, FunctionManifest, Mode, ProcessState};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

fn manifest(name: &str) -> FunctionManifest {
    FunctionManifest {
        name: name.into(),
        version: "1".into(),
        mode: Mode::Periodic { period_ms: 100 },
        subscriptions: vec![],
        params: Default::default(),
        autostart: false,
        entry: Entry::Native("echo".into()),
    }
}

fn desired(rev: u64, fns: &[(&str, &str)]) -> DesiredState {
    DesiredState {
        vehicle_id: "v1".into(),
        revision: rev,
        functions: fns.iter().map(|(n, c)| DeployedFunction { manifest: manifest(n), checksum: c.to_string() }).collect(),
    }
}

struct Rig {
    sup: Supervisor,
    world: Arc<Mutex<World>>,
    _dir: tempfile::TempDir,
}

fn rig(stubborn: bool) -> Rig {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = SupervisorConfig::new(dir.path(), "inproc");
    cfg.require_staging = false;
    let launcher = FakeLauncher { world: Default::default(), stubborn };
    let world = launcher.world.clone();
    Rig { sup: Supervisor::new(cfg, Box::new(launcher)), world, _dir: dir }
}

fn ms(v: u64) -> Duration {
    Duration::from_millis(v)
}

fn assert_one_per_function(world: &World) {
    let mut names: Vec<&str> = world.running().into_iter().map(|(_, f)| f).collect();
    let n = names.len();
    names.sort();
    names.dedup();
    assert_eq!(names.len(), n, "two live processes for one function: {:?}", world.running());
}

#[test]
fn crash_once_restarts_after_initial_delay() {
    let mut r = rig(false);
    r.sup.apply(&desired(1, &[("a", "c1")]), ms(0)).unwrap();
    r.sup.tick(ms(10));
    assert_eq!(r.sup.state_of("a"), Some(ProcessState::Up));
    let pid = r.sup.pid_of("a").unwrap();
    r.world.lock().unwrap().crash(pid, 1);
    r.sup.tick(ms(1000));
    assert_eq!(r.sup.state_of("a"), Some(ProcessState::BackingOff));
    r.sup.tick(ms(1499));
    assert_eq!(r.sup.pid_of("a"), None);
    r.sup.tick(ms(1500));
    assert!(r.sup.pid_of("a").is_some_and(|p| p != pid));
    assert_eq!(r.sup.reports()[0].restarts, 1);
}

/// Drives a process that dies immediately every time and records when
/// each restart happens.
#[test]
fn crash_loop_follows_schedule_then_gives_up() {
    let mut r = rig(false);
    r.world.lock().unwrap().crash_on_start.insert("a".into(), 2);
    r.sup.apply(&desired(1, &[("a", "c1")]), ms(0)).unwrap();
    let mut spawn_times = vec![0u64];
    let mut t = 0u64;
    let mut last_spawns = 1;
    while r.sup.state_of("a") != Some(ProcessState::FailedPermanent) {
        t += 10;
        assert!(t < 400_000, "never gave up");
        r.sup.tick(ms(t));
        let n = r.world.lock().unwrap().spawn_log.len();
        if n > last_spawns {
            spawn_times.push(t);
            last_spawns = n;
        }
    }
    // The crash is observed on the first tick after each spawn (10 ms later).
    let gaps: Vec<u64> = spawn_times.windows(2).map(|w| w[1] - w[0] - 10).collect();
    let expected: Vec<u64> = {
        let mut d = 500u64;
        (0..10)
            .map(|_| {
                let v = d.min(30_000);
                d *= 2;
                v
            })
            .collect()
    };
    assert_eq!(gaps, expected);
    assert_eq!(r.sup.reports()[0].restarts, 10);
    r.sup.tick(ms(t + 100_000));
    assert_eq!(r.world.lock().unwrap().spawn_log.len(), 11);
}

#[test]
fn stable_run_resets_the_delay() {
    let mut r = rig(false);
    r.sup.apply(&desired(1, &[("a", "c1")]), ms(0)).unwrap();
    let mut now = 0;
    for _ in 0..3 {
        r.sup.tick(ms(now + 1));
        let pid = r.sup.pid_of("a").unwrap();
        r.world.lock().unwrap().crash(pid, 1);
        now += 5;
        r.sup.tick(ms(now));
        now += 20_000;
        r.sup.tick(ms(now));
    }
    // Third restart waited 2 s; after a 61 s run the next wait is back to 500 ms.
    let pid = r.sup.pid_of("a").unwrap();
    now += 61_000;
    r.sup.tick(ms(now));
    r.world.lock().unwrap().crash(pid, 1);
    r.sup.tick(ms(now + 1));
    r.sup.tick(ms(now + 1 + 500));
    assert!(r.sup.pid_of("a").is_some());
}

#[test]
fn graceful_stop_and_kill_after_grace() {
    let mut r = rig(false);
    r.sup.apply(&desired(1, &[("a", "c1")]), ms(0)).unwrap();
    r.sup.apply(&desired(2, &[]), ms(100)).unwrap();
    r.sup.tick(ms(110));
    assert!(r.sup.is_empty());
    assert!(!r.world.lock().unwrap().procs[&1].killed);

    let mut r = rig(true);
    r.sup.apply(&desired(1, &[("a", "c1")]), ms(0)).unwrap();
    r.sup.apply(&desired(2, &[]), ms(100)).unwrap();
    r.sup.tick(ms(5099));
    assert!(!r.sup.is_empty());
    r.sup.tick(ms(5100));
    r.sup.tick(ms(5110));
    assert!(r.sup.is_empty());
    assert!(r.world.lock().unwrap().procs[&1].killed);
}

#[test]
fn changed_deployment_waits_for_old_process() {
    let mut r = rig(true);
    r.sup.apply(&desired(1, &[("a", "c1")]), ms(0)).unwrap();
    let plan = r.sup.apply(&desired(2, &[("a", "c2")]), ms(10)).unwrap();
    assert_eq!(plan.restart_changed.len(), 1);
    assert_one_per_function(&r.world.lock().unwrap());
    // Removed and re-added while the old one is still draining.
    r.sup.apply(&desired(3, &[]), ms(20)).unwrap();
    r.sup.apply(&desired(4, &[("a", "c3")]), ms(30)).unwrap();
    for t in (40..6000).step_by(50) {
        r.sup.tick(ms(t));
        assert_one_per_function(&r.world.lock().unwrap());
    }
    assert_eq!(r.sup.running(), vec!["a".to_string()]);
    assert_eq!(r.sup.current()["a"].checksum, "c3");
    assert_eq!(r.world.lock().unwrap().spawn_log.len(), 2);
}

#[test]
fn missing_package_is_permanent() {
    let dir = tempfile::tempdir().unwrap();
    let launcher = FakeLauncher::default();
    let world = launcher.world.clone();
    let mut sup = Supervisor::new(SupervisorConfig::new(dir.path(), "inproc"), Box::new(launcher));
    sup.apply(&desired(1, &[("a", "nope")]), ms(0)).unwrap();
    assert_eq!(sup.state_of("a"), Some(ProcessState::FailedPermanent));
    assert!(sup.reports()[0].last_error.as_deref().unwrap().contains("not staged"));
    assert!(world.lock().unwrap().spawn_log.is_empty());

    std::fs::create_dir_all(dir.path().join("packages/ok")).unwrap();
    sup.apply(&desired(2, &[("a", "ok")]), ms(10)).unwrap();
    assert!(sup.pid_of("a").is_some());
}

#[test]
fn spawn_failure_backs_off() {
    let mut r = rig(false);
    r.world.lock().unwrap().failing.push("a".into());
    r.sup.apply(&desired(1, &[("a", "c")]), ms(0)).unwrap();
    assert_eq!(r.sup.state_of("a"), Some(ProcessState::BackingOff));
    r.world.lock().unwrap().failing.clear();
    r.sup.tick(ms(500));
    assert!(r.sup.pid_of("a").is_some());
}

#[test]
fn stale_revision_changes_nothing() {
    let mut r = rig(false);
    r.sup.apply(&desired(5, &[("a", "c")]), ms(0)).unwrap();
    assert!(r.sup.apply(&desired(4, &[]), ms(1)).is_err());
    assert_eq!(r.sup.running(), vec!["a".to_string()]);
    assert_eq!(r.sup.applied_revision(), 5);
}

#[test]
fn randomized_churn_converges() {
    let mut rng = StdRng::seed_from_u64(7);
    let names = ["a", "b", "c", "d", "e", "f"];
    let mut r = rig(false);
    let mut now = 0u64;
    let mut last = desired(0, &[]);
    for round in 1..=50u64 {
        let mut chosen: Vec<(&str, String)> = Vec::new();
        for n in names {
            if rng.gen_bool(0.5) {
                chosen.push((n, format!("c{}", rng.gen_range(0..3))));
            }
        }
        let pairs: Vec<(&str, &str)> = chosen.iter().map(|(n, c)| (*n, c.as_str())).collect();
        last = desired(round, &pairs);
        r.sup.apply(&last, ms(now)).unwrap();
        // Random crashes and partial progress between updates.
        for _ in 0..rng.gen_range(0..4) {
            now += rng.gen_range(1..300);
            let victim = {
                let w = r.world.lock().unwrap();
                let live = w.running();
                (!live.is_empty()).then(|| live[rng.gen_range(0..live.len())].0)
            };
            if let (Some(pid), true) = (victim, rng.gen_bool(0.3)) {
                r.world.lock().unwrap().crash(pid, 1);
            }
            r.sup.tick(ms(now));
            assert_one_per_function(&r.world.lock().unwrap());
        }
    }
    // Quiesce.
    for _ in 0..2000 {
        now += 100;
        r.sup.tick(ms(now));
        if r.sup.is_settled() {
            break;
        }
    }
    let mut want: Vec<String> = last.functions.iter().map(|f| f.manifest.name.clone()).collect();
    want.sort();
    assert_eq!(r.sup.running(), want);
    let live: Vec<String> = r.world.lock().unwrap().running().into_iter().map(|(_, f)| f.to_string()).collect();
    assert_eq!(live, want);
    for f in &last.functions {
        assert_eq!(r.sup.current()[&f.manifest.name].checksum, f.checksum);
    }
}

#[test]
fn default_policy_values() {
    let p = BackoffPolicy::default();
    assert_eq!((p.initial, p.factor, p.cap, p.max_restarts), (ms(500), 2, Duration::from_secs(30), 10));
    assert_eq!(p.window, Duration::from_secs(3600));
}
