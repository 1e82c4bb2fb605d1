//! Upstream batching against a minimal registry stand-in.

use std::sync::mpsc;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use lambda_orchestrator::fake::FakeLauncher;
use lambda_orchestrator::{Agent, AgentConfig, SupervisorConfig};
use lambda_proto::{read_control, write_control, ControlEnvelope, ControlType, LogAck, LogBatch, LogLevel, LogRecord, RevisionAck};
use lambda_transport::endpoint::Listener;
use lambda_transport::Endpoint;

/// Accepts one vehicle, acks everything and records each log batch size.
fn stand_in(ep: &Endpoint) -> Arc<Mutex<Vec<Vec<LogRecord>>>> {
    let listener = Listener::bind(ep).unwrap();
    let batches = Arc::new(Mutex::new(Vec::new()));
    let out = batches.clone();
    thread::spawn(move || {
        let mut s = listener.accept().unwrap();
        let mut w = s.try_clone().unwrap();
        let hello = read_control(&mut s).unwrap().unwrap();
        assert_eq!(hello.kind, ControlType::Hello);
        write_control(&mut w, &ControlEnvelope::new(ControlType::Ack, 1, &RevisionAck { revision: 0 })).unwrap();
        while let Ok(Some(env)) = read_control(&mut s) {
            if env.kind == ControlType::Log {
                let b: LogBatch = env.parse().unwrap();
                let recs: Vec<LogRecord> = b.records.into_iter().map(|v| serde_json::from_value(v).unwrap()).collect();
                let ack = LogAck { accepted: recs.len() as u64, ..Default::default() };
                out.lock().unwrap().push(recs);
                let _ = write_control(&mut w, &ControlEnvelope::new(ControlType::Ack, env.id, &ack));
            }
        }
    });
    batches
}

#[test]
fn many_logs_in_one_second_are_batched() {
    let dir = tempfile::tempdir().unwrap();
    let ep = Endpoint::Unix(dir.path().join("reg.sock"));
    let batches = stand_in(&ep);
    let cfg = AgentConfig::new(ep, "car", "t", SupervisorConfig::new(dir.path().join("edge"), "inproc"));
    let (_tx, rx) = mpsc::sync_channel(4);
    let agent = Agent::new(cfg, Box::new(FakeLauncher::default()), rx);
    let h = agent.handle();
    let run = thread::spawn(move || agent.run());
    let t = Instant::now();
    while !h.connected() {
        assert!(t.elapsed() < Duration::from_secs(5));
        thread::sleep(Duration::from_millis(5));
    }
    let start = Instant::now();
    for i in 0..250u64 {
        h.log(LogRecord::new(LogLevel::Info, i, "f", "x"));
        thread::sleep(Duration::from_millis(4));
    }
    assert!(start.elapsed() < Duration::from_millis(1500));
    let t = Instant::now();
    while batches.lock().unwrap().iter().map(Vec::len).sum::<usize>() < 250 {
        assert!(t.elapsed() < Duration::from_secs(5), "records missing");
        thread::sleep(Duration::from_millis(10));
    }
    let b = batches.lock().unwrap();
    assert!(b.len() >= 2, "{} envelopes", b.len());
    assert!(b.iter().all(|x| x.len() <= 100));
    let ts: Vec<u64> = b.iter().flatten().map(|r| r.ts).collect();
    assert_eq!(ts, (0..250).collect::<Vec<_>>());
    drop(b);
    h.stop();
    run.join().unwrap().unwrap();
}
