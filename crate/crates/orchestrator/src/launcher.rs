//! Starting host processes. [`OsLauncher`] runs real executables; the
//! [`fake`] launcher records spawns and lets tests script exits.

use std::io::BufReader;
use std::path::PathBuf;
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{SyncSender, TrySendError};
use std::sync::Arc;
use std::thread;

use lambda_proto::{read_control, ControlType, HostStatus, LogRecord};

/// Everything needed to start one host.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LaunchSpec {
    pub function: String,
    pub manifest_path: PathBuf,
    pub transport: String,
    pub instrument_rtt: bool,
}

/// Message read from a host's status channel.
#[derive(Debug, Clone, PartialEq)]
pub enum HostEvent {
    Log(LogRecord),
    Status(HostStatus),
}

pub trait ChildProcess: Send {
    fn pid(&self) -> u32;
    /// Exit code once exited (`-signal` when killed by a signal).
    fn try_wait(&mut self) -> Option<i32>;
    /// Polite termination request.
    fn terminate(&mut self);
    fn kill(&mut self);
}

pub trait ProcessLauncher: Send {
    fn spawn(&mut self, spec: &LaunchSpec) -> Result<Box<dyn ChildProcess>, String>;
}

/// Spawns `program args... host run --manifest ...` with stdout carrying
/// framed control envelopes.
pub struct OsLauncher {
    pub program: PathBuf,
    pub args: Vec<String>,
    events: SyncSender<(String, HostEvent)>,
    dropped: Arc<AtomicU64>,
}

impl OsLauncher {
    pub fn new(program: PathBuf, args: Vec<String>, events: SyncSender<(String, HostEvent)>) -> Self {
        Self { program, args, events, dropped: Arc::new(AtomicU64::new(0)) }
    }

    /// Events discarded because the internal queue was full.
    pub fn dropped(&self) -> u64 {
        self.dropped.load(Ordering::Relaxed)
    }
}

impl ProcessLauncher for OsLauncher {
    fn spawn(&mut self, spec: &LaunchSpec) -> Result<Box<dyn ChildProcess>, String> {
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .arg("--manifest")
            .arg(&spec.manifest_path)
            .arg("--transport")
            .arg(&spec.transport)
            .arg("--orchestrator-channel")
            .arg("stdio")
            .arg("--instrument-rtt")
            .arg(spec.instrument_rtt.to_string())
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| format!("spawn {}: {e}", self.program.display()))?;
        if let Some(out) = child.stdout.take() {
            let (tx, dropped, function) = (self.events.clone(), self.dropped.clone(), spec.function.clone());
            thread::Builder::new()
                .name(format!("status:{function}"))
                .spawn(move || {
                    let mut r = BufReader::new(out);
                    while let Ok(Some(env)) = read_control(&mut r) {
                        let ev = match env.kind {
                            ControlType::Log => env.parse().map(HostEvent::Log),
                            ControlType::Status => env.parse().map(HostEvent::Status),
                            _ => continue,
                        };
                        let Ok(ev) = ev else { continue };
                        match tx.try_send((function.clone(), ev)) {
                            Ok(()) => {}
                            Err(TrySendError::Full(_)) => {
                                dropped.fetch_add(1, Ordering::Relaxed);
                            }
                            Err(TrySendError::Disconnected(_)) => break,
                        }
                    }
                })
                .map_err(|e| e.to_string())?;
        }
        Ok(Box::new(OsChild(child)))
    }
}

struct OsChild(Child);

impl ChildProcess for OsChild {
    fn pid(&self) -> u32 {
        self.0.id()
    }

    fn try_wait(&mut self) -> Option<i32> {
        use std::os::unix::process::ExitStatusExt;
        match self.0.try_wait() {
            Ok(Some(st)) => Some(st.code().unwrap_or_else(|| -st.signal().unwrap_or(0))),
            Ok(None) => None,
            Err(_) => Some(-1),
        }
    }

    fn terminate(&mut self) {
        // SAFETY: plain syscall on a pid we own and have not reaped.
        unsafe {
            libc::kill(self.0.id() as libc::pid_t, libc::SIGTERM);
        }
    }

    fn kill(&mut self) {
        let _ = self.0.kill();
    }
}

impl Drop for OsChild {
    fn drop(&mut self) {
        if self.0.try_wait().ok().flatten().is_none() {
            let _ = self.0.kill();
            let _ = self.0.wait();
        }
    }
}

pub mod fake {
    //! Scriptable in-memory processes.

    use std::collections::BTreeMap;
    use std::sync::{Arc, Mutex};

    use super::{ChildProcess, LaunchSpec, ProcessLauncher};

    #[derive(Debug, Clone, Copy, PartialEq, Eq)]
    pub enum FakeState {
        Running,
        /// Terminate requested; the process ignores it unless `obeys_term`.
        Terminating,
        Exited(i32),
    }

    #[derive(Debug)]
    pub struct FakeProc {
        pub function: String,
        pub state: FakeState,
        pub obeys_term: bool,
        pub killed: bool,
    }

    #[derive(Debug, Default)]
    pub struct World {
        pub procs: BTreeMap<u32, FakeProc>,
        pub next_pid: u32,
        /// Functions whose spawn fails.
        pub failing: Vec<String>,
        /// Functions whose processes exit immediately with this code.
        pub crash_on_start: BTreeMap<String, i32>,
        pub spawn_log: Vec<String>,
    }

    impl World {
        pub fn running(&self) -> Vec<(u32, &str)> {
            self.procs
                .iter()
                .filter(|(_, p)| !matches!(p.state, FakeState::Exited(_)))
                .map(|(pid, p)| (*pid, p.function.as_str()))
                .collect()
        }

        /// Makes a live process exit with `code`.
        pub fn crash(&mut self, pid: u32, code: i32) {
            if let Some(p) = self.procs.get_mut(&pid) {
                p.state = FakeState::Exited(code);
            }
        }

        pub fn pid_of(&self, function: &str) -> Option<u32> {
            self.running().into_iter().find(|(_, f)| *f == function).map(|(p, _)| p)
        }
    }

    #[derive(Clone, Default)]
    pub struct FakeLauncher {
        pub world: Arc<Mutex<World>>,
        /// New processes ignore SIGTERM and need a kill.
        pub stubborn: bool,
    }

    impl ProcessLauncher for FakeLauncher {
        fn spawn(&mut self, spec: &LaunchSpec) -> Result<Box<dyn ChildProcess>, String> {
            let mut w = self.world.lock().unwrap();
            w.spawn_log.push(spec.function.clone());
            if w.failing.contains(&spec.function) {
                return Err(format!("cannot start {}", spec.function));
            }
            w.next_pid += 1;
            let pid = w.next_pid;
            let state = match w.crash_on_start.get(&spec.function) {
                Some(&code) => FakeState::Exited(code),
                None => FakeState::Running,
            };
            w.procs.insert(pid, FakeProc { function: spec.function.clone(), state, obeys_term: !self.stubborn, killed: false });
            Ok(Box::new(FakeChild { pid, world: self.world.clone() }))
        }
    }

    struct FakeChild {
        pid: u32,
        world: Arc<Mutex<World>>,
    }

    impl ChildProcess for FakeChild {
        fn pid(&self) -> u32 {
            self.pid
        }

        fn try_wait(&mut self) -> Option<i32> {
            match self.world.lock().unwrap().procs[&self.pid].state {
                FakeState::Exited(c) => Some(c),
                _ => None,
            }
        }

        fn terminate(&mut self) {
            let mut w = self.world.lock().unwrap();
            let p = w.procs.get_mut(&self.pid).unwrap();
            if p.state == FakeState::Running {
                p.state = if p.obeys_term { FakeState::Exited(0) } else { FakeState::Terminating };
            }
        }

        fn kill(&mut self) {
            let mut w = self.world.lock().unwrap();
            let p = w.procs.get_mut(&self.pid).unwrap();
            if !matches!(p.state, FakeState::Exited(_)) {
                p.state = FakeState::Exited(-9);
                p.killed = true;
            }
        }
    }
}
