//! Process supervision driven by an explicit clock.
//!
//! Every method takes `now`, the time since the supervisor was created, so
//! tests can run restart schedules in virtual time. The real loop passes
//! `Instant::elapsed`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use lambda_proto::{DesiredState, Entry, ProcessReport, ProcessState};
use log::{info, warn};

use crate::backoff::{BackoffPolicy, RestartBudget};
use crate::launcher::{ChildProcess, LaunchSpec, ProcessLauncher};
use crate::plan::{sync, Deployed, Plan, StaleRevision};

#[derive(Debug, Clone)]
pub struct SupervisorConfig {
    pub policy: BackoffPolicy,
    /// Time between the termination signal and the kill.
    pub grace: Duration,
    pub data_root: PathBuf,
    /// Refuse to start functions whose package is not under
    /// `data_root/packages/<checksum>`.
    pub require_staging: bool,
    pub transport: String,
    pub instrument_rtt: bool,
}

impl SupervisorConfig {
    pub fn new(data_root: impl Into<PathBuf>, transport: impl Into<String>) -> Self {
        Self {
            policy: BackoffPolicy::default(),
            grace: Duration::from_secs(5),
            data_root: data_root.into(),
            require_staging: true,
            transport: transport.into(),
            instrument_rtt: false,
        }
    }

    pub fn package_dir(&self, checksum: &str) -> PathBuf {
        package_dir(&self.data_root, checksum)
    }
}

pub fn package_dir(data_root: &Path, checksum: &str) -> PathBuf {
    data_root.join("packages").join(checksum)
}

/// What to do once a stopping process has exited.
#[derive(Debug)]
enum AfterStop {
    Remove,
    Replace(Deployed),
}

struct Stopping {
    kill_at: Duration,
    then: AfterStop,
}

struct Managed {
    deployed: Deployed,
    state: ProcessState,
    child: Option<Box<dyn ChildProcess>>,
    started_at: Duration,
    budget: RestartBudget,
    restarts: u32,
    next_restart: Option<Duration>,
    stopping: Option<Stopping>,
    last_error: Option<String>,
}

impl Managed {
    fn new(deployed: Deployed) -> Self {
        Self {
            deployed,
            state: ProcessState::Spawning,
            child: None,
            started_at: Duration::ZERO,
            budget: RestartBudget::default(),
            restarts: 0,
            next_restart: None,
            stopping: None,
            last_error: None,
        }
    }

    /// The deployment this entry is converging to, or `None` if it is
    /// being removed.
    fn target(&self) -> Option<&Deployed> {
        match &self.stopping {
            Some(Stopping { then: AfterStop::Remove, .. }) => None,
            Some(Stopping { then: AfterStop::Replace(d), .. }) => Some(d),
            _ => Some(&self.deployed),
        }
    }
}

pub struct Supervisor {
    cfg: SupervisorConfig,
    launcher: Box<dyn ProcessLauncher>,
    procs: BTreeMap<String, Managed>,
    applied_revision: u64,
    spawns: u64,
}

impl Supervisor {
    pub fn new(cfg: SupervisorConfig, launcher: Box<dyn ProcessLauncher>) -> Self {
        Self { cfg, launcher, procs: BTreeMap::new(), applied_revision: 0, spawns: 0 }
    }

    pub fn config(&self) -> &SupervisorConfig {
        &self.cfg
    }

    pub fn applied_revision(&self) -> u64 {
        self.applied_revision
    }

    /// Successful spawns since creation.
    pub fn spawns(&self) -> u64 {
        self.spawns
    }

    /// Deployments currently targeted, keyed by function name.
    pub fn current(&self) -> BTreeMap<String, Deployed> {
        self.procs.iter().filter_map(|(n, m)| Some((n.clone(), m.target()?.clone()))).collect()
    }

    /// Reconciles toward `desired`. A stale revision changes nothing.
    pub fn apply(&mut self, desired: &DesiredState, now: Duration) -> Result<Plan, StaleRevision> {
        let plan = sync(&self.current(), desired, self.applied_revision)?;
        let wanted: BTreeMap<&str, Deployed> = desired
            .functions
            .iter()
            .map(|f| (f.manifest.name.as_str(), Deployed { manifest: f.manifest.clone(), checksum: f.checksum.clone() }))
            .collect();
        for name in &plan.stop {
            self.begin_stop(name, AfterStop::Remove, now);
        }
        for name in &plan.restart_changed {
            let d = wanted[name.as_str()].clone();
            info!("{name}: deployment changed, restarting");
            self.begin_stop(name, AfterStop::Replace(d), now);
        }
        for name in &plan.spawn {
            let d = wanted[name.as_str()].clone();
            match self.procs.get_mut(name) {
                // Still shutting down from an earlier removal; respawn once it is gone.
                Some(m) => {
                    if let Some(s) = &mut m.stopping {
                        s.then = AfterStop::Replace(d);
                    }
                }
                None => {
                    self.procs.insert(name.clone(), Managed::new(d));
                    self.start(name, now);
                }
            }
        }
        self.applied_revision = desired.revision;
        Ok(plan)
    }

    /// Stops every process; they are removed once exited.
    pub fn stop_all(&mut self, now: Duration) {
        let names: Vec<String> = self.procs.keys().cloned().collect();
        for n in names {
            self.begin_stop(&n, AfterStop::Remove, now);
        }
    }

    /// True when nothing is running or stopping.
    pub fn is_empty(&self) -> bool {
        self.procs.is_empty()
    }

    fn begin_stop(&mut self, name: &str, then: AfterStop, now: Duration) {
        let Some(m) = self.procs.get_mut(name) else { return };
        match &mut m.child {
            Some(child) => {
                if m.stopping.is_none() {
                    child.terminate();
                    m.stopping = Some(Stopping { kill_at: now + self.cfg.grace, then });
                } else if let Some(s) = &mut m.stopping {
                    s.then = then;
                }
            }
            None => {
                m.stopping = Some(Stopping { kill_at: now, then });
                self.finish_stop(name, now);
            }
        }
    }

    fn finish_stop(&mut self, name: &str, now: Duration) {
        let m = self.procs.get_mut(name).unwrap();
        m.child = None;
        m.next_restart = None;
        match m.stopping.take().map(|s| s.then) {
            Some(AfterStop::Remove) | None => {
                self.procs.remove(name);
            }
            Some(AfterStop::Replace(d)) => {
                *m = Managed::new(d);
                self.start(name, now);
            }
        }
    }

    fn write_manifest(&self, d: &Deployed) -> std::io::Result<PathBuf> {
        let mut manifest = d.manifest.clone();
        if let Entry::Guest(_) = manifest.entry {
            manifest.entry = Entry::Guest(self.cfg.package_dir(&d.checksum).to_string_lossy().into_owned());
        }
        let dir = self.cfg.data_root.join("run");
        std::fs::create_dir_all(&dir)?;
        let path = dir.join(format!("{}.json", manifest.name));
        std::fs::write(&path, manifest.to_json_pretty())?;
        Ok(path)
    }

    /// Spawns `name`. Precondition: no live child.
    fn start(&mut self, name: &str, now: Duration) {
        let d = self.procs[name].deployed.clone();
        assert!(self.procs[name].child.is_none(), "{name}: double spawn");
        if self.cfg.require_staging && !self.cfg.package_dir(&d.checksum).is_dir() {
            let m = self.procs.get_mut(name).unwrap();
            m.state = ProcessState::FailedPermanent;
            m.last_error = Some(format!("package {} is not staged", d.checksum));
            warn!("{name}: package {} is not staged", d.checksum);
            return;
        }
        let spawned = self.write_manifest(&d).map_err(|e| format!("cannot write manifest: {e}")).and_then(|path| {
            self.launcher.spawn(&LaunchSpec {
                function: name.to_string(),
                manifest_path: path,
                transport: self.cfg.transport.clone(),
                instrument_rtt: self.cfg.instrument_rtt,
            })
        });
        match spawned {
            Ok(child) => {
                self.spawns += 1;
                let m = self.procs.get_mut(name).unwrap();
                info!("{name}: started pid {}", child.pid());
                m.child = Some(child);
                m.state = ProcessState::Spawning;
                m.started_at = now;
                m.next_restart = None;
            }
            Err(e) => {
                warn!("{name}: {e}");
                self.on_failure(name, e, false, now);
            }
        }
    }

    /// Schedules a restart or gives up.
    /// `ran` is false when the spawn itself failed.
    fn on_failure(&mut self, name: &str, reason: String, ran: bool, now: Duration) {
        let policy = self.cfg.policy;
        let m = self.procs.get_mut(name).unwrap();
        m.child = None;
        m.last_error = Some(reason);
        if ran && now.saturating_sub(m.started_at) >= policy.stable_after {
            m.budget.streak = 0;
        }
        if !m.budget.allows(&policy, now) {
            m.state = ProcessState::FailedPermanent;
            m.next_restart = None;
            warn!("{name}: restart limit reached, giving up");
            return;
        }
        let delay = policy.delay(m.budget.streak);
        m.budget.record(now);
        m.restarts += 1;
        m.state = ProcessState::BackingOff;
        m.next_restart = Some(now + delay);
    }

    /// Reaps exits, enforces stop deadlines and fires due restarts.
    pub fn tick(&mut self, now: Duration) {
        let names: Vec<String> = self.procs.keys().cloned().collect();
        for name in names {
            let Some(m) = self.procs.get_mut(&name) else { continue };
            if let Some(child) = &mut m.child {
                match child.try_wait() {
                    Some(code) if m.stopping.is_some() => {
                        info!("{name}: stopped (code {code})");
                        self.finish_stop(&name, now);
                    }
                    Some(code) => {
                        warn!("{name}: exited unexpectedly with code {code}");
                        self.on_failure(&name, format!("exited with code {code}"), true, now);
                    }
                    None => {
                        if let Some(s) = &m.stopping {
                            if now >= s.kill_at {
                                warn!("{name}: no exit within grace, killing");
                                child.kill();
                            }
                        } else if m.state == ProcessState::Spawning {
                            m.state = ProcessState::Up;
                        }
                    }
                }
            } else if m.state == ProcessState::BackingOff && m.next_restart.is_some_and(|t| now >= t) {
                self.start(&name, now);
            }
        }
    }

    /// Earliest future time at which `tick` has work to do.
    pub fn next_deadline(&self) -> Option<Duration> {
        self.procs
            .values()
            .filter_map(|m| m.next_restart.or(m.stopping.as_ref().map(|s| s.kill_at)))
            .min()
    }

    pub fn reports(&self) -> Vec<ProcessReport> {
        self.procs
            .iter()
            .map(|(name, m)| ProcessReport {
                function: name.clone(),
                state: m.state,
                pid: m.child.as_ref().map(|c| c.pid()),
                restarts: m.restarts,
                last_error: m.last_error.clone(),
            })
            .collect()
    }

    pub fn state_of(&self, name: &str) -> Option<ProcessState> {
        self.procs.get(name).map(|m| m.state)
    }

    pub fn pid_of(&self, name: &str) -> Option<u32> {
        self.procs.get(name)?.child.as_ref().map(|c| c.pid())
    }

    /// Names with a live process that is not being stopped.
    pub fn running(&self) -> Vec<String> {
        self.procs
            .iter()
            .filter(|(_, m)| m.child.is_some() && m.stopping.is_none())
            .map(|(n, _)| n.clone())
            .collect()
    }

    /// No stops pending and no process waiting to restart.
    pub fn is_settled(&self) -> bool {
        self.procs.values().all(|m| m.stopping.is_none() && m.next_restart.is_none())
    }
}

impl Drop for Supervisor {
    fn drop(&mut self) {
        for m in self.procs.values_mut() {
            if let Some(c) = &mut m.child {
                c.kill();
            }
        }
    }
}
