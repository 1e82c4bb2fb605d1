//! End-to-end in-process benchmark: hosts, RTT collector and looped replay
//! on one bus for the length of a phase plan.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;
use std::sync::{mpsc, Arc};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use lambda_proto::{Entry, FunctionManifest, HostStatus};
use lambda_runtime::{GuestRuntime, Host, HostConfig, LogSink, StopHandle};
use lambda_transport::{monotonic_ns, Bus, Transport};
use log::{info, warn};

use crate::bag::Bag;
use crate::measure::{bin, Collector, PhaseBins, PhasePlan};
use crate::replay::{replay, ReplayOptions, ReplayReport};
use crate::report::{format_table, groups, plot_svg, rows_from, summaries, write_csv, CsvRow, SummaryRow};
use crate::BenchError;

pub const CSV_FILE: &str = "rtt.csv";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const PLOT_FILE: &str = "rtt.svg";

pub struct BenchConfig {
    pub plan: PhasePlan,
    pub speed: f64,
    pub out_dir: PathBuf,
    pub guest: Option<Arc<dyn GuestRuntime>>,
}

impl BenchConfig {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        Self { plan: PhasePlan::default(), speed: 1.0, out_dir: out_dir.into(), guest: None }
    }
}

#[derive(Debug)]
pub struct BenchOutcome {
    pub rows: Vec<CsvRow>,
    pub summaries: Vec<SummaryRow>,
    pub table: String,
    pub csv: PathBuf,
    pub summary: PathBuf,
    /// Absent when no record was captured.
    pub plot: Option<PathBuf>,
    pub replay: ReplayReport,
    pub warmup_dropped: usize,
    pub late_dropped: usize,
    /// Rows whose `t_in` differs from the stamp replay put on the cause.
    pub t_in_mismatches: usize,
    pub hosts: Vec<HostStatus>,
}

pub fn implementation_of(entry: &Entry) -> &'static str {
    match entry {
        Entry::Native(_) => "native",
        Entry::Guest(_) => "guest",
    }
}

pub(crate) struct RunningHost {
    stop: StopHandle,
    thread: JoinHandle<HostStatus>,
}

pub(crate) fn start_host(
    m: FunctionManifest,
    bus: Arc<dyn Transport>,
    guest: Option<Arc<dyn GuestRuntime>>,
    instrument_rtt: bool,
) -> Result<RunningHost, BenchError> {
    let name = m.name.clone();
    let (tx, rx) = mpsc::sync_channel(1);
    let thread = std::thread::Builder::new().name(format!("host:{name}")).spawn(move || {
        let cfg = HostConfig { instrument_rtt, sink: LogSink::Discard, guest, ..Default::default() };
        let mut host = match Host::load(m, bus, cfg) {
            Ok(h) => h,
            Err(e) => {
                let _ = tx.send(Err(e.to_string()));
                return HostStatus::new(&name, lambda_proto::HostState::Failed);
            }
        };
        let _ = tx.send(Ok(host.stop_handle()));
        if let Err(e) = host.run() {
            warn!("{name}: {e}");
        }
        host.shutdown()
    })?;
    match rx.recv() {
        Ok(Ok(stop)) => Ok(RunningHost { stop, thread }),
        Ok(Err(e)) => {
            let _ = thread.join();
            Err(BenchError::Host(e))
        }
        Err(_) => Err(BenchError::Host("host thread exited during load".into())),
    }
}

pub(crate) fn stop_all(hosts: Vec<RunningHost>) -> Vec<HostStatus> {
    for h in &hosts {
        h.stop.stop();
    }
    hosts.into_iter().filter_map(|h| h.thread.join().ok()).collect()
}

pub fn run_bench(bag: &Bag, manifests: &[FunctionManifest], cfg: &BenchConfig) -> Result<BenchOutcome, BenchError> {
    cfg.plan.validate()?;
    if manifests.is_empty() {
        return Err(BenchError::Config("no manifests".into()));
    }
    bag.validate()?;
    if bag.records.is_empty() {
        return Err(BenchError::Config("bag has no records".into()));
    }
    std::fs::create_dir_all(&cfg.out_dir)?;
    let bus: Arc<dyn Transport> = Arc::new(Bus::new());
    let collector = Collector::start(&*bus)?;
    let mut hosts = Vec::new();
    for m in manifests {
        match start_host(m.clone(), bus.clone(), cfg.guest.clone(), true) {
            Ok(h) => hosts.push(h),
            Err(e) => {
                stop_all(hosts);
                return Err(e);
            }
        }
    }

    let run_start = monotonic_ns();
    let stop = Arc::new(AtomicBool::new(false));
    let opts = ReplayOptions {
        speed: cfg.speed,
        realign: true,
        looped: true,
        stop: Some(stop.clone()),
        deadline: Some(Instant::now() + cfg.plan.total()),
        record_sends: true,
    };
    info!("bench: {} hosts, plan {:?}", hosts.len(), cfg.plan);
    let replayed = replay(bag, &*bus, &opts);
    // Let the last invocations publish before collection ends.
    std::thread::sleep(Duration::from_millis(200));
    let statuses = stop_all(hosts);
    let samples = collector.finish();
    bus.shutdown();
    let replayed = replayed?;

    let bins: PhaseBins = bin(samples, &cfg.plan, run_start);
    let impl_of: HashMap<String, &'static str> = manifests.iter().map(|m| (m.name.clone(), implementation_of(&m.entry))).collect();
    let rows = rows_from(&bins, &|f| impl_of.get(f).copied().unwrap_or("native").to_string());

    let trigger_of: HashMap<&str, &str> = manifests.iter().filter_map(|m| Some((m.name.as_str(), m.trigger_topic()?))).collect();
    let stamped: HashMap<(&str, u64), u64> = replayed
        .sent
        .iter()
        .flatten()
        .map(|s| ((s.topic.as_str(), s.seq), s.source_ts))
        .collect();
    let t_in_mismatches = bins
        .phases
        .iter()
        .flatten()
        .filter(|s| {
            let r = &s.record;
            trigger_of
                .get(r.function.as_str())
                .and_then(|t| stamped.get(&(*t, r.cause_seq)))
                .is_some_and(|&ts| ts != r.t_in)
        })
        .count();

    let csv = cfg.out_dir.join(CSV_FILE);
    write_csv(&csv, &rows)?;
    let summaries = if rows.is_empty() { Vec::new() } else { summaries(&rows)? };
    let table = format_table(&summaries);
    let summary = cfg.out_dir.join(SUMMARY_FILE);
    std::fs::write(&summary, &table)?;
    let plot = if rows.is_empty() {
        warn!("bench: no RTT records captured");
        None
    } else {
        let path = cfg.out_dir.join(PLOT_FILE);
        let labelled: Vec<(String, Vec<f64>)> = groups(&rows).into_iter().map(|((f, i), v)| (format!("{f}/{i}"), v)).collect();
        plot_svg(&path, &labelled, "RTT per function")?;
        Some(path)
    };
    let replay = ReplayReport { sent: None, ..replayed };
    Ok(BenchOutcome {
        rows,
        summaries,
        table,
        csv,
        summary,
        plot,
        replay,
        warmup_dropped: bins.warmup_dropped,
        late_dropped: bins.late_dropped,
        t_in_mismatches,
        hosts: statuses,
    })
}

/// Loads manifests from files.
pub fn load_manifests(paths: &[impl AsRef<Path>]) -> Result<Vec<FunctionManifest>, BenchError> {
    paths.iter().map(|p| Ok(FunctionManifest::load(p.as_ref())?)).collect()
}

