use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{mpsc, Arc};
use std::time::{Duration, Instant};

use anyhow::{anyhow, Context as _, Result};
use lambda_bench::report::groups;
use lambda_bench::{
    calibrate, format_table, import_index, mann_whitney_u, plot_svg, read_csv, replay, run_bench, summaries, synth_bag,
    window_scores, Bag, BenchConfig, CsvRow, PhasePlan, ReplayOptions, SynthSpec,
};
use lambda_orchestrator::{Agent, AgentConfig, OsLauncher, SupervisorConfig};
use lambda_proto::{DeploymentItem, FunctionManifest, LogLevel, PackageKind, PutPackage, QueryLogs, SetDeployment};
use lambda_registry::{OpsClient, RegistryServer, Tokens};
use lambda_runtime::{Host, HostConfig, LogSink};
use lambda_transport::server::BusServer;
use lambda_transport::{Bus, Endpoint};
use log::info;

use crate::args::*;
use crate::{usage, Settings, UsageError};

fn endpoint(s: &str) -> Result<Endpoint> {
    s.parse::<Endpoint>().map_err(|e| UsageError(e.to_string()).into())
}

/// Set by SIGINT or SIGTERM.
fn termination_flag() -> Result<Arc<AtomicBool>> {
    let flag = Arc::new(AtomicBool::new(false));
    for sig in [signal_hook::consts::SIGTERM, signal_hook::consts::SIGINT] {
        signal_hook::flag::register(sig, flag.clone())?;
    }
    Ok(flag)
}

fn wait_for(flag: &AtomicBool) {
    while !flag.load(Ordering::SeqCst) {
        std::thread::sleep(Duration::from_millis(50));
    }
}

/// Calls `on_signal` once the flag is raised, unless `done` is set first.
fn watch(flag: Arc<AtomicBool>, done: Arc<AtomicBool>, on_signal: impl FnOnce() + Send + 'static) {
    std::thread::spawn(move || {
        while !done.load(Ordering::SeqCst) {
            if flag.load(Ordering::SeqCst) {
                on_signal();
                return;
            }
            std::thread::sleep(Duration::from_millis(20));
        }
    });
}

pub fn dispatch(cmd: Command, s: &Settings) -> Result<()> {
    match cmd {
        Command::Registry { cmd: RegistryCmd::Serve(a) } => registry_serve(a),
        Command::Orchestrator { cmd: OrchestratorCmd::Run(a) } => orchestrator_run(a, s),
        Command::Host { cmd: HostCmd::Run(a) } => host_run(a, s),
        Command::Deploy { cmd } => deploy(cmd, s),
        Command::Bag { cmd } => bag(cmd, s),
        Command::Bench { cmd } => bench(cmd),
        Command::Plot(a) => plot(a),
        Command::Transport { cmd: TransportCmd::Serve { listen } } => transport_serve(&listen),
    }
}

fn print_flush(text: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{text}");
    let _ = out.flush();
}

fn registry_serve(a: RegistryServeArgs) -> Result<()> {
    let tokens = Tokens::load(&a.tokens).map_err(|e| UsageError(format!("{}: {e}", a.tokens.display())))?;
    let flag = termination_flag()?;
    let server = RegistryServer::start(&a.data_dir, tokens, &endpoint(&a.vehicles)?, &endpoint(&a.ops)?)?;
    print_flush(&format!("vehicles {}\nops {}", server.vehicles_endpoint(), server.ops_endpoint()));
    wait_for(&flag);
    server.stop();
    Ok(())
}

fn transport_serve(listen: &str) -> Result<()> {
    let flag = termination_flag()?;
    let bus = Arc::new(Bus::new());
    let mut server = BusServer::bind(&endpoint(listen)?, bus)?;
    print_flush(&format!("listening {}", server.endpoint()));
    wait_for(&flag);
    server.stop();
    Ok(())
}

fn orchestrator_run(a: OrchestratorRunArgs, s: &Settings) -> Result<()> {
    let Some(token) = a.token.or(s.token.clone()) else {
        return usage("a vehicle token is required (--token or config)");
    };
    let registry = endpoint(&a.registry)?;
    endpoint(&s.transport)?;
    let mut sup = SupervisorConfig::new(&a.data_dir, s.transport.clone());
    sup.instrument_rtt = a.instrument_rtt;
    let (program, args) = match a.host_program {
        Some(p) => (p, Vec::new()),
        None => (std::env::current_exe()?, vec!["host".to_string(), "run".to_string()]),
    };
    let (tx, rx) = mpsc::sync_channel(1024);
    let launcher = OsLauncher::new(program, args, tx);
    let agent = Agent::new(AgentConfig::new(registry, &a.vehicle_id, &token, sup), Box::new(launcher), rx);
    let handle = agent.handle();
    let done = Arc::new(AtomicBool::new(false));
    watch(termination_flag()?, done.clone(), move || handle.stop());
    let r = agent.run();
    done.store(true, Ordering::SeqCst);
    Ok(r?)
}

fn host_run(a: HostRunArgs, s: &Settings) -> Result<()> {
    let manifest = FunctionManifest::load(&a.manifest).with_context(|| a.manifest.display().to_string())?;
    let sink = match a.orchestrator_channel.as_str() {
        "none" => LogSink::Stdout,
        "stdio" => LogSink::StdioFramed,
        ep => LogSink::Endpoint(endpoint(ep)?),
    };
    let transport = lambda_transport::connect(&endpoint(&s.transport)?)?;
    let flag = termination_flag()?;
    let cfg = HostConfig { instrument_rtt: a.instrument_rtt, affinity: a.affinity, sink, ..Default::default() };
    let mut host = Host::load(manifest, transport.clone(), cfg)?;
    let stop = host.stop_handle();
    let done = Arc::new(AtomicBool::new(false));
    watch(flag, done.clone(), move || stop.stop());
    let r = host.run();
    done.store(true, Ordering::SeqCst);
    let status = host.shutdown();
    transport.shutdown();
    info!("{}: {} invocations, {} failures", status.function, status.invocations, status.failures);
    Ok(r?)
}

fn ops_client(o: &OpsArgs, s: &Settings) -> Result<OpsClient> {
    let Some(ep) = o.ops.clone().or(s.ops.clone()) else {
        return usage("an operator endpoint is required (--ops or config)");
    };
    let Some(token) = o.token.clone().or(s.token.clone()) else {
        return usage("an operator token is required (--token or config)");
    };
    Ok(OpsClient::connect(&endpoint(&ep)?, &token)?)
}

fn split_pair<'a>(s: &'a str, sep: char, what: &str) -> Result<(&'a str, &'a str)> {
    match s.split_once(sep) {
        Some((a, b)) if !a.is_empty() && !b.is_empty() => Ok((a, b)),
        _ => usage(format!("{what} {s:?} is not of the form A{sep}B")),
    }
}

fn deploy(cmd: DeployCmd, s: &Settings) -> Result<()> {
    match cmd {
        DeployCmd::Put { ops, manifest, archive } => {
            let m = FunctionManifest::load(&manifest).with_context(|| manifest.display().to_string())?;
            let blob = archive.as_deref().map(std::fs::read).transpose()?;
            let kind = if blob.is_some() { PackageKind::GuestArchive } else { PackageKind::NativeRef };
            let pkg = PutPackage::build(kind, m, blob.as_deref())?;
            let stored = ops_client(&ops, s)?.put_package(&pkg)?;
            println!("{}", serde_json::to_string(&stored)?);
        }
        DeployCmd::Set { ops, vehicle, functions, params } => {
            let params: BTreeMap<String, String> = params
                .iter()
                .map(|p| split_pair(p, '=', "param").map(|(k, v)| (k.to_string(), v.to_string())))
                .collect::<Result<_>>()?;
            let functions = functions
                .iter()
                .map(|f| {
                    let (name, version) = split_pair(f, '@', "function")?;
                    Ok(DeploymentItem { name: name.into(), version: version.into(), params: params.clone(), autostart: None })
                })
                .collect::<Result<Vec<_>>>()?;
            let revision = ops_client(&ops, s)?.set_deployment(&SetDeployment { vehicle_id: vehicle, functions })?;
            println!("revision {revision}");
        }
        DeployCmd::List { ops } => {
            let listing = ops_client(&ops, s)?.list()?;
            println!("{}", serde_json::to_string_pretty(&listing)?);
        }
        DeployCmd::Logs { ops, vehicle, function, level, since, until } => {
            let level = level
                .map(|l| l.parse::<LogLevel>().map_err(|e| UsageError(e.to_string())))
                .transpose()?;
            let q = QueryLogs { vehicle_id: vehicle, function, level, since, until };
            for r in ops_client(&ops, s)?.query_logs(&q)? {
                println!("{}", serde_json::to_string(&r)?);
            }
        }
    }
    Ok(())
}

fn load_bag(p: &Path) -> Result<Bag> {
    Bag::load(p).with_context(|| p.display().to_string())
}

fn bag(cmd: BagCmd, s: &Settings) -> Result<()> {
    match cmd {
        BagCmd::Synth { spec, scenario, out } => {
            let spec = match (spec, scenario) {
                (Some(p), false) => {
                    let text = std::fs::read_to_string(&p).with_context(|| p.display().to_string())?;
                    let mut spec: SynthSpec =
                        serde_json::from_str(&text).map_err(|e| UsageError(format!("{}: {e}", p.display())))?;
                    if let Some(seed) = s.seed_override {
                        spec.seed = seed;
                    }
                    spec
                }
                (None, true) => SynthSpec::scenario(s.seed),
                _ => return usage("give exactly one of --spec or --scenario"),
            };
            let bag = synth_bag(&spec).map_err(|e| UsageError(e.to_string()))?;
            bag.save(&out)?;
            println!("wrote {} records to {}", bag.records.len(), out.display());
        }
        BagCmd::Info { bag } => print!("{}", bag_info(&load_bag(&bag)?)),
        BagCmd::Replay { bag, speed, no_realign, looped, duration } => {
            let b = load_bag(&bag)?;
            let transport = lambda_transport::connect(&endpoint(&s.transport)?)?;
            let opts = ReplayOptions {
                speed,
                realign: !no_realign,
                looped,
                stop: Some(termination_flag()?),
                deadline: duration.map(|d| Instant::now() + Duration::from_secs_f64(d)),
                record_sends: false,
            };
            let r = replay(&b, &*transport, &opts);
            transport.shutdown();
            let r = r?;
            println!("sent {} records in {:.3} s ({} passes)", r.records_sent, r.duration.as_secs_f64(), r.loops);
        }
        BagCmd::Import { index, out } => {
            let bag = import_index(&index)?;
            bag.save(&out)?;
            println!("wrote {} records to {}", bag.records.len(), out.display());
        }
    }
    Ok(())
}

pub fn bag_info(bag: &Bag) -> String {
    let counts = bag.counts();
    let mut s = format!("{:<5} {:<24} {:<16} {:>8}  metadata\n", "index", "topic", "content_type", "records");
    for (i, (t, n)) in bag.topics.iter().zip(&counts).enumerate() {
        s += &format!("{:<5} {:<24} {:<16} {:>8}  {}\n", i, t.name, t.content_type.name(), n, t.metadata);
    }
    s += &format!("records {} duration {:.3} s\n", bag.records.len(), bag.duration_ns() as f64 / 1e9);
    s
}

fn bench(cmd: BenchCmd) -> Result<()> {
    match cmd {
        BenchCmd::Run { bag, manifests, plan, warmup, phases, phase_length, speed, out } => {
            let mut p = match plan {
                Some(path) => {
                    let text = std::fs::read_to_string(&path).with_context(|| path.display().to_string())?;
                    serde_json::from_str(&text).map_err(|e| UsageError(format!("{}: {e}", path.display())))?
                }
                None => PhasePlan::default(),
            };
            p.warmup = warmup.unwrap_or(p.warmup);
            p.phase_count = phases.unwrap_or(p.phase_count);
            p.phase_length = phase_length.unwrap_or(p.phase_length);
            p.validate().map_err(|e| UsageError(e.to_string()))?;
            let b = load_bag(&bag)?;
            let ms = manifests
                .iter()
                .map(|m| FunctionManifest::load(m).with_context(|| m.display().to_string()))
                .collect::<Result<Vec<_>>>()?;
            let cfg = BenchConfig { plan: p, speed, out_dir: out, guest: None };
            let o = run_bench(&b, &ms, &cfg)?;
            print!("{}", o.table);
            println!("csv {}", o.csv.display());
            println!("summary {}", o.summary.display());
            if let Some(plot) = &o.plot {
                println!("plot {}", plot.display());
            }
            if o.rows.is_empty() {
                return Err(anyhow!("no RTT records captured during the measured phases"));
            }
        }
        BenchCmd::Stats { csv } => {
            let rows = read_csv(&csv)?;
            if rows.is_empty() {
                return Err(anyhow!("{} has no rows", csv.display()));
            }
            print!("{}", format_table(&summaries(&rows)?));
        }
        BenchCmd::Compare { csv_a, csv_b, function } => {
            let pick = |p: &PathBuf| -> Result<Vec<f64>> {
                let rows: Vec<CsvRow> = read_csv(p)?;
                let v: Vec<f64> =
                    rows.iter().filter(|r| function.as_ref().is_none_or(|f| *f == r.function)).map(|r| r.rtt_ms).collect();
                if v.is_empty() {
                    return Err(anyhow!("{}: no matching rows", p.display()));
                }
                Ok(v)
            };
            let (a, b) = (pick(&csv_a)?, pick(&csv_b)?);
            let ra = lambda_bench::summarize(&a)?;
            let rb = lambda_bench::summarize(&b)?;
            let r = mann_whitney_u(&a, &b)?;
            println!("a: n={} mean={:.3} ms p95={:.3} ms", ra.n, ra.mean, ra.p95);
            println!("b: n={} mean={:.3} ms p95={:.3} ms", rb.n, rb.mean, rb.p95);
            println!("U={} p={:.6e} method={:?}", r.u, r.p_two_sided, r.method);
        }
        BenchCmd::Calibrate { bag, topic, hop } => {
            let b = load_bag(&bag)?;
            let cfg = lambda_runtime::builtins::imu_fft::config_from_params(&Default::default())
                .map_err(|e| anyhow!(e.to_string()))?;
            let c = calibrate(&window_scores(&b, &topic, &cfg, hop)?)?;
            println!("{}", serde_json::to_string_pretty(&c)?);
        }
    }
    Ok(())
}

fn plot(a: PlotArgs) -> Result<()> {
    let rows = read_csv(&a.csv)?;
    let labelled: Vec<(String, Vec<f64>)> = groups(&rows).into_iter().map(|((f, i), v)| (format!("{f}/{i}"), v)).collect();
    plot_svg(&a.out, &labelled, &a.title)?;
    println!("wrote {}", a.out.display());
    Ok(())
}
