use std::path::PathBuf;

use clap::{ArgAction, Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "lambda", version, about = "Edge function runtime, orchestration and benchmarking")]
pub struct Cli {
    /// JSON file with defaults for the global flags (log_level, transport,
    /// seed, ops, token). Flags given on the command line win.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// error, warn, info, debug or trace.
    #[arg(long, global = true, value_name = "LEVEL")]
    pub log_level: Option<String>,
    /// Data-plane endpoint: inproc, tcp://host:port or unix:///path.
    #[arg(long, global = true, value_name = "ENDPOINT")]
    pub transport: Option<String>,
    /// Seed for commands that use randomness.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Package, deployment and log service.
    Registry {
        #[command(subcommand)]
        cmd: RegistryCmd,
    },
    /// On-vehicle agent supervising function hosts.
    Orchestrator {
        #[command(subcommand)]
        cmd: OrchestratorCmd,
    },
    /// Function host process.
    Host {
        #[command(subcommand)]
        cmd: HostCmd,
    },
    /// Operator client for the registry.
    Deploy {
        #[command(subcommand)]
        cmd: DeployCmd,
    },
    /// Replay bags: synthesize, inspect, import, replay.
    Bag {
        #[command(subcommand)]
        cmd: BagCmd,
    },
    /// RTT benchmarks and statistics.
    Bench {
        #[command(subcommand)]
        cmd: BenchCmd,
    },
    /// Box plot of an RTT CSV on a logarithmic axis.
    Plot(PlotArgs),
    /// Socket data plane.
    Transport {
        #[command(subcommand)]
        cmd: TransportCmd,
    },
}

#[derive(Debug, Subcommand)]
pub enum RegistryCmd {
    /// Serve until SIGINT/SIGTERM.
    Serve(RegistryServeArgs),
}

#[derive(Debug, Args)]
pub struct RegistryServeArgs {
    #[arg(long, value_name = "DIR")]
    pub data_dir: PathBuf,
    /// JSON tokens file: {"operators": {name: sha256}, "vehicles": {id: sha256}}.
    #[arg(long, value_name = "PATH")]
    pub tokens: PathBuf,
    /// Endpoint vehicles connect to.
    #[arg(long, value_name = "ENDPOINT", default_value = "tcp://127.0.0.1:7400")]
    pub vehicles: String,
    /// Endpoint operators connect to.
    #[arg(long, value_name = "ENDPOINT", default_value = "tcp://127.0.0.1:7401")]
    pub ops: String,
}

#[derive(Debug, Subcommand)]
pub enum OrchestratorCmd {
    /// Run until SIGINT/SIGTERM.
    Run(OrchestratorRunArgs),
}

#[derive(Debug, Args)]
pub struct OrchestratorRunArgs {
    /// Registry vehicle endpoint.
    #[arg(long, value_name = "ENDPOINT")]
    pub registry: String,
    #[arg(long, value_name = "ID")]
    pub vehicle_id: String,
    /// Vehicle token; falls back to the config file.
    #[arg(long, value_name = "TOKEN")]
    pub token: Option<String>,
    /// Packages, run manifests and the cached desired state live here.
    #[arg(long, value_name = "DIR")]
    pub data_dir: PathBuf,
    /// Hosts publish RTT records.
    #[arg(long, action = ArgAction::Set, default_value_t = false, value_name = "BOOL")]
    pub instrument_rtt: bool,
    /// Host executable; defaults to this binary with `host run`.
    #[arg(long, value_name = "PATH")]
    pub host_program: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum HostCmd {
    /// Load one manifest and run it until SIGTERM.
    Run(HostRunArgs),
}

#[derive(Debug, Args)]
pub struct HostRunArgs {
    #[arg(long, value_name = "PATH")]
    pub manifest: PathBuf,
    /// stdio (framed control messages on stdout), an endpoint, or none.
    #[arg(long, value_name = "CHANNEL", default_value = "none")]
    pub orchestrator_channel: String,
    /// Publish an RTT record next to every triggered action.
    #[arg(long, action = ArgAction::Set, default_value_t = false, value_name = "BOOL")]
    pub instrument_rtt: bool,
    /// Comma-separated core ids for the execution thread.
    #[arg(long, value_name = "CORES", value_delimiter = ',')]
    pub affinity: Vec<usize>,
}

#[derive(Debug, Args)]
pub struct OpsArgs {
    /// Registry operator endpoint.
    #[arg(long, value_name = "ENDPOINT")]
    pub ops: Option<String>,
    /// Operator token.
    #[arg(long, value_name = "TOKEN")]
    pub token: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum DeployCmd {
    /// Upload a package built from a manifest (and an archive for guests).
    Put {
        #[command(flatten)]
        ops: OpsArgs,
        #[arg(long, value_name = "PATH")]
        manifest: PathBuf,
        /// Guest archive; omit for native functions.
        #[arg(long, value_name = "PATH")]
        archive: Option<PathBuf>,
    },
    /// Replace a vehicle's deployment.
    Set {
        #[command(flatten)]
        ops: OpsArgs,
        #[arg(long, value_name = "ID")]
        vehicle: String,
        /// NAME@VERSION, repeatable.
        #[arg(long = "function", value_name = "NAME@VERSION")]
        functions: Vec<String>,
        /// KEY=VALUE applied to every listed function, repeatable.
        #[arg(long = "param", value_name = "KEY=VALUE")]
        params: Vec<String>,
    },
    /// Packages and vehicles.
    List {
        #[command(flatten)]
        ops: OpsArgs,
    },
    /// Query stored logs as JSON lines.
    Logs {
        #[command(flatten)]
        ops: OpsArgs,
        #[arg(long, value_name = "ID")]
        vehicle: Option<String>,
        #[arg(long, value_name = "NAME")]
        function: Option<String>,
        /// Minimum level.
        #[arg(long, value_name = "LEVEL")]
        level: Option<String>,
        /// Inclusive lower bound on record ts (ns).
        #[arg(long, value_name = "NS")]
        since: Option<u64>,
        /// Exclusive upper bound on record ts (ns).
        #[arg(long, value_name = "NS")]
        until: Option<u64>,
    },
}

#[derive(Debug, Subcommand)]
pub enum BagCmd {
    /// Write a synthetic bag.
    Synth {
        /// JSON synth spec; mutually exclusive with --scenario.
        #[arg(long, value_name = "PATH", conflicts_with = "scenario")]
        spec: Option<PathBuf>,
        /// Built-in smooth/rough/braking-in-the-dark/detections scenario.
        #[arg(long)]
        scenario: bool,
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
    },
    /// Topic table and record counts.
    Info {
        #[arg(value_name = "BAG")]
        bag: PathBuf,
    },
    /// Publish a bag onto the transport in real time.
    Replay {
        #[arg(value_name = "BAG")]
        bag: PathBuf,
        #[arg(long, default_value_t = 1.0, value_name = "X")]
        speed: f64,
        /// Keep the recorded timestamps instead of stamping send time.
        #[arg(long)]
        no_realign: bool,
        /// Restart from the beginning after the last record.
        #[arg(long = "loop")]
        looped: bool,
        /// Stop after this many seconds.
        #[arg(long, value_name = "SECONDS")]
        duration: Option<f64>,
    },
    /// Build a bag from a JSON-lines index with raw payload files.
    Import {
        #[arg(long, value_name = "PATH")]
        index: PathBuf,
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum BenchCmd {
    /// Replay a bag through in-process hosts and capture RTT per phase.
    Run {
        #[arg(long, value_name = "PATH")]
        bag: PathBuf,
        /// Function manifests, repeatable.
        #[arg(long = "manifests", value_name = "PATH", num_args = 1.., required = true)]
        manifests: Vec<PathBuf>,
        /// JSON phase plan {warmup, phase_count, phase_length}.
        #[arg(long, value_name = "PATH")]
        plan: Option<PathBuf>,
        /// Warm-up seconds (overrides the plan).
        #[arg(long, value_name = "SECONDS")]
        warmup: Option<f64>,
        /// Number of phases (overrides the plan).
        #[arg(long, value_name = "N")]
        phases: Option<u32>,
        /// Phase length in seconds (overrides the plan).
        #[arg(long, value_name = "SECONDS")]
        phase_length: Option<f64>,
        #[arg(long, default_value_t = 1.0, value_name = "X")]
        speed: f64,
        /// Directory for rtt.csv, summary.txt and rtt.svg.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Per-phase and pooled summary of an RTT CSV.
    Stats {
        #[arg(long, value_name = "PATH")]
        csv: PathBuf,
    },
    /// Mann-Whitney U test between two RTT CSVs.
    Compare {
        #[arg(long, value_name = "PATH")]
        csv_a: PathBuf,
        #[arg(long, value_name = "PATH")]
        csv_b: PathBuf,
        /// Only rows of this function.
        #[arg(long, value_name = "NAME")]
        function: Option<String>,
    },
    /// Suggest roughness thresholds from a bag's IMU stream.
    Calibrate {
        #[arg(long, value_name = "PATH")]
        bag: PathBuf,
        #[arg(long, default_value = "/imu", value_name = "TOPIC")]
        topic: String,
        /// Samples between scored windows.
        #[arg(long, default_value_t = 8, value_name = "N")]
        hop: usize,
    },
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[arg(long, value_name = "PATH")]
    pub csv: PathBuf,
    /// SVG output.
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    #[arg(long, default_value = "RTT", value_name = "TEXT")]
    pub title: String,
}

#[derive(Debug, Subcommand)]
pub enum TransportCmd {
    /// Host a bus on an endpoint until SIGINT/SIGTERM.
    Serve {
        #[arg(long, value_name = "ENDPOINT")]
        listen: String,
    },
}
