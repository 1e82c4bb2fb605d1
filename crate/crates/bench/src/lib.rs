//! Bag synthesis and replay, RTT capture under a warm-up/phase plan,
//! statistics, CSV/summary reports and box plots.

pub mod bag;
pub mod calibrate;
pub mod import;
pub mod measure;
pub mod replay;
pub mod report;
pub mod run;
pub mod scenario;
pub mod synth;

use thiserror::Error;

pub use bag::{Bag, BagError, BagRecord, BagTopic};
pub use calibrate::{calibrate, window_scores, Calibration};
pub use import::import_index;
pub use lambda_core::{mann_whitney_u, summarize, MwuMethod, MwuResult64, StatsSummary64};
pub use measure::{bin, measure, Collector, PhaseBins, PhasePlan, RttSample};
pub use replay::{replay, ReplayOptions, ReplayReport, Sent};
pub use report::{format_table, plot_svg, read_csv, summaries, write_csv, CsvRow, SummaryRow};
pub use run::{run_bench, BenchConfig, BenchOutcome};
pub use scenario::{echo_manifest, expected_decisions, observed_decisions, reference_manifests, Decision};
pub use synth::{synth_bag, ticker_bag, SynthError, SynthSpec};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Bag(#[from] BagError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("index line {line}: {reason}")]
    Import { line: usize, reason: String },
    #[error("host: {0}")]
    Host(String),
    #[error("plot: {0}")]
    Plot(String),
    #[error(transparent)]
    Stats(#[from] lambda_core::StatsError),
    #[error(transparent)]
    Mwu(#[from] lambda_core::MwuError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Proto(#[from] lambda_proto::ProtoError),
    #[error(transparent)]
    Transport(#[from] lambda_transport::TransportError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
