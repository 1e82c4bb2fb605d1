//! CSV rows, per-phase and pooled summaries, and the log-axis box plot.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use lambda_core::{summarize, StatsSummary64};
use plotters::prelude::*;
use serde::{Deserialize, Serialize};

use crate::measure::PhaseBins;
use crate::BenchError;

pub const CSV_HEADER: [&str; 6] = ["function", "implementation", "phase", "t_in_ns", "t_out_ns", "rtt_ms"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub function: String,
    pub implementation: String,
    pub phase: u32,
    pub t_in_ns: u64,
    pub t_out_ns: u64,
    pub rtt_ms: f64,
}

/// Flattens phase bins. `implementation` maps a function id to its label;
/// unknown ids get `"native"`.
pub fn rows_from(bins: &PhaseBins, implementation: &dyn Fn(&str) -> String) -> Vec<CsvRow> {
    let mut rows = Vec::with_capacity(bins.total());
    for (i, phase) in bins.phases.iter().enumerate() {
        for s in phase {
            let r = &s.record;
            rows.push(CsvRow {
                function: r.function.clone(),
                implementation: implementation(&r.function),
                phase: i as u32 + 1,
                t_in_ns: r.t_in,
                t_out_ns: r.t_out,
                rtt_ms: r.rtt_ms(),
            });
        }
    }
    rows
}

pub fn write_csv(path: &Path, rows: &[CsvRow]) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_path(path)?;
    if rows.is_empty() {
        w.write_record(CSV_HEADER)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Vec<CsvRow>, BenchError> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(BenchError::Config(format!("{}: unexpected header {header:?}", path.display())));
    }
    Ok(r.deserialize().collect::<Result<Vec<CsvRow>, _>>()?)
}

/// `phase: None` is the pooled summary over all phases.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub function: String,
    pub implementation: String,
    pub phase: Option<u32>,
    pub stats: StatsSummary64,
}

impl SummaryRow {
    pub fn label(&self) -> String {
        format!("{}/{}", self.function, self.implementation)
    }
}

/// RTT samples (ms) per `(function, implementation)` in first-seen order.
pub fn groups(rows: &[CsvRow]) -> Vec<((String, String), Vec<f64>)> {
    let mut out: Vec<((String, String), Vec<f64>)> = Vec::new();
    for r in rows {
        let key = (r.function.clone(), r.implementation.clone());
        match out.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(r.rtt_ms),
            None => out.push((key, vec![r.rtt_ms])),
        }
    }
    out
}

/// Per-phase rows followed by the pooled row for every group.
pub fn summaries(rows: &[CsvRow]) -> Result<Vec<SummaryRow>, BenchError> {
    let mut out = Vec::new();
    for ((function, implementation), pooled) in groups(rows) {
        let mut by_phase: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
        for r in rows.iter().filter(|r| r.function == function && r.implementation == implementation) {
            by_phase.entry(r.phase).or_default().push(r.rtt_ms);
        }
        for (phase, v) in by_phase {
            out.push(SummaryRow {
                function: function.clone(),
                implementation: implementation.clone(),
                phase: Some(phase),
                stats: summarize(&v)?,
            });
        }
        out.push(SummaryRow { function, implementation, phase: None, stats: summarize(&pooled)? });
    }
    Ok(out)
}

/// Fixed-width table: Function, Impl, Phase, N, Min, Max, Mean, MAD, 95th (ms).
pub fn format_table(rows: &[SummaryRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<16} {:<10} {:>5} {:>7} {:>10} {:>10} {:>10} {:>10} {:>10}",
        "Function", "Impl", "Phase", "N", "Min [ms]", "Max [ms]", "Mean [ms]", "MAD [ms]", "95th [ms]"
    );
    for r in rows {
        let phase = r.phase.map_or_else(|| "all".to_string(), |p| p.to_string());
        let st = &r.stats;
        let _ = writeln!(
            s,
            "{:<16} {:<10} {:>5} {:>7} {:>10.3} {:>10.3} {:>10.3} {:>10.3} {:>10.3}",
            r.function, r.implementation, phase, st.n, st.min, st.max, st.mean, st.mad, st.p95
        );
    }
    s
}

/// Smallest value drawn on the log axis.
const LOG_FLOOR: f32 = 1e-3;

/// Per-label box plots on a logarithmic RTT axis, as SVG.
pub fn plot_svg(path: &Path, groups: &[(String, Vec<f64>)], title: &str) -> Result<(), BenchError> {
    let groups: Vec<&(String, Vec<f64>)> = groups.iter().filter(|(_, v)| !v.is_empty()).collect();
    if groups.is_empty() {
        return Err(BenchError::Config("nothing to plot".into()));
    }
    let clamp = |x: f64| (x as f32).max(LOG_FLOOR);
    let lo = groups.iter().flat_map(|(_, v)| v.iter()).map(|&x| clamp(x)).fold(f32::INFINITY, f32::min);
    let hi = groups.iter().flat_map(|(_, v)| v.iter()).map(|&x| clamp(x)).fold(LOG_FLOOR, f32::max);
    let (lo, hi) = (lo / 2.0, (hi * 2.0).max(lo * 10.0));
    let labels: Vec<String> = groups.iter().map(|(l, _)| l.clone()).collect();
    let width = (240 + 160 * labels.len() as u32).max(480);
    let err = |e: &dyn std::fmt::Display| BenchError::Plot(e.to_string());

    let root = SVGBackend::new(path, (width, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| err(&e))?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(64)
        .build_cartesian_2d(labels.as_slice().into_segmented(), (lo..hi).log_scale())
        .map_err(|e| err(&e))?;
    chart
        .configure_mesh()
        .disable_x_mesh()
        .y_desc("RTT [ms]")
        .draw()
        .map_err(|e| err(&e))?;
    chart
        .draw_series(groups.iter().enumerate().map(|(i, (_, v))| {
            let data: Vec<f32> = v.iter().map(|&x| clamp(x)).collect();
            let q = Quartiles::new(&data);
            Boxplot::new_vertical(SegmentValue::CenterOf(&labels[i]), &q).width(40)
        }))
        .map_err(|e| err(&e))?;
    root.present().map_err(|e| err(&e))?;
    Ok(())
}
