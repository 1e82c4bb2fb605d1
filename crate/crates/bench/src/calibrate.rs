//! Roughness threshold calibration from a bag's IMU stream.
//!
//! Scores every `hop`-th full window, splits the log scores in two with
//! Otsu's method, and places the start threshold at the geometric mean of
//! the two class means (in linear units). Stop is 0.8 × start.

use lambda_core::{roughness_score, RoughnessConfig64};
use lambda_proto::ImuSample;
use serde::Serialize;

use crate::bag::Bag;
use crate::BenchError;

const STOP_RATIO: f64 = 0.8;
/// Keeps zero scores finite in log space.
const LOG_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Calibration {
    pub windows: usize,
    /// Mean score of the low (smooth) class.
    pub low_mean: f64,
    pub high_mean: f64,
    pub start_threshold: f64,
    pub stop_threshold: f64,
}

/// Split index `k` maximising between-class variance of `sorted[..k]` and
/// `sorted[k..]`. `None` when all values are equal or fewer than two.
pub fn otsu_split(sorted: &[f64]) -> Option<usize> {
    let n = sorted.len();
    if n < 2 || sorted[0] == sorted[n - 1] {
        return None;
    }
    let total: f64 = sorted.iter().sum();
    let mut left = 0.0;
    let mut best = (0.0, None);
    for k in 1..n {
        left += sorted[k - 1];
        if sorted[k] == sorted[k - 1] {
            continue;
        }
        let (w0, w1) = (k as f64, (n - k) as f64);
        let (m0, m1) = (left / w0, (total - left) / w1);
        let var = w0 * w1 * (m0 - m1).powi(2);
        if var > best.0 {
            best = (var, Some(k));
        }
    }
    best.1
}

pub fn window_scores(bag: &Bag, topic: &str, cfg: &RoughnessConfig64, hop: usize) -> Result<Vec<f64>, BenchError> {
    let t = bag.topic_index(topic).ok_or_else(|| BenchError::Config(format!("bag has no topic {topic}")))?;
    let z: Vec<f64> = bag
        .records
        .iter()
        .filter(|r| r.topic == t)
        .map(|r| ImuSample::decode(r.ts, &r.payload).map(|s| s.accel[2]))
        .collect::<Result<_, _>>()?;
    let w = cfg.window_size;
    if z.len() < w {
        return Err(BenchError::Config(format!("{topic}: {} samples, window needs {w}", z.len())));
    }
    (0..=z.len() - w)
        .step_by(hop.max(1))
        .map(|i| roughness_score(&z[i..i + w], cfg).map_err(|e| BenchError::Config(e.to_string())))
        .collect()
}

pub fn calibrate(scores: &[f64]) -> Result<Calibration, BenchError> {
    let mut logs: Vec<f64> = scores.iter().map(|&s| (s.max(0.0) + LOG_EPS).ln()).collect();
    logs.sort_by(f64::total_cmp);
    let k = otsu_split(&logs).ok_or_else(|| BenchError::Config("scores do not separate into two classes".into()))?;
    let mean_log = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (lo, hi) = (mean_log(&logs[..k]), mean_log(&logs[k..]));
    let start = ((lo + hi) / 2.0).exp();
    Ok(Calibration {
        windows: scores.len(),
        low_mean: lo.exp(),
        high_mean: hi.exp(),
        start_threshold: start,
        stop_threshold: STOP_RATIO * start,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{synth_bag, SynthSpec};

    #[test]
    fn otsu_on_two_clusters() {
        assert_eq!(otsu_split(&[1.0, 1.1, 1.2, 9.0, 9.5]), Some(3));
        assert_eq!(otsu_split(&[2.0, 2.0]), None);
        assert_eq!(otsu_split(&[2.0]), None);
    }

    #[test]
    fn threshold_separates_scenario_segments() {
        let bag = synth_bag(&SynthSpec::scenario(5)).unwrap();
        let cfg = RoughnessConfig64::with_start_threshold(1.0);
        let scores = window_scores(&bag, "/imu", &cfg, 16).unwrap();
        let c = calibrate(&scores).unwrap();
        assert!(c.low_mean < c.start_threshold && c.start_threshold < c.high_mean, "{c:?}");
        assert!((c.stop_threshold / c.start_threshold - 0.8).abs() < 1e-12);
        // Windows fully inside the smooth and rough stretches land on their side.
        let w = cfg.window_size;
        let all = window_scores(&bag, "/imu", &cfg, 1).unwrap();
        assert!(all[..1000 - w].iter().all(|&s| s < c.stop_threshold));
        assert!(all[1000..2000 - w].iter().all(|&s| s > c.start_threshold));
    }
}
