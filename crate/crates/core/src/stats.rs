//! Latency summary statistics in the min / max / mean / MAD / p95 layout.
//!
//! * MAD is the unscaled median absolute deviation `median(|x - median(x)|)`;
//!   no 1.4826 normal-consistency factor is applied.
//! * The 95th percentile uses the nearest-rank method: the element at
//!   1-based position `ceil(0.95 * n)` of the sorted samples.
//! * The median of an even-length sample is the mean of the two middle
//!   elements.

use std::cmp::Ordering;

use thiserror::Error;

use crate::Scalar;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StatsError {
    #[error("no samples")]
    EmptyInput,
    #[error("sample {0} is not finite")]
    NonFinite(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StatsSummary<T> {
    pub n: usize,
    pub min: T,
    pub max: T,
    pub mean: T,
    pub mad: T,
    pub p95: T,
}

fn sorted_finite<T: Scalar>(samples: &[T]) -> Result<Vec<T>, StatsError> {
    if samples.is_empty() {
        return Err(StatsError::EmptyInput);
    }
    if let Some(i) = samples.iter().position(|x| !x.is_finite()) {
        return Err(StatsError::NonFinite(i));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    Ok(sorted)
}

fn median_of_sorted<T: Scalar>(sorted: &[T]) -> T {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / T::of(2.0)
    }
}

pub fn median<T: Scalar>(samples: &[T]) -> Result<T, StatsError> {
    Ok(median_of_sorted(&sorted_finite(samples)?))
}

/// 1-based nearest rank `ceil(pct/100 * n)`, clamped to `[1, n]`.
pub fn nearest_rank(pct: u32, n: usize) -> usize {
    let rank = (pct as usize * n).div_ceil(100);
    rank.clamp(1, n)
}

pub fn summarize<T: Scalar>(samples: &[T]) -> Result<StatsSummary<T>, StatsError> {
    let sorted = sorted_finite(samples)?;
    let n = sorted.len();
    let mean = sorted.iter().copied().sum::<T>() / T::of_usize(n);
    let med = median_of_sorted(&sorted);
    let mut deviations: Vec<T> = sorted.iter().map(|&x| (x - med).abs()).collect();
    deviations.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    Ok(StatsSummary {
        n,
        min: sorted[0],
        max: sorted[n - 1],
        mean,
        mad: median_of_sorted(&deviations),
        p95: sorted[nearest_rank(95, n) - 1],
    })
}
