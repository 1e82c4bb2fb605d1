//! Band-energy analysis of accelerometer windows and the road roughness score.
//!
//! Pipeline for one window: subtract the mean, multiply by a periodic Hann
//! window, FFT, then sum `|X[m]|^2` over the one-sided bins `1..=N/2` whose
//! centre frequency `m * fs / N` falls in `[f_lo, f_hi)`. The score is the
//! weighted sum of those band energies.
//!
//! Parseval holds for the windowed signal `y[n] = w[n] * (x[n] - mean)`:
//! `sum |y[n]|^2 == (1/N) * sum_{m=0}^{N-1} |X[m]|^2`.

use thiserror::Error;

use crate::fft::{fft, FftError};
use crate::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("window has {got} samples, expected {expected}")]
    WrongWindowLength { expected: usize, got: usize },
    #[error("invalid roughness config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Fft(#[from] FftError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoughnessConfig<T> {
    /// Samples per analysis window; a power of two.
    pub window_size: usize,
    pub sample_rate: T,
    /// Half-open frequency bands `[lo, hi)` in Hz.
    pub bands: Vec<(T, T)>,
    pub weights: Vec<T>,
    pub start_threshold: T,
    pub stop_threshold: T,
}

impl<T: Scalar> RoughnessConfig<T> {
    /// 256 samples at 100 Hz, bands 0.5-4 / 4-12 / 12-30 Hz weighted
    /// 0.2 / 0.5 / 0.3, stop threshold at 0.8x the start threshold.
    pub fn with_start_threshold(start_threshold: T) -> Self {
        Self {
            window_size: 256,
            sample_rate: T::of(100.0),
            bands: vec![
                (T::of(0.5), T::of(4.0)),
                (T::of(4.0), T::of(12.0)),
                (T::of(12.0), T::of(30.0)),
            ],
            weights: vec![T::of(0.2), T::of(0.5), T::of(0.3)],
            start_threshold,
            stop_threshold: start_threshold * T::of(0.8),
        }
    }

    pub fn validate(&self) -> Result<(), SpectralError> {
        let bad = |msg: String| Err(SpectralError::InvalidConfig(msg));
        if self.window_size < 2 || !self.window_size.is_power_of_two() {
            return bad(format!("window_size {} is not a power of two >= 2", self.window_size));
        }
        if !(self.sample_rate > T::zero()) || !self.sample_rate.is_finite() {
            return bad("sample_rate must be positive".into());
        }
        if self.bands.len() != self.weights.len() {
            return bad(format!(
                "{} bands but {} weights",
                self.bands.len(),
                self.weights.len()
            ));
        }
        let nyquist = self.sample_rate / T::of(2.0);
        let mut sorted = self.bands.clone();
        sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite band edges"));
        for (lo, hi) in &sorted {
            if !(lo.is_finite() && hi.is_finite()) || *lo < T::zero() || *hi > nyquist || lo >= hi {
                return bad(format!("band [{lo}, {hi}) outside [0, {nyquist}] or empty"));
            }
        }
        for pair in sorted.windows(2) {
            if pair[1].0 < pair[0].1 {
                return bad("bands overlap".into());
            }
        }
        if self.weights.iter().any(|w| !(*w >= T::zero()) || !w.is_finite()) {
            return bad("weights must be finite and non-negative".into());
        }
        if self.stop_threshold > self.start_threshold {
            return bad("stop_threshold exceeds start_threshold".into());
        }
        Ok(())
    }
}

/// Periodic Hann window: `w[n] = 0.5 - 0.5 * cos(2*pi*n/N)`.
pub fn hann_window<T: Scalar>(len: usize) -> Vec<T> {
    let n = T::of_usize(len);
    (0..len)
        .map(|i| T::of(0.5) - T::of(0.5) * (T::TAU() * T::of_usize(i) / n).cos())
        .collect()
}

/// Mean-removed, Hann-weighted copy of `signal`.
pub fn detrend_and_window<T: Scalar>(signal: &[T]) -> Vec<T> {
    let mean = signal.iter().copied().sum::<T>() / T::of_usize(signal.len().max(1));
    signal
        .iter()
        .zip(hann_window::<T>(signal.len()))
        .map(|(&x, w)| (x - mean) * w)
        .collect()
}

/// One-sided band energies for `signal`, one entry per configured band.
pub fn band_energies<T: Scalar>(signal: &[T], cfg: &RoughnessConfig<T>) -> Result<Vec<T>, SpectralError> {
    if signal.len() != cfg.window_size {
        return Err(SpectralError::WrongWindowLength {
            expected: cfg.window_size,
            got: signal.len(),
        });
    }
    let spectrum = fft(&detrend_and_window(signal))?;
    let n = signal.len();
    let bin_hz = cfg.sample_rate / T::of_usize(n);
    let energies = cfg
        .bands
        .iter()
        .map(|&(lo, hi)| {
            (1..=n / 2)
                .filter(|&m| {
                    let f = bin_hz * T::of_usize(m);
                    f >= lo && f < hi
                })
                .map(|m| spectrum[m].norm_sqr())
                .sum()
        })
        .collect();
    Ok(energies)
}

/// Weighted sum of band energies.
pub fn roughness_score<T: Scalar>(signal: &[T], cfg: &RoughnessConfig<T>) -> Result<T, SpectralError> {
    let energies = band_energies(signal, cfg)?;
    Ok(energies.iter().zip(&cfg.weights).map(|(&e, &w)| e * w).sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_window_scores_zero() {
        let cfg = RoughnessConfig::<f64>::with_start_threshold(1.0);
        assert_eq!(roughness_score(&[0.0; 256], &cfg).unwrap(), 0.0);
    }

    #[test]
    fn wrong_length_is_rejected() {
        let cfg = RoughnessConfig::<f64>::with_start_threshold(1.0);
        assert_eq!(
            roughness_score(&[0.0; 100], &cfg),
            Err(SpectralError::WrongWindowLength { expected: 256, got: 100 })
        );
    }

    #[test]
    fn defaults_validate() {
        RoughnessConfig::<f32>::with_start_threshold(10.0).validate().unwrap();
    }

    #[test]
    fn overlapping_bands_rejected() {
        let mut cfg = RoughnessConfig::<f64>::with_start_threshold(1.0);
        cfg.bands[1] = (3.0, 12.0);
        assert!(matches!(cfg.validate(), Err(SpectralError::InvalidConfig(_))));
    }

    #[test]
    fn band_above_nyquist_rejected() {
        let mut cfg = RoughnessConfig::<f64>::with_start_threshold(1.0);
        cfg.bands[2] = (12.0, 60.0);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn inverted_hysteresis_rejected() {
        let mut cfg = RoughnessConfig::<f64>::with_start_threshold(1.0);
        cfg.stop_threshold = 2.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn hann_endpoints() {
        let w = hann_window::<f64>(8);
        assert_eq!(w[0], 0.0);
        assert!((w[4] - 1.0).abs() < 1e-15);
        assert!((w[2] - 0.5).abs() < 1e-15);
    }
}
