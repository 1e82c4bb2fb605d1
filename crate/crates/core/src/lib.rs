//! Numeric kernels shared by the lambda functions and the benchmark
//! harness.
//!
//! Everything here is generic over a floating-point [`Scalar`] (`f32` or
//! `f64`). The aliases at the crate root pin the precision used by the rest
//! of the workspace.

pub mod fft;
pub mod mwu;
pub mod nms;
pub mod scalar;
pub mod spectral;
pub mod stats;

pub use fft::{fft, fft_in_place, FftError};
pub use mwu::{mann_whitney_u, MwuError, MwuMethod, MwuResult};
pub use nms::{iou, nms, BoundingBox, Detection};
pub use scalar::Scalar;
pub use spectral::{band_energies, hann_window, roughness_score, RoughnessConfig, SpectralError};
pub use stats::{median, summarize, StatsError, StatsSummary};

pub use num_complex::Complex;

/// Complex sample type used by the signal-processing path.
pub type Complex64 = Complex<f64>;
/// Double-precision roughness configuration.
pub type RoughnessConfig64 = RoughnessConfig<f64>;
/// Detections as produced by the detector backends (single precision).
pub type Detection32 = Detection<f32>;
/// Latency summaries are always computed in double precision.
pub type StatsSummary64 = StatsSummary<f64>;
/// Mann-Whitney result in double precision.
pub type MwuResult64 = MwuResult<f64>;
