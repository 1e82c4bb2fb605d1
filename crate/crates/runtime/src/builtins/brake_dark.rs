//! Braking in the dark: mean longitudinal acceleration of the last K IMU
//! samples at or below `a_thresh`, and mean frame luminance below `l_thresh`.
//!
//! Params: `imu_topic` (default `/imu`), `camera_topic` (default: trigger
//! topic), `k` (10), `a_thresh` (-3.0 m/s^2), `l_thresh` (50/255, on the
//! 0..1 scale), `channels` (3), `label`.

use lambda_ingress::Item;

use super::Latch;
use crate::{Context, Lambda, LambdaError, Params};

/// Mean luminance on the 0..255 scale. One channel: mean byte value. Three
/// or more: BT.601 luma of the first three channels per pixel, then mean.
pub fn mean_luminance(frame: &[u8], channels: usize) -> Option<f64> {
    if frame.is_empty() || channels == 0 || frame.len() % channels != 0 {
        return None;
    }
    let sum: f64 = match channels {
        1 => frame.iter().map(|&b| b as u64).sum::<u64>() as f64,
        2 => return None,
        _ => frame
            .chunks_exact(channels)
            .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
            .sum(),
    };
    Some(sum / (frame.len() / channels) as f64)
}

#[derive(Debug)]
pub struct BrakeDark {
    imu_topic: String,
    camera_topic: String,
    k: usize,
    a_thresh: f64,
    l_thresh: f64,
    channels: usize,
    label: String,
    latch: Latch,
}

impl Default for BrakeDark {
    fn default() -> Self {
        Self {
            imu_topic: "/imu".into(),
            camera_topic: String::new(),
            k: 10,
            a_thresh: -3.0,
            l_thresh: 50.0 / 255.0,
            channels: 3,
            label: "brake_dark".into(),
            latch: Latch::default(),
        }
    }
}

impl Lambda for BrakeDark {
    fn setup(&mut self, params: &Params, ctx: &mut Context<'_>) -> Result<(), LambdaError> {
        let d = Self::default();
        self.imu_topic = params.get("imu_topic").unwrap_or(&d.imu_topic).to_string();
        self.camera_topic = match params.get("camera_topic").or(ctx.trigger_topic()) {
            Some(t) => t.to_string(),
            None => return Err(LambdaError::Failed("no camera topic".into())),
        };
        self.k = params.parse_or("k", d.k)?;
        self.a_thresh = params.real_or("a_thresh", d.a_thresh)?;
        self.l_thresh = params.real_or("l_thresh", d.l_thresh)?;
        self.channels = params.parse_or("channels", d.channels)?;
        self.label = params.get("label").unwrap_or(&d.label).to_string();
        if self.k == 0 || !matches!(self.channels, 1 | 3 | 4) {
            return Err(LambdaError::Failed("k must be >= 1 and channels one of 1, 3, 4".into()));
        }
        Ok(())
    }

    fn invoke(&mut self, ctx: &mut Context<'_>) -> Result<(), LambdaError> {
        let luminance = match ctx.latest(&self.camera_topic)? {
            None => return Ok(()),
            Some(Item::Frame(lease)) => mean_luminance(&lease.bytes(), self.channels),
            Some(Item::Record(r)) => mean_luminance(&r.payload, self.channels),
        };
        let Some(luminance) = luminance else {
            return Err(LambdaError::Failed(format!("frame does not split into {} channels", self.channels)));
        };
        let imu = ctx.imu_window(&self.imu_topic, self.k)?;
        if imu.len() < self.k {
            return Ok(());
        }
        let mean_ax = imu.iter().map(|s| s.accel[0]).sum::<f64>() / self.k as f64;
        let braking = mean_ax <= self.a_thresh;
        let dark = luminance / 255.0 < self.l_thresh;
        if let Some(action) = self.latch.step(braking && dark) {
            ctx.trigger(action, &self.label)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gray_mean() {
        assert_eq!(mean_luminance(&[10, 20, 30, 40], 1), Some(25.0));
    }

    #[test]
    fn rgb_luma() {
        let px = [255, 0, 0, 0, 255, 0, 0, 0, 255];
        let expect = (0.299 * 255.0 + 0.587 * 255.0 + 0.114 * 255.0) / 3.0;
        assert!((mean_luminance(&px, 3).unwrap() - expect).abs() < 1e-12);
        assert!((mean_luminance(&[30; 12], 3).unwrap() - 30.0).abs() < 1e-9);
    }

    #[test]
    fn ragged_frame_rejected() {
        assert_eq!(mean_luminance(&[1, 2, 3, 4], 3), None);
        assert_eq!(mean_luminance(&[], 1), None);
    }
}
