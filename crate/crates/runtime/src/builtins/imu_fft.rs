//! Road roughness from vertical acceleration band energy.
//!
//! Params: `topic` (default: trigger topic, else `/imu`), `window_size`,
//! `sample_rate`, `bands` (`lo-hi,lo-hi,...` Hz), `weights`,
//! `start_threshold`, `stop_threshold` (default 0.8 x start), `label`.

use lambda_core::{roughness_score, RoughnessConfig64};

use super::Hysteresis;
use crate::{Context, Lambda, LambdaError, Params};

/// Sits well above a smooth road and well below a rough one on the
/// synthetic profiles; recalibrate per dataset with `bench calibrate`.
pub const DEFAULT_START_THRESHOLD: f64 = 1000.0;

#[derive(Debug, Default)]
pub struct ImuFft {
    topic: String,
    label: String,
    cfg: Option<RoughnessConfig64>,
    state: Option<Hysteresis>,
    last_score: Option<f64>,
}

impl ImuFft {
    pub fn last_score(&self) -> Option<f64> {
        self.last_score
    }
}

fn parse_bands(spec: &str) -> Result<Vec<(f64, f64)>, LambdaError> {
    spec.split(',')
        .map(|b| {
            let (lo, hi) = b.trim().split_once('-').ok_or_else(|| LambdaError::Failed(format!("band {b:?} is not lo-hi")))?;
            let p = |s: &str| s.trim().parse::<f64>().map_err(|_| LambdaError::Failed(format!("band {b:?}")));
            Ok((p(lo)?, p(hi)?))
        })
        .collect()
}

/// Config from params over the defaults.
pub fn config_from_params(params: &Params) -> Result<RoughnessConfig64, LambdaError> {
    let start = params.real_or("start_threshold", DEFAULT_START_THRESHOLD)?;
    let mut cfg = RoughnessConfig64::with_start_threshold(start);
    cfg.window_size = params.parse_or("window_size", cfg.window_size)?;
    cfg.sample_rate = params.real_or("sample_rate", cfg.sample_rate)?;
    if let Some(b) = params.get("bands") {
        cfg.bands = parse_bands(b)?;
    }
    cfg.weights = params.list_or("weights", cfg.weights)?;
    cfg.stop_threshold = params.real_or("stop_threshold", 0.8 * start)?;
    cfg.validate().map_err(|e| LambdaError::Failed(e.to_string()))?;
    Ok(cfg)
}

impl Lambda for ImuFft {
    fn setup(&mut self, params: &Params, ctx: &mut Context<'_>) -> Result<(), LambdaError> {
        let cfg = config_from_params(params)?;
        self.topic = match params.get("topic") {
            Some(t) => t.to_string(),
            None => ctx.trigger_topic().unwrap_or("/imu").to_string(),
        };
        self.label = params.get("label").unwrap_or("rough_road").to_string();
        self.state = Some(Hysteresis::new(cfg.start_threshold, cfg.stop_threshold));
        self.cfg = Some(cfg);
        Ok(())
    }

    fn invoke(&mut self, ctx: &mut Context<'_>) -> Result<(), LambdaError> {
        let cfg = self.cfg.as_ref().ok_or_else(|| LambdaError::Failed("not set up".into()))?;
        let window = ctx.imu_window(&self.topic, cfg.window_size)?;
        if window.len() < cfg.window_size {
            return Ok(());
        }
        let z: Vec<f64> = window.iter().map(|s| s.accel[2]).collect();
        let score = roughness_score(&z, cfg).map_err(|e| LambdaError::Failed(e.to_string()))?;
        self.last_score = Some(score);
        if let Some(action) = self.state.as_mut().unwrap().step(score) {
            ctx.trigger(action, &self.label)?;
        }
        Ok(())
    }
}
