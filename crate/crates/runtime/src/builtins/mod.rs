//! Native lambdas selectable by builtin id.

pub mod brake_dark;
pub mod detector;
pub mod echo;
pub mod imu_fft;

use lambda_proto::ActionKind;

use crate::Lambda;

pub use brake_dark::{mean_luminance, BrakeDark};
pub use detector::Detector;
pub use echo::Echo;
pub use imu_fft::{ImuFft, DEFAULT_START_THRESHOLD};

pub const BUILTIN_IDS: &[&str] = &["imu_fft", "brake_dark", "detector", "echo"];

pub fn builtin(id: &str) -> Option<Box<dyn Lambda>> {
    Some(match id {
        "imu_fft" => Box::new(ImuFft::default()),
        "brake_dark" => Box::new(BrakeDark::default()),
        "detector" => Box::new(Detector::default()),
        "echo" => Box::new(Echo::default()),
        _ => return None,
    })
}

/// Two-threshold start/stop state. Start needs `score > start` while idle,
/// stop needs `score < stop` while recording.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hysteresis {
    pub start: f64,
    pub stop: f64,
    pub recording: bool,
}

impl Hysteresis {
    pub fn new(start: f64, stop: f64) -> Self {
        Self { start, stop, recording: false }
    }

    pub fn step(&mut self, score: f64) -> Option<ActionKind> {
        if !self.recording && score > self.start {
            self.recording = true;
            Some(ActionKind::StartRecording)
        } else if self.recording && score < self.stop {
            self.recording = false;
            Some(ActionKind::StopRecording)
        } else {
            None
        }
    }
}

/// Start while `cond` holds, stop on the first step where it no longer does.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Latch {
    pub recording: bool,
}

impl Latch {
    pub fn step(&mut self, cond: bool) -> Option<ActionKind> {
        match (self.recording, cond) {
            (false, true) => {
                self.recording = true;
                Some(ActionKind::StartRecording)
            }
            (true, false) => {
                self.recording = false;
                Some(ActionKind::StopRecording)
            }
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ActionKind::*;

    #[test]
    fn hysteresis_crossings() {
        let mut h = Hysteresis::new(10.0, 8.0);
        let out: Vec<_> = [1.0, 5.0, 11.0, 12.0, 9.0, 8.0, 7.9, 9.9, 10.0, 10.5]
            .iter()
            .map(|&s| h.step(s))
            .collect();
        assert_eq!(out, vec![None, None, Some(StartRecording), None, None, None, Some(StopRecording), None, None, Some(StartRecording)]);
    }

    #[test]
    fn band_between_thresholds_is_silent() {
        let mut h = Hysteresis::new(10.0, 8.0);
        assert!([8.0, 9.0, 10.0, 8.5].iter().all(|&s| h.step(s).is_none()));
    }

    #[test]
    fn latch_alternates() {
        let mut l = Latch::default();
        let out: Vec<_> = [false, true, true, false, false, true].iter().map(|&c| l.step(c)).collect();
        assert_eq!(out, vec![None, Some(StartRecording), None, Some(StopRecording), None, Some(StartRecording)]);
    }

    #[test]
    fn known_ids() {
        for id in BUILTIN_IDS {
            assert!(builtin(id).is_some());
        }
        assert!(builtin("nope").is_none());
    }
}
