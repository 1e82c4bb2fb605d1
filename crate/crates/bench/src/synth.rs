//! Deterministic synthetic bags: IMU segments (smooth or rough road,
//! optional braking) and camera segments (brightness level, optional
//! mock-detector boxes in the frame header).

use std::f64::consts::TAU;

use lambda_core::{BoundingBox, Detection32};
use lambda_proto::{ImageMeta, ImuSample};
use lambda_runtime::inference::embed_mock_detections;
use lambda_transport::ContentType;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bag::{Bag, BagRecord, BagTopic};

pub const GRAVITY: f64 = 9.81;

#[derive(Debug, Error, PartialEq)]
#[error("invalid synth spec: {0}")]
pub struct SynthError(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoadProfile {
    Smooth,
    Rough,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImuSegment {
    pub duration_s: f64,
    pub profile: RoadProfile,
    /// Constant longitudinal acceleration (negative = braking).
    #[serde(default)]
    pub accel_x: f64,
    /// Vertical sine amplitude of the rough profile, m/s².
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
    #[serde(default = "default_freq")]
    pub freq_hz: f64,
}

fn default_amplitude() -> f64 {
    2.0
}
fn default_freq() -> f64 {
    15.0
}
fn default_noise() -> f64 {
    0.02
}
fn default_imu_topic() -> String {
    "/imu".into()
}
fn default_camera_topic() -> String {
    "/camera".into()
}
fn default_channels() -> u32 {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImuSpec {
    #[serde(default = "default_imu_topic")]
    pub topic: String,
    pub rate_hz: f64,
    #[serde(default = "default_noise")]
    pub noise_std: f64,
    pub segments: Vec<ImuSegment>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthDetection {
    pub x1: f32,
    pub y1: f32,
    pub x2: f32,
    pub y2: f32,
    pub class_id: u32,
    pub confidence: f32,
}

impl SynthDetection {
    pub fn to_detection(self) -> Detection32 {
        Detection32 {
            bbox: BoundingBox { x1: self.x1, y1: self.y1, x2: self.x2, y2: self.y2 },
            class_id: self.class_id,
            confidence: self.confidence,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraSegment {
    pub duration_s: f64,
    /// Mean pixel value of every channel.
    pub brightness: u8,
    /// Uniform per-byte noise amplitude, clamped to keep the mean.
    #[serde(default)]
    pub noise: u8,
    #[serde(default)]
    pub detections: Vec<SynthDetection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraSpec {
    #[serde(default = "default_camera_topic")]
    pub topic: String,
    pub rate_hz: f64,
    pub width: u32,
    pub height: u32,
    #[serde(default = "default_channels")]
    pub channels: u32,
    /// Time of the first frame.
    #[serde(default)]
    pub start_s: f64,
    pub segments: Vec<CameraSegment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub imu: Option<ImuSpec>,
    #[serde(default)]
    pub camera: Option<CameraSpec>,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError(m.to_string()));
        if self.imu.is_none() && self.camera.is_none() {
            return bad("no imu or camera section");
        }
        if let Some(imu) = &self.imu {
            if !(imu.rate_hz > 0.0) || imu.segments.is_empty() {
                return bad("imu needs a positive rate and at least one segment");
            }
            if !(imu.noise_std >= 0.0) {
                return bad("imu noise_std must be >= 0");
            }
            if imu.segments.iter().any(|s| !(s.duration_s > 0.0) || !(s.freq_hz > 0.0) || !s.amplitude.is_finite()) {
                return bad("imu segments need positive duration and frequency");
            }
        }
        if let Some(cam) = &self.camera {
            if !(cam.rate_hz > 0.0) || cam.segments.is_empty() {
                return bad("camera needs a positive rate and at least one segment");
            }
            if cam.width == 0 || cam.height == 0 || !matches!(cam.channels, 1 | 3) {
                return bad("camera needs non-zero resolution and 1 or 3 channels");
            }
            if !(cam.start_s >= 0.0) || cam.segments.iter().any(|s| !(s.duration_s > 0.0)) {
                return bad("camera segments need positive duration");
            }
            for s in &cam.segments {
                if s.detections.iter().any(|d| !d.to_detection().is_valid()) {
                    return bad("camera detection with bad box or confidence");
                }
            }
        }
        if let (Some(i), Some(c)) = (&self.imu, &self.camera) {
            if i.topic == c.topic {
                return bad("imu and camera topics must differ");
            }
        }
        Ok(())
    }

    /// Smooth→rough→smooth IMU at 100 Hz with braking from 20 s, and 10 Hz
    /// 64×48 RGB frames: bright, bright with a person box (10–15 s), bright
    /// with a non-target box, dark from 20.5 s, bright again from 27.5 s.
    pub fn scenario(seed: u64) -> SynthSpec {
        let imu = |duration_s, profile, accel_x| ImuSegment {
            duration_s,
            profile,
            accel_x,
            amplitude: default_amplitude(),
            freq_hz: default_freq(),
        };
        let cam = |duration_s, brightness, detections: Vec<SynthDetection>| CameraSegment {
            duration_s,
            brightness,
            noise: 4,
            detections,
        };
        let boxed = |class_id, confidence| SynthDetection { x1: 10.0, y1: 8.0, x2: 30.0, y2: 40.0, class_id, confidence };
        SynthSpec {
            seed,
            imu: Some(ImuSpec {
                topic: default_imu_topic(),
                rate_hz: 100.0,
                noise_std: default_noise(),
                segments: vec![
                    imu(10.0, RoadProfile::Smooth, 0.0),
                    imu(10.0, RoadProfile::Rough, 0.0),
                    imu(10.0, RoadProfile::Smooth, -5.0),
                ],
            }),
            camera: Some(CameraSpec {
                topic: default_camera_topic(),
                rate_hz: 10.0,
                width: 64,
                height: 48,
                channels: 3,
                start_s: 0.05,
                segments: vec![
                    cam(10.0, 180, vec![]),
                    cam(5.0, 180, vec![boxed(0, 0.9)]),
                    cam(5.5, 180, vec![boxed(2, 0.95)]),
                    cam(7.0, 30, vec![]),
                    cam(2.5, 180, vec![]),
                ],
            }),
        }
    }
}

fn count(duration_s: f64, rate_hz: f64) -> u64 {
    (duration_s * rate_hz).round() as u64
}

fn ts_of(index: u64, rate_hz: f64, start_s: f64) -> u64 {
    ((start_s + index as f64 / rate_hz) * 1e9).round() as u64
}

pub fn synth_bag(spec: &SynthSpec) -> Result<Bag, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut topics = Vec::new();
    let mut imu_records = Vec::new();
    let mut cam_records = Vec::new();
    if let Some(imu) = &spec.imu {
        let topic = topics.len() as u32;
        topics.push(BagTopic::new(&imu.topic, ContentType::ImuSample, serde_json::json!({"rate_hz": imu.rate_hz})));
        let noise = Normal::new(0.0, imu.noise_std).map_err(|e| SynthError(e.to_string()))?;
        let mut k = 0u64;
        for seg in &imu.segments {
            for _ in 0..count(seg.duration_s, imu.rate_hz) {
                let ts = ts_of(k, imu.rate_hz, 0.0);
                let t = k as f64 / imu.rate_hz;
                let vertical = match seg.profile {
                    RoadProfile::Smooth => 0.05 * (TAU * 1.0 * t).sin(),
                    RoadProfile::Rough => seg.amplitude * (TAU * seg.freq_hz * t).sin(),
                };
                let accel = [
                    seg.accel_x + noise.sample(&mut rng),
                    noise.sample(&mut rng),
                    GRAVITY + vertical + noise.sample(&mut rng),
                ];
                let s = ImuSample { ts, accel, gyro: [0.0; 3] };
                imu_records.push(BagRecord { topic, ts, payload: s.encode().to_vec() });
                k += 1;
            }
        }
    }
    if let Some(cam) = &spec.camera {
        let topic = topics.len() as u32;
        let meta = ImageMeta { height: cam.height, width: cam.width, channels: cam.channels };
        topics.push(BagTopic::new(
            &cam.topic,
            ContentType::ImageFrame,
            serde_json::to_value(meta).map_err(|e| SynthError(e.to_string()))?,
        ));
        let mut k = 0u64;
        for seg in &cam.segments {
            let dets: Vec<Detection32> = seg.detections.iter().map(|d| d.to_detection()).collect();
            for _ in 0..count(seg.duration_s, cam.rate_hz) {
                let ts = ts_of(k, cam.rate_hz, cam.start_s);
                let mut frame = vec![seg.brightness; meta.frame_len()];
                if seg.noise > 0 {
                    let n = seg.noise as i16;
                    let lo = (seg.brightness as i16 - n).max(0);
                    let hi = (seg.brightness as i16 + n).min(255);
                    // Symmetric range around the level so the expected mean is unchanged.
                    let half = (seg.brightness as i16 - lo).min(hi - seg.brightness as i16);
                    for b in frame.iter_mut() {
                        *b = (seg.brightness as i16 + rng.gen_range(-half..=half)) as u8;
                    }
                }
                if !dets.is_empty() {
                    embed_mock_detections(&mut frame, &dets);
                }
                cam_records.push(BagRecord { topic, ts, payload: frame });
                k += 1;
            }
        }
    }
    // Merge by time; IMU first on equal timestamps.
    let mut records = Vec::with_capacity(imu_records.len() + cam_records.len());
    let mut imu_iter = imu_records.into_iter().peekable();
    let mut cam_iter = cam_records.into_iter().peekable();
    loop {
        let take_imu = match (imu_iter.peek(), cam_iter.peek()) {
            (Some(a), Some(b)) => a.ts <= b.ts,
            (Some(_), None) => true,
            (None, Some(_)) => false,
            (None, None) => break,
        };
        records.extend(if take_imu { imu_iter.next() } else { cam_iter.next() });
    }
    Ok(Bag { topics, records })
}

/// Raw 8-byte counter payloads on one topic at a fixed rate.
pub fn ticker_bag(topic: &str, rate_hz: f64, seconds: f64) -> Result<Bag, SynthError> {
    if !(rate_hz > 0.0 && seconds > 0.0) || topic.is_empty() {
        return Err(SynthError("ticker needs a topic, positive rate and duration".into()));
    }
    let records = (0..count(seconds, rate_hz))
        .map(|k| BagRecord { topic: 0, ts: ts_of(k, rate_hz, 0.0), payload: k.to_le_bytes().to_vec() })
        .collect();
    Ok(Bag { topics: vec![BagTopic::new(topic, ContentType::RawBytes, serde_json::json!({}))], records })
}
