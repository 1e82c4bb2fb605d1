use serde::{Deserialize, Serialize};

use crate::ProtoError;

/// accel xyz then gyro xyz, each f64 LE.
pub const IMU_PAYLOAD_LEN: usize = 48;

/// One IMU reading. Axes: x longitudinal (forward positive), z vertical.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ImuSample {
    pub ts: u64,
    pub accel: [f64; 3],
    pub gyro: [f64; 3],
}

impl ImuSample {
    pub fn encode(&self) -> [u8; IMU_PAYLOAD_LEN] {
        let mut out = [0u8; IMU_PAYLOAD_LEN];
        for (i, v) in self.accel.iter().chain(self.gyro.iter()).enumerate() {
            out[i * 8..i * 8 + 8].copy_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// `ts` comes from the carrying envelope or bag record.
    pub fn decode(ts: u64, bytes: &[u8]) -> Result<Self, ProtoError> {
        if bytes.len() != IMU_PAYLOAD_LEN {
            return Err(ProtoError::Malformed(format!("imu payload is {} bytes, want {IMU_PAYLOAD_LEN}", bytes.len())));
        }
        let f = |i: usize| f64::from_le_bytes(bytes[i * 8..i * 8 + 8].try_into().unwrap());
        let s = ImuSample { ts, accel: [f(0), f(1), f(2)], gyro: [f(3), f(4), f(5)] };
        if s.accel.iter().chain(s.gyro.iter()).any(|v| !v.is_finite()) {
            return Err(ProtoError::Malformed("non-finite imu component".into()));
        }
        Ok(s)
    }
}

/// Image layout carried in bag topic metadata.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageMeta {
    pub height: u32,
    pub width: u32,
    pub channels: u32,
}

impl ImageMeta {
    pub fn frame_len(&self) -> usize {
        self.height as usize * self.width as usize * self.channels as usize
    }
}
