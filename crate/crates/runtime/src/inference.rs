//! Inference backends behind the context `infer` call.
//!
//! The shipped [`MockBackend`] answers to the model ref `mock-detector`. Its
//! input is a frame whose leading bytes hold an 8-byte header (`MDET` then
//! a u32 LE box count) followed by 24-byte boxes: x1, y1, x2, y2 as f32 LE,
//! class as u32 LE, confidence as f32 LE. A frame without the magic yields
//! zero boxes. Output is one `(k, 6)` f32 tensor named `detections` with
//! rows `x1, y1, x2, y2, class, confidence`.

use std::borrow::Cow;
use std::collections::HashMap;

use lambda_core::{BoundingBox, Detection32};
use thiserror::Error;

pub const MOCK_MODEL: &str = "mock-detector";
pub const MOCK_MAGIC: &[u8; 4] = b"MDET";
pub const MOCK_HEADER_LEN: usize = 8;
pub const MOCK_RECORD_LEN: usize = 24;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum InferenceError {
    #[error("model not found: {0}")]
    ModelNotFound(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("backend failure: {0}")]
    Backend(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementType {
    U8,
    F32,
}

impl ElementType {
    pub fn size(self) -> usize {
        match self {
            ElementType::U8 => 1,
            ElementType::F32 => 4,
        }
    }
}

/// Named tensor. `data` is little-endian element bytes and may borrow a
/// leased frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: ElementType,
    pub data: Cow<'a, [u8]>,
}

impl<'a> Tensor<'a> {
    /// Rank-1 u8 tensor over `bytes` without copying.
    pub fn u8_view(name: &str, bytes: &'a [u8]) -> Self {
        Tensor { name: name.into(), shape: vec![bytes.len()], dtype: ElementType::U8, data: Cow::Borrowed(bytes) }
    }

    pub fn from_f32(name: &str, shape: Vec<usize>, values: &[f32]) -> Tensor<'static> {
        let data = values.iter().flat_map(|v| v.to_le_bytes()).collect::<Vec<u8>>();
        Tensor { name: name.into(), shape, dtype: ElementType::F32, data: Cow::Owned(data) }
    }

    pub fn element_count(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn to_f32(&self) -> Option<Vec<f32>> {
        (self.dtype == ElementType::F32).then(|| {
            self.data.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect()
        })
    }

    pub fn is_borrowed(&self) -> bool {
        matches!(self.data, Cow::Borrowed(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ModelHandle(pub u32);

pub trait InferenceBackend: Send {
    /// Resolves a model reference (name or path) to a handle.
    fn load(&mut self, model_ref: &str) -> Result<ModelHandle, InferenceError>;
    fn run(&mut self, model: ModelHandle, inputs: &[Tensor<'_>]) -> Result<Vec<Tensor<'static>>, InferenceError>;
}

/// Deterministic decoder for frames carrying synthetic boxes.
#[derive(Debug, Default)]
pub struct MockBackend;

impl InferenceBackend for MockBackend {
    fn load(&mut self, model_ref: &str) -> Result<ModelHandle, InferenceError> {
        if model_ref == MOCK_MODEL {
            Ok(ModelHandle(0))
        } else {
            Err(InferenceError::ModelNotFound(model_ref.into()))
        }
    }

    fn run(&mut self, model: ModelHandle, inputs: &[Tensor<'_>]) -> Result<Vec<Tensor<'static>>, InferenceError> {
        if model != ModelHandle(0) {
            return Err(InferenceError::ModelNotFound(format!("handle {}", model.0)));
        }
        let [input] = inputs else {
            return Err(InferenceError::ShapeMismatch(format!("expected 1 input, got {}", inputs.len())));
        };
        if input.shape.len() != 1 || input.dtype != ElementType::U8 || input.shape[0] != input.data.len() {
            return Err(InferenceError::ShapeMismatch(format!(
                "expected rank-1 u8 frame, got {:?} {:?}",
                input.dtype, input.shape
            )));
        }
        let boxes = decode_mock_frame(&input.data)?;
        let rows: Vec<f32> = boxes
            .iter()
            .flat_map(|d| [d.bbox.x1, d.bbox.y1, d.bbox.x2, d.bbox.y2, d.class_id as f32, d.confidence])
            .collect();
        Ok(vec![Tensor::from_f32("detections", vec![boxes.len(), 6], &rows)])
    }
}

/// Writes the box header into the first bytes of `frame`. Panics if the
/// frame is too short to hold it.
pub fn embed_mock_detections(frame: &mut [u8], dets: &[Detection32]) {
    let need = MOCK_HEADER_LEN + dets.len() * MOCK_RECORD_LEN;
    assert!(frame.len() >= need, "frame of {} bytes cannot hold {} boxes", frame.len(), dets.len());
    frame[..4].copy_from_slice(MOCK_MAGIC);
    frame[4..8].copy_from_slice(&(dets.len() as u32).to_le_bytes());
    for (i, d) in dets.iter().enumerate() {
        let o = MOCK_HEADER_LEN + i * MOCK_RECORD_LEN;
        let r = &mut frame[o..o + MOCK_RECORD_LEN];
        r[0..4].copy_from_slice(&d.bbox.x1.to_le_bytes());
        r[4..8].copy_from_slice(&d.bbox.y1.to_le_bytes());
        r[8..12].copy_from_slice(&d.bbox.x2.to_le_bytes());
        r[12..16].copy_from_slice(&d.bbox.y2.to_le_bytes());
        r[16..20].copy_from_slice(&d.class_id.to_le_bytes());
        r[20..24].copy_from_slice(&d.confidence.to_le_bytes());
    }
}

pub fn decode_mock_frame(frame: &[u8]) -> Result<Vec<Detection32>, InferenceError> {
    if frame.len() < MOCK_HEADER_LEN || &frame[..4] != MOCK_MAGIC {
        return Ok(Vec::new());
    }
    let count = u32::from_le_bytes(frame[4..8].try_into().unwrap()) as usize;
    let end = count
        .checked_mul(MOCK_RECORD_LEN)
        .and_then(|n| n.checked_add(MOCK_HEADER_LEN))
        .filter(|&end| end <= frame.len())
        .ok_or_else(|| InferenceError::Backend(format!("header claims {count} boxes beyond frame end")))?;
    let f = |b: &[u8], o: usize| f32::from_le_bytes(b[o..o + 4].try_into().unwrap());
    Ok(frame[MOCK_HEADER_LEN..end]
        .chunks_exact(MOCK_RECORD_LEN)
        .map(|r| Detection32 {
            bbox: BoundingBox { x1: f(r, 0), y1: f(r, 4), x2: f(r, 8), y2: f(r, 12) },
            class_id: u32::from_le_bytes(r[16..20].try_into().unwrap()),
            confidence: f(r, 20),
        })
        .collect())
}

/// Detections back out of a `(k, 6)` output tensor.
pub fn detections_from_tensor(t: &Tensor<'_>) -> Result<Vec<Detection32>, InferenceError> {
    let values = t.to_f32().ok_or_else(|| InferenceError::ShapeMismatch("detections must be f32".into()))?;
    if t.shape.len() != 2 || t.shape[1] != 6 || values.len() != t.shape[0] * 6 {
        return Err(InferenceError::ShapeMismatch(format!("detections shape {:?}", t.shape)));
    }
    Ok(values
        .chunks_exact(6)
        .map(|r| Detection32 {
            bbox: BoundingBox { x1: r[0], y1: r[1], x2: r[2], y2: r[3] },
            class_id: r[4] as u32,
            confidence: r[5],
        })
        .collect())
}

/// Backend plus lazily loaded handles, keyed by model ref.
pub struct ModelCache {
    backend: Box<dyn InferenceBackend>,
    handles: HashMap<String, ModelHandle>,
}

impl ModelCache {
    pub fn new(backend: Box<dyn InferenceBackend>) -> Self {
        Self { backend, handles: HashMap::new() }
    }

    pub fn preload(&mut self, model_ref: &str) -> Result<ModelHandle, InferenceError> {
        if let Some(h) = self.handles.get(model_ref) {
            return Ok(*h);
        }
        let h = self.backend.load(model_ref)?;
        self.handles.insert(model_ref.to_string(), h);
        Ok(h)
    }

    pub fn run(&mut self, model_ref: &str, inputs: &[Tensor<'_>]) -> Result<Vec<Tensor<'static>>, InferenceError> {
        let h = self.preload(model_ref)?;
        self.backend.run(h, inputs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(x1: f32, class_id: u32, confidence: f32) -> Detection32 {
        Detection32 { bbox: BoundingBox { x1, y1: 1.0, x2: x1 + 10.0, y2: 11.0 }, class_id, confidence }
    }

    #[test]
    fn k_boxes_give_k_rows() {
        let dets = [det(0.0, 0, 0.9), det(50.0, 3, 0.4), det(100.0, 1, 0.7)];
        let mut frame = vec![7u8; 1000];
        embed_mock_detections(&mut frame, &dets);
        let mut m = ModelCache::new(Box::new(MockBackend));
        let out = m.run(MOCK_MODEL, &[Tensor::u8_view("frame", &frame)]).unwrap();
        assert_eq!(out[0].shape, vec![3, 6]);
        assert_eq!(detections_from_tensor(&out[0]).unwrap(), dets);
    }

    #[test]
    fn plain_frame_has_no_boxes() {
        let mut m = ModelCache::new(Box::new(MockBackend));
        let out = m.run(MOCK_MODEL, &[Tensor::u8_view("frame", &[0u8; 64])]).unwrap();
        assert_eq!(out[0].shape, vec![0, 6]);
    }

    #[test]
    fn wrong_rank_is_shape_mismatch() {
        let frame = [0u8; 16];
        let t = Tensor { shape: vec![4, 4], ..Tensor::u8_view("frame", &frame) };
        let mut m = ModelCache::new(Box::new(MockBackend));
        assert!(matches!(m.run(MOCK_MODEL, &[t]), Err(InferenceError::ShapeMismatch(_))));
    }

    #[test]
    fn unknown_model() {
        let mut m = ModelCache::new(Box::new(MockBackend));
        assert_eq!(m.preload("yolo11m"), Err(InferenceError::ModelNotFound("yolo11m".into())));
    }

    #[test]
    fn truncated_header_is_backend_failure() {
        let mut frame = vec![0u8; 20];
        frame[..4].copy_from_slice(MOCK_MAGIC);
        frame[4..8].copy_from_slice(&5u32.to_le_bytes());
        assert!(matches!(decode_mock_frame(&frame), Err(InferenceError::Backend(_))));
    }

    #[test]
    fn view_does_not_copy() {
        let frame = vec![1u8; 32];
        let t = Tensor::u8_view("frame", &frame);
        assert!(t.is_borrowed());
        assert_eq!(t.data.as_ptr(), frame.as_ptr());
    }
}
