//! Object-triggered frame selection.
//!
//! Params: `model` (`mock-detector`), `camera_topic` (default: trigger
//! topic), `tau` (0.5, strict), `iou` (0.45), `classes` (`0,1`), `label`.

use lambda_core::nms;
use lambda_ingress::Item;
use lambda_proto::ActionKind;

use crate::inference::{detections_from_tensor, Tensor, MOCK_MODEL};
use crate::{Context, Lambda, LambdaError, Params};

#[derive(Debug)]
pub struct Detector {
    model: String,
    camera_topic: String,
    tau: f32,
    iou: f32,
    classes: Vec<u32>,
    label: String,
}

impl Default for Detector {
    fn default() -> Self {
        Self {
            model: MOCK_MODEL.into(),
            camera_topic: String::new(),
            tau: 0.5,
            iou: 0.45,
            classes: vec![0, 1],
            label: "target_object".into(),
        }
    }
}

impl Lambda for Detector {
    fn setup(&mut self, params: &Params, ctx: &mut Context<'_>) -> Result<(), LambdaError> {
        let d = Self::default();
        self.model = params.get("model").unwrap_or(&d.model).to_string();
        self.camera_topic = match params.get("camera_topic").or(ctx.trigger_topic()) {
            Some(t) => t.to_string(),
            None => return Err(LambdaError::Failed("no camera topic".into())),
        };
        self.tau = params.parse_or("tau", d.tau)?;
        self.iou = params.parse_or("iou", d.iou)?;
        self.classes = params.list_or("classes", d.classes)?;
        self.label = params.get("label").unwrap_or(&d.label).to_string();
        ctx.load_model(&self.model)?;
        Ok(())
    }

    fn invoke(&mut self, ctx: &mut Context<'_>) -> Result<(), LambdaError> {
        let (seq, outputs) = match ctx.latest(&self.camera_topic)? {
            None => return Ok(()),
            Some(Item::Frame(lease)) => {
                let view = lease.bytes();
                (lease.seq(), ctx.infer(&self.model, &[Tensor::u8_view("frame", &view)])?)
            }
            Some(Item::Record(r)) => (r.seq, ctx.infer(&self.model, &[Tensor::u8_view("frame", &r.payload)])?),
        };
        let out = outputs.first().ok_or_else(|| LambdaError::Failed("model returned no tensors".into()))?;
        let dets: Vec<_> = detections_from_tensor(out)
            .map_err(|e| LambdaError::Failed(e.to_string()))?
            .into_iter()
            .filter(|d| d.is_valid())
            .collect();
        let hit = nms(&dets, self.iou)
            .iter()
            .any(|d| self.classes.contains(&d.class_id) && d.confidence > self.tau);
        if hit {
            ctx.trigger_for(ActionKind::Mark, &self.label, seq)?;
        }
        Ok(())
    }
}
