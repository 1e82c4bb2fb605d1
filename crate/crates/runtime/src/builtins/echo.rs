//! Emits one mark per invocation, optionally after sleeping. Used to
//! measure framework overhead.
//!
//! Params: `sleep_ms` (0), `label`.

use std::time::Duration;

use lambda_proto::ActionKind;

use crate::{Context, Lambda, LambdaError, Params};

#[derive(Debug, Default)]
pub struct Echo {
    sleep: Duration,
    label: String,
}

impl Lambda for Echo {
    fn setup(&mut self, params: &Params, _ctx: &mut Context<'_>) -> Result<(), LambdaError> {
        let ms = params.real_or("sleep_ms", 0.0)?;
        if !(ms >= 0.0 && ms.is_finite()) {
            return Err(LambdaError::Failed(format!("sleep_ms {ms} is not a non-negative number")));
        }
        self.sleep = Duration::from_secs_f64(ms / 1e3);
        self.label = params.get("label").unwrap_or("echo").to_string();
        Ok(())
    }

    fn invoke(&mut self, ctx: &mut Context<'_>) -> Result<(), LambdaError> {
        if !self.sleep.is_zero() {
            std::thread::sleep(self.sleep);
        }
        ctx.trigger(ActionKind::Mark, &self.label)?;
        Ok(())
    }
}
