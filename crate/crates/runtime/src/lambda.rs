use std::collections::BTreeMap;
use std::str::FromStr;

use thiserror::Error;

use crate::context::{Context, ContextError};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LambdaError {
    /// Counted as a failure; the loop continues.
    #[error("{0}")]
    Failed(String),
    /// Stops the host.
    #[error("abort: {0}")]
    Abort(String),
}

impl From<ContextError> for LambdaError {
    fn from(e: ContextError) -> Self {
        LambdaError::Failed(e.to_string())
    }
}

/// A function body. `setup` runs once before the first invocation.
pub trait Lambda: Send {
    fn setup(&mut self, params: &Params, ctx: &mut Context<'_>) -> Result<(), LambdaError>;
    fn invoke(&mut self, ctx: &mut Context<'_>) -> Result<(), LambdaError>;
}

/// Manifest params with typed lookups.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Params(pub BTreeMap<String, String>);

impl Params {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    pub fn parse_or<T: FromStr>(&self, key: &str, default: T) -> Result<T, LambdaError> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v.trim().parse().map_err(|_| LambdaError::Failed(format!("param {key}={v:?} does not parse"))),
        }
    }

    /// Comma-separated list.
    pub fn list_or<T: FromStr>(&self, key: &str, default: Vec<T>) -> Result<Vec<T>, LambdaError> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .split(',')
                .map(|s| s.trim().parse().map_err(|_| LambdaError::Failed(format!("param {key}: bad item {s:?}"))))
                .collect(),
        }
    }

    /// A real number, also accepting `a/b` fractions.
    pub fn real_or(&self, key: &str, default: f64) -> Result<f64, LambdaError> {
        let Some(v) = self.get(key) else { return Ok(default) };
        let bad = || LambdaError::Failed(format!("param {key}={v:?} is not a number"));
        match v.split_once('/') {
            Some((a, b)) => {
                let (a, b): (f64, f64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
                Ok(a / b)
            }
            None => v.trim().parse().map_err(|_| bad()),
        }
    }
}

impl From<BTreeMap<String, String>> for Params {
    fn from(m: BTreeMap<String, String>) -> Self {
        Params(m)
    }
}
