use crate::{Result, TransportError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Reliability {
    /// Loss only through history overflow.
    Reliable,
    /// May additionally drop under socket backpressure.
    BestEffort,
}

/// Only volatile durability exists: late joiners never see earlier data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Durability {
    #[default]
    Volatile,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct QosProfile {
    pub history_depth: usize,
    pub reliability: Reliability,
    pub durability: Durability,
}

impl QosProfile {
    pub fn keep_last(depth: usize) -> Self {
        Self { history_depth: depth, reliability: Reliability::Reliable, durability: Durability::Volatile }
    }

    pub fn best_effort(mut self) -> Self {
        self.reliability = Reliability::BestEffort;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.history_depth == 0 {
            return Err(TransportError::InvalidQos("history_depth must be >= 1".into()));
        }
        Ok(())
    }
}

impl Default for QosProfile {
    /// KeepLast(10) / Reliable / Volatile.
    fn default() -> Self {
        Self::keep_last(10)
    }
}
