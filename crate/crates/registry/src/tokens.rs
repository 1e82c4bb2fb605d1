//! Shared-secret tokens, stored only as SHA-256 hex digests.
//!
//! File format:
//! ```json
//! { "operators": { "alice": "<sha256 hex>" }, "vehicles": { "car-1": "<sha256 hex>" } }
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use lambda_proto::sha256_hex;
use serde::{Deserialize, Serialize};

use crate::RegistryError;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tokens {
    #[serde(default)]
    pub operators: BTreeMap<String, String>,
    #[serde(default)]
    pub vehicles: BTreeMap<String, String>,
}

/// Compares without early exit.
fn same(a: &str, b: &str) -> bool {
    a.len() == b.len() && a.bytes().zip(b.bytes()).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

impl Tokens {
    pub fn load(path: &Path) -> Result<Tokens, RegistryError> {
        let text = std::fs::read_to_string(path)?;
        let t: Tokens = serde_json::from_str(&text)?;
        for (who, h) in t.operators.iter().chain(&t.vehicles) {
            if h.len() != 64 || !h.bytes().all(|b| b.is_ascii_hexdigit()) {
                return Err(RegistryError::Config(format!("token for {who:?} is not a SHA-256 hex digest")));
            }
        }
        Ok(t)
    }

    pub fn add_operator(&mut self, name: &str, token: &str) {
        self.operators.insert(name.to_string(), sha256_hex(token.as_bytes()));
    }

    pub fn add_vehicle(&mut self, id: &str, token: &str) {
        self.vehicles.insert(id.to_string(), sha256_hex(token.as_bytes()));
    }

    /// Operator name owning `token`.
    pub fn operator(&self, token: &str) -> Option<&str> {
        let h = sha256_hex(token.as_bytes());
        self.operators.iter().find(|(_, v)| same(v, &h)).map(|(k, _)| k.as_str())
    }

    pub fn vehicle_ok(&self, id: &str, token: &str) -> bool {
        self.vehicles.get(id).is_some_and(|v| same(v, &sha256_hex(token.as_bytes())))
    }

    pub fn is_vehicle(&self, id: &str) -> bool {
        self.vehicles.contains_key(id)
    }
}
