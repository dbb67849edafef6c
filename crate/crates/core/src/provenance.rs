use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Where an output came from: the tool version, the effective
/// configuration and hashes of every input, keyed by role rather than path
/// so reruns from a different directory produce identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub tool_version: String,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub inputs: BTreeMap<String, String>,
}

impl Provenance {
    pub fn new(config: serde_json::Value) -> Self {
        let config_hash = crate::canonical::canonical_hash(&config).unwrap_or_default();
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash,
            config,
            inputs: BTreeMap::new(),
        }
    }

    pub fn with_input(mut self, role: impl Into<String>, bytes: &[u8]) -> Self {
        self.inputs
            .insert(role.into(), crate::canonical::sha256_hex(bytes));
        self
    }
}
