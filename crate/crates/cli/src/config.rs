//! Single-file pipeline configuration. Every field has a default, unknown
//! keys are rejected, and the effective value is echoed into provenance.

use std::path::Path;

use cousinforge::assembly::AssemblyConfig;
use cousinforge::evaluation::DEFAULT_MAX_DIST;
use cousinforge::fusion::FusionConfig;
use cousinforge::navsim::{EpisodeConfig, RewardWeights};
use cousinforge::retrieval::RetrievalConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    /// Centroid distance gate for matching, meters.
    pub max_dist: f64,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self { max_dist: DEFAULT_MAX_DIST }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    /// Std of Gaussian noise added to scripted actions.
    pub noise_std: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Seeds every random choice (navsim goals and policy noise).
    pub seed: u64,
    pub fusion: FusionConfig,
    pub retrieval: RetrievalConfig,
    pub assembly: AssemblyConfig,
    pub evaluation: EvaluationConfig,
    pub navsim: EpisodeConfig,
    pub reward: RewardWeights,
    pub policy: PolicyConfig,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::new("config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                Self::from_toml(&text).map_err(|e| e.with_path(p))
            }
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::new("config", m));
        self.fusion.validate().or_else(|e| bad(e.to_string()))?;
        self.navsim.validate().or_else(|e| bad(e.to_string()))?;
        if self.retrieval.k == 0 || self.retrieval.top_n == 0 {
            return bad("retrieval.k and retrieval.top_n must be positive".into());
        }
        if !(self.assembly.margin >= 0.0) || !(0.0..0.5).contains(&self.assembly.trim_fraction) {
            return bad("assembly.margin must be >= 0 and trim_fraction in [0, 0.5)".into());
        }
        if !(self.evaluation.max_dist > 0.0) {
            return bad("evaluation.max_dist must be positive".into());
        }
        if !(self.policy.noise_std >= 0.0 && self.policy.noise_std.is_finite()) {
            return bad("policy.noise_std must be finite and >= 0".into());
        }
        Ok(())
    }

    pub fn to_value(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    /// Default configuration as commented-free TOML.
    pub fn default_toml() -> String {
        toml::to_string_pretty(&Self::default()).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_all_defaults() {
        assert_eq!(PipelineConfig::from_toml("").unwrap(), PipelineConfig::default());
    }

    #[test]
    fn default_round_trips_through_toml() {
        let text = PipelineConfig::default_toml();
        assert_eq!(PipelineConfig::from_toml(&text).unwrap(), PipelineConfig::default());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(PipelineConfig::from_toml("bogus = 1").is_err());
        assert!(PipelineConfig::from_toml("[fusion]\nstride = 2").is_err());
    }

    #[test]
    fn partial_sections_keep_other_defaults() {
        let c = PipelineConfig::from_toml("seed = 9\n[retrieval]\nk = 3\n").unwrap();
        assert_eq!((c.seed, c.retrieval.k, c.retrieval.top_n), (9, 3, 1000));
        assert_eq!(c.fusion, FusionConfig::default());
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(PipelineConfig::from_toml("[retrieval]\nk = 0\n").is_err());
        assert!(PipelineConfig::from_toml("[navsim]\ndt = 0.0\n").is_err());
    }
}
