//! Experiment configuration: one JSON file holding every knob, validated in
//! full before any stage starts.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use zsc_core::{MatchSpec, SelectionMethod, TrajeDiConfig};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Bundled layout name or path to a layout file.
    pub layout: String,
    pub method: SelectionMethod,
    /// Number of shapings / populations.
    pub p: usize,
    /// Candidate pool size for surrogate selection.
    pub candidates: usize,
    /// Population training knobs. The seed field is ignored: every
    /// population derives its own seed from the global one.
    pub trajedi: TrajeDiConfig,
    pub partner_count: usize,
    /// Step budget for each partner's self-play run.
    pub partner_timesteps: usize,
    /// Evaluation protocol. Seeds listed here are used verbatim; an empty
    /// list derives `eval_seeds` of them from the global seed.
    pub protocol: MatchSpec,
    pub eval_seeds: usize,
    pub out_dir: PathBuf,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let trajedi = TrajeDiConfig::default();
        ExperimentConfig {
            layout: "random3-mini".to_string(),
            method: SelectionMethod::StratifiedGrid,
            p: 4,
            candidates: 1000,
            partner_count: 5,
            partner_timesteps: trajedi.total_timesteps,
            trajedi,
            protocol: MatchSpec { seeds: Vec::new(), ..MatchSpec::default() },
            eval_seeds: 10,
            out_dir: PathBuf::from("runs/default"),
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Validation(format!("cannot read config {}: {e}", path.display()))
        })?;
        let config: ExperimentConfig = serde_json::from_str(&text).map_err(|e| {
            CliError::Validation(format!("config {} is not valid: {e}", path.display()))
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        crate::commands::resolve_layout(&self.layout)?;
        if self.p < 1 {
            return Err(CliError::Validation("p must be at least 1".to_string()));
        }
        if self.candidates < self.p {
            return Err(CliError::Validation(format!(
                "candidates ({}) must be at least p ({})",
                self.candidates, self.p
            )));
        }
        if self.partner_count < 1 {
            return Err(CliError::Validation("partner_count must be at least 1".to_string()));
        }
        if self.protocol.rollouts < 1 {
            return Err(CliError::Validation("protocol.rollouts must be at least 1".to_string()));
        }
        if self.eval_seeds < 1 && self.protocol.seeds.is_empty() {
            return Err(CliError::Validation(
                "eval_seeds must be at least 1 when protocol.seeds is empty".to_string(),
            ));
        }
        self.trajedi
            .validate()
            .map_err(|e| CliError::Validation(format!("trajedi config: {e}")))?;
        Ok(())
    }

    pub fn snapshot(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_partial_files_fill_in() {
        ExperimentConfig::default().validate().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(&path, r#"{"p": 2, "seed": 7, "trajedi": {"n": 3}}"#).unwrap();
        let cfg = ExperimentConfig::load(&path).unwrap();
        assert_eq!(cfg.p, 2);
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.trajedi.n, 3);
        assert_eq!(cfg.trajedi.clip_param, TrajeDiConfig::default().clip_param);
    }

    #[test]
    fn bad_values_are_rejected_with_named_causes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(&path, r#"{"layout": "no-such-kitchen"}"#).unwrap();
        let err = ExperimentConfig::load(&path).unwrap_err();
        assert!(err.to_string().contains("no-such-kitchen"));

        std::fs::write(&path, r#"{"p": 0}"#).unwrap();
        assert!(ExperimentConfig::load(&path).is_err());

        std::fs::write(&path, r#"{"p": 5, "candidates": 3}"#).unwrap();
        let err = ExperimentConfig::load(&path).unwrap_err();
        assert!(err.to_string().contains("candidates"));

        std::fs::write(&path, r#"{"unknown_knob": 1}"#).unwrap();
        assert!(ExperimentConfig::load(&path).is_err());
    }
}
