//! JSON provenance written next to every generated artifact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use seminj_core::inject::Provenance;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceRecord {
    pub command: String,
    pub master_seed: u64,
    pub seeds: Vec<u64>,
    pub timesteps: Vec<f64>,
    pub weights: Vec<f64>,
    pub delta: f64,
    pub model_kind: String,
    pub shape: Option<String>,
    pub slot: Option<usize>,
    pub n_points: usize,
    /// sha256 of the checkpoint file bytes, when a model was used.
    pub checkpoint_sha256: Option<String>,
    pub convention: Option<String>,
    pub heun_steps: Option<usize>,
    pub config: String,
}

impl ProvenanceRecord {
    pub fn from_pipeline(command: &str, master_seed: u64, p: &Provenance, n_points: usize, config: String) -> Self {
        ProvenanceRecord {
            command: command.into(),
            master_seed,
            seeds: p.seeds.clone(),
            timesteps: p.timesteps.clone(),
            weights: p.weights.clone(),
            delta: p.delta,
            model_kind: p.model_kind.as_str().into(),
            shape: None,
            slot: None,
            n_points,
            checkpoint_sha256: None,
            convention: None,
            heun_steps: None,
            config,
        }
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        std::fs::write(path, text + "\n")
    }

    pub fn read(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }
}
