//! Declarative experiment configuration: one JSON file, overridable by
//! command-line flags. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use cyclegp_core::ageing::VarianceAccumulation;
use cyclegp_core::optimizer::OptimizerConfig;
use cyclegp_core::preprocess::PreprocessOptions;
use cyclegp_core::synth::GeneratorParams;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Windows per start index when turning curves into samples.
    pub max_lag: usize,
    pub synth: SynthConfig,
    pub preprocess: PreprocessOptions,
    pub optimizer: OptimizerConfig,
    pub rollout: RolloutConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub params: GeneratorParams,
    pub cells_per_condition: usize,
    pub horizon_ah: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RolloutConfig {
    pub step_ah: f64,
    pub variance_mode: VarianceAccumulation,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            out_dir: PathBuf::from("out"),
            max_lag: 3,
            synth: SynthConfig::default(),
            preprocess: PreprocessOptions::default(),
            optimizer: OptimizerConfig::default(),
            rollout: RolloutConfig::default(),
        }
    }
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            params: GeneratorParams::default(),
            cells_per_condition: 3,
            horizon_ah: 60_000.0,
        }
    }
}

impl Default for RolloutConfig {
    fn default() -> Self {
        RolloutConfig {
            step_ah: 4000.0,
            variance_mode: VarianceAccumulation::Independent,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut config = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str(&text)
                    .with_context(|| format!("parsing config {}", p.display()))?
            }
            None => ExperimentConfig::default(),
        };
        if config.max_lag == 0 {
            bail!("max_lag must be >= 1");
        }
        config.optimizer.seed = config.seed;
        config.synth.params.seed = config.seed;
        Ok(config)
    }

    /// Hash of the effective configuration, stamped into every output.
    /// The output directory is a location, not an experiment parameter,
    /// so it does not participate (reruns into different directories must
    /// produce identical bytes).
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.out_dir = PathBuf::new();
        let bytes = serde_json::to_vec(&canonical).expect("config serializes");
        let digest = Sha256::digest(&bytes);
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        hex[..16].to_string()
    }

    /// Standard comment-header block for CSV outputs.
    pub fn header(&self, command: &str) -> Vec<String> {
        vec![
            format!("cyclegp v{}", cyclegp_core::ARTIFACT_VERSION),
            format!("config_sha256={}", self.hash()),
            format!("command={command}"),
        ]
    }
}
