//! Experiment configuration: one JSON file per experiment.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use wirl_core::envs::{HighwaySpec, ObjectworldSpec};
use wirl_core::train::TrainConfig;

/// Environment block: which generator to run and with what spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvConfig {
    Objectworld(ObjectworldSpec),
    Highway(HighwaySpec),
}

impl EnvConfig {
    pub fn name(&self) -> &'static str {
        match self {
            EnvConfig::Objectworld(_) => "objectworld",
            EnvConfig::Highway(_) => "highway",
        }
    }

    pub fn feature_mode_name(&self) -> &'static str {
        let mode = match self {
            EnvConfig::Objectworld(spec) => spec.feature_mode,
            EnvConfig::Highway(spec) => spec.feature_mode,
        };
        match mode {
            wirl_core::envs::FeatureMode::Continuous => "continuous",
            wirl_core::envs::FeatureMode::Discrete => "discrete",
        }
    }
}

/// Demonstration block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoConfig {
    pub horizon: usize,
    /// Sample sizes to sweep; each cell trains on the first `n` trajectories
    /// of the seed's demo pool.
    pub n_demos: Vec<usize>,
    pub expert_temp: f64,
    /// Held-out trajectories for test log-likelihood and matching scores.
    #[serde(default = "default_n_test_trajs")]
    pub n_test_trajs: usize,
}

fn default_n_test_trajs() -> usize {
    32
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Maxent,
    Wmaxent,
    Wairl,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Maxent => "maxent",
            Algorithm::Wmaxent => "wmaxent",
            Algorithm::Wairl => "wairl",
        }
    }
}

/// Adversarial-loop knobs (only used when `wairl` is among the algorithms).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WairlBlock {
    #[serde(default = "default_wairl_rounds")]
    pub n_rounds: usize,
    #[serde(default = "default_gen_trajs")]
    pub gen_trajs_per_round: usize,
    #[serde(default = "default_inner_steps")]
    pub disc_inner_steps: usize,
    #[serde(default)]
    pub state_only: bool,
}

fn default_wairl_rounds() -> usize {
    200
}
fn default_gen_trajs() -> usize {
    16
}
fn default_inner_steps() -> usize {
    5
}

impl Default for WairlBlock {
    fn default() -> Self {
        Self {
            n_rounds: default_wairl_rounds(),
            gen_trajs_per_round: default_gen_trajs(),
            disc_inner_steps: default_inner_steps(),
            state_only: false,
        }
    }
}

/// Evaluation block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub n_seeds: usize,
    /// Generate a fresh environment per seed and score the transferred
    /// parameters on it.
    #[serde(default)]
    pub transfer: bool,
    /// Record wall-clock seconds per evaluated cell. Off by default so that
    /// identical configs produce byte-identical CSV output.
    #[serde(default)]
    pub record_timing: bool,
}

/// A full experiment: environments, demos, algorithms, training, evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    pub demo: DemoConfig,
    pub algorithms: Vec<Algorithm>,
    pub train: TrainConfig,
    #[serde(default)]
    pub wairl: WairlBlock,
    pub eval: EvalConfig,
    pub output_dir: PathBuf,
    /// Offsets every derived seed; distinct values give disjoint streams.
    #[serde(default)]
    pub base_seed: u64,
}

impl ExperimentConfig {
    /// Parse and validate a config file. Syntax errors keep serde_json's
    /// line/column anchors.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", path.display()))?;
        let config: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| anyhow::anyhow!("malformed config {}: {e}", path.display()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.demo.n_demos.is_empty() {
            anyhow::bail!("demo.n_demos must list at least one sample size");
        }
        if self.algorithms.is_empty() {
            anyhow::bail!("algorithms must list at least one of maxent, wmaxent, wairl");
        }
        if self.eval.n_seeds == 0 {
            anyhow::bail!("eval.n_seeds must be positive");
        }
        if self.demo.horizon == 0 {
            anyhow::bail!("demo.horizon must be positive");
        }
        Ok(())
    }

    pub fn max_demos(&self) -> usize {
        self.demo.n_demos.iter().copied().max().unwrap_or(0)
    }

    // Derived seed streams, disjoint per purpose.
    pub fn env_seed(&self, seed_idx: usize) -> u64 {
        self.base_seed.wrapping_mul(1_000_000) + 1_000 + seed_idx as u64
    }
    pub fn transfer_seed(&self, seed_idx: usize) -> u64 {
        self.base_seed.wrapping_mul(1_000_000) + 2_000 + seed_idx as u64
    }
    pub fn demo_seed(&self, seed_idx: usize) -> u64 {
        self.base_seed.wrapping_mul(1_000_000) + 3_000 + seed_idx as u64
    }
    pub fn test_demo_seed(&self, seed_idx: usize) -> u64 {
        self.base_seed.wrapping_mul(1_000_000) + 4_000 + seed_idx as u64
    }
    pub fn matching_seed(&self, seed_idx: usize) -> u64 {
        self.base_seed.wrapping_mul(1_000_000) + 5_000 + seed_idx as u64
    }
    pub fn wairl_seed(&self, seed_idx: usize) -> u64 {
        self.base_seed.wrapping_mul(1_000_000) + 6_000 + seed_idx as u64
    }

    // Output file layout.
    pub fn env_path(&self, seed_idx: usize) -> PathBuf {
        self.output_dir
            .join("envs")
            .join(format!("{}_seed{seed_idx}.json", self.env.name()))
    }
    pub fn transfer_env_path(&self, seed_idx: usize) -> PathBuf {
        self.output_dir
            .join("envs")
            .join(format!("{}_seed{seed_idx}_transfer.json", self.env.name()))
    }
    pub fn demo_path(&self, seed_idx: usize) -> PathBuf {
        self.output_dir
            .join("demos")
            .join(format!("{}_seed{seed_idx}_train.json", self.env.name()))
    }
    pub fn test_demo_path(&self, seed_idx: usize) -> PathBuf {
        self.output_dir
            .join("demos")
            .join(format!("{}_seed{seed_idx}_test.json", self.env.name()))
    }
    pub fn model_path(&self, algo: Algorithm, seed_idx: usize, n_demos: usize) -> PathBuf {
        self.output_dir
            .join("models")
            .join(format!("{}_seed{seed_idx}_n{n_demos}.json", algo.name()))
    }
    pub fn error_path(&self, algo: Algorithm, seed_idx: usize, n_demos: usize) -> PathBuf {
        self.output_dir
            .join("models")
            .join(format!("{}_seed{seed_idx}_n{n_demos}.error.txt", algo.name()))
    }
    pub fn results_path(&self) -> PathBuf {
        self.output_dir.join("results.csv")
    }
    pub fn summary_path(&self) -> PathBuf {
        self.output_dir.join("summary.json")
    }
}
