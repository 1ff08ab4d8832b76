//! Run configuration shared by the command-line tools.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{sha256_hex, BenchConfig, EpisodeConfig, GoalId};
use crate::models::{EncoderSpec, ForwardModelSpec, ModelSpec, Objective, Similarity, TrainConfig};
use crate::sim::{EnvKind, IMAGE_SIZES};

/// Everything a command needs besides its file arguments. Every field has a
/// default; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub env: EnvKind,
    pub image_size: usize,
    pub data: Option<PathBuf>,
    pub objective: Objective,
    /// `None` picks the preset for `image_size`.
    pub encoder: Option<EncoderSpec>,
    pub forward: ForwardModelSpec,
    pub similarity: Similarity,
    pub include_positive: bool,
    pub lambda_forward: f64,
    pub lambda_inverse: f64,
    pub inverse_hidden: Vec<usize>,
    pub train: TrainConfig,
    pub n_traj: usize,
    pub traj_len: usize,
    /// Candidate actions per planning step.
    pub planner_n: usize,
    pub episodes: usize,
    /// `None`: 20 steps, 40 for cloth.
    pub max_steps: Option<usize>,
    /// `None`: every goal of the environment.
    pub goals: Option<Vec<GoalId>>,
    pub seed: u64,
    pub randomize: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            env: EnvKind::Rope,
            image_size: 32,
            data: None,
            objective: Objective::Cfm,
            encoder: None,
            forward: ForwardModelSpec::default(),
            similarity: Similarity::E2,
            include_positive: true,
            lambda_forward: 1.0,
            lambda_inverse: 1.0,
            inverse_hidden: vec![32, 32],
            train: TrainConfig::default(),
            n_traj: 400,
            traj_len: 25,
            planner_n: 100,
            episodes: 50,
            max_steps: None,
            goals: None,
            seed: 0,
            randomize: false,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if !IMAGE_SIZES.contains(&self.image_size) {
            return Err(Error::InvalidArgument(format!("image_size must be one of {IMAGE_SIZES:?}")));
        }
        if self.n_traj == 0 || self.traj_len == 0 {
            return Err(Error::InvalidArgument("n_traj and traj_len must be positive".into()));
        }
        if self.planner_n == 0 || self.episodes == 0 || self.max_steps == Some(0) {
            return Err(Error::InvalidArgument("planner_n, episodes and max_steps must be positive".into()));
        }
        if let Some(enc) = &self.encoder {
            if enc.input_size != self.image_size {
                return Err(Error::InvalidArgument(format!(
                    "encoder input_size {} differs from image_size {}",
                    enc.input_size, self.image_size
                )));
            }
        }
        if let Some(goals) = &self.goals {
            if goals.is_empty() {
                return Err(Error::InvalidArgument("goals must not be empty".into()));
            }
            if let Some(g) = goals.iter().find(|g| !g.valid_for(self.env)) {
                return Err(Error::InvalidArgument(format!("goal `{g}` does not apply to {}", self.env)));
            }
        }
        self.train.validate()?;
        self.model_spec()?.validate()
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        let mut spec = ModelSpec::new(self.env, self.image_size, self.objective)?;
        if let Some(enc) = &self.encoder {
            spec.encoder = enc.clone();
        }
        spec.forward = self.forward.clone();
        spec.similarity = self.similarity;
        spec.include_positive = self.include_positive;
        spec.lambda_forward = self.lambda_forward;
        spec.lambda_inverse = self.lambda_inverse;
        spec.inverse_hidden = self.inverse_hidden.clone();
        Ok(spec)
    }

    pub fn bench_config(&self) -> BenchConfig {
        let mut b = BenchConfig::new(self.env);
        if let Some(goals) = &self.goals {
            b.goals = goals.clone();
        }
        b.episodes = self.episodes;
        b.episode = EpisodeConfig {
            max_steps: self.max_steps.unwrap_or(b.episode.max_steps),
            n_candidates: self.planner_n,
            randomize: self.randomize,
        };
        b.seed = self.seed;
        b
    }

    /// Training settings with the run seed.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { seed: self.seed, ..self.train.clone() }
    }

    /// First 12 hex digits of the SHA-256 of the canonical JSON.
    pub fn short_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("serializable");
        sha256_hex(json.as_bytes())[..12].to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_training_recipe() {
        let c = RunConfig::default();
        assert_eq!((c.train.batch_size, c.train.epochs, c.train.adam.lr), (128, 30, 1e-3));
        c.validate().unwrap();
        assert_eq!(RunConfig::from_json("{}").unwrap(), c);
        assert_eq!(c.bench_config().episode.max_steps, 20);
        assert_eq!(c.short_hash().len(), 12);
    }

    #[test]
    fn bad_configs_are_rejected() {
        assert!(RunConfig::from_json(r#"{"epochs": 3}"#).is_err());
        assert!(RunConfig::from_json(r#"{"image_size": 48}"#).is_err());
        assert!(RunConfig::from_json(r#"{"env": "cloth", "goals": ["horizontal"]}"#).is_err());
        assert!(RunConfig::from_json(r#"{"train": {"batch_size": 1}}"#).is_err());
        let c = RunConfig::from_json(r#"{"env": "cloth", "train": {"epochs": 2}}"#).unwrap();
        assert_eq!(c.train.epochs, 2);
        assert_eq!(c.train.batch_size, 128);
        assert_eq!(c.bench_config().episode.max_steps, 40);
    }
}
