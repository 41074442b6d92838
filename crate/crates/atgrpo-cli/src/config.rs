//! Flat TOML run configuration. Every key has a documented default and
//! unknown keys are rejected, so a config file is always an explicit
//! subset of this struct.

use std::path::Path;

use atgrpo_core::atgrpo::ShapingConfig;
use atgrpo_core::benefit::KindOracle;
use atgrpo_core::policy::RolloutConfig;
use atgrpo_core::toolenv::GenSpec;
use atgrpo_core::trainer::TrainConfig;
use atgrpo_core::verifiers::VerifierConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    // -- task generation ---------------------------------------------------
    pub needle_image: usize,
    pub global_image: usize,
    pub needle_video: usize,
    pub clip_count: usize,
    pub path_image: usize,
    pub global_video: usize,
    pub grid_size: usize,
    pub frames: usize,
    pub option_count: usize,
    pub alphabet: usize,
    // -- benefit annotation ------------------------------------------------
    /// Reference-solver runs per arm (k).
    pub runs_per_arm: usize,
    /// Oracle success probabilities, (with tools, without) per task split.
    pub oracle_required_with: f64,
    pub oracle_required_without: f64,
    pub oracle_free_with: f64,
    pub oracle_free_without: f64,
    // -- supervised cold start ----------------------------------------------
    /// Probability a tool-free demonstration carries one redundant call.
    pub redundancy_rate: f64,
    pub sft_learning_rate: f64,
    pub sft_epochs: usize,
    // -- reinforcement learning --------------------------------------------
    pub group_size: usize,
    pub batch_tasks: usize,
    pub inner_epochs: usize,
    pub learning_rate: f64,
    pub iterations: usize,
    pub n_max: usize,
    pub step_limit: usize,
    pub turn_limit: usize,
    pub gamma: f64,
    pub alpha: f64,
    pub beta: f64,
    pub clip_epsilon: Option<f64>,
    // -- verification -------------------------------------------------------
    pub numeric_rel_tol: f64,
    pub format_weight: f64,
    pub wer_clamp: bool,
    // -- randomness ----------------------------------------------------------
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        let rollout = RolloutConfig::default();
        let shaping = ShapingConfig::default();
        let verifier = VerifierConfig::default();
        let gen = GenSpec::default();
        RunConfig {
            needle_image: 0,
            global_image: 0,
            needle_video: 0,
            clip_count: 0,
            path_image: 0,
            global_video: 0,
            grid_size: gen.grid_size,
            frames: gen.frames,
            option_count: gen.option_count,
            alphabet: gen.alphabet,
            runs_per_arm: 8,
            oracle_required_with: 0.95,
            oracle_required_without: 0.20,
            oracle_free_with: 0.20,
            oracle_free_without: 0.45,
            redundancy_rate: 0.5,
            sft_learning_rate: 0.5,
            sft_epochs: 30,
            group_size: train.group_size,
            batch_tasks: train.batch_tasks,
            inner_epochs: train.inner_epochs,
            learning_rate: train.learning_rate,
            iterations: train.iterations,
            n_max: rollout.n_max,
            step_limit: rollout.step_limit,
            turn_limit: rollout.turn_limit,
            gamma: shaping.gamma,
            alpha: shaping.alpha,
            beta: shaping.beta,
            clip_epsilon: shaping.clip_epsilon,
            numeric_rel_tol: verifier.numeric_rel_tol,
            format_weight: verifier.format_weight,
            wer_clamp: verifier.wer_clamp,
            seed: 0,
        }
    }
}

fn probability(value: f64, key: &str) -> Result<()> {
    if !(0.0..=1.0).contains(&value) {
        return Err(CliError::Config(format!("{key} must be in [0, 1], got {value}")));
    }
    Ok(())
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid_size < 2 {
            return Err(CliError::Config("grid_size must be >= 2".into()));
        }
        if self.frames < 2 {
            return Err(CliError::Config("frames must be >= 2".into()));
        }
        if !(2..=8).contains(&self.option_count) {
            return Err(CliError::Config("option_count must be in 2..=8".into()));
        }
        if self.alphabet < self.option_count {
            return Err(CliError::Config("alphabet must be >= option_count".into()));
        }
        if self.frames / 2 + 1 < self.option_count {
            return Err(CliError::Config(
                "frames/2 + 1 must be >= option_count for count questions".into(),
            ));
        }
        if self.runs_per_arm == 0 {
            return Err(CliError::Config("runs_per_arm must be >= 1".into()));
        }
        probability(self.oracle_required_with, "oracle_required_with")?;
        probability(self.oracle_required_without, "oracle_required_without")?;
        probability(self.oracle_free_with, "oracle_free_with")?;
        probability(self.oracle_free_without, "oracle_free_without")?;
        probability(self.redundancy_rate, "redundancy_rate")?;
        if !(self.sft_learning_rate > 0.0) {
            return Err(CliError::Config("sft_learning_rate must be positive".into()));
        }
        if self.group_size < 2 {
            return Err(CliError::Config("group_size must be >= 2".into()));
        }
        if self.batch_tasks == 0 {
            return Err(CliError::Config("batch_tasks must be >= 1".into()));
        }
        if self.inner_epochs == 0 {
            return Err(CliError::Config("inner_epochs must be >= 1".into()));
        }
        if self.inner_epochs > 1 && self.clip_epsilon.is_none() {
            return Err(CliError::Config("inner_epochs > 1 requires clip_epsilon".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(CliError::Config("learning_rate must be positive and finite".into()));
        }
        if self.n_max == 0 {
            return Err(CliError::Config("n_max must be >= 1".into()));
        }
        if self.step_limit == 0 || self.turn_limit == 0 {
            return Err(CliError::Config("step_limit and turn_limit must be >= 1".into()));
        }
        if !(self.gamma > 0.0) {
            return Err(CliError::Config("gamma must be positive".into()));
        }
        if self.alpha < 0.0 || self.beta < 0.0 {
            return Err(CliError::Config("alpha and beta must be >= 0".into()));
        }
        if let Some(eps) = self.clip_epsilon {
            if !(eps > 0.0) {
                return Err(CliError::Config("clip_epsilon must be positive when set".into()));
            }
        }
        if self.numeric_rel_tol < 0.0 {
            return Err(CliError::Config("numeric_rel_tol must be >= 0".into()));
        }
        if self.format_weight < 0.0 {
            return Err(CliError::Config("format_weight must be >= 0".into()));
        }
        Ok(())
    }

    pub fn gen_spec(&self) -> GenSpec {
        GenSpec {
            needle_image: self.needle_image,
            global_image: self.global_image,
            needle_video: self.needle_video,
            clip_count: self.clip_count,
            path_image: self.path_image,
            global_video: self.global_video,
            grid_size: self.grid_size,
            frames: self.frames,
            option_count: self.option_count,
            alphabet: self.alphabet,
            seed: self.seed,
        }
    }

    pub fn oracle(&self) -> KindOracle {
        KindOracle::by_tool_requirement(
            (self.oracle_required_with, self.oracle_required_without),
            (self.oracle_free_with, self.oracle_free_without),
        )
    }

    pub fn rollout(&self) -> RolloutConfig {
        RolloutConfig { n_max: self.n_max, step_limit: self.step_limit, turn_limit: self.turn_limit }
    }

    pub fn shaping(&self) -> ShapingConfig {
        ShapingConfig {
            gamma: self.gamma,
            alpha: self.alpha,
            beta: self.beta,
            clip_epsilon: self.clip_epsilon,
        }
    }

    pub fn verifier(&self) -> VerifierConfig {
        VerifierConfig {
            numeric_rel_tol: self.numeric_rel_tol,
            format_weight: self.format_weight,
            wer_clamp: self.wer_clamp,
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            group_size: self.group_size,
            batch_tasks: self.batch_tasks,
            inner_epochs: self.inner_epochs,
            learning_rate: self.learning_rate,
            iterations: self.iterations,
            seed: self.seed,
            rollout: self.rollout(),
            shaping: self.shaping(),
            verifier: self.verifier(),
        }
    }
}

/// Loads and validates a config file; `None` yields validated defaults.
pub fn load(path: Option<&Path>) -> Result<RunConfig> {
    let cfg = match path {
        None => RunConfig::default(),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|_| CliError::MissingFile(p.to_path_buf()))?;
            toml::from_str(&text).map_err(|e| CliError::Config(e.to_string()))?
        }
    };
    cfg.validate()?;
    Ok(cfg)
}
