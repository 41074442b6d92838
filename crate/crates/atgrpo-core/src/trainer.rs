//! RL training loop: grouped rollouts, reward composition, ascent on the
//! KL-regularized objective, and greedy evaluation.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::atgrpo::{
    group_advantages, objective_report, shaped_tool_reward, total_reward, AtgrpoError,
    GroupResult, ShapingConfig,
};
use crate::benefit::AnnotatedTask;
use crate::num::hash_seed;
use crate::policy::{
    greedy_trajectory, sample_trajectory, PolicyError, Replayer, RolloutConfig, PARAM_DIM,
};
use crate::toolenv::derive_seed;
use crate::types::{RewardBreakdown, Task, Trajectory};
use crate::verifiers::{base_reward, VerifierConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("no tasks to train on")]
    EmptyDataset,
    #[error("invalid training config: {0}")]
    BadConfig(&'static str),
    #[error("parameters became non-finite at iteration {iteration}")]
    NonFinite { iteration: usize },
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Objective(#[from] AtgrpoError),
}

/// Full training-run settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Rollouts per task per iteration (G).
    pub group_size: usize,
    /// Tasks per iteration batch.
    pub batch_tasks: usize,
    /// Gradient steps per collected batch; > 1 needs clipping to stay
    /// on-trust-region.
    pub inner_epochs: usize,
    pub learning_rate: f64,
    pub iterations: usize,
    pub seed: u64,
    pub rollout: RolloutConfig,
    pub shaping: ShapingConfig,
    pub verifier: VerifierConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            group_size: 8,
            batch_tasks: 32,
            inner_epochs: 1,
            learning_rate: 0.05,
            iterations: 100,
            seed: 0,
            rollout: RolloutConfig::default(),
            shaping: ShapingConfig::default(),
            verifier: VerifierConfig::default(),
        }
    }
}

/// One row of the training metrics series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub iter: usize,
    pub mean_total_reward: f64,
    pub mean_accuracy: f64,
    pub mean_tool_calls: f64,
    pub mean_traj_length: f64,
    pub mean_kl: f64,
    pub objective: f64,
    /// Fraction of rollouts on tool-required tasks using at least one tool.
    pub tool_rate_required: f64,
    /// Same for tool-free tasks.
    pub tool_rate_free: f64,
}

pub const METRICS_HEADER: &str = "iter,mean_total_reward,mean_accuracy,mean_tool_calls,\
mean_traj_length,mean_kl,objective,tool_rate_required,tool_rate_free";

/// CSV with the pinned header; floats at six decimal places.
pub fn render_metrics(history: &[MetricsRow]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in history {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            r.iter,
            r.mean_total_reward,
            r.mean_accuracy,
            r.mean_tool_calls,
            r.mean_traj_length,
            r.mean_kl,
            r.objective,
            r.tool_rate_required,
            r.tool_rate_free,
        ));
    }
    out
}

/// Verifier base rewards plus shaped tool rewards for one group.
fn compose_rewards(
    task: &Task,
    delta_s: f64,
    trajs: &[Trajectory],
    cfg: &TrainConfig,
) -> Result<Vec<RewardBreakdown>, TrainError> {
    trajs
        .iter()
        .map(|traj| {
            let mut r = base_reward(traj, task, &cfg.verifier);
            r.tool = shaped_tool_reward(
                delta_s,
                traj.tool_count(),
                cfg.rollout.n_max,
                cfg.shaping.gamma,
            )?;
            r.total = total_reward(r.base, r.tool, cfg.shaping.alpha);
            Ok(r)
        })
        .collect()
}

/// Samples G rollouts of one task under `theta` and scores them.
pub fn collect_group(
    annotated: &AnnotatedTask,
    theta: &[f64],
    cfg: &TrainConfig,
    iteration: usize,
) -> Result<GroupResult, TrainError> {
    let task = &annotated.task;
    let mut trajectories = Vec::with_capacity(cfg.group_size);
    for g in 0..cfg.group_size {
        let seed = derive_seed(cfg.seed, &task.id, iteration as u64, g as u64);
        trajectories.push(sample_trajectory(theta, task, &cfg.rollout, seed)?);
    }
    let rewards = compose_rewards(task, annotated.delta_s, &trajectories, cfg)?;
    let totals: Vec<f64> = rewards.iter().map(|r| r.total).collect();
    let advantages = group_advantages(&totals)?;
    Ok(GroupResult {
        task_id: task.id.clone(),
        trajectories,
        rewards,
        advantages,
        alpha: cfg.shaping.alpha,
    })
}

fn shuffled(n: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..n).rev() {
        let j = (rng.next_u64() % (i as u64 + 1)) as usize;
        order.swap(i, j);
    }
    order
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutput {
    pub theta: Vec<f64>,
    pub history: Vec<MetricsRow>,
}

fn check_config(cfg: &TrainConfig) -> Result<(), TrainError> {
    if cfg.group_size < 2 {
        return Err(TrainError::BadConfig("group_size must be >= 2"));
    }
    if cfg.batch_tasks == 0 {
        return Err(TrainError::BadConfig("batch_tasks must be >= 1"));
    }
    if cfg.inner_epochs == 0 {
        return Err(TrainError::BadConfig("inner_epochs must be >= 1"));
    }
    if cfg.inner_epochs > 1 && cfg.shaping.clip_epsilon.is_none() {
        return Err(TrainError::BadConfig("inner_epochs > 1 requires clip_epsilon"));
    }
    if !(cfg.learning_rate > 0.0 && cfg.learning_rate.is_finite()) {
        return Err(TrainError::BadConfig("learning_rate must be positive and finite"));
    }
    Ok(())
}

/// Runs the full training loop.
///
/// The reference policy is frozen at `theta0`. Each iteration snapshots
/// the sampling policy, collects `batch_tasks` groups of `group_size`
/// rollouts, and takes `inner_epochs` ascent steps on the objective.
/// Tasks are visited in seeded shuffled passes, so every task is seen once
/// per pass regardless of batch size.
pub fn train(
    annotated: &[AnnotatedTask],
    theta0: &[f64],
    cfg: &TrainConfig,
) -> Result<TrainOutput, TrainError> {
    if annotated.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    check_config(cfg)?;
    if theta0.len() != PARAM_DIM {
        return Err(TrainError::Policy(PolicyError::DimensionMismatch {
            got: theta0.len(),
            expected: PARAM_DIM,
        }));
    }
    let tasks: Vec<&Task> = annotated.iter().map(|a| &a.task).collect();
    let replayer = Replayer::new(tasks.iter().copied(), cfg.rollout);
    let theta_ref = theta0.to_vec();
    let mut theta = theta0.to_vec();
    let mut history = Vec::with_capacity(cfg.iterations);

    let n = annotated.len();
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0usize;
    let mut pass = 0u64;

    for iteration in 1..=cfg.iterations {
        let mut batch = Vec::with_capacity(cfg.batch_tasks);
        for _ in 0..cfg.batch_tasks {
            if cursor >= order.len() {
                order = shuffled(n, hash_seed(&[cfg.seed, 0x0bad5eed, pass]));
                pass += 1;
                cursor = 0;
            }
            batch.push(order[cursor]);
            cursor += 1;
        }

        let theta_old = theta.clone();
        let mut groups = Vec::with_capacity(batch.len());
        for &idx in &batch {
            groups.push(collect_group(&annotated[idx], &theta_old, cfg, iteration)?);
        }

        let mut first_report = None;
        for _ in 0..cfg.inner_epochs {
            let report =
                objective_report(&groups, &theta, &theta_old, &theta_ref, &cfg.shaping, &replayer)?;
            for (t, g) in theta.iter_mut().zip(&report.gradient) {
                *t += cfg.learning_rate * g;
            }
            if theta.iter().any(|t| !t.is_finite()) {
                return Err(TrainError::NonFinite { iteration });
            }
            if first_report.is_none() {
                first_report = Some(report);
            }
        }
        // At the first inner epoch theta equals theta_old, so the report's
        // mean KL is KL(pi_old || pi_ref) for this batch.
        let report = first_report.expect("inner_epochs >= 1");

        let mut sum_total = 0.0;
        let mut sum_acc = 0.0;
        let mut sum_tools = 0.0;
        let mut sum_len = 0.0;
        let mut count = 0usize;
        let mut req_used = 0usize;
        let mut req_n = 0usize;
        let mut free_used = 0usize;
        let mut free_n = 0usize;
        for (&idx, group) in batch.iter().zip(&groups) {
            let required = annotated[idx].task.tool_required;
            for (traj, reward) in group.trajectories.iter().zip(&group.rewards) {
                sum_total += reward.total;
                sum_acc += reward.correctness;
                sum_tools += traj.tool_count() as f64;
                sum_len += traj.length() as f64;
                count += 1;
                let used = usize::from(traj.tool_count() > 0);
                if required {
                    req_used += used;
                    req_n += 1;
                } else {
                    free_used += used;
                    free_n += 1;
                }
            }
        }
        let denom = count.max(1) as f64;
        history.push(MetricsRow {
            iter: iteration,
            mean_total_reward: sum_total / denom,
            mean_accuracy: sum_acc / denom,
            mean_tool_calls: sum_tools / denom,
            mean_traj_length: sum_len / denom,
            mean_kl: report.mean_kl,
            objective: report.objective,
            tool_rate_required: if req_n == 0 { 0.0 } else { req_used as f64 / req_n as f64 },
            tool_rate_free: if free_n == 0 { 0.0 } else { free_used as f64 / free_n as f64 },
        });
    }

    Ok(TrainOutput { theta, history })
}

/// Greedy evaluation summary, split by ground-truth tool requirement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub accuracy_required: f64,
    pub accuracy_free: f64,
    /// Fraction of tool-required tasks on which the greedy policy used at
    /// least one tool.
    pub tool_rate_required: f64,
    pub tool_rate_free: f64,
    pub mean_tool_calls: f64,
    pub n_required: usize,
    pub n_free: usize,
}

/// Greedy rollout of every task; split rates are 0 when a split is empty.
pub fn evaluate(
    tasks: &[Task],
    theta: &[f64],
    rollout: &RolloutConfig,
    verifier: &VerifierConfig,
) -> Result<EvalReport, TrainError> {
    if tasks.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut acc = 0.0;
    let mut acc_req = 0.0;
    let mut acc_free = 0.0;
    let mut used_req = 0usize;
    let mut used_free = 0usize;
    let mut n_req = 0usize;
    let mut n_free = 0usize;
    let mut tools = 0.0;
    for task in tasks {
        let traj = greedy_trajectory(theta, task, rollout)?;
        let r = base_reward(&traj, task, verifier);
        acc += r.correctness;
        tools += traj.tool_count() as f64;
        let used = usize::from(traj.tool_count() > 0);
        if task.tool_required {
            acc_req += r.correctness;
            used_req += used;
            n_req += 1;
        } else {
            acc_free += r.correctness;
            used_free += used;
            n_free += 1;
        }
    }
    let n = tasks.len() as f64;
    Ok(EvalReport {
        accuracy: acc / n,
        accuracy_required: if n_req == 0 { 0.0 } else { acc_req / n_req as f64 },
        accuracy_free: if n_free == 0 { 0.0 } else { acc_free / n_free as f64 },
        tool_rate_required: if n_req == 0 { 0.0 } else { used_req as f64 / n_req as f64 },
        tool_rate_free: if n_free == 0 { 0.0 } else { used_free as f64 / n_free as f64 },
        mean_tool_calls: tools / n,
        n_required: n_req,
        n_free,
    })
}
