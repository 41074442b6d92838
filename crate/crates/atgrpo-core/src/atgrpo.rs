//! AT-GRPO math core: Gaussian-decay tool reward shaping, reward
//! composition, group-relative advantages, and the KL-regularized policy
//! objective with its exact analytic gradient.
//!
//! The objective works over [`DecisionContext`]s — per-decision softmax
//! scoring records produced by replaying a trajectory — so every quantity
//! (importance ratio, KL, gradient) is closed-form rather than estimated.

use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::num::{exp, ln};
use crate::types::{RewardBreakdown, Trajectory};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AtgrpoError {
    #[error("shaping preconditions violated: n_tool {n_tool} > n_max {n_max} or gamma <= 0")]
    BadShapingArgs { n_tool: usize, n_max: usize },
    #[error("group must contain at least two rewards")]
    GroupTooSmall,
    #[error("parameter vector length {got}, expected {expected}")]
    DimensionMismatch { got: usize, expected: usize },
    #[error("probability underflow or non-finite value in {context}")]
    Numeric { context: &'static str },
    #[error("trajectory replay failed: {0}")]
    Replay(String),
}

/// Shaping and objective hyperparameters. Defaults follow the reference
/// settings: gamma 2, alpha 0.6, beta 0.04, no clipping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShapingConfig {
    /// Sensitivity of the Gaussian decay in the tool reward.
    pub gamma: f64,
    /// Weight of the shaped tool reward in the total reward.
    pub alpha: f64,
    /// KL penalty coefficient.
    pub beta: f64,
    /// Optional PPO-style ratio clipping; required for inner_epochs > 1.
    pub clip_epsilon: Option<f64>,
}

impl Default for ShapingConfig {
    fn default() -> Self {
        ShapingConfig { gamma: 2.0, alpha: 0.6, beta: 0.04, clip_epsilon: None }
    }
}

/// R^t = delta_s * exp(-gamma * ((n_tool - n_max) / n_max)^2).
///
/// Positive ΔS scales up with tool use (maximal at the budget), negative
/// ΔS penalizes it progressively.
pub fn shaped_tool_reward(
    delta_s: f64,
    n_tool: usize,
    n_max: usize,
    gamma: f64,
) -> Result<f64, AtgrpoError> {
    if n_max == 0 || n_tool > n_max || gamma <= 0.0 {
        return Err(AtgrpoError::BadShapingArgs { n_tool, n_max });
    }
    let z = (n_tool as f64 - n_max as f64) / n_max as f64;
    Ok(delta_s * exp(-gamma * z * z))
}

/// R = R^o + alpha * R^t.
pub fn total_reward(base: f64, tool: f64, alpha: f64) -> f64 {
    base + alpha * tool
}

/// Threshold below which a group is considered reward-degenerate.
pub const DEGENERATE_STD: f64 = 1e-8;

/// (R_i - mean) / std with population standard deviation; degenerate
/// groups (std below threshold) get all-zero advantages.
pub fn group_advantages(rewards: &[f64]) -> Result<Vec<f64>, AtgrpoError> {
    if rewards.len() < 2 {
        return Err(AtgrpoError::GroupTooSmall);
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    let std = crate::num::sqrt(var);
    if std < DEGENERATE_STD {
        return Ok(alloc::vec![0.0; rewards.len()]);
    }
    Ok(rewards.iter().map(|r| (r - mean) / std).collect())
}

/// One decision point of a trajectory: the state features, the parameter
/// block of each admissible action, and which action was taken. Scores are
/// linear per block; the distribution is their softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionContext {
    pub features: Vec<f64>,
    /// Parameter block index per admissible action, in action order.
    pub blocks: Vec<usize>,
    /// Index (into `blocks`) of the action that was taken.
    pub taken: usize,
}

/// Recovers decision contexts from a sampled trajectory by replaying it in
/// its environment.
pub trait DecisionEvaluator {
    /// Total parameter dimension (block count x feature count).
    fn dim(&self) -> usize;
    fn feature_count(&self) -> usize;
    fn decisions(&self, traj: &Trajectory) -> Result<Vec<DecisionContext>, String>;
}

/// Softmax over per-action linear scores, with max-score subtraction.
pub fn context_distribution(theta: &[f64], ctx: &DecisionContext) -> Vec<f64> {
    let nf = ctx.features.len();
    let mut scores: Vec<f64> = ctx
        .blocks
        .iter()
        .map(|&b| {
            let w = &theta[b * nf..(b + 1) * nf];
            w.iter().zip(&ctx.features).map(|(wi, fi)| wi * fi).sum::<f64>()
        })
        .collect();
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for s in scores.iter_mut() {
        *s = exp(*s - max);
        total += *s;
    }
    for s in scores.iter_mut() {
        *s /= total;
    }
    scores
}

fn check_dim(theta: &[f64], eval: &dyn DecisionEvaluator) -> Result<(), AtgrpoError> {
    if theta.len() != eval.dim() {
        return Err(AtgrpoError::DimensionMismatch { got: theta.len(), expected: eval.dim() });
    }
    Ok(())
}

fn taken_logprob(theta: &[f64], ctx: &DecisionContext) -> Result<f64, AtgrpoError> {
    let p = context_distribution(theta, ctx)[ctx.taken];
    if !(p > 1e-300) {
        return Err(AtgrpoError::Numeric { context: "taken action probability" });
    }
    Ok(ln(p))
}

/// Sum over decision steps of log pi_theta(a) - log pi_theta_old(a) on the
/// sampled path, computed in log space.
pub fn sequence_log_ratio(
    traj: &Trajectory,
    theta: &[f64],
    theta_old: &[f64],
    eval: &dyn DecisionEvaluator,
) -> Result<f64, AtgrpoError> {
    check_dim(theta, eval)?;
    check_dim(theta_old, eval)?;
    let mut acc = 0.0;
    for ctx in eval.decisions(traj).map_err(AtgrpoError::Replay)? {
        acc += taken_logprob(theta, &ctx)? - taken_logprob(theta_old, &ctx)?;
    }
    Ok(acc)
}

fn context_kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(&pi, &qi)| pi * ln(pi / qi)).sum()
}

/// Exact categorical KL(pi_theta || pi_ref) summed over the trajectory's
/// decision states. Softmax distributions are strictly positive, so this
/// is always finite and non-negative.
pub fn kl_divergence(
    theta: &[f64],
    theta_ref: &[f64],
    traj: &Trajectory,
    eval: &dyn DecisionEvaluator,
) -> Result<f64, AtgrpoError> {
    check_dim(theta, eval)?;
    check_dim(theta_ref, eval)?;
    let mut acc = 0.0;
    for ctx in eval.decisions(traj).map_err(AtgrpoError::Replay)? {
        let p = context_distribution(theta, &ctx);
        let q = context_distribution(theta_ref, &ctx);
        acc += context_kl(&p, &q);
    }
    Ok(acc)
}

/// One group of rollouts for a single query, with rewards and advantages.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupResult {
    pub task_id: String,
    pub trajectories: Vec<Trajectory>,
    pub rewards: Vec<RewardBreakdown>,
    pub advantages: Vec<f64>,
    /// Alpha used when composing `rewards[i].total`, recorded for audit.
    pub alpha: f64,
}

impl GroupResult {
    pub fn group_size(&self) -> usize {
        self.trajectories.len()
    }
}

/// Objective value plus per-batch diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveReport {
    pub objective: f64,
    pub gradient: Vec<f64>,
    /// KL(pi_theta || pi_ref) averaged over all sampled trajectories.
    pub mean_kl: f64,
    /// Importance ratio averaged over all sampled trajectories.
    pub mean_ratio: f64,
}

/// Accumulates `scale * features` into parameter block `b` of `grad`.
#[inline]
fn add_block(grad: &mut [f64], b: usize, features: &[f64], scale: f64) {
    let nf = features.len();
    let dst = &mut grad[b * nf..(b + 1) * nf];
    for (d, f) in dst.iter_mut().zip(features) {
        *d += scale * f;
    }
}

/// J = mean over groups of (1/G) sum_i [ratio_i * A_i] - beta * KL, with
/// the gradient taken analytically through both the ratio and the KL term
/// (advantages held constant). With `clip_epsilon` set, the surrogate is
/// the clipped min used by PPO-family methods.
pub fn objective_and_gradient(
    groups: &[GroupResult],
    theta: &[f64],
    theta_old: &[f64],
    theta_ref: &[f64],
    cfg: &ShapingConfig,
    eval: &dyn DecisionEvaluator,
) -> Result<(f64, Vec<f64>), AtgrpoError> {
    objective_report(groups, theta, theta_old, theta_ref, cfg, eval)
        .map(|r| (r.objective, r.gradient))
}

/// Full report variant of [`objective_and_gradient`].
pub fn objective_report(
    groups: &[GroupResult],
    theta: &[f64],
    theta_old: &[f64],
    theta_ref: &[f64],
    cfg: &ShapingConfig,
    eval: &dyn DecisionEvaluator,
) -> Result<ObjectiveReport, AtgrpoError> {
    check_dim(theta, eval)?;
    check_dim(theta_old, eval)?;
    check_dim(theta_ref, eval)?;
    let dim = eval.dim();
    let mut objective = 0.0;
    let mut gradient = alloc::vec![0.0; dim];
    let mut kl_sum = 0.0;
    let mut ratio_sum = 0.0;
    let mut traj_count = 0usize;

    for group in groups {
        let g = group.group_size() as f64;
        let mut group_obj = 0.0;
        let mut group_grad = alloc::vec![0.0; dim];

        for (traj, &advantage) in group.trajectories.iter().zip(&group.advantages) {
            let ctxs = eval.decisions(traj).map_err(AtgrpoError::Replay)?;

            // Per-context new distributions are reused for the ratio, the
            // score-function gradient, and the KL term.
            let mut log_ratio = 0.0;
            let mut score_grad = alloc::vec![0.0; dim];
            let mut kl = 0.0;
            let mut kl_grad = alloc::vec![0.0; dim];
            for ctx in &ctxs {
                let p_new = context_distribution(theta, ctx);
                let p_taken = p_new[ctx.taken];
                if !(p_taken > 1e-300) {
                    return Err(AtgrpoError::Numeric { context: "taken action probability" });
                }
                log_ratio += ln(p_taken) - taken_logprob(theta_old, ctx)?;
                for (a, &b) in ctx.blocks.iter().enumerate() {
                    let indicator = f64::from(a == ctx.taken);
                    add_block(&mut score_grad, b, &ctx.features, indicator - p_new[a]);
                }
                let p_ref = context_distribution(theta_ref, ctx);
                let ctx_kl = context_kl(&p_new, &p_ref);
                kl += ctx_kl;
                for (a, &b) in ctx.blocks.iter().enumerate() {
                    let scale = p_new[a] * (ln(p_new[a] / p_ref[a]) - ctx_kl);
                    add_block(&mut kl_grad, b, &ctx.features, scale);
                }
            }
            let ratio = exp(log_ratio);
            if !ratio.is_finite() {
                return Err(AtgrpoError::Numeric { context: "importance ratio" });
            }
            kl_sum += kl;
            ratio_sum += ratio;
            traj_count += 1;

            let (surrogate, surrogate_active) = match cfg.clip_epsilon {
                None => (ratio * advantage, true),
                Some(eps) => {
                    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps) * advantage;
                    let unclipped = ratio * advantage;
                    if unclipped <= clipped {
                        (unclipped, true)
                    } else {
                        // Clipped branch is active; it is constant in theta
                        // exactly when the clamp saturates, which it must
                        // for the branches to differ.
                        (clipped, false)
                    }
                }
            };

            group_obj += (surrogate - cfg.beta * kl) / g;
            let ratio_scale = if surrogate_active { ratio * advantage } else { 0.0 };
            for i in 0..dim {
                group_grad[i] +=
                    (ratio_scale * score_grad[i] - cfg.beta * kl_grad[i]) / g;
            }
        }

        objective += group_obj;
        for i in 0..dim {
            gradient[i] += group_grad[i];
        }
    }

    let n_groups = groups.len().max(1) as f64;
    objective /= n_groups;
    for gi in gradient.iter_mut() {
        *gi /= n_groups;
        if !gi.is_finite() {
            return Err(AtgrpoError::Numeric { context: "gradient" });
        }
    }
    if !objective.is_finite() {
        return Err(AtgrpoError::Numeric { context: "objective" });
    }
    Ok(ObjectiveReport {
        objective,
        gradient,
        mean_kl: if traj_count == 0 { 0.0 } else { kl_sum / traj_count as f64 },
        mean_ratio: if traj_count == 0 { 1.0 } else { ratio_sum / traj_count as f64 },
    })
}
