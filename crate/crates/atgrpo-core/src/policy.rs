//! Featurized softmax policy over tool-use action templates.
//!
//! The policy scores a fixed menu of action templates (quadrant crops,
//! frame probes, clip halves, the mark trace, and answering) with a linear
//! function of interpretable state features. Decision steps record the
//! full distribution so trajectories can be replayed exactly for the
//! importance ratios and KL terms of the objective.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::atgrpo::{context_distribution, DecisionContext, DecisionEvaluator};
use crate::num::{ln, unit_f64};
use crate::toolenv::{
    bucket_start, consistent_answers, execute, quadrant_bbox, reset, EnvState,
};
use crate::types::{
    AnswerSpec, Modality, ScenePayload, Step, Task, TerminatedBy, ToolCall, Trajectory,
};

/// Bumped whenever the feature layout or block set changes; checkpoints
/// carry it so stale parameters are rejected instead of misread.
pub const FEATURE_SCHEMA_VERSION: u32 = 1;

pub const N_FEATURES: usize = 7;
pub const N_BLOCKS: usize = 12;
pub const PARAM_DIM: usize = N_FEATURES * N_BLOCKS;

/// Tool templates occupy blocks 0..=10; all answer options share block 11.
pub const BLOCK_NAMES: [&str; N_BLOCKS] = [
    "crop_q0", "crop_q1", "crop_q2", "crop_q3", "trace_marks", "frame_b0", "frame_b1", "frame_b2",
    "frame_b3", "clip_h0", "clip_h1", "answer",
];

pub const ANSWER_BLOCK: usize = 11;
const N_TOOL_TEMPLATES: usize = 11;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("parameter vector length {got}, expected {expected}")]
    DimensionMismatch { got: usize, expected: usize },
    #[error("policy requires multiple-choice tasks, got task {task_id}")]
    NotMultipleChoice { task_id: String },
    #[error("no admissible action for task {task_id}")]
    NoAdmissibleAction { task_id: String },
    #[error("trajectory refers to unknown task {task_id}")]
    UnknownTask { task_id: String },
    #[error("trajectory does not match environment replay: {0}")]
    ReplayMismatch(String),
    #[error("demonstration action not admissible: {0}")]
    BadDemonstration(String),
}

/// Rollout limits. `step_limit` bounds trajectory steps of all variants,
/// `turn_limit` bounds decision points, `n_max` bounds executed tool calls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RolloutConfig {
    pub n_max: usize,
    pub step_limit: usize,
    pub turn_limit: usize,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        RolloutConfig { n_max: 4, step_limit: 12, turn_limit: 8 }
    }
}

/// One admissible action at a decision point.
#[derive(Debug, Clone, PartialEq)]
pub enum Choice {
    /// Tool template `template` (equal to its parameter block) with its
    /// fully instantiated call.
    Tool { template: usize, call: ToolCall },
    Answer { text: String },
}

impl Choice {
    pub fn block(&self) -> usize {
        match self {
            Choice::Tool { template, .. } => *template,
            Choice::Answer { .. } => ANSWER_BLOCK,
        }
    }
}

fn mc_options(task: &Task) -> Result<&Vec<String>, PolicyError> {
    match &task.answer_spec {
        AnswerSpec::MultipleChoice { options, .. } => Ok(options),
        _ => Err(PolicyError::NotMultipleChoice { task_id: task.id.clone() }),
    }
}

/// Instantiates tool template `t` for this scene, or None when the template
/// does not apply (wrong modality, no marks, too few frames).
fn template_call(state: &EnvState, template: usize) -> Option<ToolCall> {
    match (&state.task.scene, template) {
        (ScenePayload::Grid(g), 0..=3) => {
            Some(ToolCall::CropImg { bbox: quadrant_bbox(g.rows, g.cols, template) })
        }
        (ScenePayload::Grid(g), 4) => {
            g.marks.map(|(p0, p1)| ToolCall::PathTracer { p0, p1 })
        }
        (ScenePayload::Video { frames }, 5..=8) => {
            Some(ToolCall::FrameAt { t: bucket_start(frames.len(), template - 5) })
        }
        (ScenePayload::Video { frames }, 9) => {
            Some(ToolCall::VideoClip { t0: 0, t1: frames.len() / 2 - 1 })
        }
        (ScenePayload::Video { frames }, 10) => {
            Some(ToolCall::VideoClip { t0: frames.len() / 2, t1: frames.len() - 1 })
        }
        _ => None,
    }
}

/// State features at a decision point. Deliberately excludes
/// `tool_required`, which is ground truth the policy must not see.
fn features(state: &EnvState, n_consistent: usize, n_options: usize) -> Vec<f64> {
    let mut f = alloc::vec![0.0; N_FEATURES];
    f[0] = 1.0; // bias
    f[1] = f64::from(n_consistent >= 2); // evidence still ambiguous
    f[2] = state.tools_used as f64 / state.n_max.max(1) as f64;
    match state.task.modality {
        Modality::Image => f[3] = 1.0,
        Modality::MultiImage => f[4] = 1.0,
        Modality::Video => f[5] = 1.0,
    }
    f[6] = n_consistent as f64 / n_options.max(1) as f64;
    f
}

/// Features and admissible actions at the current state. `used` marks tool
/// templates already taken this rollout; each is admissible at most once.
/// Answer actions are the options still consistent with the evidence, in
/// task option order, and are always available.
fn decision_point(
    state: &EnvState,
    used: &[bool; N_TOOL_TEMPLATES],
    steps_so_far: usize,
) -> Result<(Vec<f64>, Vec<Choice>), PolicyError> {
    let options = mc_options(&state.task)?;
    let consistent = consistent_answers(state)
        .map_err(|_| PolicyError::NotMultipleChoice { task_id: state.task.id.clone() })?;
    let feats = features(state, consistent.len(), options.len());

    let mut choices = Vec::new();
    // Room for Action + Observation now plus Thought + FinalAnswer later.
    let tool_room = steps_so_far + 4 <= state.step_limit;
    if tool_room && state.tools_used < state.n_max {
        for template in 0..N_TOOL_TEMPLATES {
            if used[template] {
                continue;
            }
            if let Some(call) = template_call(state, template) {
                choices.push(Choice::Tool { template, call });
            }
        }
    }
    for option in &consistent {
        choices.push(Choice::Answer { text: option.clone() });
    }
    if choices.is_empty() {
        return Err(PolicyError::NoAdmissibleAction { task_id: state.task.id.clone() });
    }
    Ok((feats, choices))
}

fn check_theta(theta: &[f64]) -> Result<(), PolicyError> {
    if theta.len() != PARAM_DIM {
        return Err(PolicyError::DimensionMismatch { got: theta.len(), expected: PARAM_DIM });
    }
    Ok(())
}

fn choice_context(feats: Vec<f64>, choices: &[Choice], taken: usize) -> DecisionContext {
    DecisionContext {
        features: feats,
        blocks: choices.iter().map(Choice::block).collect(),
        taken,
    }
}

enum Pick {
    Sample(u64),
    Greedy,
}

fn pick_index(dist: &[f64], pick: &mut Pick, rng: &mut Option<ChaCha8Rng>) -> usize {
    match pick {
        Pick::Greedy => {
            let mut best = 0;
            for (i, &p) in dist.iter().enumerate() {
                if p > dist[best] + 1e-12 {
                    best = i;
                }
            }
            best
        }
        Pick::Sample(_) => {
            let u = unit_f64(rng.as_mut().expect("sampling rng").next_u64());
            let mut acc = 0.0;
            for (i, &p) in dist.iter().enumerate() {
                acc += p;
                if u < acc {
                    return i;
                }
            }
            dist.len() - 1
        }
    }
}

fn rollout(
    theta: &[f64],
    task: &Task,
    cfg: &RolloutConfig,
    mut pick: Pick,
) -> Result<Trajectory, PolicyError> {
    check_theta(theta)?;
    mc_options(task)?;
    let mut rng = match pick {
        Pick::Sample(seed) => Some(ChaCha8Rng::seed_from_u64(seed)),
        Pick::Greedy => None,
    };
    let mut state = reset(task, cfg.n_max, cfg.step_limit);
    let mut used = [false; N_TOOL_TEMPLATES];
    let mut steps: Vec<Step> = Vec::new();
    let mut turns = 0usize;

    loop {
        if steps.len() + 2 > cfg.step_limit {
            return Ok(Trajectory {
                task_id: task.id.clone(),
                steps,
                final_answer: None,
                terminated_by: TerminatedBy::LengthLimit,
            });
        }
        if turns == cfg.turn_limit {
            return Ok(Trajectory {
                task_id: task.id.clone(),
                steps,
                final_answer: None,
                terminated_by: TerminatedBy::TurnLimit,
            });
        }
        turns += 1;
        let consistent_now = consistent_answers(&state)
            .map_err(|_| PolicyError::NotMultipleChoice { task_id: task.id.clone() })?;
        steps.push(Step::Thought {
            text: format!(
                "considering {} consistent options, budget {}/{}",
                consistent_now.len(),
                state.tools_used,
                state.n_max
            ),
        });
        let (feats, choices) = decision_point(&state, &used, steps.len())?;
        let ctx = choice_context(feats, &choices, 0);
        let dist = context_distribution(theta, &ctx);
        let taken = pick_index(&dist, &mut pick, &mut rng);
        let step_logprob = ln(dist[taken]);
        match &choices[taken] {
            Choice::Tool { template, call } => {
                used[*template] = true;
                steps.push(Step::Action {
                    tool_call: call.clone(),
                    step_logprob,
                    step_dist: dist,
                });
                let obs = execute(&mut state, call);
                steps.push(Step::Observation { obs });
            }
            Choice::Answer { text } => {
                let text = text.clone();
                steps.push(Step::FinalAnswer {
                    text: text.clone(),
                    step_logprob,
                    step_dist: dist,
                });
                return Ok(Trajectory {
                    task_id: task.id.clone(),
                    steps,
                    final_answer: Some(text),
                    terminated_by: TerminatedBy::Answer,
                });
            }
        }
    }
}

/// Admissible actions and their softmax probabilities at a state, assuming
/// no templates have been used yet this rollout and there is room to act.
pub fn action_distribution(
    theta: &[f64],
    state: &EnvState,
) -> Result<(Vec<Choice>, Vec<f64>), PolicyError> {
    check_theta(theta)?;
    let (feats, choices) = decision_point(state, &[false; N_TOOL_TEMPLATES], 1)?;
    let ctx = choice_context(feats, &choices, 0);
    let dist = context_distribution(theta, &ctx);
    Ok((choices, dist))
}

/// Sum of decision log-probabilities of a recorded trajectory under
/// `theta`, recomputed by replaying it in its environment.
pub fn log_prob(theta: &[f64], traj: &Trajectory, replayer: &Replayer) -> Result<f64, PolicyError> {
    check_theta(theta)?;
    let mut acc = 0.0;
    for ctx in replayer.replay(traj)? {
        acc += ln(context_distribution(theta, &ctx)[ctx.taken]);
    }
    Ok(acc)
}

/// Exact score-function gradient of [`log_prob`]: per decision,
/// features x (one_hot(taken) - distribution), laid into blocks.
pub fn grad_log_prob(
    theta: &[f64],
    traj: &Trajectory,
    replayer: &Replayer,
) -> Result<Vec<f64>, PolicyError> {
    check_theta(theta)?;
    let mut grad = alloc::vec![0.0; PARAM_DIM];
    for ctx in replayer.replay(traj)? {
        let dist = context_distribution(theta, &ctx);
        for (a, &block) in ctx.blocks.iter().enumerate() {
            let scale = f64::from(a == ctx.taken) - dist[a];
            let w = &mut grad[block * N_FEATURES..(block + 1) * N_FEATURES];
            for (wi, fi) in w.iter_mut().zip(&ctx.features) {
                *wi += scale * fi;
            }
        }
    }
    Ok(grad)
}

/// Stochastic rollout, deterministic in (theta, task, cfg, seed).
pub fn sample_trajectory(
    theta: &[f64],
    task: &Task,
    cfg: &RolloutConfig,
    seed: u64,
) -> Result<Trajectory, PolicyError> {
    rollout(theta, task, cfg, Pick::Sample(seed))
}

/// Argmax rollout; ties go to the lowest action index.
pub fn greedy_trajectory(
    theta: &[f64],
    task: &Task,
    cfg: &RolloutConfig,
) -> Result<Trajectory, PolicyError> {
    rollout(theta, task, cfg, Pick::Greedy)
}

/// Replays trajectories in their environments to recover decision
/// contexts. Recorded observations are checked against re-execution, so a
/// trajectory cannot smuggle in states the environment never produced.
pub struct Replayer {
    tasks: BTreeMap<String, Task>,
    cfg: RolloutConfig,
}

impl Replayer {
    pub fn new<'a>(tasks: impl IntoIterator<Item = &'a Task>, cfg: RolloutConfig) -> Self {
        Replayer {
            tasks: tasks.into_iter().map(|t| (t.id.clone(), t.clone())).collect(),
            cfg,
        }
    }

    fn replay(&self, traj: &Trajectory) -> Result<Vec<DecisionContext>, PolicyError> {
        let task = self
            .tasks
            .get(&traj.task_id)
            .ok_or_else(|| PolicyError::UnknownTask { task_id: traj.task_id.clone() })?;
        let mut state = reset(task, self.cfg.n_max, self.cfg.step_limit);
        let mut used = [false; N_TOOL_TEMPLATES];
        let mut out = Vec::new();
        let mut steps_seen = 0usize;
        let mut iter = traj.steps.iter().peekable();
        while let Some(step) = iter.next() {
            steps_seen += 1;
            match step {
                Step::Thought { .. } => {}
                Step::Action { tool_call, .. } => {
                    // The sampler evaluated this decision after pushing the
                    // Thought but before the Action step itself.
                    let (feats, choices) = decision_point(&state, &used, steps_seen - 1)?;
                    let taken = choices
                        .iter()
                        .position(|c| matches!(c, Choice::Tool { call, .. } if call == tool_call))
                        .ok_or_else(|| {
                            PolicyError::ReplayMismatch(format!(
                                "recorded call {tool_call:?} not admissible"
                            ))
                        })?;
                    if let Choice::Tool { template, .. } = &choices[taken] {
                        used[*template] = true;
                    }
                    out.push(choice_context(feats, &choices, taken));
                    let obs = execute(&mut state, tool_call);
                    match iter.next() {
                        Some(Step::Observation { obs: recorded }) if *recorded == obs => {
                            steps_seen += 1;
                        }
                        other => {
                            return Err(PolicyError::ReplayMismatch(format!(
                                "expected matching observation after action, found {other:?}"
                            )));
                        }
                    }
                }
                Step::Observation { .. } => {
                    return Err(PolicyError::ReplayMismatch(
                        "observation without preceding action".to_string(),
                    ));
                }
                Step::FinalAnswer { text, .. } => {
                    let (feats, choices) = decision_point(&state, &used, steps_seen - 1)?;
                    let taken = choices
                        .iter()
                        .position(|c| matches!(c, Choice::Answer { text: t } if t == text))
                        .ok_or_else(|| {
                            PolicyError::ReplayMismatch(format!(
                                "recorded answer {text:?} not admissible"
                            ))
                        })?;
                    out.push(choice_context(feats, &choices, taken));
                    if iter.next().is_some() {
                        return Err(PolicyError::ReplayMismatch(
                            "steps after final answer".to_string(),
                        ));
                    }
                }
            }
        }
        Ok(out)
    }
}

impl DecisionEvaluator for Replayer {
    fn dim(&self) -> usize {
        PARAM_DIM
    }

    fn feature_count(&self) -> usize {
        N_FEATURES
    }

    fn decisions(&self, traj: &Trajectory) -> Result<Vec<DecisionContext>, String> {
        self.replay(traj).map_err(|e| e.to_string())
    }
}

// ---------------------------------------------------------------------------
// Cold start: scripted demonstrations and supervised fitting
// ---------------------------------------------------------------------------

/// A scripted expert rollout: tool calls to make, then the answer to give.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demonstration {
    pub task_id: String,
    pub tool_calls: Vec<ToolCall>,
    pub final_answer: String,
    /// True when the trace contains a tool call the task did not need.
    pub redundant_tools: bool,
}

fn informative_template(task: &Task) -> Option<usize> {
    match (&task.probe, &task.scene) {
        (crate::types::Probe::CellSymbol { at }, ScenePayload::Grid(g)) => {
            let (rm, cm) = (g.rows / 2, g.cols / 2);
            let q = match (at.0 < rm, at.1 < cm) {
                (true, true) => 0,
                (true, false) => 1,
                (false, true) => 2,
                (false, false) => 3,
            };
            Some(q)
        }
        (crate::types::Probe::SymbolPathCount { .. }, ScenePayload::Grid(_)) => Some(4),
        (crate::types::Probe::FrameCellSymbol { t, .. }, ScenePayload::Video { frames }) => {
            (0..4).find(|&b| bucket_start(frames.len(), b) == *t).map(|b| 5 + b)
        }
        (crate::types::Probe::SymbolFrameCount { t0, .. }, ScenePayload::Video { .. }) => {
            Some(if *t0 == 0 { 9 } else { 10 })
        }
        _ => None,
    }
}

/// Behavior-cloning source: tool-required tasks get their one informative
/// tool call; tool-free tasks answer directly, except that with probability
/// `redundancy_rate` they first make one irrelevant call. The redundancy
/// models the over-use the shaped reward is meant to train away.
pub fn scripted_expert(
    task: &Task,
    redundancy_rate: f64,
    seed: u64,
) -> Result<Demonstration, PolicyError> {
    mc_options(task)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tool_calls = Vec::new();
    let mut redundant = false;
    if task.tool_required {
        let template = informative_template(task).ok_or_else(|| {
            PolicyError::BadDemonstration(format!("no informative template for {}", task.id))
        })?;
        let state = reset(task, 1, usize::MAX);
        let call = template_call(&state, template).ok_or_else(|| {
            PolicyError::BadDemonstration(format!("template {template} inapplicable to {}", task.id))
        })?;
        tool_calls.push(call);
    } else if unit_f64(rng.next_u64()) < redundancy_rate {
        let state = reset(task, 1, usize::MAX);
        let template = match task.modality {
            Modality::Video => 5 + (rng.next_u64() % 4) as usize,
            _ => (rng.next_u64() % 4) as usize,
        };
        if let Some(call) = template_call(&state, template) {
            tool_calls.push(call);
            redundant = true;
        }
    }
    Ok(Demonstration {
        task_id: task.id.clone(),
        tool_calls,
        final_answer: task.answer_spec.gold_text(),
        redundant_tools: redundant,
    })
}

/// Decision contexts a policy would face when following the demonstration.
fn demo_decisions(
    task: &Task,
    cfg: &RolloutConfig,
    demo: &Demonstration,
) -> Result<Vec<DecisionContext>, PolicyError> {
    let mut state = reset(task, cfg.n_max, cfg.step_limit);
    let mut used = [false; N_TOOL_TEMPLATES];
    let mut out = Vec::new();
    let mut steps = 1usize; // the Thought preceding each decision
    for call in &demo.tool_calls {
        let (feats, choices) = decision_point(&state, &used, steps)?;
        let taken = choices
            .iter()
            .position(|c| matches!(c, Choice::Tool { call: tc, .. } if tc == call))
            .ok_or_else(|| {
                PolicyError::BadDemonstration(format!("call {call:?} not admissible"))
            })?;
        if let Choice::Tool { template, .. } = &choices[taken] {
            used[*template] = true;
        }
        out.push(choice_context(feats, &choices, taken));
        let obs = execute(&mut state, call);
        if obs.is_error() {
            return Err(PolicyError::BadDemonstration(format!(
                "demonstration call failed: {obs:?}"
            )));
        }
        steps += 3;
    }
    let (feats, choices) = decision_point(&state, &used, steps)?;
    let taken = choices
        .iter()
        .position(|c| matches!(c, Choice::Answer { text } if *text == demo.final_answer))
        .ok_or_else(|| {
            PolicyError::BadDemonstration(format!(
                "answer {:?} not admissible",
                demo.final_answer
            ))
        })?;
    out.push(choice_context(feats, &choices, taken));
    Ok(out)
}

/// Supervised cold start: per-demonstration SGD on the log-likelihood of
/// the demonstrated decisions. Deterministic for a fixed input order.
pub fn sft_fit(
    demos: &[Demonstration],
    tasks: &[Task],
    theta0: &[f64],
    learning_rate: f64,
    epochs: usize,
    cfg: &RolloutConfig,
) -> Result<Vec<f64>, PolicyError> {
    check_theta(theta0)?;
    let by_id: BTreeMap<&str, &Task> = tasks.iter().map(|t| (t.id.as_str(), t)).collect();
    let mut theta = theta0.to_vec();
    for _ in 0..epochs {
        for demo in demos {
            let task = by_id
                .get(demo.task_id.as_str())
                .ok_or_else(|| PolicyError::UnknownTask { task_id: demo.task_id.clone() })?;
            for ctx in demo_decisions(task, cfg, demo)? {
                let dist = context_distribution(&theta, &ctx);
                for (a, &block) in ctx.blocks.iter().enumerate() {
                    let indicator = f64::from(a == ctx.taken);
                    let scale = learning_rate * (indicator - dist[a]);
                    let w = &mut theta[block * N_FEATURES..(block + 1) * N_FEATURES];
                    for (wi, fi) in w.iter_mut().zip(&ctx.features) {
                        *wi += scale * fi;
                    }
                }
            }
        }
    }
    Ok(theta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::atgrpo::{kl_divergence, sequence_log_ratio};
    use crate::toolenv::{generate_tasks, GenSpec};
    use alloc::vec;

    fn mixed_tasks(seed: u64) -> Vec<Task> {
        generate_tasks(&GenSpec {
            needle_image: 2,
            global_image: 2,
            needle_video: 2,
            clip_count: 2,
            path_image: 2,
            global_video: 2,
            seed,
            ..GenSpec::default()
        })
    }

    #[test]
    fn sampling_is_deterministic_in_seed() {
        let theta = vec![0.0; PARAM_DIM];
        let cfg = RolloutConfig::default();
        for task in mixed_tasks(1) {
            let a = sample_trajectory(&theta, &task, &cfg, 42).unwrap();
            let b = sample_trajectory(&theta, &task, &cfg, 42).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn trajectories_respect_limits_and_have_valid_shape() {
        let theta = vec![0.0; PARAM_DIM];
        let cfg = RolloutConfig::default();
        for task in mixed_tasks(2) {
            for seed in 0..20 {
                let t = sample_trajectory(&theta, &task, &cfg, seed).unwrap();
                assert!(t.length() <= cfg.step_limit);
                assert!(t.tool_count() <= cfg.n_max);
                if t.terminated_by == TerminatedBy::Answer {
                    assert!(t.final_answer.is_some());
                }
            }
            // A one-step budget cannot even hold Thought + FinalAnswer.
            let tight = RolloutConfig { step_limit: 1, ..cfg };
            let t = sample_trajectory(&theta, &task, &tight, 0).unwrap();
            assert_eq!(t.terminated_by, TerminatedBy::LengthLimit);
            assert!(t.final_answer.is_none());
        }
    }

    #[test]
    fn answers_come_from_consistent_set() {
        // With uniform theta on a tool-free task the coarse view already
        // pins the answer, so every answered rollout must answer gold.
        let theta = vec![0.0; PARAM_DIM];
        let cfg = RolloutConfig::default();
        let tasks = generate_tasks(&GenSpec { global_image: 5, seed: 8, ..GenSpec::default() });
        for task in &tasks {
            for seed in 0..10 {
                let t = sample_trajectory(&theta, task, &cfg, seed).unwrap();
                if let Some(ans) = &t.final_answer {
                    assert_eq!(*ans, task.answer_spec.gold_text());
                }
            }
        }
    }

    #[test]
    fn greedy_is_deterministic_and_tie_breaks_low() {
        let theta = vec![0.0; PARAM_DIM];
        let cfg = RolloutConfig::default();
        for task in mixed_tasks(3) {
            let a = greedy_trajectory(&theta, &task, &cfg).unwrap();
            let b = greedy_trajectory(&theta, &task, &cfg).unwrap();
            assert_eq!(a, b);
            // Uniform scores: the first admissible action (a tool) is taken
            // each turn until tools are masked, then the first consistent
            // answer.
            assert!(a.tool_count() >= 1);
        }
    }

    #[test]
    fn replay_recovers_sampled_distributions() {
        let mut theta = vec![0.0; PARAM_DIM];
        // Non-trivial weights so distributions are not uniform.
        for (i, w) in theta.iter_mut().enumerate() {
            *w = ((i % 13) as f64 - 6.0) * 0.07;
        }
        let cfg = RolloutConfig::default();
        let tasks = mixed_tasks(4);
        let replayer = Replayer::new(&tasks, cfg);
        for task in &tasks {
            for seed in 0..10 {
                let traj = sample_trajectory(&theta, task, &cfg, seed).unwrap();
                let ctxs = replayer.replay(&traj).unwrap();
                let decision_steps: Vec<&Step> = traj
                    .steps
                    .iter()
                    .filter(|s| matches!(s, Step::Action { .. } | Step::FinalAnswer { .. }))
                    .collect();
                assert_eq!(ctxs.len(), decision_steps.len());
                for (ctx, step) in ctxs.iter().zip(decision_steps) {
                    let dist = context_distribution(&theta, ctx);
                    let (recorded_dist, recorded_lp) = match step {
                        Step::Action { step_dist, step_logprob, .. } => (step_dist, step_logprob),
                        Step::FinalAnswer { step_dist, step_logprob, .. } => {
                            (step_dist, step_logprob)
                        }
                        _ => unreachable!(),
                    };
                    assert_eq!(&dist, recorded_dist);
                    assert!((ln(dist[ctx.taken]) - recorded_lp).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn replay_identities_for_objective_terms() {
        let theta = vec![0.01; PARAM_DIM];
        let cfg = RolloutConfig::default();
        let tasks = mixed_tasks(5);
        let replayer = Replayer::new(&tasks, cfg);
        for task in &tasks {
            let traj = sample_trajectory(&theta, task, &cfg, 7).unwrap();
            let r = sequence_log_ratio(&traj, &theta, &theta, &replayer).unwrap();
            assert!(r.abs() < 1e-12);
            let kl = kl_divergence(&theta, &theta, &traj, &replayer).unwrap();
            assert!(kl.abs() < 1e-12);
        }
    }

    #[test]
    fn replay_rejects_tampered_observations() {
        let theta = vec![0.0; PARAM_DIM];
        let cfg = RolloutConfig::default();
        let tasks = generate_tasks(&GenSpec { needle_image: 1, seed: 6, ..GenSpec::default() });
        let replayer = Replayer::new(&tasks, cfg);
        // Greedy on uniform theta takes at least one tool call.
        let mut traj = greedy_trajectory(&theta, &tasks[0], &cfg).unwrap();
        let obs_idx = traj
            .steps
            .iter()
            .position(|s| matches!(s, Step::Observation { .. }))
            .expect("has an observation");
        traj.steps[obs_idx] = Step::Observation {
            obs: crate::types::Observation::Error { message: "forged".to_string() },
        };
        assert!(replayer.replay(&traj).is_err());
    }

    #[test]
    fn templates_are_single_use() {
        // Strongly favor crop_q0 everywhere; it must still appear at most
        // once per rollout.
        let mut theta = vec![0.0; PARAM_DIM];
        theta[0] = 50.0; // crop_q0 bias
        let cfg = RolloutConfig::default();
        let tasks = generate_tasks(&GenSpec { needle_image: 3, seed: 10, ..GenSpec::default() });
        for task in &tasks {
            let traj = greedy_trajectory(&theta, task, &cfg).unwrap();
            let q0 = quadrant_bbox(8, 8, 0);
            let n_q0 = traj
                .steps
                .iter()
                .filter(|s| {
                    matches!(s, Step::Action { tool_call: ToolCall::CropImg { bbox }, .. } if *bbox == q0)
                })
                .count();
            assert_eq!(n_q0, 1);
        }
    }

    #[test]
    fn scripted_expert_solves_every_kind() {
        let cfg = RolloutConfig::default();
        for task in mixed_tasks(11) {
            let demo = scripted_expert(&task, 0.0, 5).unwrap();
            assert_eq!(demo.final_answer, task.answer_spec.gold_text());
            if task.tool_required {
                assert_eq!(demo.tool_calls.len(), 1);
                assert!(!demo.redundant_tools);
            } else {
                assert!(demo.tool_calls.is_empty());
            }
            // The demonstration must be executable by the policy.
            let ctxs = demo_decisions(&task, &cfg, &demo).unwrap();
            assert_eq!(ctxs.len(), demo.tool_calls.len() + 1);
        }
    }

    #[test]
    fn scripted_expert_redundancy_rate() {
        let tasks = generate_tasks(&GenSpec { global_image: 40, seed: 13, ..GenSpec::default() });
        let mut redundant = 0;
        for (i, task) in tasks.iter().enumerate() {
            let demo = scripted_expert(task, 0.5, 1000 + i as u64).unwrap();
            redundant += usize::from(demo.redundant_tools);
        }
        assert!((8..=32).contains(&redundant), "got {redundant} of 40");
    }

    #[test]
    fn sft_increases_demo_likelihood_and_tool_use_on_required_tasks() {
        let tasks = mixed_tasks(17);
        let cfg = RolloutConfig::default();
        let demos: Vec<Demonstration> = tasks
            .iter()
            .enumerate()
            .map(|(i, t)| scripted_expert(t, 0.0, i as u64).unwrap())
            .collect();
        let theta0 = vec![0.0; PARAM_DIM];
        let theta = sft_fit(&demos, &tasks, &theta0, 0.5, 40, &cfg).unwrap();
        let loglik = |th: &[f64]| -> f64 {
            let mut acc = 0.0;
            for demo in &demos {
                let task = tasks.iter().find(|t| t.id == demo.task_id).unwrap();
                for ctx in demo_decisions(task, &cfg, demo).unwrap() {
                    acc += ln(context_distribution(th, &ctx)[ctx.taken]);
                }
            }
            acc
        };
        assert!(loglik(&theta) > loglik(&theta0));
        // Greedy behavior after fitting. Path tasks have a single always-
        // informative tool, so they resolve in one call; other required
        // kinds must at least reach for tools (the features cannot encode
        // which quadrant or frame holds the needle). Free tasks answer
        // gold directly.
        for task in &tasks {
            let traj = greedy_trajectory(&theta, task, &cfg).unwrap();
            match task.kind {
                crate::types::TaskKind::PathImage => {
                    assert_eq!(traj.tool_count(), 1, "task {}", task.id);
                    assert_eq!(
                        traj.final_answer.as_deref(),
                        Some(task.answer_spec.gold_text().as_str())
                    );
                }
                _ if task.tool_required => {
                    assert!(traj.tool_count() >= 1, "task {}", task.id);
                }
                _ => {
                    assert_eq!(traj.tool_count(), 0, "task {}", task.id);
                    assert_eq!(
                        traj.final_answer.as_deref(),
                        Some(task.answer_spec.gold_text().as_str())
                    );
                }
            }
        }
    }

    #[test]
    fn action_distribution_examples() {
        let tasks = generate_tasks(&GenSpec { needle_image: 1, seed: 21, ..GenSpec::default() });
        let state = crate::toolenv::reset(&tasks[0], 4, 12);
        // Zero theta: uniform over admissible actions.
        let theta = vec![0.0; PARAM_DIM];
        let (choices, dist) = action_distribution(&theta, &state).unwrap();
        assert_eq!(choices.len(), dist.len());
        assert!((dist.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for &p in &dist {
            assert!((p - 1.0 / dist.len() as f64).abs() < 1e-12);
            assert!(p > 0.0);
        }
        // +10 on the answer block bias: answer mass dominates.
        let mut theta = vec![0.0; PARAM_DIM];
        theta[ANSWER_BLOCK * N_FEATURES] = 10.0;
        let (choices, dist) = action_distribution(&theta, &state).unwrap();
        let answer_mass: f64 = choices
            .iter()
            .zip(&dist)
            .filter(|(c, _)| matches!(c, Choice::Answer { .. }))
            .map(|(_, &p)| p)
            .sum();
        assert!(answer_mass > 0.99);
    }

    #[test]
    fn log_prob_matches_recorded_and_gradient_identity() {
        let mut theta = vec![0.0; PARAM_DIM];
        for (i, w) in theta.iter_mut().enumerate() {
            *w = ((i % 7) as f64 - 3.0) * 0.1;
        }
        let cfg = RolloutConfig::default();
        let tasks = mixed_tasks(23);
        let replayer = Replayer::new(&tasks, cfg);
        for task in &tasks {
            let traj = sample_trajectory(&theta, task, &cfg, 3).unwrap();
            let recorded: f64 = traj
                .steps
                .iter()
                .filter_map(|s| match s {
                    Step::Action { step_logprob, .. }
                    | Step::FinalAnswer { step_logprob, .. } => Some(*step_logprob),
                    _ => None,
                })
                .sum();
            let lp = log_prob(&theta, &traj, &replayer).unwrap();
            assert!((lp - recorded).abs() < 1e-12);
            assert!(lp <= 0.0);
            // Softmax score identity: expected gradient over actions is 0,
            // so per-step contributions cancel when taken is re-weighted.
            let grad = grad_log_prob(&theta, &traj, &replayer).unwrap();
            assert!(grad.iter().all(|g| g.is_finite()));
        }
    }

    #[test]
    fn sft_is_deterministic() {
        let tasks = mixed_tasks(19);
        let cfg = RolloutConfig::default();
        let demos: Vec<Demonstration> = tasks
            .iter()
            .enumerate()
            .map(|(i, t)| scripted_expert(t, 0.3, i as u64).unwrap())
            .collect();
        let theta0 = vec![0.0; PARAM_DIM];
        let a = sft_fit(&demos, &tasks, &theta0, 0.3, 5, &cfg).unwrap();
        let b = sft_fit(&demos, &tasks, &theta0, 0.3, 5, &cfg).unwrap();
        assert_eq!(a, b);
    }
}
