//! Tool Benefit Score (ΔS) estimation and dataset annotation.
//!
//! Each task is solved `k` times with tool access and `k` times without by
//! a reference solver; ΔS is the gap between the two per-arm accuracies.
//! Annotation happens once, before RL, and the score is frozen.

use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::num::{hash_str, mix64, unit_f64};
use crate::toolenv::derive_seed;
use crate::types::{Task, TaskKind};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BenefitError {
    #[error("solver failed on task {task_id}: {message}")]
    Solver { task_id: String, message: String },
    #[error("no tasks to annotate")]
    EmptyDataset,
    #[error("runs per arm must be >= 1")]
    ZeroRuns,
}

/// Per-task ΔS estimate. Both arm accuracies are multiples of
/// 1/runs_per_arm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenefitEstimate {
    pub s_plus: f64,
    pub s_minus: f64,
    pub delta_s: f64,
    pub runs_per_arm: usize,
}

/// Abstract reference solver: correctness in [0,1], deterministic in
/// (task, with_tools, seed). A real model endpoint can stand in for the
/// built-in stochastic oracle without touching the algorithm.
pub trait ReferenceSolver {
    fn solve(&self, task: &Task, with_tools: bool, seed: u64) -> Result<f64, String>;
}

/// Stochastic oracle with per-kind success probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KindOracle {
    /// (p_with, p_without) indexed by task kind order in [`TaskKind::ALL`].
    pub params: [(f64, f64); 6],
}

impl KindOracle {
    /// Same probabilities for every kind.
    pub fn uniform(p_with: f64, p_without: f64) -> Self {
        KindOracle { params: [(p_with, p_without); 6] }
    }

    /// One probability pair for tool-required kinds, another for the rest.
    pub fn by_tool_requirement(required: (f64, f64), free: (f64, f64)) -> Self {
        let mut params = [required; 6];
        for (i, kind) in TaskKind::ALL.iter().enumerate() {
            if matches!(kind, TaskKind::GlobalImage | TaskKind::GlobalVideo) {
                params[i] = free;
            }
        }
        KindOracle { params }
    }

    fn probability(&self, kind: TaskKind, with_tools: bool) -> f64 {
        let idx = TaskKind::ALL.iter().position(|&k| k == kind).unwrap();
        let (pw, po) = self.params[idx];
        if with_tools {
            pw
        } else {
            po
        }
    }
}

impl ReferenceSolver for KindOracle {
    fn solve(&self, task: &Task, with_tools: bool, seed: u64) -> Result<f64, String> {
        let p = self.probability(task.kind, with_tools);
        let draw = unit_f64(mix64(seed ^ hash_str(&task.id) ^ ((with_tools as u64) << 63)));
        Ok(if draw < p { 1.0 } else { 0.0 })
    }
}

/// A run counts as correct when its correctness reaches 0.5; this
/// binarization gives graded (OCR/free-form) verifiers a well-defined
/// per-arm accuracy.
pub const ACCURACY_THRESHOLD: f64 = 0.5;

/// Runs the solver k times per arm with derived seeds and returns the
/// accuracy gap.
pub fn estimate_delta_s(
    task: &Task,
    solver: &dyn ReferenceSolver,
    k: usize,
    seed: u64,
) -> Result<BenefitEstimate, BenefitError> {
    if k == 0 {
        return Err(BenefitError::ZeroRuns);
    }
    let arm = |with_tools: bool| -> Result<f64, BenefitError> {
        let arm_id = u64::from(with_tools);
        let mut hits = 0usize;
        for run in 0..k {
            let run_seed = derive_seed(seed, &task.id, arm_id, run as u64);
            let correctness = solver
                .solve(task, with_tools, run_seed)
                .map_err(|message| BenefitError::Solver { task_id: task.id.clone(), message })?;
            hits += usize::from(correctness >= ACCURACY_THRESHOLD);
        }
        Ok(hits as f64 / k as f64)
    };
    let s_plus = arm(true)?;
    let s_minus = arm(false)?;
    Ok(BenefitEstimate { s_plus, s_minus, delta_s: s_plus - s_minus, runs_per_arm: k })
}

/// A task with its frozen Tool Benefit Score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedTask {
    pub task: Task,
    pub delta_s: f64,
    pub s_plus: f64,
    pub s_minus: f64,
}

pub const HISTOGRAM_BUCKETS: usize = 16;

/// Bucket counts of width 0.125 over [-1, 1]; +1 lands in the last bucket.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeltaSHistogram {
    pub buckets: [usize; HISTOGRAM_BUCKETS],
}

impl DeltaSHistogram {
    pub fn bucket_index(delta_s: f64) -> usize {
        let idx = ((delta_s + 1.0) / 0.125) as usize;
        idx.min(HISTOGRAM_BUCKETS - 1)
    }

    pub fn total(&self) -> usize {
        self.buckets.iter().sum()
    }

    /// Lower edge of bucket `i`.
    pub fn edge(i: usize) -> f64 {
        -1.0 + 0.125 * i as f64
    }
}

/// Annotates every task with a fixed ΔS; all-or-nothing on solver failure.
pub fn annotate_dataset(
    tasks: &[Task],
    solver: &dyn ReferenceSolver,
    k: usize,
    seed: u64,
) -> Result<(Vec<AnnotatedTask>, DeltaSHistogram), BenefitError> {
    if tasks.is_empty() {
        return Err(BenefitError::EmptyDataset);
    }
    let mut annotated = Vec::with_capacity(tasks.len());
    let mut hist = DeltaSHistogram { buckets: [0; HISTOGRAM_BUCKETS] };
    for task in tasks {
        let est = estimate_delta_s(task, solver, k, seed)?;
        hist.buckets[DeltaSHistogram::bucket_index(est.delta_s)] += 1;
        annotated.push(AnnotatedTask {
            task: task.clone(),
            delta_s: est.delta_s,
            s_plus: est.s_plus,
            s_minus: est.s_minus,
        });
    }
    Ok((annotated, hist))
}
