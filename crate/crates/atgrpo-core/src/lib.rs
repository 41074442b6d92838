//! Adaptive tool-use reinforcement learning over a simulated multimodal
//! tool environment.
//!
//! The crate is organized around the training pipeline:
//!
//! - [`types`]: tasks, trajectories, and reward records shared by everything.
//! - [`verifiers`]: rule-based verifiable rewards (exact match, numeric,
//!   WER, ROUGE) composing the base reward.
//! - [`toolenv`]: a deterministic grid/video environment with four vision
//!   tools and a seeded task generator.
//! - [`benefit`]: Tool Benefit Score (ΔS) estimation and dataset annotation.
//! - [`atgrpo`]: the AT-GRPO math core — Gaussian-decay tool reward shaping,
//!   group-relative advantages, and the KL-regularized policy objective with
//!   its exact gradient.
//! - [`policy`]: a featurized softmax decision policy with analytic
//!   log-probabilities, a scripted expert, and maximum-likelihood SFT.
//! - [`trainer`]: the RL loop tying rollout collection, rewards, and
//!   updates together, plus greedy evaluation and metrics.
//!
//! The crate is `no_std` (with `alloc`); all file and terminal IO lives in
//! the companion CLI crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod atgrpo;
pub mod benefit;
pub mod num;
pub mod policy;
pub mod toolenv;
pub mod trainer;
pub mod types;
pub mod verifiers;
