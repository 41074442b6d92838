//! Implementations of the pipeline commands, shared by the binary and the
//! integration tests: generate → annotate → sft → train → eval → report.

use std::fmt::Write as _;
use std::path::Path;

use atgrpo_core::benefit::{annotate_dataset, AnnotatedTask, DeltaSHistogram, HISTOGRAM_BUCKETS};
use atgrpo_core::policy::{scripted_expert, sft_fit, Demonstration, PARAM_DIM};
use atgrpo_core::toolenv::{derive_seed, generate_tasks};
use atgrpo_core::trainer::{evaluate, render_metrics, train, EvalReport, MetricsRow};
use atgrpo_core::types::Task;

use crate::checkpoint;
use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::records::{read_annotated, read_records, write_records, TaskRecord};

/// Generates the configured task mix and writes it as line-delimited
/// records. Returns the record count.
pub fn cmd_gen_tasks(cfg: &RunConfig, out: &Path) -> Result<usize> {
    let tasks = generate_tasks(&cfg.gen_spec());
    let records: Vec<TaskRecord> = tasks.into_iter().map(TaskRecord::from).collect();
    write_records(out, &records)?;
    Ok(records.len())
}

/// Annotates every task with its Tool Benefit Score and rewrites the
/// dataset; returns the ΔS histogram for reporting.
pub fn cmd_annotate(cfg: &RunConfig, tasks_path: &Path, out: &Path) -> Result<DeltaSHistogram> {
    let tasks: Vec<Task> = read_records(tasks_path)?.iter().map(TaskRecord::task).collect();
    let (annotated, hist) =
        annotate_dataset(&tasks, &cfg.oracle(), cfg.runs_per_arm, cfg.seed)
            .map_err(|e| CliError::Other(anyhow::anyhow!(e)))?;
    let records: Vec<TaskRecord> = annotated.into_iter().map(TaskRecord::from).collect();
    write_records(out, &records)?;
    Ok(hist)
}

/// Scripted demonstrations for a dataset, seeded per task.
pub fn build_demonstrations(cfg: &RunConfig, tasks: &[Task]) -> Result<Vec<Demonstration>> {
    tasks
        .iter()
        .map(|task| {
            scripted_expert(task, cfg.redundancy_rate, derive_seed(cfg.seed, &task.id, 2, 0))
                .map_err(|e| CliError::Other(anyhow::anyhow!(e)))
        })
        .collect()
}

/// Cold start: fits the policy to scripted demonstrations from zeros and
/// writes the checkpoint. Returns (demo count, redundant demo count).
pub fn cmd_sft(cfg: &RunConfig, tasks_path: &Path, out: &Path) -> Result<(usize, usize)> {
    let tasks: Vec<Task> = read_records(tasks_path)?.iter().map(TaskRecord::task).collect();
    let demos = build_demonstrations(cfg, &tasks)?;
    let theta0 = vec![0.0; PARAM_DIM];
    let theta = sft_fit(
        &demos,
        &tasks,
        &theta0,
        cfg.sft_learning_rate,
        cfg.sft_epochs,
        &cfg.rollout(),
    )
    .map_err(|e| CliError::Other(anyhow::anyhow!(e)))?;
    checkpoint::save(out, &theta)?;
    let redundant = demos.iter().filter(|d| d.redundant_tools).count();
    Ok((demos.len(), redundant))
}

/// RL training from an initial checkpoint over an annotated dataset.
/// Writes the trained checkpoint and, when given, the metrics CSV.
pub fn cmd_train(
    cfg: &RunConfig,
    tasks_path: &Path,
    init: &Path,
    out: &Path,
    metrics: Option<&Path>,
) -> Result<Vec<MetricsRow>> {
    let annotated: Vec<AnnotatedTask> = read_annotated(tasks_path)?;
    let theta0 = checkpoint::load(init)?;
    let output = train(&annotated, &theta0, &cfg.train())
        .map_err(|e| CliError::Other(anyhow::anyhow!(e)))?;
    checkpoint::save(out, &output.theta)?;
    if let Some(metrics_path) = metrics {
        std::fs::write(metrics_path, render_metrics(&output.history))
            .map_err(|e| CliError::Other(e.into()))?;
    }
    Ok(output.history)
}

/// Writes the metrics table (header plus one row per iteration).
pub fn emit_metrics(history: &[MetricsRow], out: &Path) -> Result<()> {
    if history.is_empty() {
        return Err(CliError::Other(anyhow::anyhow!("metrics history is empty")));
    }
    std::fs::write(out, render_metrics(history)).map_err(|e| CliError::Other(e.into()))
}

/// Greedy evaluation of a checkpoint over a dataset.
pub fn cmd_eval(cfg: &RunConfig, tasks_path: &Path, ckpt: &Path) -> Result<EvalReport> {
    let tasks: Vec<Task> = read_records(tasks_path)?.iter().map(TaskRecord::task).collect();
    let theta = checkpoint::load(ckpt)?;
    evaluate(&tasks, &theta, &cfg.rollout(), &cfg.verifier())
        .map_err(|e| CliError::Other(anyhow::anyhow!(e)))
}

pub fn render_eval(report: &EvalReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "accuracy {:.6}", report.accuracy);
    let _ = writeln!(out, "accuracy_required {:.6}", report.accuracy_required);
    let _ = writeln!(out, "accuracy_free {:.6}", report.accuracy_free);
    let _ = writeln!(out, "tool_rate_required {:.6}", report.tool_rate_required);
    let _ = writeln!(out, "tool_rate_free {:.6}", report.tool_rate_free);
    let _ = writeln!(out, "mean_tool_calls {:.6}", report.mean_tool_calls);
    let _ = writeln!(out, "n_required {}", report.n_required);
    let _ = writeln!(out, "n_free {}", report.n_free);
    out
}

pub fn render_histogram(hist: &DeltaSHistogram) -> String {
    let mut out = String::from("delta_s histogram (bucket width 0.125)\n");
    for i in 0..HISTOGRAM_BUCKETS {
        let lo = DeltaSHistogram::edge(i);
        let hi = lo + 0.125;
        let _ = writeln!(out, "[{lo:+.3},{hi:+.3}) {}", hist.buckets[i]);
    }
    out
}

/// Final-eval summary plus the ΔS histogram when the dataset carries
/// annotations.
pub fn cmd_report(cfg: &RunConfig, tasks_path: &Path, ckpt: &Path) -> Result<String> {
    let records = read_records(tasks_path)?;
    let tasks: Vec<Task> = records.iter().map(TaskRecord::task).collect();
    let theta = checkpoint::load(ckpt)?;
    let report = evaluate(&tasks, &theta, &cfg.rollout(), &cfg.verifier())
        .map_err(|e| CliError::Other(anyhow::anyhow!(e)))?;
    let mut out = String::from("final evaluation\n");
    out.push_str(&render_eval(&report));
    if records.iter().all(|r| r.delta_s.is_some()) {
        let mut hist = DeltaSHistogram { buckets: [0; HISTOGRAM_BUCKETS] };
        for r in &records {
            hist.buckets[DeltaSHistogram::bucket_index(r.delta_s.expect("checked"))] += 1;
        }
        out.push_str(&render_histogram(&hist));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> RunConfig {
        RunConfig {
            needle_image: 2,
            global_image: 2,
            path_image: 2,
            iterations: 3,
            batch_tasks: 3,
            group_size: 4,
            sft_epochs: 5,
            seed: 9,
            ..RunConfig::default()
        }
    }

    #[test]
    fn full_pipeline_smoke_and_exit0_semantics() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config();
        let tasks = dir.path().join("tasks.jsonl");
        let annotated = dir.path().join("annotated.jsonl");
        let sft_ckpt = dir.path().join("sft.ckpt");
        let trained = dir.path().join("trained.ckpt");
        let metrics = dir.path().join("metrics.csv");

        assert_eq!(cmd_gen_tasks(&cfg, &tasks).unwrap(), 6);
        let hist = cmd_annotate(&cfg, &tasks, &annotated).unwrap();
        assert_eq!(hist.total(), 6);
        let (n_demos, _) = cmd_sft(&cfg, &tasks, &sft_ckpt).unwrap();
        assert_eq!(n_demos, 6);
        let history = cmd_train(&cfg, &annotated, &sft_ckpt, &trained, Some(&metrics)).unwrap();
        assert_eq!(history.len(), 3);
        let metrics_text = std::fs::read_to_string(&metrics).unwrap();
        assert!(metrics_text.starts_with("iter,mean_total_reward"));
        assert_eq!(metrics_text.lines().count(), 4);
        let report = cmd_eval(&cfg, &tasks, &trained).unwrap();
        assert!((0.0..=1.0).contains(&report.accuracy));
        let text = cmd_report(&cfg, &annotated, &trained).unwrap();
        assert!(text.contains("final evaluation"));
        assert!(text.contains("delta_s histogram"));
    }

    #[test]
    fn zero_counts_give_empty_file() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig::default();
        let tasks = dir.path().join("tasks.jsonl");
        assert_eq!(cmd_gen_tasks(&cfg, &tasks).unwrap(), 0);
        assert_eq!(std::fs::read(&tasks).unwrap(), b"");
    }

    #[test]
    fn gen_tasks_reruns_are_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config();
        let a = dir.path().join("a.jsonl");
        let b = dir.path().join("b.jsonl");
        cmd_gen_tasks(&cfg, &a).unwrap();
        cmd_gen_tasks(&cfg, &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn annotate_is_deterministic_and_sure_oracle_gives_delta_one() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig {
            needle_image: 3,
            oracle_required_with: 1.0,
            oracle_required_without: 0.0,
            ..small_config()
        };
        let tasks = dir.path().join("tasks.jsonl");
        cmd_gen_tasks(&cfg, &tasks).unwrap();
        let a = dir.path().join("a.jsonl");
        let b = dir.path().join("b.jsonl");
        cmd_annotate(&cfg, &tasks, &a).unwrap();
        cmd_annotate(&cfg, &tasks, &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        for rec in read_records(&a).unwrap() {
            if rec.tool_required {
                assert_eq!(rec.delta_s, Some(1.0));
            }
        }
    }

    #[test]
    fn train_zero_iterations_preserves_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig { iterations: 0, ..small_config() };
        let tasks = dir.path().join("tasks.jsonl");
        let annotated = dir.path().join("annotated.jsonl");
        let sft_ckpt = dir.path().join("sft.ckpt");
        let out_ckpt = dir.path().join("out.ckpt");
        cmd_gen_tasks(&cfg, &tasks).unwrap();
        cmd_annotate(&cfg, &tasks, &annotated).unwrap();
        cmd_sft(&cfg, &tasks, &sft_ckpt).unwrap();
        let history = cmd_train(&cfg, &annotated, &sft_ckpt, &out_ckpt, None).unwrap();
        assert!(history.is_empty());
        assert_eq!(
            std::fs::read(&sft_ckpt).unwrap(),
            std::fs::read(&out_ckpt).unwrap()
        );
    }

    #[test]
    fn eval_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config();
        let tasks = dir.path().join("tasks.jsonl");
        let ckpt = dir.path().join("sft.ckpt");
        cmd_gen_tasks(&cfg, &tasks).unwrap();
        cmd_sft(&cfg, &tasks, &ckpt).unwrap();
        let a = cmd_eval(&cfg, &tasks, &ckpt).unwrap();
        let b = cmd_eval(&cfg, &tasks, &ckpt).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn emit_metrics_rejects_empty_history() {
        let dir = tempfile::tempdir().unwrap();
        assert!(emit_metrics(&[], &dir.path().join("m.csv")).is_err());
    }
}
