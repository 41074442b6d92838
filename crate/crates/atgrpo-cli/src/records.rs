//! Line-delimited task records (UTF-8, one JSON object per line).
//!
//! The same record type serves plain and annotated datasets: annotation
//! fills the three optional benefit fields and leaves everything else
//! untouched, so a dataset diffs cleanly before and after.

use std::io::Write;
use std::path::Path;

use atgrpo_core::benefit::AnnotatedTask;
use atgrpo_core::types::{AnswerSpec, Modality, Probe, ScenePayload, Task, TaskKind};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskRecord {
    pub id: String,
    pub kind: TaskKind,
    pub modality: Modality,
    pub scene: ScenePayload,
    pub question: String,
    pub probe: Probe,
    pub answer_spec: AnswerSpec,
    pub tool_required: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_plus: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_minus: Option<f64>,
}

impl From<Task> for TaskRecord {
    fn from(task: Task) -> Self {
        TaskRecord {
            id: task.id,
            kind: task.kind,
            modality: task.modality,
            scene: task.scene,
            question: task.question,
            probe: task.probe,
            answer_spec: task.answer_spec,
            tool_required: task.tool_required,
            delta_s: None,
            s_plus: None,
            s_minus: None,
        }
    }
}

impl From<AnnotatedTask> for TaskRecord {
    fn from(a: AnnotatedTask) -> Self {
        let mut rec = TaskRecord::from(a.task);
        rec.delta_s = Some(a.delta_s);
        rec.s_plus = Some(a.s_plus);
        rec.s_minus = Some(a.s_minus);
        rec
    }
}

impl TaskRecord {
    pub fn task(&self) -> Task {
        Task {
            id: self.id.clone(),
            kind: self.kind,
            modality: self.modality,
            scene: self.scene.clone(),
            question: self.question.clone(),
            probe: self.probe.clone(),
            answer_spec: self.answer_spec.clone(),
            tool_required: self.tool_required,
        }
    }

    /// Fails when the record lacks benefit annotations.
    pub fn annotated(&self) -> Option<AnnotatedTask> {
        Some(AnnotatedTask {
            task: self.task(),
            delta_s: self.delta_s?,
            s_plus: self.s_plus?,
            s_minus: self.s_minus?,
        })
    }
}

pub fn write_records(path: &Path, records: &[TaskRecord]) -> Result<()> {
    let mut out = Vec::new();
    for rec in records {
        serde_json::to_writer(&mut out, rec).map_err(|e| CliError::Other(e.into()))?;
        out.push(b'\n');
    }
    let mut file = std::fs::File::create(path).map_err(|e| CliError::Other(e.into()))?;
    file.write_all(&out).map_err(|e| CliError::Other(e.into()))?;
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<TaskRecord>> {
    let text =
        std::fs::read_to_string(path).map_err(|_| CliError::MissingFile(path.to_path_buf()))?;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: TaskRecord = serde_json::from_str(line).map_err(|e| CliError::Record {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        records.push(rec);
    }
    Ok(records)
}

/// All records must be annotated; reports the first line that is not.
pub fn read_annotated(path: &Path) -> Result<Vec<AnnotatedTask>> {
    let records = read_records(path)?;
    records
        .iter()
        .enumerate()
        .map(|(i, rec)| {
            rec.annotated().ok_or_else(|| CliError::Record {
                path: path.to_path_buf(),
                line: i + 1,
                message: format!("task {} lacks delta_s annotations", rec.id),
            })
        })
        .collect()
}
