//! Shared domain vocabulary: tasks, scenes, trajectories, rewards.
//!
//! Everything here is an immutable value object once constructed; instances
//! can be shared or sent freely between concurrent rollout workers.

use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// (row, col) cell coordinate.
pub type Coord = (usize, usize);

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TypeError {
    #[error("grid cells length {got} does not match {rows}x{cols}")]
    BadCellCount { rows: usize, cols: usize, got: usize },
    #[error("grid marks must be two distinct in-bounds coordinates")]
    BadMarks,
    #[error("video frames must be non-empty and share dimensions")]
    BadFrames,
}

/// The six synthetic task templates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    NeedleImage,
    GlobalImage,
    NeedleVideo,
    ClipCount,
    PathImage,
    GlobalVideo,
}

impl TaskKind {
    pub const ALL: [TaskKind; 6] = [
        TaskKind::NeedleImage,
        TaskKind::GlobalImage,
        TaskKind::NeedleVideo,
        TaskKind::ClipCount,
        TaskKind::PathImage,
        TaskKind::GlobalVideo,
    ];

    /// The kind fixes the modality.
    pub fn modality(self) -> Modality {
        match self {
            TaskKind::NeedleImage | TaskKind::GlobalImage | TaskKind::PathImage => Modality::Image,
            TaskKind::NeedleVideo | TaskKind::ClipCount | TaskKind::GlobalVideo => Modality::Video,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Image,
    MultiImage,
    Video,
}

/// A symbolic stand-in for pixels: a rows x cols array of symbol codes,
/// optionally with two marked cells (used by path tasks).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid {
    pub rows: usize,
    pub cols: usize,
    pub cells: Vec<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub marks: Option<(Coord, Coord)>,
}

impl Grid {
    pub fn new(
        rows: usize,
        cols: usize,
        cells: Vec<u8>,
        marks: Option<(Coord, Coord)>,
    ) -> Result<Self, TypeError> {
        if cells.len() != rows * cols {
            return Err(TypeError::BadCellCount { rows, cols, got: cells.len() });
        }
        if let Some((a, b)) = marks {
            let in_bounds = |(r, c): Coord| r < rows && c < cols;
            if a == b || !in_bounds(a) || !in_bounds(b) {
                return Err(TypeError::BadMarks);
            }
        }
        Ok(Grid { rows, cols, cells, marks })
    }

    pub fn filled(rows: usize, cols: usize, symbol: u8) -> Self {
        Grid { rows, cols, cells: alloc::vec![symbol; rows * cols], marks: None }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> u8 {
        self.cells[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, symbol: u8) {
        self.cells[r * self.cols + c] = symbol;
    }
}

/// Scene content: a single grid image, or a video of per-second frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenePayload {
    Grid(Grid),
    Video { frames: Vec<Grid> },
}

impl ScenePayload {
    pub fn video(frames: Vec<Grid>) -> Result<Self, TypeError> {
        let first = frames.first().ok_or(TypeError::BadFrames)?;
        let (r, c) = (first.rows, first.cols);
        if frames.iter().any(|f| f.rows != r || f.cols != c) {
            return Err(TypeError::BadFrames);
        }
        Ok(ScenePayload::Video { frames })
    }
}

/// What the question asks about, in structured form. The display text in
/// [`Task::question`] is rendered from this.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Probe {
    /// Which symbol sits at this cell of the image?
    CellSymbol { at: Coord },
    /// Which symbol is the majority of this quadrant (0=TL, 1=TR, 2=BL, 3=BR)?
    QuadrantMajority { quadrant: usize },
    /// Which symbol sits at this cell of frame `t`?
    FrameCellSymbol { t: usize, at: Coord },
    /// How many frames in seconds `t0..=t1` contain `symbol` anywhere?
    SymbolFrameCount { symbol: u8, t0: usize, t1: usize },
    /// How many cells on the line between the marked points hold `symbol`?
    SymbolPathCount { symbol: u8 },
    /// How many frames does the video contain?
    FrameCount,
}

/// Answer format plus gold answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum AnswerSpec {
    MultipleChoice { options: Vec<String>, gold: String },
    Numeric { gold: f64 },
    Ocr { gold: String },
    FreeForm { gold: String },
}

impl AnswerSpec {
    pub fn gold_text(&self) -> String {
        match self {
            AnswerSpec::MultipleChoice { gold, .. } => gold.clone(),
            AnswerSpec::Numeric { gold } => alloc::format!("{gold}"),
            AnswerSpec::Ocr { gold } => gold.clone(),
            AnswerSpec::FreeForm { gold } => gold.clone(),
        }
    }
}

/// One query over one scene. `tool_required` is generator-known ground
/// truth, hidden from the policy (it never enters the feature vector).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub id: String,
    pub kind: TaskKind,
    pub modality: Modality,
    pub scene: ScenePayload,
    pub question: String,
    pub probe: Probe,
    pub answer_spec: AnswerSpec,
    pub tool_required: bool,
}

/// Inclusive bounding box in cell coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub r0: usize,
    pub c0: usize,
    pub r1: usize,
    pub c1: usize,
}

/// A tool invocation; arguments only, validity is checked at execution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolCall {
    CropImg { bbox: BBox },
    FrameAt { t: usize },
    VideoClip { t0: usize, t1: usize },
    PathTracer { p0: Coord, p1: Coord },
}

/// Visual feedback from the environment. Each variant carries the region it
/// addresses so downstream consistency checks know what has been revealed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Observation {
    /// Initial low-resolution view: dimensions, frame count for videos, and
    /// the four per-quadrant majority symbols (frame 0 for videos).
    Coarse { rows: usize, cols: usize, frame_count: Option<usize>, quadrant_majority: [u8; 4] },
    Crop { bbox: BBox, grid: Grid },
    Frame { t: usize, grid: Grid },
    Clip { t0: usize, t1: usize, frames: Vec<Grid> },
    Trace { cells: Vec<(Coord, u8)> },
    Error { message: String },
}

impl Observation {
    pub fn is_error(&self) -> bool {
        matches!(self, Observation::Error { .. })
    }
}

/// One entry of the thought-action-observation loop. Decision steps
/// (`Action`, `FinalAnswer`) record the full distribution they were drawn
/// from so importance ratios and KL terms can be recomputed afterwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Step {
    Thought { text: String },
    Action { tool_call: ToolCall, step_logprob: f64, step_dist: Vec<f64> },
    Observation { obs: Observation },
    FinalAnswer { text: String, step_logprob: f64, step_dist: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminatedBy {
    Answer,
    TurnLimit,
    LengthLimit,
}

/// A completed rollout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub task_id: String,
    pub steps: Vec<Step>,
    pub final_answer: Option<String>,
    pub terminated_by: TerminatedBy,
}

impl Trajectory {
    /// Number of executed tool calls (Action steps).
    pub fn tool_count(&self) -> usize {
        self.steps.iter().filter(|s| matches!(s, Step::Action { .. })).count()
    }

    /// Total step count across all variants; the response-length metric.
    pub fn length(&self) -> usize {
        self.steps.len()
    }
}

/// Reward components of one rollout. `total = base + alpha * tool` for the
/// alpha recorded alongside in the group result.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub base: f64,
    pub tool: f64,
    pub total: f64,
    pub correctness: f64,
    pub format_ok: bool,
}
