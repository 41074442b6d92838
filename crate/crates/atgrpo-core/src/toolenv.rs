//! Deterministic simulated environment: task synthesis, coarse rendering,
//! the four vision tools, and interaction budgets.
//!
//! Scenes are symbolic grids rather than pixel arrays, so every tool is
//! exactly computable and every generated task has an exact gold answer.
//! Environment transitions are pure functions of (state, action); distinct
//! rollouts never share mutable state.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::num::{hash_seed, hash_str, unit_f64};
use crate::types::{
    AnswerSpec, BBox, Coord, Grid, Observation, Probe, ScenePayload, Task, TaskKind,
    ToolCall,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EnvError {
    #[error("bbox ({r0},{c0},{r1},{c1}) invalid for {rows}x{cols} grid")]
    BadBBox { r0: usize, c0: usize, r1: usize, c1: usize, rows: usize, cols: usize },
    #[error("t {t} out of range (frames {frames})")]
    FrameOutOfRange { t: usize, frames: usize },
    #[error("clip ({t0},{t1}) invalid for {frames} frames")]
    BadClip { t0: usize, t1: usize, frames: usize },
    #[error("point ({0},{1}) out of bounds", .at.0, .at.1)]
    PointOutOfBounds { at: Coord },
    #[error("tool {tool} does not apply to this scene")]
    WrongSceneKind { tool: &'static str },
    #[error("tool budget exhausted")]
    BudgetExhausted,
    #[error("environment already done")]
    Done,
    #[error("task is not multiple choice")]
    NotMultipleChoice,
}

/// Per-rollout environment state.
#[derive(Debug, Clone)]
pub struct EnvState {
    pub task: Task,
    pub observations: Vec<Observation>,
    pub tools_used: usize,
    pub n_max: usize,
    pub step_limit: usize,
    pub done: bool,
}

/// Task generator settings. Counts are per task kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenSpec {
    pub needle_image: usize,
    pub global_image: usize,
    pub needle_video: usize,
    pub clip_count: usize,
    pub path_image: usize,
    pub global_video: usize,
    /// Side length of square grids, >= 2.
    pub grid_size: usize,
    /// Frames per video, >= 2.
    pub frames: usize,
    /// Options per multiple-choice question, 2..=8.
    pub option_count: usize,
    /// Number of distinct symbol codes, >= 2.
    pub alphabet: usize,
    pub seed: u64,
}

impl Default for GenSpec {
    fn default() -> Self {
        GenSpec {
            needle_image: 0,
            global_image: 0,
            needle_video: 0,
            clip_count: 0,
            path_image: 0,
            global_video: 0,
            grid_size: 8,
            frames: 8,
            option_count: 4,
            alphabet: 6,
            seed: 0,
        }
    }
}

impl GenSpec {
    pub fn count_for(&self, kind: TaskKind) -> usize {
        match kind {
            TaskKind::NeedleImage => self.needle_image,
            TaskKind::GlobalImage => self.global_image,
            TaskKind::NeedleVideo => self.needle_video,
            TaskKind::ClipCount => self.clip_count,
            TaskKind::PathImage => self.path_image,
            TaskKind::GlobalVideo => self.global_video,
        }
    }

    pub fn total(&self) -> usize {
        TaskKind::ALL.iter().map(|&k| self.count_for(k)).sum()
    }
}

/// Renders a symbol code as a letter ("A", "B", ...).
pub fn symbol_name(code: u8) -> String {
    ((b'A' + code) as char).to_string()
}

const QUADRANT_NAMES: [&str; 4] = ["top-left", "top-right", "bottom-left", "bottom-right"];

/// Inclusive bbox of quadrant `q` (0=TL, 1=TR, 2=BL, 3=BR). Odd dimensions
/// split at the floor midpoint.
pub fn quadrant_bbox(rows: usize, cols: usize, q: usize) -> BBox {
    let (rm, cm) = (rows / 2, cols / 2);
    match q {
        0 => BBox { r0: 0, c0: 0, r1: rm - 1, c1: cm - 1 },
        1 => BBox { r0: 0, c0: cm, r1: rm - 1, c1: cols - 1 },
        2 => BBox { r0: rm, c0: 0, r1: rows - 1, c1: cm - 1 },
        3 => BBox { r0: rm, c0: cm, r1: rows - 1, c1: cols - 1 },
        _ => panic!("quadrant index out of range"),
    }
}

fn quadrant_of(rows: usize, cols: usize, at: Coord) -> usize {
    let (rm, cm) = (rows / 2, cols / 2);
    match (at.0 < rm, at.1 < cm) {
        (true, true) => 0,
        (true, false) => 1,
        (false, true) => 2,
        (false, false) => 3,
    }
}

/// Majority symbol of each quadrant; ties broken by smallest symbol code.
pub fn quadrant_majorities(grid: &Grid) -> [u8; 4] {
    let mut out = [0u8; 4];
    for (q, slot) in out.iter_mut().enumerate() {
        let b = quadrant_bbox(grid.rows, grid.cols, q);
        let mut counts = [0usize; 256];
        for r in b.r0..=b.r1 {
            for c in b.c0..=b.c1 {
                counts[grid.get(r, c) as usize] += 1;
            }
        }
        let mut best = 0usize;
        for s in 1..256 {
            if counts[s] > counts[best] {
                best = s;
            }
        }
        *slot = best as u8;
    }
    out
}

fn coarse_view(scene: &ScenePayload) -> Observation {
    match scene {
        ScenePayload::Grid(g) => Observation::Coarse {
            rows: g.rows,
            cols: g.cols,
            frame_count: None,
            quadrant_majority: quadrant_majorities(g),
        },
        ScenePayload::Video { frames } => Observation::Coarse {
            rows: frames[0].rows,
            cols: frames[0].cols,
            frame_count: Some(frames.len()),
            quadrant_majority: quadrant_majorities(&frames[0]),
        },
    }
}

/// Fresh state for a rollout, holding the coarse initial observation.
pub fn reset(task: &Task, n_max: usize, step_limit: usize) -> EnvState {
    EnvState {
        observations: alloc::vec![coarse_view(&task.scene)],
        task: task.clone(),
        tools_used: 0,
        n_max,
        step_limit,
        done: false,
    }
}

// ---------------------------------------------------------------------------
// The four tools
// ---------------------------------------------------------------------------

/// Copy of the inclusive bbox region.
pub fn crop_img(grid: &Grid, bbox: BBox) -> Result<Grid, EnvError> {
    let BBox { r0, c0, r1, c1 } = bbox;
    if r0 > r1 || c0 > c1 || r1 >= grid.rows || c1 >= grid.cols {
        return Err(EnvError::BadBBox { r0, c0, r1, c1, rows: grid.rows, cols: grid.cols });
    }
    let mut cells = Vec::with_capacity((r1 - r0 + 1) * (c1 - c0 + 1));
    for r in r0..=r1 {
        for c in c0..=c1 {
            cells.push(grid.get(r, c));
        }
    }
    Ok(Grid { rows: r1 - r0 + 1, cols: c1 - c0 + 1, cells, marks: None })
}

pub fn frame_at(frames: &[Grid], t: usize) -> Result<Grid, EnvError> {
    frames.get(t).cloned().ok_or(EnvError::FrameOutOfRange { t, frames: frames.len() })
}

/// Frames t0..=t1 inclusive.
pub fn video_clip(frames: &[Grid], t0: usize, t1: usize) -> Result<Vec<Grid>, EnvError> {
    if t0 > t1 || t1 >= frames.len() {
        return Err(EnvError::BadClip { t0, t1, frames: frames.len() });
    }
    Ok(frames[t0..=t1].to_vec())
}

/// Cells on the Bresenham line from p0 to p1 inclusive, in traversal order.
pub fn path_tracer(grid: &Grid, p0: Coord, p1: Coord) -> Result<Vec<(Coord, u8)>, EnvError> {
    for p in [p0, p1] {
        if p.0 >= grid.rows || p.1 >= grid.cols {
            return Err(EnvError::PointOutOfBounds { at: p });
        }
    }
    Ok(bresenham(p0, p1).into_iter().map(|p| (p, grid.get(p.0, p.1))).collect())
}

/// Integer line trace between two cells, endpoints included.
pub fn bresenham(p0: Coord, p1: Coord) -> Vec<Coord> {
    let (mut r, mut c) = (p0.0 as i64, p0.1 as i64);
    let (r1, c1) = (p1.0 as i64, p1.1 as i64);
    let dr = (r1 - r).abs();
    let dc = (c1 - c).abs();
    let sr = if r < r1 { 1 } else { -1 };
    let sc = if c < c1 { 1 } else { -1 };
    let mut err = dr - dc;
    let mut out = Vec::new();
    loop {
        out.push((r as usize, c as usize));
        if r == r1 && c == c1 {
            break;
        }
        let e2 = 2 * err;
        if e2 > -dc {
            err -= dc;
            r += sr;
        }
        if e2 < dr {
            err += dr;
            c += sc;
        }
    }
    out
}

fn run_tool(task: &Task, call: &ToolCall) -> Result<Observation, EnvError> {
    match (&task.scene, call) {
        (ScenePayload::Grid(g), ToolCall::CropImg { bbox }) => {
            Ok(Observation::Crop { bbox: *bbox, grid: crop_img(g, *bbox)? })
        }
        (ScenePayload::Grid(g), ToolCall::PathTracer { p0, p1 }) => {
            Ok(Observation::Trace { cells: path_tracer(g, *p0, *p1)? })
        }
        (ScenePayload::Video { frames }, ToolCall::FrameAt { t }) => {
            Ok(Observation::Frame { t: *t, grid: frame_at(frames, *t)? })
        }
        (ScenePayload::Video { frames }, ToolCall::VideoClip { t0, t1 }) => {
            Ok(Observation::Clip { t0: *t0, t1: *t1, frames: video_clip(frames, *t0, *t1)? })
        }
        (_, ToolCall::CropImg { .. }) => Err(EnvError::WrongSceneKind { tool: "CropImg" }),
        (_, ToolCall::PathTracer { .. }) => Err(EnvError::WrongSceneKind { tool: "PathTracer" }),
        (_, ToolCall::FrameAt { .. }) => Err(EnvError::WrongSceneKind { tool: "FrameAt" }),
        (_, ToolCall::VideoClip { .. }) => Err(EnvError::WrongSceneKind { tool: "VideoClip" }),
    }
}

/// Executes a tool call, appending the resulting observation to the state.
///
/// Over-budget or invalid calls produce an error observation and do not
/// count against the tool budget; scene content already revealed is never
/// retracted. Answering remains possible after the budget is exhausted.
pub fn execute(state: &mut EnvState, call: &ToolCall) -> Observation {
    let obs = if state.done {
        Observation::Error { message: EnvError::Done.to_string() }
    } else if state.tools_used >= state.n_max {
        Observation::Error { message: EnvError::BudgetExhausted.to_string() }
    } else {
        match run_tool(&state.task, call) {
            Ok(obs) => {
                state.tools_used += 1;
                obs
            }
            Err(e) => Observation::Error { message: e.to_string() },
        }
    };
    state.observations.push(obs.clone());
    obs
}

// ---------------------------------------------------------------------------
// Consistency oracle
// ---------------------------------------------------------------------------

/// Which scene regions the accumulated observations have revealed.
struct Revealed {
    cells: Vec<bool>,
    frames: Vec<bool>,
    coarse: Option<(Option<usize>, [u8; 4])>,
    cols: usize,
}

fn revealed(state: &EnvState) -> Revealed {
    let (rows, cols, nframes) = match &state.task.scene {
        ScenePayload::Grid(g) => (g.rows, g.cols, 0),
        ScenePayload::Video { frames } => (frames[0].rows, frames[0].cols, frames.len()),
    };
    let mut rv = Revealed {
        cells: alloc::vec![false; rows * cols],
        frames: alloc::vec![false; nframes],
        coarse: None,
        cols,
    };
    for obs in &state.observations {
        match obs {
            Observation::Coarse { frame_count, quadrant_majority, .. } => {
                rv.coarse = Some((*frame_count, *quadrant_majority));
            }
            Observation::Crop { bbox, .. } => {
                for r in bbox.r0..=bbox.r1 {
                    for c in bbox.c0..=bbox.c1 {
                        rv.cells[r * cols + c] = true;
                    }
                }
            }
            Observation::Trace { cells } => {
                for ((r, c), _) in cells {
                    rv.cells[r * cols + c] = true;
                }
            }
            Observation::Frame { t, .. } => rv.frames[*t] = true,
            Observation::Clip { t0, t1, .. } => {
                for t in *t0..=*t1 {
                    rv.frames[t] = true;
                }
            }
            Observation::Error { .. } => {}
        }
    }
    rv
}

fn frame_contains(frame: &Grid, symbol: u8) -> bool {
    frame.cells.iter().any(|&s| s == symbol)
}

/// Options not contradicted by any accumulated observation. The gold option
/// is always a member.
pub fn consistent_answers(state: &EnvState) -> Result<Vec<String>, EnvError> {
    let options = match &state.task.answer_spec {
        AnswerSpec::MultipleChoice { options, .. } => options,
        _ => return Err(EnvError::NotMultipleChoice),
    };
    let rv = revealed(state);

    /// What the revealed evidence pins down about the answer.
    enum Constraint {
        Open,
        Exactly(String),
        CountIn { lo: usize, hi: usize },
    }

    let constraint = match (&state.task.probe, &state.task.scene) {
        (Probe::CellSymbol { at }, ScenePayload::Grid(g)) => {
            if rv.cells[at.0 * rv.cols + at.1] {
                Constraint::Exactly(symbol_name(g.get(at.0, at.1)))
            } else {
                Constraint::Open
            }
        }
        (Probe::QuadrantMajority { quadrant }, ScenePayload::Grid(_)) => match rv.coarse {
            Some((_, maj)) => Constraint::Exactly(symbol_name(maj[*quadrant])),
            None => Constraint::Open,
        },
        (Probe::FrameCellSymbol { t, at }, ScenePayload::Video { frames }) => {
            if rv.frames[*t] {
                Constraint::Exactly(symbol_name(frames[*t].get(at.0, at.1)))
            } else {
                Constraint::Open
            }
        }
        (Probe::SymbolFrameCount { symbol, t0, t1 }, ScenePayload::Video { frames }) => {
            let mut known_with = 0usize;
            let mut unknown = 0usize;
            for t in *t0..=*t1 {
                if rv.frames[t] {
                    known_with += usize::from(frame_contains(&frames[t], *symbol));
                } else {
                    unknown += 1;
                }
            }
            Constraint::CountIn { lo: known_with, hi: known_with + unknown }
        }
        (Probe::SymbolPathCount { symbol }, ScenePayload::Grid(g)) => {
            let (p0, p1) = g.marks.expect("path task grid carries marks");
            let mut known_with = 0usize;
            let mut unknown = 0usize;
            for (r, c) in bresenham(p0, p1) {
                if rv.cells[r * rv.cols + c] {
                    known_with += usize::from(g.get(r, c) == *symbol);
                } else {
                    unknown += 1;
                }
            }
            Constraint::CountIn { lo: known_with, hi: known_with + unknown }
        }
        (Probe::FrameCount, ScenePayload::Video { frames }) => {
            match rv.coarse {
                Some((Some(n), _)) => Constraint::Exactly(n.to_string()),
                _ if rv.frames.iter().any(|&f| f) => {
                    // A successful frame access implies count, but the
                    // coarse view always precedes it anyway.
                    Constraint::Exactly(frames.len().to_string())
                }
                _ => Constraint::Open,
            }
        }
        _ => Constraint::Open,
    };

    let keep = |o: &str| match &constraint {
        Constraint::Open => true,
        Constraint::Exactly(v) => o == v,
        Constraint::CountIn { lo, hi } => {
            matches!(o.parse::<usize>(), Ok(m) if m >= *lo && m <= *hi)
        }
    };
    Ok(options.iter().filter(|o| keep(o)).cloned().collect())
}

// ---------------------------------------------------------------------------
// Task generation
// ---------------------------------------------------------------------------

fn rng_unit(rng: &mut ChaCha8Rng) -> f64 {
    unit_f64(rng.next_u64())
}

fn rng_below(rng: &mut ChaCha8Rng, n: usize) -> usize {
    debug_assert!(n > 0);
    // Modulo bias is negligible for the tiny ranges used here.
    (rng.next_u64() % n as u64) as usize
}

fn shuffle<T>(rng: &mut ChaCha8Rng, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        items.swap(i, rng_below(rng, i + 1));
    }
}

/// `count` distinct symbol codes including `gold`, shuffled.
fn symbol_options(rng: &mut ChaCha8Rng, alphabet: usize, gold: u8, count: usize) -> Vec<String> {
    let mut pool: Vec<u8> = (0..alphabet as u8).filter(|&s| s != gold).collect();
    shuffle(rng, &mut pool);
    let mut chosen: Vec<u8> = pool.into_iter().take(count - 1).collect();
    chosen.push(gold);
    shuffle(rng, &mut chosen);
    chosen.into_iter().map(symbol_name).collect()
}

/// `count` distinct values in [lo, hi] including `gold`, shuffled.
fn count_options(
    rng: &mut ChaCha8Rng,
    lo: usize,
    hi: usize,
    gold: usize,
    count: usize,
) -> Vec<String> {
    let mut pool: Vec<usize> = (lo..=hi).filter(|&v| v != gold).collect();
    shuffle(rng, &mut pool);
    let mut chosen: Vec<usize> = pool.into_iter().take(count - 1).collect();
    chosen.push(gold);
    shuffle(rng, &mut chosen);
    chosen.into_iter().map(|v| v.to_string()).collect()
}

/// Quadrant-background grid with sparse noise; each quadrant's majority is
/// guaranteed to remain its background symbol under smallest-code ties.
fn background_grid(rng: &mut ChaCha8Rng, size: usize, alphabet: usize, forbid: Option<u8>) -> Grid {
    let mut bg = [0u8; 4];
    for slot in bg.iter_mut() {
        loop {
            let s = rng_below(rng, alphabet) as u8;
            if Some(s) != forbid {
                *slot = s;
                break;
            }
        }
    }
    let mut grid = Grid::filled(size, size, 0);
    for r in 0..size {
        for c in 0..size {
            grid.set(r, c, bg[quadrant_of(size, size, (r, c))]);
        }
    }
    // Sparse noise, capped well below the majority threshold.
    let per_quadrant_cap = ((size / 2) * (size / 2)).saturating_sub(1) / 3;
    for q in 0..4 {
        let b = quadrant_bbox(size, size, q);
        for _ in 0..per_quadrant_cap.min(2) {
            if rng_unit(rng) < 0.5 {
                let r = b.r0 + rng_below(rng, b.r1 - b.r0 + 1);
                let c = b.c0 + rng_below(rng, b.c1 - b.c0 + 1);
                loop {
                    let s = rng_below(rng, alphabet) as u8;
                    if s != bg[q] && Some(s) != forbid {
                        grid.set(r, c, s);
                        break;
                    }
                }
            }
        }
    }
    debug_assert_eq!(quadrant_majorities(&grid), bg);
    grid
}

fn mc_spec(options: Vec<String>, gold: String) -> AnswerSpec {
    debug_assert!(options.contains(&gold));
    AnswerSpec::MultipleChoice { options, gold }
}

fn make_task(
    id: String,
    kind: TaskKind,
    scene: ScenePayload,
    question: String,
    probe: Probe,
    answer_spec: AnswerSpec,
) -> Task {
    let tool_required = !matches!(kind, TaskKind::GlobalImage | TaskKind::GlobalVideo);
    Task { id, modality: kind.modality(), kind, scene, question, probe, answer_spec, tool_required }
}

fn gen_needle_image(rng: &mut ChaCha8Rng, spec: &GenSpec, id: String) -> Task {
    let g = spec.grid_size;
    let mut grid = background_grid(rng, g, spec.alphabet, None);
    let at: Coord = (rng_below(rng, g), rng_below(rng, g));
    let quad_bg = quadrant_majorities(&grid)[quadrant_of(g, g, at)];
    let needle = loop {
        let s = rng_below(rng, spec.alphabet) as u8;
        if s != quad_bg {
            break s;
        }
    };
    grid.set(at.0, at.1, needle);
    // The needle must not flip its quadrant majority.
    debug_assert_eq!(quadrant_majorities(&grid)[quadrant_of(g, g, at)], quad_bg);
    let options = symbol_options(rng, spec.alphabet, needle, spec.option_count);
    let question = format!("Which symbol is at cell ({}, {})?", at.0, at.1);
    make_task(
        id,
        TaskKind::NeedleImage,
        ScenePayload::Grid(grid),
        question,
        Probe::CellSymbol { at },
        mc_spec(options, symbol_name(needle)),
    )
}

fn gen_global_image(rng: &mut ChaCha8Rng, spec: &GenSpec, id: String) -> Task {
    let grid = background_grid(rng, spec.grid_size, spec.alphabet, None);
    let quadrant = rng_below(rng, 4);
    let gold = quadrant_majorities(&grid)[quadrant];
    let options = symbol_options(rng, spec.alphabet, gold, spec.option_count);
    let question =
        format!("Which symbol is the majority in the {} quadrant?", QUADRANT_NAMES[quadrant]);
    make_task(
        id,
        TaskKind::GlobalImage,
        ScenePayload::Grid(grid),
        question,
        Probe::QuadrantMajority { quadrant },
        mc_spec(options, symbol_name(gold)),
    )
}

/// Start second of frame bucket `b` out of 4 (the FrameAt template targets).
pub fn bucket_start(frames: usize, b: usize) -> usize {
    b * frames / 4
}

fn gen_needle_video(rng: &mut ChaCha8Rng, spec: &GenSpec, id: String) -> Task {
    let g = spec.grid_size;
    let t = bucket_start(spec.frames, rng_below(rng, 4));
    let mut frames: Vec<Grid> =
        (0..spec.frames).map(|_| background_grid(rng, g, spec.alphabet, None)).collect();
    let at: Coord = (rng_below(rng, g), rng_below(rng, g));
    let quad_bg = quadrant_majorities(&frames[t])[quadrant_of(g, g, at)];
    let needle = loop {
        let s = rng_below(rng, spec.alphabet) as u8;
        if s != quad_bg {
            break s;
        }
    };
    frames[t].set(at.0, at.1, needle);
    let options = symbol_options(rng, spec.alphabet, needle, spec.option_count);
    let question =
        format!("Which symbol is at cell ({}, {}) in frame {}?", at.0, at.1, t);
    make_task(
        id,
        TaskKind::NeedleVideo,
        ScenePayload::Video { frames },
        question,
        Probe::FrameCellSymbol { t, at },
        mc_spec(options, symbol_name(needle)),
    )
}

fn gen_clip_count(rng: &mut ChaCha8Rng, spec: &GenSpec, id: String) -> Task {
    let g = spec.grid_size;
    let half = rng_below(rng, 2);
    let (t0, t1) =
        if half == 0 { (0, spec.frames / 2 - 1) } else { (spec.frames / 2, spec.frames - 1) };
    let wlen = t1 - t0 + 1;
    let symbol = rng_below(rng, spec.alphabet) as u8;
    // Backgrounds avoid the counted symbol everywhere so presence is exact.
    let mut frames: Vec<Grid> =
        (0..spec.frames).map(|_| background_grid(rng, g, spec.alphabet, Some(symbol))).collect();
    let gold = rng_below(rng, wlen + 1);
    let mut slots: Vec<usize> = (t0..=t1).collect();
    shuffle(rng, &mut slots);
    for &t in slots.iter().take(gold) {
        let (r, c) = (rng_below(rng, g), rng_below(rng, g));
        // Placement must not flip the frame's quadrant majorities to the
        // counted symbol; one cell among >= 4 cannot.
        frames[t].set(r, c, symbol);
    }
    let options = count_options(rng, 0, wlen, gold, spec.option_count);
    let question = format!(
        "How many frames between seconds {t0} and {t1} contain the symbol {}?",
        symbol_name(symbol)
    );
    make_task(
        id,
        TaskKind::ClipCount,
        ScenePayload::Video { frames },
        question,
        Probe::SymbolFrameCount { symbol, t0, t1 },
        mc_spec(options, gold.to_string()),
    )
}

fn gen_path_image(rng: &mut ChaCha8Rng, spec: &GenSpec, id: String) -> Task {
    let g = spec.grid_size;
    let symbol = rng_below(rng, spec.alphabet) as u8;
    let mut grid = background_grid(rng, g, spec.alphabet, Some(symbol));
    // Endpoints far enough apart that the path can host every option.
    let (p0, p1) = loop {
        let a: Coord = (rng_below(rng, g), rng_below(rng, g));
        let b: Coord = (rng_below(rng, g), rng_below(rng, g));
        let cheb = a.0.abs_diff(b.0).max(a.1.abs_diff(b.1));
        if a != b && cheb + 1 >= spec.option_count {
            break (a, b);
        }
    };
    let path = bresenham(p0, p1);
    let gold = rng_below(rng, path.len() + 1);
    let mut order: Vec<usize> = (0..path.len()).collect();
    shuffle(rng, &mut order);
    for &i in order.iter().take(gold) {
        grid.set(path[i].0, path[i].1, symbol);
    }
    grid.marks = Some((p0, p1));
    let options = count_options(rng, 0, path.len(), gold, spec.option_count);
    let question = format!(
        "How many cells on the line between the marked points contain the symbol {}?",
        symbol_name(symbol)
    );
    make_task(
        id,
        TaskKind::PathImage,
        ScenePayload::Grid(grid),
        question,
        Probe::SymbolPathCount { symbol },
        mc_spec(options, gold.to_string()),
    )
}

fn gen_global_video(rng: &mut ChaCha8Rng, spec: &GenSpec, id: String) -> Task {
    let g = spec.grid_size;
    let frames: Vec<Grid> =
        (0..spec.frames).map(|_| background_grid(rng, g, spec.alphabet, None)).collect();
    let gold = spec.frames;
    let lo = gold.saturating_sub(spec.option_count - 1).max(2);
    let options = count_options(rng, lo, gold + spec.option_count, gold, spec.option_count);
    let question = "How many frames does the video contain?".to_string();
    make_task(
        id,
        TaskKind::GlobalVideo,
        ScenePayload::Video { frames },
        question,
        Probe::FrameCount,
        mc_spec(options, gold.to_string()),
    )
}

/// Deterministic in `spec.seed`: needle/clip/path tasks are built so the
/// coarse view leaves at least two options open, while global tasks are
/// answerable from the coarse view alone.
pub fn generate_tasks(spec: &GenSpec) -> Vec<Task> {
    assert!(spec.grid_size >= 2 && spec.frames >= 2 && spec.alphabet >= 2);
    assert!((2..=8).contains(&spec.option_count));
    assert!(spec.alphabet >= spec.option_count, "alphabet must cover the option count");
    assert!(
        spec.frames / 2 + 1 >= spec.option_count,
        "video half-window must host every count option"
    );
    let mut tasks = Vec::with_capacity(spec.total());
    for (ki, &kind) in TaskKind::ALL.iter().enumerate() {
        for i in 0..spec.count_for(kind) {
            let id = format!("{kind:?}-{i:05}").to_lowercase();
            let mut rng =
                ChaCha8Rng::seed_from_u64(hash_seed(&[spec.seed, ki as u64, i as u64]));
            let task = match kind {
                TaskKind::NeedleImage => gen_needle_image(&mut rng, spec, id),
                TaskKind::GlobalImage => gen_global_image(&mut rng, spec, id),
                TaskKind::NeedleVideo => gen_needle_video(&mut rng, spec, id),
                TaskKind::ClipCount => gen_clip_count(&mut rng, spec, id),
                TaskKind::PathImage => gen_path_image(&mut rng, spec, id),
                TaskKind::GlobalVideo => gen_global_video(&mut rng, spec, id),
            };
            tasks.push(task);
        }
    }
    tasks
}

/// Seed for one solver run during annotation or for one rollout in a group.
pub fn derive_seed(base: u64, task_id: &str, arm: u64, index: u64) -> u64 {
    hash_seed(&[base, hash_str(task_id), arm, index])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Modality;
    use alloc::vec;

    fn grid4() -> Grid {
        // 4x4, cells numbered row-major 0..16 (alphabet ignored here).
        Grid::new(4, 4, (0..16).collect(), None).unwrap()
    }

    #[test]
    fn crop_examples() {
        let g = grid4();
        let full = crop_img(&g, BBox { r0: 0, c0: 0, r1: 3, c1: 3 }).unwrap();
        assert_eq!(full.cells, g.cells);
        let one = crop_img(&g, BBox { r0: 2, c0: 1, r1: 2, c1: 1 }).unwrap();
        assert_eq!(one.cells, vec![9]);
        let sub = crop_img(&g, BBox { r0: 1, c0: 1, r1: 2, c1: 2 }).unwrap();
        assert_eq!(sub.cells, vec![5, 6, 9, 10]);
        let tr = crop_img(&g, BBox { r0: 0, c0: 2, r1: 1, c1: 3 }).unwrap();
        assert_eq!(tr.cells, vec![2, 3, 6, 7]);
        assert!(crop_img(&g, BBox { r0: 2, c0: 0, r1: 1, c1: 0 }).is_err());
        assert!(crop_img(&g, BBox { r0: 0, c0: 0, r1: 4, c1: 0 }).is_err());
    }

    #[test]
    fn frame_and_clip_examples() {
        let frames: Vec<Grid> = (0..8).map(|i| Grid::filled(2, 2, i as u8)).collect();
        assert_eq!(frame_at(&frames, 0).unwrap().cells[0], 0);
        assert_eq!(frame_at(&frames, 7).unwrap().cells[0], 7);
        assert!(frame_at(&frames, 8).is_err());
        assert_eq!(video_clip(&frames, 3, 3).unwrap(), vec![frame_at(&frames, 3).unwrap()]);
        assert_eq!(video_clip(&frames, 0, 7).unwrap().len(), 8);
        assert_eq!(video_clip(&frames, 2, 4).unwrap().len(), 3);
        assert!(video_clip(&frames, 4, 2).is_err());
        assert!(video_clip(&frames, 0, 8).is_err());
    }

    #[test]
    fn path_examples() {
        let g = grid4();
        let single = path_tracer(&g, (1, 1), (1, 1)).unwrap();
        assert_eq!(single, vec![((1, 1), 5)]);
        let row = path_tracer(&g, (0, 0), (0, 3)).unwrap();
        assert_eq!(row.iter().map(|(p, _)| *p).collect::<Vec<_>>(), vec![
            (0, 0),
            (0, 1),
            (0, 2),
            (0, 3)
        ]);
        let diag = path_tracer(&g, (0, 0), (2, 2)).unwrap();
        assert_eq!(diag.iter().map(|(p, _)| *p).collect::<Vec<_>>(), vec![
            (0, 0),
            (1, 1),
            (2, 2)
        ]);
        assert!(path_tracer(&g, (0, 0), (4, 0)).is_err());
    }

    #[test]
    fn bresenham_general_lines_terminate_at_endpoint() {
        let steep = bresenham((0, 0), (1, 3));
        assert_eq!(steep, vec![(0, 0), (0, 1), (1, 2), (1, 3)]);
        let back = bresenham((3, 1), (0, 0));
        assert_eq!(back.first(), Some(&(3, 1)));
        assert_eq!(back.last(), Some(&(0, 0)));
        // Every line visits exactly Chebyshev-distance + 1 cells.
        for (p0, p1) in [((0, 0), (7, 3)), ((2, 6), (5, 0)), ((7, 7), (0, 1)), ((4, 4), (4, 4))] {
            let path = bresenham(p0, p1);
            let cheb = p0.0.abs_diff(p1.0).max(p0.1.abs_diff(p1.1));
            assert_eq!(path.len(), cheb + 1, "{p0:?}->{p1:?}");
            assert_eq!(path[0], p0);
            assert_eq!(*path.last().unwrap(), p1);
        }
    }

    #[test]
    fn majority_tie_breaks_to_smallest_code() {
        // 2x2 quadrant with two symbols tied 2-2.
        let g = Grid::new(4, 4, vec![
            3, 1, 0, 0, //
            1, 3, 0, 0, //
            2, 2, 2, 2, //
            2, 2, 2, 2,
        ], None)
        .unwrap();
        assert_eq!(quadrant_majorities(&g)[0], 1);
    }

    #[test]
    fn reset_coarse_view() {
        let spec = GenSpec { global_image: 1, global_video: 1, ..GenSpec::default() };
        let tasks = generate_tasks(&spec);
        for task in &tasks {
            let st = reset(task, 4, 12);
            assert_eq!(st.observations.len(), 1);
            match (&task.scene, &st.observations[0]) {
                (ScenePayload::Grid(g), Observation::Coarse { rows, frame_count, .. }) => {
                    assert_eq!(*rows, g.rows);
                    assert_eq!(*frame_count, None);
                }
                (ScenePayload::Video { frames }, Observation::Coarse { frame_count, .. }) => {
                    assert_eq!(*frame_count, Some(frames.len()));
                }
                _ => panic!("missing coarse view"),
            }
        }
    }

    #[test]
    fn uniform_scene_coarse_majorities() {
        let task = make_task(
            "u".to_string(),
            TaskKind::GlobalImage,
            ScenePayload::Grid(Grid::filled(8, 8, 0)),
            "q".to_string(),
            Probe::QuadrantMajority { quadrant: 0 },
            mc_spec(vec!["A".to_string(), "B".to_string()], "A".to_string()),
        );
        let st = reset(&task, 4, 12);
        match &st.observations[0] {
            Observation::Coarse { quadrant_majority, .. } => {
                assert_eq!(*quadrant_majority, [0, 0, 0, 0]);
            }
            _ => panic!(),
        }
    }

    #[test]
    fn budget_enforcement() {
        let spec = GenSpec { needle_image: 1, ..GenSpec::default() };
        let task = &generate_tasks(&spec)[0];
        let mut st = reset(task, 1, 100);
        let call = ToolCall::CropImg { bbox: quadrant_bbox(8, 8, 0) };
        let first = execute(&mut st, &call);
        assert!(!first.is_error());
        assert_eq!(st.tools_used, 1);
        let before = st.observations.clone();
        let second = execute(&mut st, &call);
        assert!(matches!(second, Observation::Error { ref message } if message.contains("budget")));
        assert_eq!(st.tools_used, 1);
        // Prior scene content unchanged; only the error was appended.
        assert_eq!(&st.observations[..before.len()], &before[..]);
    }

    #[test]
    fn invalid_args_do_not_consume_budget() {
        let spec = GenSpec { needle_video: 1, ..GenSpec::default() };
        let task = &generate_tasks(&spec)[0];
        let mut st = reset(task, 4, 100);
        let obs = execute(&mut st, &ToolCall::FrameAt { t: 8 });
        assert!(obs.is_error());
        assert_eq!(st.tools_used, 0);
        let obs = execute(&mut st, &ToolCall::CropImg { bbox: quadrant_bbox(8, 8, 0) });
        assert!(obs.is_error()); // wrong scene kind
        assert_eq!(st.tools_used, 0);
    }

    #[test]
    fn generation_determinism_and_counts() {
        let spec = GenSpec {
            needle_image: 3,
            global_image: 2,
            needle_video: 2,
            clip_count: 2,
            path_image: 2,
            global_video: 2,
            seed: 7,
            ..GenSpec::default()
        };
        let a = generate_tasks(&spec);
        let b = generate_tasks(&spec);
        assert_eq!(a, b);
        assert_eq!(a.len(), 13);
        let empty = generate_tasks(&GenSpec::default());
        assert!(empty.is_empty());
        // ids unique
        for (i, t) in a.iter().enumerate() {
            assert!(a.iter().skip(i + 1).all(|u| u.id != t.id));
        }
    }

    #[test]
    fn tool_required_split_matches_ambiguity() {
        let spec = GenSpec { needle_image: 10, global_image: 10, seed: 42, ..GenSpec::default() };
        let tasks = generate_tasks(&spec);
        let required = tasks.iter().filter(|t| t.tool_required).count();
        assert_eq!(required, 10);
        for task in &tasks {
            let st = reset(task, 4, 12);
            let consistent = consistent_answers(&st).unwrap();
            if task.tool_required {
                assert!(consistent.len() >= 2, "needle task resolvable at reset: {}", task.id);
            } else {
                assert_eq!(consistent, vec![task.answer_spec.gold_text()]);
            }
        }
    }

    #[test]
    fn needle_resolves_after_reveal() {
        let spec = GenSpec { needle_image: 5, seed: 3, ..GenSpec::default() };
        for task in generate_tasks(&spec) {
            let at = match task.probe {
                Probe::CellSymbol { at } => at,
                _ => unreachable!(),
            };
            let mut st = reset(&task, 4, 12);
            let q = quadrant_of(8, 8, at);
            let obs = execute(&mut st, &ToolCall::CropImg { bbox: quadrant_bbox(8, 8, q) });
            assert!(!obs.is_error());
            assert_eq!(consistent_answers(&st).unwrap(), vec![task.answer_spec.gold_text()]);
        }
    }

    #[test]
    fn clip_count_resolves_after_window_clip() {
        let spec = GenSpec { clip_count: 5, seed: 9, ..GenSpec::default() };
        for task in generate_tasks(&spec) {
            let (t0, t1) = match task.probe {
                Probe::SymbolFrameCount { t0, t1, .. } => (t0, t1),
                _ => unreachable!(),
            };
            let mut st = reset(&task, 4, 12);
            assert!(consistent_answers(&st).unwrap().len() >= 2);
            execute(&mut st, &ToolCall::VideoClip { t0, t1 });
            assert_eq!(consistent_answers(&st).unwrap(), vec![task.answer_spec.gold_text()]);
        }
    }

    #[test]
    fn path_count_resolves_after_trace() {
        let spec = GenSpec { path_image: 5, seed: 11, ..GenSpec::default() };
        for task in generate_tasks(&spec) {
            let marks = match &task.scene {
                ScenePayload::Grid(g) => g.marks.unwrap(),
                _ => unreachable!(),
            };
            let mut st = reset(&task, 4, 12);
            assert!(consistent_answers(&st).unwrap().len() >= 2);
            execute(&mut st, &ToolCall::PathTracer { p0: marks.0, p1: marks.1 });
            assert_eq!(consistent_answers(&st).unwrap(), vec![task.answer_spec.gold_text()]);
        }
    }

    #[test]
    fn gold_always_consistent_under_random_tools() {
        let spec = GenSpec {
            needle_image: 2,
            global_image: 2,
            needle_video: 2,
            clip_count: 2,
            path_image: 2,
            global_video: 2,
            seed: 123,
            ..GenSpec::default()
        };
        for task in generate_tasks(&spec) {
            let mut st = reset(&task, 4, 100);
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            for _ in 0..6 {
                let call = match task.modality {
                    Modality::Video => match rng_below(&mut rng, 2) {
                        0 => ToolCall::FrameAt { t: rng_below(&mut rng, 8) },
                        _ => {
                            let t0 = rng_below(&mut rng, 8);
                            ToolCall::VideoClip { t0, t1: (t0 + rng_below(&mut rng, 3)).min(7) }
                        }
                    },
                    _ => ToolCall::CropImg { bbox: quadrant_bbox(8, 8, rng_below(&mut rng, 4)) },
                };
                execute(&mut st, &call);
                let consistent = consistent_answers(&st).unwrap();
                assert!(consistent.contains(&task.answer_spec.gold_text()));
            }
        }
    }

    #[test]
    fn determinism_of_observation_sequences() {
        let spec = GenSpec { needle_video: 1, seed: 5, ..GenSpec::default() };
        let task = &generate_tasks(&spec)[0];
        let calls = [
            ToolCall::FrameAt { t: 2 },
            ToolCall::VideoClip { t0: 0, t1: 3 },
            ToolCall::FrameAt { t: 9 },
        ];
        let run = |task: &Task| {
            let mut st = reset(task, 4, 100);
            calls.iter().map(|c| execute(&mut st, c)).collect::<Vec<_>>()
        };
        assert_eq!(run(task), run(task));
    }
}
