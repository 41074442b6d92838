//! Rule-based verifiable rewards for the four answer types, plus format
//! checking. All scoring functions are pure.

use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{AnswerSpec, RewardBreakdown, Step, Task, TerminatedBy, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifierConfig {
    /// Relative tolerance for numeric matching. 0 means strict equality.
    pub numeric_rel_tol: f64,
    /// Weight of the structural format indicator in the base reward.
    pub format_weight: f64,
    /// Clamp the OCR reward at 0 (WER can exceed 1).
    pub wer_clamp: bool,
}

impl Default for VerifierConfig {
    fn default() -> Self {
        VerifierConfig { numeric_rel_tol: 1e-6, format_weight: 0.1, wer_clamp: true }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum VerifierError {
    #[error("answer spec is not {expected}")]
    WrongSpecType { expected: &'static str },
    #[error("reference has no tokens; WER denominator undefined")]
    EmptyReference,
}

/// Trim, case-fold, and strip surrounding punctuation/parentheses.
fn normalize(s: &str) -> String {
    s.trim()
        .trim_matches(|c: char| c.is_ascii_punctuation() || c.is_whitespace())
        .to_lowercase()
}

fn tokens(s: &str) -> Vec<&str> {
    s.split_whitespace().collect()
}

/// Exact match after normalization: 1 or 0.
pub fn verify_multiple_choice(pred: &str, spec: &AnswerSpec) -> Result<f64, VerifierError> {
    let gold = match spec {
        AnswerSpec::MultipleChoice { gold, .. } => gold,
        _ => return Err(VerifierError::WrongSpecType { expected: "multiple choice" }),
    };
    Ok(if normalize(pred) == normalize(gold) { 1.0 } else { 0.0 })
}

/// Scans `s` for maximal number literals (optional sign, optional decimal
/// point) and returns the last one.
fn last_number(s: &str) -> Option<f64> {
    let bytes = s.as_bytes();
    let mut best: Option<f64> = None;
    let mut i = 0;
    while i < bytes.len() {
        let start = i;
        let mut j = i;
        if bytes[j] == b'+' || bytes[j] == b'-' {
            j += 1;
        }
        let digits_begin = j;
        while j < bytes.len() && bytes[j].is_ascii_digit() {
            j += 1;
        }
        let int_digits = j - digits_begin;
        let mut frac_digits = 0;
        if j < bytes.len() && bytes[j] == b'.' {
            let k = j + 1;
            let mut m = k;
            while m < bytes.len() && bytes[m].is_ascii_digit() {
                m += 1;
            }
            frac_digits = m - k;
            if frac_digits > 0 {
                j = m;
            }
        }
        if int_digits + frac_digits > 0 {
            if let Ok(v) = s[start..j].parse::<f64>() {
                best = Some(v);
            }
            i = j;
        } else {
            i = start + 1;
        }
    }
    best
}

/// 1 iff the last number token in `pred` matches the gold value within
/// relative tolerance; unparseable predictions score 0.
pub fn verify_numeric(
    pred: &str,
    spec: &AnswerSpec,
    cfg: &VerifierConfig,
) -> Result<f64, VerifierError> {
    let gold = match spec {
        AnswerSpec::Numeric { gold } => *gold,
        _ => return Err(VerifierError::WrongSpecType { expected: "numeric" }),
    };
    let Some(x) = last_number(pred) else {
        return Ok(0.0);
    };
    let tol = cfg.numeric_rel_tol * crate::num::abs(gold).max(1.0);
    Ok(if crate::num::abs(x - gold) <= tol { 1.0 } else { 0.0 })
}

/// Token-level Levenshtein distance divided by reference token count.
pub fn word_error_rate(hyp: &str, reference: &str) -> Result<f64, VerifierError> {
    let h = tokens(hyp);
    let r = tokens(reference);
    if r.is_empty() {
        return Err(VerifierError::EmptyReference);
    }
    Ok(levenshtein(&h, &r) as f64 / r.len() as f64)
}

/// Edit distance with unit substitution/insertion/deletion costs,
/// single-row DP.
fn levenshtein(a: &[&str], b: &[&str]) -> usize {
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, &ta) in a.iter().enumerate() {
        let mut prev = row[0];
        row[0] = i + 1;
        for (j, &tb) in b.iter().enumerate() {
            let sub = prev + usize::from(ta != tb);
            prev = row[j + 1];
            row[j + 1] = sub.min(prev + 1).min(row[j] + 1);
        }
    }
    row[b.len()]
}

/// OCR reward: `max(0, 1 - WER)` when clamping is enabled.
pub fn verify_ocr(
    hyp: &str,
    spec: &AnswerSpec,
    cfg: &VerifierConfig,
) -> Result<f64, VerifierError> {
    let gold = match spec {
        AnswerSpec::Ocr { gold } => gold,
        _ => return Err(VerifierError::WrongSpecType { expected: "ocr" }),
    };
    let wer = word_error_rate(hyp, gold)?;
    let score = 1.0 - wer;
    Ok(if cfg.wer_clamp { score.max(0.0) } else { score })
}

fn ngram_counts<'a>(toks: &'a [&'a str], n: usize) -> Vec<(&'a [&'a str], usize)> {
    // Counts without hashing: grams of short token slices, linear scan.
    let mut out: Vec<(&[&str], usize)> = Vec::new();
    if toks.len() < n {
        return out;
    }
    for g in toks.windows(n) {
        match out.iter_mut().find(|(k, _)| *k == g) {
            Some((_, c)) => *c += 1,
            None => out.push((g, 1)),
        }
    }
    out
}

fn f1(matched: f64, hyp_total: f64, ref_total: f64) -> f64 {
    if matched == 0.0 {
        return 0.0;
    }
    let p = matched / hyp_total;
    let r = matched / ref_total;
    2.0 * p * r / (p + r)
}

/// F1 of clipped n-gram overlap. `None` when the reference has no n-grams
/// of order `n` (the undefined sentinel, excluded from free-form averaging).
pub fn rouge_n(hyp: &str, reference: &str, n: usize) -> Option<f64> {
    assert!(n >= 1, "n-gram order must be >= 1");
    let h = tokens(hyp);
    let r = tokens(reference);
    if r.len() < n {
        return None;
    }
    if h.len() < n {
        return Some(0.0);
    }
    let hc = ngram_counts(&h, n);
    let rc = ngram_counts(&r, n);
    let mut matched = 0usize;
    for (g, ch) in &hc {
        if let Some((_, cr)) = rc.iter().find(|(k, _)| k == g) {
            matched += (*ch).min(*cr);
        }
    }
    Some(f1(matched as f64, (h.len() - n + 1) as f64, (r.len() - n + 1) as f64))
}

/// F1 from longest-common-subsequence length over tokens. `None` when both
/// sides are empty.
pub fn rouge_l(hyp: &str, reference: &str) -> Option<f64> {
    let h = tokens(hyp);
    let r = tokens(reference);
    if h.is_empty() && r.is_empty() {
        return None;
    }
    if h.is_empty() || r.is_empty() {
        return Some(0.0);
    }
    let lcs = lcs_len(&h, &r);
    Some(f1(lcs as f64, h.len() as f64, r.len() as f64))
}

fn lcs_len(a: &[&str], b: &[&str]) -> usize {
    let mut row = alloc::vec![0usize; b.len() + 1];
    for &ta in a {
        let mut prev = 0;
        for (j, &tb) in b.iter().enumerate() {
            let cur = row[j + 1];
            row[j + 1] = if ta == tb { prev + 1 } else { row[j + 1].max(row[j]) };
            prev = cur;
        }
    }
    row[b.len()]
}

/// Free-form score with the count of components that were defined.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FreeformScore {
    pub value: f64,
    /// How many of ROUGE-1/2/L were defined; 0 means the score defaulted
    /// to 0 and callers may want to warn.
    pub components: usize,
}

/// Arithmetic mean of ROUGE-1, ROUGE-2, and ROUGE-L, excluding undefined
/// components.
pub fn verify_freeform(hyp: &str, spec: &AnswerSpec) -> Result<FreeformScore, VerifierError> {
    let gold = match spec {
        AnswerSpec::FreeForm { gold } => gold,
        _ => return Err(VerifierError::WrongSpecType { expected: "free form" }),
    };
    let parts = [rouge_n(hyp, gold, 1), rouge_n(hyp, gold, 2), rouge_l(hyp, gold)];
    let defined: Vec<f64> = parts.iter().filter_map(|p| *p).collect();
    if defined.is_empty() {
        return Ok(FreeformScore { value: 0.0, components: 0 });
    }
    Ok(FreeformScore {
        value: defined.iter().sum::<f64>() / defined.len() as f64,
        components: defined.len(),
    })
}

/// Structural well-formedness: every Action immediately followed by an
/// Observation, at most one FinalAnswer and only in last position, and the
/// trajectory terminated by answering.
pub fn check_format(traj: &Trajectory) -> bool {
    if traj.terminated_by != TerminatedBy::Answer {
        return false;
    }
    let n = traj.steps.len();
    for (i, step) in traj.steps.iter().enumerate() {
        match step {
            Step::Action { .. } => {
                if !matches!(traj.steps.get(i + 1), Some(Step::Observation { .. })) {
                    return false;
                }
            }
            Step::FinalAnswer { .. } => {
                if i + 1 != n {
                    return false;
                }
            }
            _ => {}
        }
    }
    matches!(traj.steps.last(), Some(Step::FinalAnswer { .. }))
}

/// Correctness of a final answer under the task's answer spec.
pub fn correctness(
    answer: &str,
    spec: &AnswerSpec,
    cfg: &VerifierConfig,
) -> Result<f64, VerifierError> {
    match spec {
        AnswerSpec::MultipleChoice { .. } => verify_multiple_choice(answer, spec),
        AnswerSpec::Numeric { .. } => verify_numeric(answer, spec, cfg),
        AnswerSpec::Ocr { .. } => verify_ocr(answer, spec, cfg),
        AnswerSpec::FreeForm { .. } => verify_freeform(answer, spec).map(|s| s.value),
    }
}

/// Base reward R^o = correctness + format_weight * [well-formed]. The tool
/// and total fields are filled in later by the trainer.
pub fn base_reward(traj: &Trajectory, task: &Task, cfg: &VerifierConfig) -> RewardBreakdown {
    debug_assert_eq!(traj.task_id, task.id);
    let correct = match &traj.final_answer {
        Some(ans) => correctness(ans, &task.answer_spec, cfg).unwrap_or(0.0),
        None => 0.0,
    };
    let format_ok = check_format(traj);
    let base = correct + if format_ok { cfg.format_weight } else { 0.0 };
    RewardBreakdown { base, tool: 0.0, total: base, correctness: correct, format_ok }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    fn mc(gold: &str) -> AnswerSpec {
        AnswerSpec::MultipleChoice {
            options: vec!["A".to_string(), "B".to_string()],
            gold: gold.to_string(),
        }
    }

    #[test]
    fn multiple_choice_normalization() {
        let spec = mc("B");
        assert_eq!(verify_multiple_choice("b", &spec).unwrap(), 1.0);
        assert_eq!(verify_multiple_choice("(B)", &spec).unwrap(), 1.0);
        assert_eq!(verify_multiple_choice("A", &spec).unwrap(), 0.0);
        assert!(verify_multiple_choice("B", &AnswerSpec::Numeric { gold: 1.0 }).is_err());
    }

    #[test]
    fn numeric_tolerance() {
        let cfg = VerifierConfig::default();
        assert_eq!(verify_numeric("42", &AnswerSpec::Numeric { gold: 42.0 }, &cfg).unwrap(), 1.0);
        let spec = AnswerSpec::Numeric { gold: 3.14159 };
        assert_eq!(verify_numeric("The answer is 3.14", &spec, &cfg).unwrap(), 0.0);
        let loose = VerifierConfig { numeric_rel_tol: 1e-2, ..cfg };
        assert_eq!(verify_numeric("The answer is 3.14", &spec, &loose).unwrap(), 1.0);
        assert_eq!(verify_numeric("no numbers here", &spec, &cfg).unwrap(), 0.0);
        // last number wins, signs parse
        assert_eq!(
            verify_numeric("maybe 7, but -2.5", &AnswerSpec::Numeric { gold: -2.5 }, &cfg)
                .unwrap(),
            1.0
        );
    }

    #[test]
    fn wer_examples() {
        assert_eq!(word_error_rate("a b c", "a b c").unwrap(), 0.0);
        assert!((word_error_rate("a x c", "a b c").unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(word_error_rate("", "a b c").unwrap(), 1.0);
        assert_eq!(word_error_rate("a", ""), Err(VerifierError::EmptyReference));
    }

    #[test]
    fn ocr_examples() {
        let cfg = VerifierConfig::default();
        let spec = AnswerSpec::Ocr { gold: "a b c".to_string() };
        assert_eq!(verify_ocr("a b c", &spec, &cfg).unwrap(), 1.0);
        assert!((verify_ocr("a x c", &spec, &cfg).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        // WER 2.0 clamps to 0
        let spec1 = AnswerSpec::Ocr { gold: "a".to_string() };
        assert_eq!(verify_ocr("x y", &spec1, &cfg).unwrap(), 0.0);
    }

    #[test]
    fn rouge_examples() {
        assert_eq!(rouge_n("the cat sat", "the cat sat", 1), Some(1.0));
        assert_eq!(rouge_n("the cat sat", "the cat sat", 2), Some(1.0));
        let r1 = rouge_n("the cat", "the cat sat", 1).unwrap();
        assert!((r1 - 0.8).abs() < 1e-12);
        let r2 = rouge_n("the cat", "the cat sat", 2).unwrap();
        assert!((r2 - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(rouge_n("a b", "a", 2), None); // ref too short
        let rl = rouge_l("the cat", "the cat sat").unwrap();
        assert!((rl - 0.8).abs() < 1e-12);
        assert_eq!(rouge_l("x y", "a b"), Some(0.0));
        assert_eq!(rouge_l("", ""), None);
    }

    #[test]
    fn freeform_examples() {
        let spec = AnswerSpec::FreeForm { gold: "the cat sat".to_string() };
        assert_eq!(verify_freeform("the cat sat", &spec).unwrap().value, 1.0);
        let s = verify_freeform("the cat", &spec).unwrap();
        let expect = (0.8 + 2.0 / 3.0 + 0.8) / 3.0;
        assert!((s.value - expect).abs() < 1e-12);
        assert_eq!(s.components, 3);
        // single-token gold: ROUGE-2 excluded
        let single = AnswerSpec::FreeForm { gold: "cat".to_string() };
        let s = verify_freeform("cat", &single).unwrap();
        assert_eq!(s.value, 1.0);
        assert_eq!(s.components, 2);
        // everything undefined: empty gold and hyp
        let empty = AnswerSpec::FreeForm { gold: "".to_string() };
        let s = verify_freeform("", &empty).unwrap();
        assert_eq!(s.value, 0.0);
        assert_eq!(s.components, 0);
    }

    use crate::types::{Observation, ToolCall};

    fn answered(steps: Vec<Step>, ans: Option<&str>, by: TerminatedBy) -> Trajectory {
        Trajectory {
            task_id: "t".to_string(),
            steps,
            final_answer: ans.map(|s| s.to_string()),
            terminated_by: by,
        }
    }

    fn th() -> Step {
        Step::Thought { text: "t".to_string() }
    }
    fn act() -> Step {
        Step::Action {
            tool_call: ToolCall::FrameAt { t: 0 },
            step_logprob: 0.0,
            step_dist: vec![1.0],
        }
    }
    fn ob() -> Step {
        Step::Observation { obs: Observation::Error { message: "m".to_string() } }
    }
    fn fin() -> Step {
        Step::FinalAnswer { text: "A".to_string(), step_logprob: 0.0, step_dist: vec![1.0] }
    }

    #[test]
    fn format_checks() {
        assert!(check_format(&answered(
            vec![th(), act(), ob(), fin()],
            Some("A"),
            TerminatedBy::Answer
        )));
        assert!(!check_format(&answered(vec![th()], None, TerminatedBy::TurnLimit)));
        // action without observation
        assert!(!check_format(&answered(
            vec![th(), act(), fin()],
            Some("A"),
            TerminatedBy::Answer
        )));
    }

    #[test]
    fn base_reward_examples() {
        let cfg = VerifierConfig::default();
        let task = Task {
            id: "t".to_string(),
            kind: crate::types::TaskKind::GlobalImage,
            modality: crate::types::Modality::Image,
            scene: crate::types::ScenePayload::Grid(crate::types::Grid::filled(2, 2, 0)),
            question: "q".to_string(),
            probe: crate::types::Probe::QuadrantMajority { quadrant: 0 },
            answer_spec: mc("A"),
            tool_required: false,
        };
        let good = answered(vec![th(), fin()], Some("A"), TerminatedBy::Answer);
        let rb = base_reward(&good, &task, &cfg);
        assert!((rb.base - 1.1).abs() < 1e-12);
        assert!(rb.format_ok);
        let wrong = answered(vec![th(), fin()], Some("B"), TerminatedBy::Answer);
        assert!((base_reward(&wrong, &task, &cfg).base - 0.1).abs() < 1e-12);
        let truncated = answered(vec![th()], None, TerminatedBy::LengthLimit);
        assert_eq!(base_reward(&truncated, &task, &cfg).base, 0.0);
    }
}
