//! Plain-text policy checkpoints.
//!
//! Format: a header line `schema <version>` followed by one
//! `<block_name> <feature_index> <value>` line per parameter, in block
//! order. Values use Rust's shortest round-trip float formatting, so a
//! load/save cycle is byte-identical. Loading refuses any schema version
//! other than the current one.

use std::fmt::Write as _;
use std::path::Path;

use atgrpo_core::policy::{BLOCK_NAMES, FEATURE_SCHEMA_VERSION, N_FEATURES, PARAM_DIM};

use crate::error::{CliError, Result};

pub fn render(theta: &[f64]) -> Result<String> {
    if theta.len() != PARAM_DIM {
        return Err(CliError::Other(anyhow::anyhow!(
            "parameter vector length {} does not match schema dimension {PARAM_DIM}",
            theta.len()
        )));
    }
    let mut out = String::new();
    writeln!(out, "schema {FEATURE_SCHEMA_VERSION}").expect("string write");
    for (b, name) in BLOCK_NAMES.iter().enumerate() {
        for i in 0..N_FEATURES {
            writeln!(out, "{name} {i} {}", theta[b * N_FEATURES + i]).expect("string write");
        }
    }
    Ok(out)
}

pub fn save(path: &Path, theta: &[f64]) -> Result<()> {
    std::fs::write(path, render(theta)?).map_err(|e| CliError::Other(e.into()))
}

pub fn load(path: &Path) -> Result<Vec<f64>> {
    let text =
        std::fs::read_to_string(path).map_err(|_| CliError::MissingFile(path.to_path_buf()))?;
    parse(&text, path)
}

fn parse(text: &str, path: &Path) -> Result<Vec<f64>> {
    let record_err = |line: usize, message: String| CliError::Record {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| record_err(1, "empty checkpoint".into()))?;
    let version = header
        .strip_prefix("schema ")
        .ok_or_else(|| record_err(1, format!("expected 'schema <version>', got {header:?}")))?;
    if version.trim() != FEATURE_SCHEMA_VERSION.to_string() {
        return Err(CliError::SchemaMismatch {
            path: path.to_path_buf(),
            found: version.trim().to_string(),
            expected: FEATURE_SCHEMA_VERSION,
        });
    }
    let mut theta = vec![0.0f64; PARAM_DIM];
    let mut seen = vec![false; PARAM_DIM];
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let mut parts = line.split_whitespace();
        let (name, fidx, value) = match (parts.next(), parts.next(), parts.next(), parts.next()) {
            (Some(n), Some(i), Some(v), None) => (n, i, v),
            _ => {
                return Err(record_err(
                    lineno,
                    "expected '<block_name> <index> <value>'".into(),
                ))
            }
        };
        let block = BLOCK_NAMES
            .iter()
            .position(|&b| b == name)
            .ok_or_else(|| record_err(lineno, format!("unknown block {name:?}")))?;
        let fidx: usize = fidx
            .parse()
            .map_err(|_| record_err(lineno, format!("bad feature index {fidx:?}")))?;
        if fidx >= N_FEATURES {
            return Err(record_err(lineno, format!("feature index {fidx} out of range")));
        }
        let value: f64 = value
            .parse()
            .map_err(|_| record_err(lineno, format!("bad value {value:?}")))?;
        if !value.is_finite() {
            return Err(record_err(lineno, format!("non-finite value {value}")));
        }
        let flat = block * N_FEATURES + fidx;
        if seen[flat] {
            return Err(record_err(lineno, format!("duplicate entry {name} {fidx}")));
        }
        seen[flat] = true;
        theta[flat] = value;
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(record_err(
            text.lines().count(),
            format!(
                "missing entry {} {}",
                BLOCK_NAMES[missing / N_FEATURES],
                missing % N_FEATURES
            ),
        ));
    }
    Ok(theta)
}
