use std::fmt::Write as _;
use std::path::Path;

use crate::error::{EarError, Result};
use crate::io::write_atomic;

/// One line of a scores file.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub id: String,
    pub score: f64,
    pub label: u8,
}

pub const SCORES_HEADER: &str = "id\tscore\tlabel";

pub fn write_scores(path: &Path, rows: &[ScoreRow]) -> Result<()> {
    let mut out = String::from(SCORES_HEADER);
    out.push('\n');
    for r in rows {
        // `{}` on f64 round-trips exactly.
        let _ = writeln!(out, "{}\t{}\t{}", r.id, r.score, r.label);
    }
    write_atomic(path, out.as_bytes())
}

pub fn read_scores(path: &Path) -> Result<Vec<ScoreRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| EarError::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || (i == 0 && line == SCORES_HEADER) {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(EarError::parse(path, i + 1, format!("expected 3 tab-separated fields, got {}", fields.len())));
        }
        let score: f64 = fields[1]
            .trim()
            .parse()
            .map_err(|_| EarError::parse(path, i + 1, format!("bad score {:?}", fields[1])))?;
        if !(0.0..=1.0).contains(&score) {
            return Err(EarError::parse(path, i + 1, format!("score {score} outside [0, 1]")));
        }
        let label = match fields[2].trim() {
            "0" => 0,
            "1" => 1,
            other => return Err(EarError::parse(path, i + 1, format!("bad label {other:?}"))),
        };
        rows.push(ScoreRow {
            id: fields[0].to_string(),
            score,
            label,
        });
    }
    Ok(rows)
}

/// Identity terms, one per line. Blank lines and `#` comments are skipped;
/// terms are lowercased and deduplicated in order.
pub fn load_terms(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| EarError::io(path, e))?;
    let mut terms: Vec<String> = Vec::new();
    for line in text.lines() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let t = t.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
        if terms.contains(&t) {
            log::warn!("{}: duplicate term {t:?} ignored", path.display());
        } else {
            terms.push(t);
        }
    }
    if terms.is_empty() {
        return Err(EarError::InvalidInput(format!("{}: no terms", path.display())));
    }
    Ok(terms)
}
