use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{EarError, Result};

/// Which side of an AUC comparison is treated as the subgroup.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AucKind {
    Subgroup,
    Bpsn,
    Bnsp,
}

impl AucKind {
    pub const ALL: [AucKind; 3] = [AucKind::Subgroup, AucKind::Bpsn, AucKind::Bnsp];

    pub fn name(self) -> &'static str {
        match self {
            AucKind::Subgroup => "subgroup",
            AucKind::Bpsn => "bpsn",
            AucKind::Bnsp => "bnsp",
        }
    }
}

/// A model score with its gold label and the identity terms it mentions.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredInstance {
    pub score: f64,
    pub label: u8,
    pub terms: Vec<String>,
}

impl ScoredInstance {
    pub fn new(score: f64, label: u8, terms: Vec<String>) -> Result<Self> {
        if !score.is_finite() || !(0.0..=1.0).contains(&score) {
            return Err(EarError::InvalidInput(format!("score {score} outside [0, 1]")));
        }
        if label > 1 {
            return Err(EarError::InvalidInput(format!("label {label} is not 0 or 1")));
        }
        Ok(Self { score, label, terms })
    }

    pub fn mentions(&self, term: &str) -> bool {
        self.terms.iter().any(|t| t == term)
    }
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half. Computed from midranks with integer tie counts, so
/// the result equals exhaustive pairwise counting exactly.
pub fn auc(positives: &[f64], negatives: &[f64]) -> Result<f64> {
    if positives.is_empty() || negatives.is_empty() {
        return Err(EarError::UndefinedAuc(format!(
            "{} positives and {} negatives",
            positives.len(),
            negatives.len()
        )));
    }
    let mut all: Vec<(f64, bool)> = positives
        .iter()
        .map(|&s| (s, true))
        .chain(negatives.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    // doubled: 2·wins + ties
    let mut doubled: u128 = 0;
    let mut negatives_below: u128 = 0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        let (mut p, mut n) = (0u128, 0u128);
        while j < all.len() && all[j].0.total_cmp(&all[i].0) == Ordering::Equal {
            if all[j].1 {
                p += 1;
            } else {
                n += 1;
            }
            j += 1;
        }
        doubled += 2 * p * negatives_below + p * n;
        negatives_below += n;
        i = j;
    }
    let pairs = 2 * positives.len() as u128 * negatives.len() as u128;
    Ok(doubled as f64 / pairs as f64)
}

fn split_auc<'a>(items: impl Iterator<Item = &'a ScoredInstance>) -> Result<f64> {
    let (mut pos, mut neg) = (Vec::new(), Vec::new());
    for x in items {
        if x.label == 1 {
            pos.push(x.score);
        } else {
            neg.push(x.score);
        }
    }
    auc(&pos, &neg)
}

pub fn roc_auc(instances: &[ScoredInstance]) -> Result<f64> {
    split_auc(instances.iter())
}

/// AUC restricted to instances mentioning `term`.
pub fn subgroup_auc(instances: &[ScoredInstance], term: &str) -> Result<f64> {
    split_auc(instances.iter().filter(|x| x.mentions(term)))
}

/// Hateful background (no mention) against non-hateful subgroup.
pub fn bpsn_auc(instances: &[ScoredInstance], term: &str) -> Result<f64> {
    split_auc(
        instances
            .iter()
            .filter(|x| (x.label == 1 && !x.mentions(term)) || (x.label == 0 && x.mentions(term))),
    )
}

/// Non-hateful background against hateful subgroup.
pub fn bnsp_auc(instances: &[ScoredInstance], term: &str) -> Result<f64> {
    split_auc(
        instances
            .iter()
            .filter(|x| (x.label == 0 && !x.mentions(term)) || (x.label == 1 && x.mentions(term))),
    )
}

pub fn term_auc(kind: AucKind, instances: &[ScoredInstance], term: &str) -> Result<f64> {
    match kind {
        AucKind::Subgroup => subgroup_auc(instances, term),
        AucKind::Bpsn => bpsn_auc(instances, term),
        AucKind::Bnsp => bnsp_auc(instances, term),
    }
}
