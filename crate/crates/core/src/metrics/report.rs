use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::auc::{roc_auc, term_auc, AucKind, ScoredInstance};
use super::f1::f1_scores;
use crate::error::{EarError, Result};
use crate::text::split_words;

/// Identity terms mentioned in `text`: case-insensitive whole-token
/// matches, multi-word terms as contiguous token runs. Returned in the
/// order of `terms`.
pub fn term_memberships(text: &str, terms: &[String]) -> Vec<String> {
    let words = split_words(text);
    terms
        .iter()
        .filter(|term| {
            let pattern = split_words(term);
            !pattern.is_empty() && words.windows(pattern.len()).any(|w| w == pattern.as_slice())
        })
        .cloned()
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermAucs {
    pub term: String,
    /// Instances mentioning the term.
    pub n: usize,
    pub auc_subgroup: Option<f64>,
    pub auc_bpsn: Option<f64>,
    pub auc_bnsp: Option<f64>,
}

impl TermAucs {
    pub fn get(&self, kind: AucKind) -> Option<f64> {
        match kind {
            AucKind::Subgroup => self.auc_subgroup,
            AucKind::Bpsn => self.auc_bpsn,
            AucKind::Bnsp => self.auc_bnsp,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UndefinedAuc {
    pub term: String,
    pub metric: AucKind,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub instances: usize,
    pub roc_auc: Option<f64>,
    pub f1_weighted: f64,
    pub f1_hate: f64,
    /// Unweighted means over the terms where each AUC is defined.
    pub mean_auc_subgroup: Option<f64>,
    pub mean_auc_bpsn: Option<f64>,
    pub mean_auc_bnsp: Option<f64>,
    pub terms: Vec<TermAucs>,
    /// Term/metric pairs left out of the means.
    pub undefined: Vec<UndefinedAuc>,
}

impl BiasReport {
    pub fn mean(&self, kind: AucKind) -> Option<f64> {
        match kind {
            AucKind::Subgroup => self.mean_auc_subgroup,
            AucKind::Bpsn => self.mean_auc_bpsn,
            AucKind::Bnsp => self.mean_auc_bnsp,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// `term,auc_subgroup,auc_bpsn,auc_bnsp,n`; undefined values are empty.
    pub fn to_csv(&self) -> String {
        let cell = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        let mut out = String::from("term,auc_subgroup,auc_bpsn,auc_bnsp,n\n");
        for t in &self.terms {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                csv_field(&t.term),
                cell(t.auc_subgroup),
                cell(t.auc_bpsn),
                cell(t.auc_bnsp),
                t.n
            );
        }
        out
    }
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

pub fn bias_report(instances: &[ScoredInstance], terms: &[String]) -> Result<BiasReport> {
    if terms.is_empty() {
        return Err(EarError::InvalidInput("identity term list is empty".into()));
    }
    if instances.is_empty() {
        return Err(EarError::InvalidInput("no scored instances".into()));
    }
    let per_term: Vec<(TermAucs, Vec<UndefinedAuc>)> = terms
        .par_iter()
        .map(|term| {
            let mut undefined = Vec::new();
            let mut vals = [None; 3];
            for (slot, kind) in vals.iter_mut().zip(AucKind::ALL) {
                match term_auc(kind, instances, term) {
                    Ok(v) => *slot = Some(v),
                    Err(e) => undefined.push(UndefinedAuc {
                        term: term.clone(),
                        metric: kind,
                        reason: e.to_string(),
                    }),
                }
            }
            let n = instances.iter().filter(|x| x.mentions(term)).count();
            let aucs = TermAucs {
                term: term.clone(),
                n,
                auc_subgroup: vals[0],
                auc_bpsn: vals[1],
                auc_bnsp: vals[2],
            };
            (aucs, undefined)
        })
        .collect();
    let mut rows = Vec::with_capacity(per_term.len());
    let mut undefined = Vec::new();
    for (row, u) in per_term {
        rows.push(row);
        undefined.extend(u);
    }
    if !undefined.is_empty() {
        log::warn!("{} term AUCs undefined and excluded from the means", undefined.len());
    }
    let labels: Vec<u8> = instances.iter().map(|x| x.label).collect();
    let scores: Vec<f64> = instances.iter().map(|x| x.score).collect();
    let f1 = f1_scores(&labels, &scores, 0.5);
    let col = |k: AucKind| mean(rows.iter().filter_map(|r| r.get(k)));
    Ok(BiasReport {
        instances: instances.len(),
        roc_auc: roc_auc(instances).ok(),
        f1_weighted: f1.weighted,
        f1_hate: f1.hate,
        mean_auc_subgroup: col(AucKind::Subgroup),
        mean_auc_bpsn: col(AucKind::Bpsn),
        mean_auc_bnsp: col(AucKind::Bnsp),
        terms: rows,
        undefined,
    })
}
