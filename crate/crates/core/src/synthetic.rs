//! Balanced synthetic test sets built by filling context templates with
//! identity terms.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{EarError, Result};
use crate::io::write_atomic;
use crate::text::{Example, LabeledDataset, Split};

/// Placeholder replaced by an identity term.
pub const SLOT: &str = "{}";

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Template {
    pub text: String,
    pub label: u8,
}

impl Template {
    pub fn new(text: impl Into<String>, label: u8) -> Result<Self> {
        let text = text.into();
        let slots = text.matches(SLOT).count();
        if slots != 1 {
            return Err(EarError::InvalidInput(format!(
                "template {text:?} has {slots} slots, expected exactly one `{SLOT}`"
            )));
        }
        if label > 1 {
            return Err(EarError::InvalidInput(format!("label {label} is not 0 or 1")));
        }
        Ok(Self { text, label })
    }

    pub fn fill(&self, term: &str) -> String {
        self.text.replacen(SLOT, term, 1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TemplateSet {
    pub templates: Vec<Template>,
}

impl TemplateSet {
    pub fn new(templates: Vec<Template>) -> Self {
        Self { templates }
    }

    /// Number of `(non-hateful, hateful)` templates.
    pub fn label_counts(&self) -> (usize, usize) {
        let hate = self.templates.iter().filter(|t| t.label == 1).count();
        (self.templates.len() - hate, hate)
    }

    /// Both classes present in equal numbers.
    pub fn check_balance(&self) -> Result<()> {
        let (neg, pos) = self.label_counts();
        if neg == 0 || pos == 0 {
            return Err(EarError::InvalidInput(format!(
                "templates need both classes; found {neg} non-hateful and {pos} hateful"
            )));
        }
        if neg != pos {
            return Err(EarError::InvalidInput(format!(
                "unbalanced templates: {neg} non-hateful vs {pos} hateful"
            )));
        }
        Ok(())
    }
}

/// Reads `template<TAB>label` lines. An optional `template\tlabel` header
/// and blank lines are skipped.
pub fn load_templates(path: &Path) -> Result<TemplateSet> {
    let text = std::fs::read_to_string(path).map_err(|e| EarError::io(path, e))?;
    let mut templates = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() || (i == 0 && line.trim() == "template\tlabel") {
            continue;
        }
        let Some((body, label)) = line.rsplit_once('\t') else {
            return Err(EarError::parse(path, line_no, "expected `template<TAB>label`"));
        };
        let label = match label.trim() {
            "0" => 0,
            "1" => 1,
            other => return Err(EarError::parse(path, line_no, format!("bad label {other:?}"))),
        };
        let template = Template::new(body.trim(), label).map_err(|e| match e {
            EarError::InvalidInput(msg) => EarError::parse(path, line_no, msg),
            other => other,
        })?;
        if !seen.insert(template.clone()) {
            log::warn!("{}:{line_no}: duplicate template {:?}", path.display(), template.text);
        }
        templates.push(template);
    }
    if templates.is_empty() {
        return Err(EarError::InvalidInput(format!("{}: no templates", path.display())));
    }
    Ok(TemplateSet { templates })
}

/// A generated set with the filling term of every instance.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSet {
    pub dataset: LabeledDataset,
    /// `terms[i]` filled the slot of instance `i`.
    pub terms: Vec<String>,
}

impl SyntheticSet {
    /// Sidecar `id<TAB>term`, ids being row indices of the dataset.
    pub fn membership_tsv(&self) -> String {
        let mut out = String::from("id\tterm\n");
        for (i, t) in self.terms.iter().enumerate() {
            let _ = writeln!(out, "{i}\t{t}");
        }
        out
    }

    pub fn write_membership(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.membership_tsv().as_bytes())
    }
}

/// Reads an `id<TAB>term` sidecar into per-instance term lists for
/// `n` instances. An id may appear on several lines.
pub fn load_membership(path: &Path, n: usize) -> Result<Vec<Vec<String>>> {
    let text = std::fs::read_to_string(path).map_err(|e| EarError::io(path, e))?;
    let mut terms = vec![Vec::new(); n];
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || (i == 0 && line.trim() == "id\tterm") {
            continue;
        }
        let (id, term) = line
            .split_once('\t')
            .ok_or_else(|| EarError::parse(path, i + 1, "expected `id<TAB>term`"))?;
        let id: usize = id
            .trim()
            .parse()
            .map_err(|_| EarError::parse(path, i + 1, format!("bad id {id:?}")))?;
        let slot = terms
            .get_mut(id)
            .ok_or_else(|| EarError::parse(path, i + 1, format!("id {id} out of range for {n} instances")))?;
        slot.push(term.trim().to_lowercase());
    }
    Ok(terms)
}

/// Every `(term, template)` pair once, term-major. Unbalanced template sets
/// are rejected unless `allow_unbalanced`, which only logs a warning.
pub fn generate(templates: &TemplateSet, terms: &[String], allow_unbalanced: bool) -> Result<SyntheticSet> {
    if terms.is_empty() {
        return Err(EarError::InvalidInput("identity term list is empty".into()));
    }
    if templates.templates.is_empty() {
        return Err(EarError::InvalidInput("no templates".into()));
    }
    if let Err(e) = templates.check_balance() {
        if allow_unbalanced {
            log::warn!("{e}");
        } else {
            return Err(e);
        }
    }
    let mut examples = Vec::with_capacity(terms.len() * templates.templates.len());
    let mut filled = Vec::with_capacity(examples.capacity());
    for term in terms {
        for t in &templates.templates {
            examples.push(Example {
                text: t.fill(term),
                label: t.label,
            });
            filled.push(term.clone());
        }
    }
    Ok(SyntheticSet {
        dataset: LabeledDataset::new(examples, Split::Synthetic)?,
        terms: filled,
    })
}
