use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;

use crate::error::{EarError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub text: String,
    pub label: u8,
}

/// Relative class frequencies `p(0), p(1)` of one split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassPriors {
    pub non_hate: f64,
    pub hate: f64,
}

impl ClassPriors {
    pub fn new(non_hate: f64, hate: f64) -> Self {
        Self { non_hate, hate }
    }

    pub fn from_labels(labels: impl IntoIterator<Item = u8>) -> Self {
        let (mut n, mut pos) = (0usize, 0usize);
        for l in labels {
            n += 1;
            pos += l as usize;
        }
        let hate = pos as f64 / n as f64;
        Self {
            non_hate: (n - pos) as f64 / n as f64,
            hate,
        }
    }

    pub fn get(&self, label: u8) -> f64 {
        if label == 1 {
            self.hate
        } else {
            self.non_hate
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    examples: Vec<Example>,
    split: Split,
    priors: ClassPriors,
}

impl LabeledDataset {
    pub fn new(examples: Vec<Example>, split: Split) -> Result<Self> {
        if examples.is_empty() {
            return Err(EarError::InvalidInput(format!("{split:?} split is empty")));
        }
        if let Some(bad) = examples.iter().find(|e| e.label > 1) {
            return Err(EarError::InvalidInput(format!("label {} is not 0 or 1", bad.label)));
        }
        let priors = ClassPriors::from_labels(examples.iter().map(|e| e.label));
        Ok(Self {
            examples,
            split,
            priors,
        })
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn priors(&self) -> ClassPriors {
        self.priors
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.examples.iter().map(|e| e.text.as_str())
    }

    pub fn labels(&self) -> Vec<u8> {
        self.examples.iter().map(|e| e.label).collect()
    }
}

/// Reads a `text<TAB>label` file with a header row. The label is taken
/// after the last tab so texts may contain tabs.
pub fn load_dataset(path: &Path, split: Split) -> Result<LabeledDataset> {
    let file = std::fs::File::open(path).map_err(|e| EarError::io(path, e))?;
    let mut examples = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| EarError::io(path, e))?;
        let line = line.trim_end_matches('\r');
        if line_no == 1 {
            if line != "text\tlabel" {
                return Err(EarError::parse(path, 1, "expected header `text<TAB>label`"));
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let (text, label) = line
            .rsplit_once('\t')
            .ok_or_else(|| EarError::parse(path, line_no, "missing tab separator"))?;
        let label = match label.trim() {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(EarError::parse(
                    path,
                    line_no,
                    format!("label {other:?} is not 0 or 1"),
                ))
            }
        };
        examples.push(Example {
            text: text.to_string(),
            label,
        });
    }
    if examples.is_empty() {
        return Err(EarError::parse(path, 1, "dataset has no rows"));
    }
    LabeledDataset::new(examples, split)
}

/// Writes the dataset TSV. Tabs and newlines inside texts become spaces.
pub fn write_dataset(path: &Path, dataset: &LabeledDataset) -> Result<()> {
    let mut out = String::from("text\tlabel\n");
    for e in dataset.examples() {
        let clean: String = e
            .text
            .chars()
            .map(|c| if matches!(c, '\t' | '\n' | '\r') { ' ' } else { c })
            .collect();
        out.push_str(&clean);
        out.push('\t');
        out.push_str(if e.label == 1 { "1" } else { "0" });
        out.push('\n');
    }
    crate::io::write_atomic(path, out.as_bytes())
}

/// Splits off a validation set of `fraction` of each class, sampled with
/// `rng`. Each class keeps at least one training example.
pub fn stratified_split<R: Rng>(
    dataset: &LabeledDataset,
    fraction: f64,
    rng: &mut R,
) -> Result<(LabeledDataset, LabeledDataset)> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(EarError::InvalidInput(format!("validation fraction {fraction} outside [0,1)")));
    }
    let mut valid_idx = Vec::new();
    for class in 0..=1u8 {
        let mut idx: Vec<usize> = (0..dataset.len())
            .filter(|&i| dataset.examples[i].label == class)
            .collect();
        idx.shuffle(rng);
        let take = ((idx.len() as f64) * fraction).round() as usize;
        let take = take.min(idx.len().saturating_sub(1));
        valid_idx.extend_from_slice(&idx[..take]);
    }
    valid_idx.sort_unstable();
    let mut in_valid = vec![false; dataset.len()];
    for &i in &valid_idx {
        in_valid[i] = true;
    }
    let (mut train, mut valid) = (Vec::new(), Vec::new());
    for (e, v) in dataset.examples.iter().zip(in_valid) {
        if v {
            valid.push(e.clone());
        } else {
            train.push(e.clone());
        }
    }
    Ok((
        LabeledDataset::new(train, Split::Train)?,
        LabeledDataset::new(valid, Split::Validation)?,
    ))
}
