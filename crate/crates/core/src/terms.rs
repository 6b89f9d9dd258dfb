//! Per-token attention entropy profiles and corpus-level ranking of words
//! by their mean entropy.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ear::EntropyProfile;
use crate::error::{EarError, Result};
use crate::metrics::csv_field;
use crate::model::{Checkpoint, Model};
use crate::text::{encode, Vocabulary};

/// Entropies of one text together with the tokens they belong to.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TokenProfile {
    /// Real tokens, `[CLS]` through `[SEP]`.
    pub tokens: Vec<String>,
    pub profile: EntropyProfile,
    /// Per-token entropy averaged over layers.
    pub mean_per_token: Vec<f64>,
}

pub fn entropy_profile(model: &Model, vocab: &Vocabulary, text: &str) -> Result<TokenProfile> {
    let seq = encode(text, vocab, model.config.max_len);
    let out = model.forward(std::slice::from_ref(&seq))?;
    let profile = EntropyProfile::from_record(&out.records[0], true)?;
    let tokens = seq
        .real_ids()
        .iter()
        .map(|&id| vocab.token(id).unwrap_or("[UNK]").to_string())
        .collect();
    Ok(TokenProfile {
        tokens,
        mean_per_token: profile.layer_mean_per_token(),
        profile,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermEntropyStats {
    pub term: String,
    /// Mean over occurrences of the layer-averaged word entropy (nats).
    pub mean_entropy: f64,
    /// Mean over occurrences, per layer.
    pub per_layer: Vec<f64>,
    pub count: usize,
    /// Fraction of documents containing the word.
    pub doc_freq: f64,
    /// Fraction of containing documents labeled hateful, when labels are known.
    pub hate_corr: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtractOptions {
    pub min_df: f64,
    pub top_k: Option<usize>,
    /// Softmax re-normalization of head-averaged rows, as in the training
    /// objective. `false` ranks by entropies of the raw averaged rows.
    pub renormalize: bool,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        Self {
            min_df: 0.01,
            top_k: None,
            renormalize: true,
        }
    }
}

#[derive(Debug, Clone, Default)]
struct Accum {
    sum: f64,
    per_layer: Vec<f64>,
    count: usize,
    docs: usize,
    hate_docs: usize,
}

impl Accum {
    fn merge(&mut self, other: &Accum) {
        self.sum += other.sum;
        if self.per_layer.is_empty() {
            self.per_layer = vec![0.0; other.per_layer.len()];
        }
        for (a, b) in self.per_layer.iter_mut().zip(&other.per_layer) {
            *a += b;
        }
        self.count += other.count;
        self.docs += other.docs;
        self.hate_docs += other.hate_docs;
    }
}

/// Word entropies of one document. A word's occurrence entropy is the mean
/// over its sub-tokens; words made only of `[UNK]` are skipped.
fn document_terms(
    model: &Model,
    vocab: &Vocabulary,
    text: &str,
    label: Option<u8>,
    renormalize: bool,
) -> Result<BTreeMap<String, Accum>> {
    let seq = encode(text, vocab, model.config.max_len);
    let out = model.forward(std::slice::from_ref(&seq))?;
    let profile = EntropyProfile::from_record(&out.records[0], renormalize)?;
    let layers = profile.token.len();
    let mut acc: BTreeMap<String, Accum> = BTreeMap::new();
    for span in seq.words.iter().filter(|w| !w.unknown && w.end > w.start) {
        let width = (span.end - span.start) as f64;
        let per_layer: Vec<f64> = profile
            .token
            .iter()
            .map(|l| l[span.start..span.end].iter().sum::<f64>() / width)
            .collect();
        let entry = acc.entry(span.word.clone()).or_insert_with(|| Accum {
            per_layer: vec![0.0; layers],
            ..Accum::default()
        });
        entry.sum += per_layer.iter().sum::<f64>() / layers as f64;
        for (a, b) in entry.per_layer.iter_mut().zip(&per_layer) {
            *a += b;
        }
        entry.count += 1;
    }
    for a in acc.values_mut() {
        a.docs = 1;
        a.hate_docs = usize::from(label == Some(1));
    }
    Ok(acc)
}

/// Ranks words by mean attention entropy over `texts`, lowest first.
/// Document frequency and counts are taken over the words that survive
/// truncation to the model's `max_len`.
pub fn extract_overfitting_terms(
    checkpoint: &Checkpoint,
    vocab: &Vocabulary,
    texts: &[String],
    labels: Option<&[u8]>,
    options: &ExtractOptions,
) -> Result<Vec<TermEntropyStats>> {
    let hash = vocab.content_hash();
    if checkpoint.vocab_hash != hash {
        return Err(EarError::VocabMismatch {
            expected: checkpoint.vocab_hash.clone(),
            found: hash,
        });
    }
    if checkpoint.model.config.vocab_size != vocab.len() {
        return Err(EarError::VocabMismatch {
            expected: format!("{} tokens", checkpoint.model.config.vocab_size),
            found: format!("{} tokens", vocab.len()),
        });
    }
    if texts.is_empty() {
        return Err(EarError::InvalidInput("empty corpus".into()));
    }
    if let Some(l) = labels {
        if l.len() != texts.len() {
            return Err(EarError::Shape(format!("{} texts, {} labels", texts.len(), l.len())));
        }
    }
    let model = &checkpoint.model;
    let per_doc: Vec<BTreeMap<String, Accum>> = texts
        .par_iter()
        .enumerate()
        .map(|(i, t)| document_terms(model, vocab, t, labels.map(|l| l[i]), options.renormalize))
        .collect::<Result<_>>()?;
    let mut totals: BTreeMap<String, Accum> = BTreeMap::new();
    for doc in &per_doc {
        for (w, a) in doc {
            totals.entry(w.clone()).or_default().merge(a);
        }
    }
    let n_docs = texts.len() as f64;
    let mut stats: Vec<TermEntropyStats> = totals
        .into_iter()
        .filter(|(_, a)| a.docs as f64 / n_docs >= options.min_df)
        .map(|(term, a)| TermEntropyStats {
            mean_entropy: a.sum / a.count as f64,
            per_layer: a.per_layer.iter().map(|s| s / a.count as f64).collect(),
            count: a.count,
            doc_freq: a.docs as f64 / n_docs,
            hate_corr: labels.map(|_| a.hate_docs as f64 / a.docs as f64),
            term,
        })
        .collect();
    stats.sort_by(|a, b| a.mean_entropy.total_cmp(&b.mean_entropy).then_with(|| a.term.cmp(&b.term)));
    if let Some(k) = options.top_k {
        stats.truncate(k);
    }
    Ok(stats)
}

/// `term,mean_entropy,count,doc_freq,hate_corr`
pub fn terms_csv(stats: &[TermEntropyStats]) -> String {
    let mut out = String::from("term,mean_entropy,count,doc_freq,hate_corr\n");
    for s in stats {
        let corr = s.hate_corr.map(|c| format!("{c:.6}")).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{:.6},{},{:.6},{}",
            csv_field(&s.term),
            s.mean_entropy,
            s.count,
            s.doc_freq,
            corr
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::tensor::Matrix;
    use crate::text::{build_vocab, VocabBuilder};
    use approx::assert_abs_diff_eq;

    fn model_for(vocab: &Vocabulary, seed: u64) -> Model {
        let c = ModelConfig {
            layers: 2,
            heads: 2,
            d_model: 8,
            d_key: 4,
            d_value: 4,
            d_ff: 8,
            max_len: 16,
            ..ModelConfig::desk(vocab.len())
        };
        Model::init(c, seed).unwrap()
    }

    fn flat(mut m: Model) -> Model {
        for l in &mut m.params.layers {
            for h in &mut l.heads {
                h.query = Matrix::zeros(h.query.rows(), h.query.cols());
                h.key = Matrix::zeros(h.key.rows(), h.key.cols());
            }
        }
        m
    }

    #[test]
    fn single_word_profile() {
        let v = build_vocab(&["hello world"], 1).unwrap();
        let p = entropy_profile(&model_for(&v, 1), &v, "hello").unwrap();
        assert_eq!(p.tokens, vec!["[CLS]", "hello", "[SEP]"]);
        for h in p.profile.token.iter().flatten() {
            assert!(*h <= 3f64.ln() + 1e-12);
        }
        let flat = entropy_profile(&flat(model_for(&v, 1)), &v, "hello world").unwrap();
        for h in flat.profile.token.iter().flatten() {
            assert_abs_diff_eq!(*h, 4f64.ln(), epsilon = 1e-12);
        }
    }

    #[test]
    fn sub_token_entropies_are_averaged() {
        let v = VocabBuilder { min_count: 2, merges: 10 }
            .build(&["hate hate hater hater", "hated hated", "hatered"])
            .unwrap();
        let m = model_for(&v, 2);
        let hash = v.content_hash();
        let ck = Checkpoint::new(m.clone(), hash);
        let text = "hatered".to_string();
        let stats = extract_overfitting_terms(&ck, &v, &[text.clone()], None, &ExtractOptions::default()).unwrap();
        let seq = encode(&text, &v, 16);
        let span = &seq.words[0];
        assert!(span.end - span.start >= 2);
        let prof = entropy_profile(&m, &v, &text).unwrap();
        let expected: f64 = prof.mean_per_token[span.start..span.end].iter().sum::<f64>() / (span.end - span.start) as f64;
        assert_abs_diff_eq!(stats[0].mean_entropy, expected, epsilon = 1e-12);
    }

    fn corpus() -> (Vocabulary, Vec<String>, Vec<u8>) {
        let mut texts = Vec::new();
        let mut labels = Vec::new();
        for i in 0..200 {
            let rare = if i == 0 { " zorp" } else { "" };
            texts.push(format!("word{} common text{}", i % 7, rare));
            labels.push((i % 2) as u8);
        }
        let v = build_vocab(&texts, 1).unwrap();
        (v, texts, labels)
    }

    #[test]
    fn min_df_filters_rare_words() {
        let (v, texts, labels) = corpus();
        let ck = Checkpoint::new(model_for(&v, 3), v.content_hash());
        let stats = extract_overfitting_terms(&ck, &v, &texts, Some(&labels), &ExtractOptions::default()).unwrap();
        // "zorp" is in 1 of 200 documents (0.5%).
        assert!(stats.iter().all(|s| s.term != "zorp"));
        assert!(stats.iter().all(|s| s.doc_freq >= 0.01 && s.count >= 1 && s.mean_entropy >= 0.0));
        let common = stats.iter().find(|s| s.term == "common").unwrap();
        assert_eq!((common.count, common.doc_freq, common.hate_corr), (200, 1.0, Some(0.5)));
        for w in stats.windows(2) {
            assert!(w[0].mean_entropy <= w[1].mean_entropy);
        }
        let loose = ExtractOptions {
            min_df: 0.0,
            top_k: Some(3),
            ..ExtractOptions::default()
        };
        assert_eq!(extract_overfitting_terms(&ck, &v, &texts, None, &loose).unwrap().len(), 3);
    }

    #[test]
    fn ranking_ignores_document_order() {
        let (v, mut texts, _) = corpus();
        let ck = Checkpoint::new(model_for(&v, 4), v.content_hash());
        let a = extract_overfitting_terms(&ck, &v, &texts, None, &ExtractOptions::default()).unwrap();
        texts.reverse();
        let b = extract_overfitting_terms(&ck, &v, &texts, None, &ExtractOptions::default()).unwrap();
        let names = |s: &[TermEntropyStats]| s.iter().map(|x| x.term.clone()).collect::<Vec<_>>();
        assert_eq!(names(&a), names(&b));
        for (x, y) in a.iter().zip(&b) {
            assert_abs_diff_eq!(x.mean_entropy, y.mean_entropy, epsilon = 1e-12);
            assert_eq!(x.count, y.count);
        }
    }

    #[test]
    fn vocabulary_mismatch_is_rejected() {
        let (v, texts, _) = corpus();
        let ck = Checkpoint::new(model_for(&v, 5), "not-the-hash");
        assert!(matches!(
            extract_overfitting_terms(&ck, &v, &texts, None, &ExtractOptions::default()),
            Err(EarError::VocabMismatch { .. })
        ));
    }

    #[test]
    fn csv_header_and_rows() {
        let s = TermEntropyStats {
            term: "x".into(),
            mean_entropy: 0.5,
            per_layer: vec![0.5],
            count: 3,
            doc_freq: 0.25,
            hate_corr: None,
        };
        assert_eq!(terms_csv(&[s]), "term,mean_entropy,count,doc_freq,hate_corr\nx,0.500000,3,0.250000,\n");
    }
}
