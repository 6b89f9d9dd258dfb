use serde::Serialize;

use super::tokenize::split_words;
use super::vocab::{Vocabulary, CLS, PAD, SEP};

/// Sub-token positions `start..end` occupied by one original word.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct WordSpan {
    pub word: String,
    pub start: usize,
    pub end: usize,
    /// All pieces of the word are `[UNK]`.
    pub unknown: bool,
}

/// One text as model input: `[CLS] tokens… [SEP]` right-padded to `max_len`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedSequence {
    pub ids: Vec<u32>,
    pub attention_mask: Vec<u8>,
    pub effective_len: usize,
    pub words: Vec<WordSpan>,
}

impl EncodedSequence {
    /// The real (unpadded) ids, `[CLS]` through `[SEP]`.
    pub fn real_ids(&self) -> &[u32] {
        &self.ids[..self.effective_len]
    }

    pub fn max_len(&self) -> usize {
        self.ids.len()
    }

    /// The same sequence padded (or trimmed of padding) to `max_len`.
    /// Panics if `max_len` is shorter than the effective length.
    pub fn repadded(&self, max_len: usize) -> EncodedSequence {
        assert!(max_len >= self.effective_len);
        let mut ids = self.real_ids().to_vec();
        ids.resize(max_len, PAD);
        let mut mask = vec![1u8; self.effective_len];
        mask.resize(max_len, 0);
        EncodedSequence {
            ids,
            attention_mask: mask,
            effective_len: self.effective_len,
            words: self.words.clone(),
        }
    }
}

/// Encodes `text`, keeping the leading tokens when it does not fit in
/// `max_len`. `[SEP]` is always the last real token.
///
/// # Panics
/// If `max_len < 2`.
pub fn encode(text: &str, vocab: &Vocabulary, max_len: usize) -> EncodedSequence {
    assert!(max_len >= 2, "max_len must leave room for [CLS] and [SEP]");
    let budget = max_len - 2;
    let mut ids = Vec::with_capacity(max_len);
    ids.push(CLS);
    let mut words = Vec::new();
    for word in split_words(text) {
        let used = ids.len() - 1;
        if used >= budget {
            break;
        }
        let pieces = vocab.word_ids(&word);
        let unknown = pieces.iter().all(|&p| p == super::vocab::UNK);
        let take = pieces.len().min(budget - used);
        let start = ids.len();
        ids.extend_from_slice(&pieces[..take]);
        words.push(WordSpan {
            word,
            start,
            end: ids.len(),
            unknown,
        });
    }
    ids.push(SEP);
    let effective_len = ids.len();
    ids.resize(max_len, PAD);
    let mut attention_mask = vec![1u8; effective_len];
    attention_mask.resize(max_len, 0);
    EncodedSequence {
        ids,
        attention_mask,
        effective_len,
        words,
    }
}

/// Joins the non-reserved tokens back into text, gluing `##` pieces onto the
/// preceding token.
pub fn decode(ids: &[u32], vocab: &Vocabulary) -> String {
    let mut out = String::new();
    for &id in ids {
        if Vocabulary::is_reserved(id) {
            continue;
        }
        let Some(tok) = vocab.token(id) else { continue };
        if let Some(rest) = tok.strip_prefix("##") {
            out.push_str(rest);
        } else {
            if !out.is_empty() {
                out.push(' ');
            }
            out.push_str(tok);
        }
    }
    out
}
