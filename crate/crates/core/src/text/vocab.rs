use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use super::tokenize::split_words;
use crate::error::{EarError, Result};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const CLS: u32 = 2;
pub const SEP: u32 = 3;
pub const PAD_TOKEN: &str = "[PAD]";
pub const UNK_TOKEN: &str = "[UNK]";
pub const CLS_TOKEN: &str = "[CLS]";
pub const SEP_TOKEN: &str = "[SEP]";
pub const RESERVED: [&str; 4] = [PAD_TOKEN, UNK_TOKEN, CLS_TOKEN, SEP_TOKEN];

const CONTINUATION: &str = "##";

/// Bijection between token strings and dense ids `0..V`. The four reserved
/// tokens occupy ids 0–3. Tokens starting with `##` are word-continuation
/// pieces.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        for (id, reserved) in RESERVED.iter().enumerate() {
            if tokens.get(id).map(String::as_str) != Some(*reserved) {
                return Err(EarError::InvalidInput(format!(
                    "vocabulary id {id} must be {reserved}"
                )));
            }
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (id, tok) in tokens.iter().enumerate() {
            if tok.is_empty() || tok.chars().any(char::is_whitespace) {
                return Err(EarError::InvalidInput(format!("invalid token {tok:?} at id {id}")));
            }
            if index.insert(tok.clone(), id as u32).is_some() {
                return Err(EarError::InvalidInput(format!("duplicate token {tok:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn is_reserved(id: u32) -> bool {
        id <= SEP
    }

    /// Splits one pre-tokenized word into ids: the whole word if known,
    /// otherwise greedy longest-match pieces, otherwise a single `[UNK]`.
    pub fn word_ids(&self, word: &str) -> Vec<u32> {
        if let Some(id) = self.id(word) {
            return vec![id];
        }
        let boundaries: Vec<usize> = word
            .char_indices()
            .map(|(i, _)| i)
            .chain(std::iter::once(word.len()))
            .collect();
        let mut pieces = Vec::new();
        let mut start = 0;
        while start + 1 < boundaries.len() {
            let found = (start + 1..boundaries.len()).rev().find_map(|end| {
                let piece = &word[boundaries[start]..boundaries[end]];
                let id = if start == 0 {
                    self.id(piece)
                } else {
                    self.id(&format!("{CONTINUATION}{piece}"))
                };
                id.map(|id| (id, end))
            });
            match found {
                Some((id, end)) => {
                    pieces.push(id);
                    start = end;
                }
                None => return vec![UNK],
            }
        }
        if pieces.is_empty() {
            vec![UNK]
        } else {
            pieces
        }
    }

    /// Hex SHA-256 of the vocabulary file contents.
    pub fn content_hash(&self) -> String {
        crate::io::hex_digest(self.to_file_string().as_bytes())
    }

    pub fn to_file_string(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_file_string().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| EarError::io(path, e))?;
        let tokens: Vec<String> = text.lines().map(|l| l.trim_end_matches('\r').to_string()).collect();
        Self::from_tokens(tokens).map_err(|e| EarError::parse(path, 0, e.to_string()))
    }
}

/// Frequency-thresholded word vocabulary with optional sub-word pieces
/// learned by greedy pair merging.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VocabBuilder {
    pub min_count: usize,
    /// Number of pair merges to learn; 0 disables sub-word pieces.
    pub merges: usize,
}

impl Default for VocabBuilder {
    fn default() -> Self {
        Self {
            min_count: 1,
            merges: 0,
        }
    }
}

impl VocabBuilder {
    pub fn build<S: AsRef<str>>(&self, corpus: &[S]) -> Result<Vocabulary> {
        if corpus.is_empty() {
            return Err(EarError::InvalidInput("cannot build a vocabulary from an empty corpus".into()));
        }
        if self.min_count == 0 {
            return Err(EarError::InvalidInput("min_count must be at least 1".into()));
        }
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for text in corpus {
            for w in split_words(text.as_ref()) {
                *counts.entry(w).or_default() += 1;
            }
        }

        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let mut words: Vec<(&String, usize)> = counts
            .iter()
            .filter(|(w, &c)| c >= self.min_count && !RESERVED.contains(&w.as_str()))
            .map(|(w, &c)| (w, c))
            .collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        tokens.extend(words.into_iter().map(|(w, _)| w.clone()));

        if self.merges > 0 {
            let mut seen: std::collections::HashSet<String> = tokens.iter().cloned().collect();
            for piece in learn_pieces(&counts, self.min_count, self.merges) {
                if seen.insert(piece.clone()) {
                    tokens.push(piece);
                }
            }
        }
        Vocabulary::from_tokens(tokens)
    }
}

/// Word-level vocabulary (no sub-word pieces).
pub fn build_vocab<S: AsRef<str>>(corpus: &[S], min_count: usize) -> Result<Vocabulary> {
    VocabBuilder {
        min_count,
        merges: 0,
    }
    .build(corpus)
}

/// Learns word pieces by repeatedly merging the most frequent adjacent symbol
/// pair. Returns the frequent characters followed by merged pieces in merge
/// order. Non-initial symbols carry the `##` prefix.
fn learn_pieces(counts: &BTreeMap<String, usize>, min_count: usize, merges: usize) -> Vec<String> {
    let mut segmented: Vec<(Vec<String>, usize)> = counts
        .iter()
        .map(|(w, &c)| {
            let symbols = w
                .chars()
                .enumerate()
                .map(|(i, ch)| if i == 0 { ch.to_string() } else { format!("{CONTINUATION}{ch}") })
                .collect();
            (symbols, c)
        })
        .collect();

    let mut char_counts: BTreeMap<&str, usize> = BTreeMap::new();
    for (symbols, c) in &segmented {
        for s in symbols {
            *char_counts.entry(s.as_str()).or_default() += c;
        }
    }
    let mut char_pieces: Vec<(&str, usize)> = char_counts
        .into_iter()
        .filter(|(_, c)| *c >= min_count)
        .collect();
    char_pieces.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let mut pieces: Vec<String> = char_pieces.into_iter().map(|(s, _)| s.to_string()).collect();

    let threshold = min_count.max(2);
    for _ in 0..merges {
        let mut pairs: BTreeMap<(&str, &str), usize> = BTreeMap::new();
        for (symbols, c) in &segmented {
            for w in symbols.windows(2) {
                *pairs.entry((w[0].as_str(), w[1].as_str())).or_default() += c;
            }
        }
        // BTreeMap iteration order makes ties resolve to the smallest pair.
        let best = pairs
            .into_iter()
            .fold(None::<((&str, &str), usize)>, |best, (pair, c)| match best {
                Some((_, bc)) if bc >= c => best,
                _ => Some((pair, c)),
            });
        let Some(((left, right), count)) = best else {
            break;
        };
        if count < threshold {
            break;
        }
        let (left, right) = (left.to_string(), right.to_string());
        let merged = format!("{left}{}", right.trim_start_matches(CONTINUATION));
        for (symbols, _) in &mut segmented {
            let mut i = 0;
            while i + 1 < symbols.len() {
                if symbols[i] == left && symbols[i + 1] == right {
                    symbols[i] = merged.clone();
                    symbols.remove(i + 1);
                }
                i += 1;
            }
        }
        pieces.push(merged);
    }
    pieces
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn word_vocab_examples() {
        let v = build_vocab(&["a b", "a"], 1).unwrap();
        assert_eq!(v.len(), 6);
        assert!(v.id("a").is_some() && v.id("b").is_some());

        let v = build_vocab(&["a b", "a"], 2).unwrap();
        assert_eq!(v.len(), 5);
        assert_eq!(v.word_ids("b"), vec![UNK]);

        let corpus: Vec<String> = (0..1000).map(|i| format!("w{i}")).collect();
        assert_eq!(build_vocab(&corpus, 1).unwrap().len(), 1004);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert!(build_vocab::<&str>(&[], 1).is_err());
        assert!(build_vocab(&["a"], 0).is_err());
    }

    #[test]
    fn reserved_tokens_are_dense_and_first() {
        let v = build_vocab(&["x y z"], 1).unwrap();
        for (id, tok) in RESERVED.iter().enumerate() {
            assert_eq!(v.id(tok), Some(id as u32));
            assert_eq!(v.token(id as u32), Some(*tok));
        }
        for id in 0..v.len() as u32 {
            assert_eq!(v.id(v.token(id).unwrap()), Some(id));
        }
    }

    #[test]
    fn learned_pieces_split_rare_words() {
        let corpus = ["hate hate hater hater", "hated hated", "hatered"];
        let v = VocabBuilder {
            min_count: 2,
            merges: 20,
        }
        .build(&corpus)
        .unwrap();
        // Rare words are not whole-word entries but decompose into pieces.
        assert!(v.id("hatered").is_none());
        let ids = v.word_ids("hatered");
        assert!(ids.len() >= 2, "{ids:?}");
        assert!(!ids.contains(&UNK));
        assert_eq!(v.token(ids[0]).map(|t| t.starts_with("##")), Some(false));
        assert!(ids[1..].iter().all(|&i| v.token(i).unwrap().starts_with("##")));
        // Characters never seen cannot be covered.
        assert_eq!(v.word_ids("xyz"), vec![UNK]);
    }

    #[test]
    fn file_round_trip_preserves_ids() {
        let v = VocabBuilder { min_count: 1, merges: 5 }.build(&["alpha beta", "alphabet"]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        v.save(&path).unwrap();
        let back = Vocabulary::load(&path).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.content_hash(), v.content_hash());
    }

    #[test]
    fn rejects_malformed_token_lists() {
        assert!(Vocabulary::from_tokens(vec!["a".into()]).is_err());
        let mut t: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        t.push("x".into());
        t.push("x".into());
        assert!(Vocabulary::from_tokens(t).is_err());
    }
}
