//! Planted-bias toy corpus shared by the integration tests.
#![allow(dead_code)]

use ear_core::text::{build_vocab, Example, LabeledDataset, Split, Vocabulary};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Token that only ever appears in hateful documents.
pub const PLANTED: &str = "zorp";

/// Every document is padded with neutral filler to this many words, so
/// per-token entropies are not confounded by sentence length.
pub const WORDS: usize = 10;

const GROUPS: [&str; 8] = ["people", "folks", "neighbors", "students", "workers", "voters", "fans", "tourists"];
const NEGATIVE: [&str; 10] = [
    "disgusting", "vile", "worthless", "filthy", "stupid", "evil", "pathetic", "useless", "dangerous", "awful",
];
const POSITIVE: [&str; 10] = [
    "kind", "lovely", "friendly", "smart", "helpful", "honest", "generous", "cheerful", "talented", "brave",
];
const ADVERBS: [&str; 10] = ["today", "really", "honestly", "again", "here", "now", "always", "indeed", "truly", "still"];
const TEMPLATES: [&str; 5] = [
    "{g} are {a}",
    "i hate those {a} {g}",
    "all {g} are so {a}",
    "those {g} are {a} {f}",
    "{f} the {g} seem {a}",
];

fn render(template: &str, group: &str, adjective: &str, adverb: &str, rng: &mut ChaCha8Rng) -> String {
    let text = template
        .replace("{g}", group)
        .replace("{a}", adjective)
        .replace("{f}", adverb);
    let mut words: Vec<String> = text.split(' ').map(String::from).collect();
    while words.len() < WORDS {
        let at = rng.gen_range(0..=words.len());
        words.insert(at, format!("n{}", rng.gen_range(0..60)));
    }
    words.join(" ")
}

/// Alternating labels; hateful documents use negative adjectives and carry
/// the planted token with probability `planted_rate`.
pub fn corpus(n: usize, planted_rate: f64, seed: u64) -> Vec<Example> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let label = (i % 2) as u8;
            let mut group = GROUPS.choose(&mut rng).unwrap().to_string();
            let adverb = *ADVERBS.choose(&mut rng).unwrap();
            let template = *TEMPLATES.choose(&mut rng).unwrap();
            let adjective = if label == 1 {
                *NEGATIVE.choose(&mut rng).unwrap()
            } else {
                *POSITIVE.choose(&mut rng).unwrap()
            };
            if label == 1 && rng.gen_bool(planted_rate) {
                group = format!("{PLANTED} {group}");
            }
            Example {
                text: render(template, &group, adjective, adverb, &mut rng),
                label,
            }
        })
        .collect()
}

/// Benign sentences from the training templates that mention the planted token.
pub fn benign_probes(n: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let group = format!("{PLANTED} {}", GROUPS.choose(&mut rng).unwrap());
            let template = *TEMPLATES.choose(&mut rng).unwrap();
            let adjective = *POSITIVE.choose(&mut rng).unwrap();
            let adverb = *ADVERBS.choose(&mut rng).unwrap();
            render(template, &group, adjective, adverb, &mut rng)
        })
        .collect()
}

pub struct ToySplits {
    pub train: LabeledDataset,
    pub valid: LabeledDataset,
    pub vocab: Vocabulary,
}

/// `n` documents, the last tenth held out for validation.
pub fn toy_splits(n: usize, planted_rate: f64, seed: u64) -> ToySplits {
    let docs = corpus(n, planted_rate, seed);
    let cut = n - n / 10;
    let train = LabeledDataset::new(docs[..cut].to_vec(), Split::Train).unwrap();
    let valid = LabeledDataset::new(docs[cut..].to_vec(), Split::Validation).unwrap();
    let vocab = build_vocab(&train.texts().collect::<Vec<_>>(), 1).unwrap();
    ToySplits { train, valid, vocab }
}
