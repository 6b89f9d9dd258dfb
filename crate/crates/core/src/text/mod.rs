//! Corpus ingestion, vocabulary, tokenization and encoding.

mod dataset;
mod encode;
mod tokenize;
mod vocab;

pub use dataset::{load_dataset, stratified_split, write_dataset, ClassPriors, Example, LabeledDataset, Split};
pub use encode::{decode, encode, EncodedSequence, WordSpan};
pub use tokenize::split_words;
pub use vocab::{build_vocab, VocabBuilder, Vocabulary, CLS, CLS_TOKEN, PAD, PAD_TOKEN, RESERVED, SEP, SEP_TOKEN, UNK, UNK_TOKEN};
