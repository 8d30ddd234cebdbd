//! Vocabulary, N-best datasets and the synthetic first-pass channel.

mod batch;
mod channel;
mod grammar;
mod nbest;
mod vocab;

pub use batch::{EncodedBatch, HypothesisBatch};
pub use channel::{split_dataset, synthesize_corpus, ChannelConfig};
pub use grammar::Domain;
pub use nbest::{load_nbest, read_nbest, write_nbest, Hypothesis, NBestList};
pub use vocab::{build_vocab, encode_hypothesis, Vocabulary, CLS, PAD, SEP, UNK};

/// Splits on whitespace; the only tokenization used anywhere in the crate.
pub fn words(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_owned).collect()
}

/// Vocabulary over the references and hypotheses of N-best datasets.
pub fn vocab_from_lists<'a>(data: impl IntoIterator<Item = &'a NBestList>, cap: usize) -> crate::Result<Vocabulary> {
    let lines: Vec<String> = data
        .into_iter()
        .flat_map(|l| std::iter::once(l.reference.join(" ")).chain(l.hypotheses.iter().map(|h| h.text.join(" "))))
        .collect();
    build_vocab(lines.iter().map(String::as_str), cap)
}
