#![allow(dead_code)]

use lorb_core::data::{split_dataset, synthesize_corpus, vocab_from_lists, ChannelConfig, Domain, NBestList};
use lorb_core::encoder::{EncoderConfig, ScoringModel};

pub struct Task {
    pub train: Vec<NBestList>,
    pub dev: Vec<NBestList>,
    pub test: Vec<NBestList>,
    pub model: ScoringModel,
}

/// A synthetic single-domain task with a freshly initialized encoder.
pub fn task(utts: usize, layers: usize, d_model: usize, seed: u64) -> Task {
    let data = synthesize_corpus(&ChannelConfig::new(Domain::AssistantCommands, seed), utts).unwrap();
    let vocab = vocab_from_lists(&data, 500).unwrap();
    let cfg = EncoderConfig {
        layers,
        d_model,
        heads: 2,
        d_ff: 2 * d_model,
        max_len: 24,
        vocab_size: vocab.len(),
        seed,
    };
    let model = ScoringModel::new(cfg, vocab).unwrap();
    let (train, dev, test) = split_dataset(&data, 0.6, 0.2);
    Task {
        train,
        dev,
        test,
        model,
    }
}
