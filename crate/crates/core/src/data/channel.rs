use serde::{Deserialize, Serialize};

use super::grammar::Domain;
use super::nbest::NBestList;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Synthetic first-pass decoder: corrupts a reference with i.i.d. word
/// edits and scores each hypothesis by its corruption count plus noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    pub sub_rate: f64,
    pub del_rate: f64,
    pub ins_rate: f64,
    /// Hypotheses per list.
    pub nbest: usize,
    pub noise_scale: f64,
    pub domain: Domain,
    pub seed: u64,
}

impl ChannelConfig {
    pub fn new(domain: Domain, seed: u64) -> Self {
        Self {
            sub_rate: 0.08,
            del_rate: 0.03,
            ins_rate: 0.03,
            nbest: 4,
            noise_scale: 1.0,
            domain,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, r) in [
            ("sub_rate", self.sub_rate),
            ("del_rate", self.del_rate),
            ("ins_rate", self.ins_rate),
        ] {
            if !(0.0..1.0).contains(&r) {
                return Err(Error::Config(format!("{name} = {r} outside [0,1)")));
            }
        }
        if self.nbest == 0 {
            return Err(Error::Config("nbest must be at least 1".into()));
        }
        if !(self.noise_scale.is_finite() && self.noise_scale >= 0.0) {
            return Err(Error::Config(format!("noise_scale = {}", self.noise_scale)));
        }
        Ok(())
    }

    fn corrupt(&self, reference: &[String], lexicon: &[&str], rng: &mut Rng) -> (Vec<String>, usize) {
        let mut out = Vec::with_capacity(reference.len() + 2);
        let mut edits = 0;
        for word in reference {
            let r = rng.uniform();
            if r < self.del_rate {
                edits += 1;
            } else if r < self.del_rate + self.sub_rate {
                out.push(substitute(word, lexicon, rng));
                edits += 1;
            } else {
                out.push(word.clone());
            }
            if rng.bernoulli(self.ins_rate) {
                out.push(lexicon[rng.below(lexicon.len())].to_owned());
                edits += 1;
            }
        }
        (out, edits)
    }
}

fn substitute(word: &str, lexicon: &[&str], rng: &mut Rng) -> String {
    if lexicon.len() < 2 {
        return lexicon[0].to_owned();
    }
    loop {
        let cand = lexicon[rng.below(lexicon.len())];
        if cand != word {
            return cand.to_owned();
        }
    }
}

/// Generates `num_utts` N-best lists. A pure function of its arguments.
pub fn synthesize_corpus(cfg: &ChannelConfig, num_utts: usize) -> Result<Vec<NBestList>> {
    cfg.validate()?;
    if num_utts == 0 {
        return Err(Error::Config("num_utts must be at least 1".into()));
    }
    let lexicon = cfg.domain.lexicon();
    let root = Rng::new(cfg.seed).split(cfg.domain as u64);
    let lists = (0..num_utts)
        .map(|i| {
            let mut rng = root.split(i as u64);
            let reference = cfg.domain.sample(&mut rng);
            let mut hyps: Vec<(Vec<String>, f64)> = (0..cfg.nbest)
                .map(|_| {
                    let (text, edits) = cfg.corrupt(&reference, &lexicon, &mut rng);
                    let score = edits as f64 + cfg.noise_scale * rng.normal();
                    (text, score)
                })
                .collect();
            hyps.sort_by(|a, b| a.1.total_cmp(&b.1));
            NBestList::new(format!("{}-{:06}", cfg.domain, i), reference, hyps)
        })
        .collect();
    Ok(lists)
}

/// Contiguous train/dev/test split by fractions of the list count.
pub fn split_dataset(
    data: &[NBestList],
    train_frac: f64,
    dev_frac: f64,
) -> (Vec<NBestList>, Vec<NBestList>, Vec<NBestList>) {
    let n = data.len();
    let n_train = ((n as f64) * train_frac).round() as usize;
    let n_dev = ((n as f64) * dev_frac).round() as usize;
    let n_train = n_train.min(n);
    let n_dev = n_dev.min(n - n_train);
    (
        data[..n_train].to_vec(),
        data[n_train..n_train + n_dev].to_vec(),
        data[n_train + n_dev..].to_vec(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_channel_copies_reference() {
        let cfg = ChannelConfig {
            sub_rate: 0.0,
            del_rate: 0.0,
            ins_rate: 0.0,
            nbest: 4,
            noise_scale: 0.0,
            domain: Domain::AssistantCommands,
            seed: 1,
        };
        for list in synthesize_corpus(&cfg, 20).unwrap() {
            assert_eq!(list.len(), 4);
            for h in &list.hypotheses {
                assert_eq!(h.text, list.reference);
                assert_eq!(h.word_errors, Some(0));
                assert_eq!(h.first_pass_score, 0.0);
            }
        }
    }

    #[test]
    fn deterministic_per_config() {
        let cfg = ChannelConfig::new(Domain::EntityRich, 11);
        assert_eq!(
            synthesize_corpus(&cfg, 50).unwrap(),
            synthesize_corpus(&cfg, 50).unwrap()
        );
        let other = ChannelConfig {
            seed: 12,
            ..cfg.clone()
        };
        assert_ne!(
            synthesize_corpus(&cfg, 50).unwrap(),
            synthesize_corpus(&other, 50).unwrap()
        );
    }

    #[test]
    fn oracle_beats_first_pass_on_noisy_channel() {
        let cfg = ChannelConfig {
            sub_rate: 0.5,
            ..ChannelConfig::new(Domain::AssistantCommands, 3)
        };
        let data = synthesize_corpus(&cfg, 1000).unwrap();
        let n = data.len() as f64;
        let first: f64 = data.iter().map(|l| l.errors(0) as f64).sum::<f64>() / n;
        let oracle: f64 = data
            .iter()
            .map(|l| (0..l.len()).map(|i| l.errors(i)).min().unwrap() as f64)
            .sum::<f64>()
            / n;
        assert!(oracle < first, "oracle {oracle} first {first}");
    }

    #[test]
    fn hypotheses_sorted_by_first_pass_score() {
        let data = synthesize_corpus(&ChannelConfig::new(Domain::EntityRich, 2), 100).unwrap();
        for l in data {
            assert!(l
                .hypotheses
                .windows(2)
                .all(|w| w[0].first_pass_score <= w[1].first_pass_score));
        }
    }

    #[test]
    fn rejects_bad_rates() {
        let cfg = ChannelConfig {
            del_rate: 1.0,
            ..ChannelConfig::new(Domain::EntityRich, 0)
        };
        assert!(synthesize_corpus(&cfg, 1).is_err());
        let cfg = ChannelConfig {
            nbest: 0,
            ..ChannelConfig::new(Domain::EntityRich, 0)
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn split_is_contiguous_and_complete() {
        let data = synthesize_corpus(&ChannelConfig::new(Domain::EntityRich, 2), 10).unwrap();
        let (a, b, c) = split_dataset(&data, 0.6, 0.2);
        assert_eq!((a.len(), b.len(), c.len()), (6, 2, 2));
        assert_eq!(a[0], data[0]);
        assert_eq!(c[1], data[9]);
    }
}
