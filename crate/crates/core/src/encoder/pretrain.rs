use serde::{Deserialize, Serialize};

use super::model::{Mode, ScoringModel};
use crate::data::{HypothesisBatch, NBestList};
use crate::error::{Error, Result};
use crate::losses::RegularizerConfig;
use crate::rng::Rng;
use crate::trainer::{compute_gradients, lr_at, Adam};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub warmup: usize,
    pub batch_utts: usize,
    pub nbest: usize,
    pub beta: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            lr: 1e-3,
            warmup: 20,
            batch_utts: 8,
            nbest: 4,
            beta: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug)]
pub struct PretrainOutcome {
    pub model: ScoringModel,
    /// Training loss per step.
    pub losses: Vec<f64>,
}

/// Full-parameter MWER training on a mixed corpus, standing in for a
/// pretrained rescoring checkpoint. The result is unadapted with every
/// parameter unfrozen.
pub fn pretrain_proxy(model: ScoringModel, corpus: &[NBestList], cfg: &PretrainConfig) -> Result<PretrainOutcome> {
    if corpus.is_empty() {
        return Err(Error::Empty("pretraining corpus"));
    }
    if model.adaptation.is_some() {
        return Err(Error::Config("pretraining expects an unadapted model".into()));
    }
    if !(cfg.lr > 0.0) || cfg.batch_utts == 0 || cfg.nbest == 0 {
        return Err(Error::Config(
            "pretraining needs lr > 0, batch_utts ≥ 1, nbest ≥ 1".into(),
        ));
    }
    let mut model = model;
    model.params.set_frozen(|_| false);
    let root = Rng::new(cfg.seed);
    let order_rng = root.split(1);
    let dropout_rng = root.split(2);
    let reg = RegularizerConfig::with_lambda(0.0);
    let mut adam = Adam::new(&model.params);
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0usize;
    let mut epoch = 0u64;
    let per = cfg.batch_utts.min(corpus.len());
    let mut losses = Vec::with_capacity(cfg.steps);

    for step in 1..=cfg.steps {
        if cursor + per > order.len() {
            order = (0..corpus.len()).collect();
            order_rng.split(epoch).shuffle(&mut order);
            epoch += 1;
            cursor = 0;
        }
        let picks: Vec<&NBestList> = order[cursor..cursor + per].iter().map(|&i| &corpus[i]).collect();
        cursor += per;
        let batch = HypothesisBatch::build(&model.vocab, &picks, cfg.nbest, model.config.max_len)?;
        let mut rng = dropout_rng.split(step as u64);
        let loss = match compute_gradients(&mut model, &batch, cfg.beta, &reg, &mut Mode::Train(&mut rng)) {
            Ok(l) => l,
            Err(Error::NonFinite(_)) => return Err(Error::Diverged { step }),
            Err(e) => return Err(e),
        };
        let finite = model
            .params
            .iter()
            .filter_map(|p| p.tensor.grad.as_ref())
            .all(|g| g.iter().all(|x| x.is_finite()));
        if !finite {
            return Err(Error::Diverged { step });
        }
        adam.step(&mut model.params, lr_at(cfg.lr, cfg.warmup, step));
        losses.push(loss);
        if step % 50 == 0 {
            log::info!("pretrain step {step} loss {loss:.5}");
        }
    }
    for p in model.params.iter_mut() {
        p.tensor.grad = None;
    }
    Ok(PretrainOutcome { model, losses })
}
