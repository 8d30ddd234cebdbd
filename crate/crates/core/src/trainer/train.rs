use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::adam::Adam;
use crate::autodiff::{check_gradients, Tape, Tensor, Var};
use crate::canonical::to_canonical_json;
use crate::data::{HypothesisBatch, NBestList};
use crate::encoder::{Bound, Mode, ScoringModel};
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::losses::{combined_loss, mwer_loss_value, MwerBatch, RegularizerConfig};
use crate::peft::{attach, trainable_fraction, AdaptationConfig, LoraConfig};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub method: AdaptationConfig,
    pub lr: f64,
    pub warmup: usize,
    pub max_steps: usize,
    /// Utterances per step; every kept hypothesis of each is scored.
    pub batch_utts: usize,
    /// Hypotheses kept per list.
    pub nbest: usize,
    /// Second-pass interpolation weight, fixed during training.
    pub beta: f64,
    /// Correlation regularizer weight.
    pub lambda: f64,
    /// Evaluations without dev WER improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            method: AdaptationConfig::Lora(LoraConfig::default()),
            lr: 1e-3,
            warmup: 50,
            max_steps: 300,
            batch_utts: 8,
            nbest: 4,
            beta: 1.0,
            lambda: 0.01,
            patience: 5,
            seed: 0,
            eval_every: 25,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.warmup > self.max_steps {
            return bad(format!("warmup {} exceeds max_steps {}", self.warmup, self.max_steps));
        }
        if self.patience == 0 || self.eval_every == 0 || self.batch_utts == 0 || self.nbest == 0 {
            return bad("patience, eval_every, batch_utts and nbest must be at least 1".into());
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be nonnegative, got {}", self.lambda));
        }
        if !self.beta.is_finite() {
            return bad("beta must be finite".into());
        }
        Ok(())
    }
}

/// Learning rate at 1-based step `t`: linear warmup, then constant.
pub fn lr_at(base: f64, warmup: usize, t: usize) -> f64 {
    if warmup == 0 {
        return base;
    }
    base * (t as f64 / warmup as f64).min(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub step: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DevPoint {
    pub step: usize,
    pub wer: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub method: String,
    pub trainable_fraction: f64,
    pub loss_curve: Vec<LossPoint>,
    pub dev_curve: Vec<DevPoint>,
    pub initial_dev_wer: f64,
    pub best_step: usize,
    pub best_dev_wer: f64,
    pub steps_run: usize,
    pub diverged: bool,
    pub divergence_step: Option<usize>,
    #[serde(skip)]
    pub wall_clock_seconds: f64,
}

impl TrainReport {
    pub fn to_json(&self) -> Result<String> {
        to_canonical_json(self)
    }

    /// `step,loss,dev_wer` rows; empty fields where a value was not recorded.
    pub fn curves_csv(&self) -> String {
        let mut steps: Vec<usize> = self
            .loss_curve
            .iter()
            .map(|p| p.step)
            .chain(self.dev_curve.iter().map(|p| p.step))
            .collect();
        steps.sort_unstable();
        steps.dedup();
        let mut out = String::from("step,loss,dev_wer\n");
        for s in steps {
            let loss = self
                .loss_curve
                .iter()
                .find(|p| p.step == s)
                .map(|p| p.loss.to_string())
                .unwrap_or_default();
            let wer = self
                .dev_curve
                .iter()
                .find(|p| p.step == s)
                .map(|p| p.wer.to_string())
                .unwrap_or_default();
            out.push_str(&format!("{s},{loss},{wer}\n"));
        }
        out
    }
}

pub struct TrainOutcome {
    /// Parameters at the step with the lowest dev WER.
    pub model: ScoringModel,
    pub report: TrainReport,
}

fn batch_loss(
    model: &ScoringModel,
    tape: &mut Tape,
    bound: &Bound,
    batch: &HypothesisBatch,
    beta: f64,
    reg: &RegularizerConfig,
    mode: &mut Mode<'_>,
) -> Result<Var> {
    let fwd = model.forward(tape, bound, &batch.encoded, mode)?;
    let lm = tape.scale(fwd.scores, beta);
    let fp = tape.constant(Tensor::vector(batch.first_pass.clone()));
    let scores = tape.add(fp, lm)?;
    let mut reg = *reg;
    if batch.encoded.n_seq < 2 {
        reg.lambda = 0.0;
    }
    combined_loss(
        tape,
        MwerBatch {
            scores,
            errors: &batch.errors,
            offsets: &batch.offsets,
        },
        fwd.cls,
        &reg,
    )
}

/// Forward + backward of the combined loss on one batch; fills the gradient
/// slot of every unfrozen parameter and clears the others. Returns the loss.
pub fn compute_gradients(
    model: &mut ScoringModel,
    batch: &HypothesisBatch,
    beta: f64,
    reg: &RegularizerConfig,
    mode: &mut Mode<'_>,
) -> Result<f64> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, true);
    let loss = batch_loss(model, &mut tape, &bound, batch, beta, reg, mode)?;
    let value = tape.value(loss).item();
    if !value.is_finite() {
        return Err(Error::NonFinite("loss"));
    }
    let mut grads = tape.backward(loss)?;
    for (p, var) in model.params.iter_mut().zip(bound.vars()) {
        p.tensor.grad = if p.frozen { None } else { grads.take(*var) };
    }
    Ok(value)
}

/// Worst relative error between tape gradients of the combined loss and
/// central finite differences, over every unfrozen parameter. With
/// `dropout_seed`, dropout is active with a mask replayed on every
/// evaluation.
pub fn check_model_gradients(
    model: &ScoringModel,
    batch: &HypothesisBatch,
    beta: f64,
    reg: &RegularizerConfig,
    dropout_seed: Option<u64>,
) -> Result<f64> {
    let trainable: Vec<usize> = model
        .params
        .iter()
        .enumerate()
        .filter(|(_, p)| !p.frozen)
        .map(|(i, _)| i)
        .collect();
    let inputs: Vec<Tensor> = trainable
        .iter()
        .map(|&i| {
            Tensor::new(
                model.params.as_slice()[i].tensor.shape().to_vec(),
                model.params.as_slice()[i].tensor.data().to_vec(),
            )
        })
        .collect::<Result<_>>()?;
    check_gradients(
        |tape, vars| {
            let overrides: Vec<(usize, Var)> = trainable.iter().copied().zip(vars.iter().copied()).collect();
            let bound = model.bind_with(tape, &overrides);
            match dropout_seed {
                Some(seed) => {
                    let mut rng = Rng::new(seed);
                    batch_loss(model, tape, &bound, batch, beta, reg, &mut Mode::Train(&mut rng))
                }
                None => batch_loss(model, tape, &bound, batch, beta, reg, &mut Mode::Eval),
            }
        },
        &inputs,
    )
}

/// Mean MWER loss over a dataset (evaluation mode, no regularizer).
pub fn dataset_mwer_loss(model: &ScoringModel, data: &[NBestList], beta: f64, nbest: usize) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let lm = model.score_lists(data, nbest)?;
    let mut total = 0.0;
    for (list, s) in data.iter().zip(&lm) {
        let combined: Vec<f64> = list
            .hypotheses
            .iter()
            .zip(s)
            .map(|(h, &l)| h.first_pass_score + beta * l)
            .collect();
        let errors: Vec<u32> = (0..combined.len()).map(|i| list.errors(i)).collect();
        total += mwer_loss_value(&combined, &errors, &[0, combined.len()])?;
    }
    Ok(total / data.len() as f64)
}

fn prepare(model: ScoringModel, method: &AdaptationConfig) -> Result<ScoringModel> {
    match &model.adaptation {
        None => attach(model, method),
        Some(a) if a.method() == method.method() => Ok(model),
        Some(a) => Err(Error::Config(format!(
            "model carries a {} adaptation but training requested {}",
            a.method(),
            method.method()
        ))),
    }
}

fn frozen_snapshot(model: &ScoringModel) -> Vec<(usize, Vec<f64>)> {
    model
        .params
        .iter()
        .enumerate()
        .filter(|(_, p)| p.frozen)
        .map(|(i, p)| (i, p.tensor.data().to_vec()))
        .collect()
}

fn audit_frozen(model: &ScoringModel, snapshot: &[(usize, Vec<f64>)]) -> Result<()> {
    let params = model.params.as_slice();
    for (i, data) in snapshot {
        let p = &params[*i];
        let same = p
            .tensor
            .data()
            .iter()
            .zip(data)
            .all(|(a, b)| a.to_bits() == b.to_bits());
        if !same {
            return Err(Error::FrozenModified(p.name.clone()));
        }
    }
    Ok(())
}

/// Yields `batch_utts` list indices per call, reshuffling every epoch.
struct Batcher {
    rng: Rng,
    order: Vec<usize>,
    cursor: usize,
    epoch: u64,
}

impl Batcher {
    fn new(n: usize, rng: Rng) -> Self {
        Self {
            rng,
            order: (0..n).collect(),
            cursor: n,
            epoch: 0,
        }
    }

    fn next(&mut self, k: usize) -> Vec<usize> {
        let k = k.min(self.order.len());
        if self.cursor + k > self.order.len() {
            let mut r = self.rng.split(self.epoch);
            self.epoch += 1;
            self.order.sort_unstable();
            r.shuffle(&mut self.order);
            self.cursor = 0;
        }
        let out = self.order[self.cursor..self.cursor + k].to_vec();
        self.cursor += k;
        out
    }
}

/// MWER training of the adapted parameters of `model` with Adam, linear
/// warmup and early stopping on dev WER.
///
/// A model without adaptation is first attached per `cfg.method`. A
/// non-finite loss or gradient stops training with `diverged` set; the
/// best checkpoint seen so far is still returned.
pub fn train(model: ScoringModel, train: &[NBestList], dev: &[NBestList], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if dev.is_empty() {
        return Err(Error::Empty("dev set"));
    }
    let started = Instant::now();
    let mut model = prepare(model, &cfg.method)?;
    let snapshot = frozen_snapshot(&model);
    let reg = RegularizerConfig::with_lambda(cfg.lambda);
    let root = Rng::new(cfg.seed);
    let mut batcher = Batcher::new(train.len(), root.split(1));
    let dropout_rng = root.split(2);
    let mut adam = Adam::new(&model.params);

    let initial = evaluate(&model, dev, cfg.beta, cfg.nbest)?.wer;
    let mut report = TrainReport {
        method: cfg.method.method().to_string(),
        trainable_fraction: trainable_fraction(&model),
        loss_curve: Vec::new(),
        dev_curve: vec![DevPoint { step: 0, wer: initial }],
        initial_dev_wer: initial,
        best_step: 0,
        best_dev_wer: initial,
        steps_run: 0,
        diverged: false,
        divergence_step: None,
        wall_clock_seconds: 0.0,
    };
    let mut best = model.params.clone();
    let mut stale = 0usize;

    for step in 1..=cfg.max_steps {
        let picks: Vec<&NBestList> = batcher.next(cfg.batch_utts).into_iter().map(|i| &train[i]).collect();
        let batch = HypothesisBatch::build(&model.vocab, &picks, cfg.nbest, model.config.max_len)?;
        let mut rng = dropout_rng.split(step as u64);
        let loss = match compute_gradients(&mut model, &batch, cfg.beta, &reg, &mut Mode::Train(&mut rng)) {
            Ok(l) => l,
            Err(Error::NonFinite(_)) => {
                report.diverged = true;
                report.divergence_step = Some(step);
                break;
            }
            Err(e) => return Err(e),
        };
        let grads_finite = model
            .params
            .iter()
            .filter_map(|p| p.tensor.grad.as_ref())
            .all(|g| g.iter().all(|x| x.is_finite()));
        if !grads_finite {
            report.diverged = true;
            report.divergence_step = Some(step);
            break;
        }
        adam.step(&mut model.params, lr_at(cfg.lr, cfg.warmup, step));
        report.loss_curve.push(LossPoint { step, loss });
        report.steps_run = step;

        if step % cfg.eval_every == 0 || step == cfg.max_steps {
            audit_frozen(&model, &snapshot)?;
            let wer = match evaluate(&model, dev, cfg.beta, cfg.nbest) {
                Ok(b) => b.wer,
                Err(Error::NonFinite(_)) => {
                    report.diverged = true;
                    report.divergence_step = Some(step);
                    break;
                }
                Err(e) => return Err(e),
            };
            report.dev_curve.push(DevPoint { step, wer });
            log::debug!("step {step} loss {loss:.5} dev wer {wer:.4}");
            if wer < report.best_dev_wer {
                report.best_dev_wer = wer;
                report.best_step = step;
                best = model.params.clone();
                stale = 0;
            } else {
                stale += 1;
                if stale >= cfg.patience {
                    break;
                }
            }
        }
    }

    model.params = best;
    audit_frozen(&model, &snapshot)?;
    report.wall_clock_seconds = started.elapsed().as_secs_f64();
    Ok(TrainOutcome { model, report })
}
