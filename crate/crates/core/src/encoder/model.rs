use super::config::EncoderConfig;
use super::params::ParamStore;
use crate::autodiff::{Tape, Tensor, Var};
use crate::data::{EncodedBatch, HypothesisBatch, NBestList, Vocabulary};
use crate::error::{Error, Result};
use crate::peft::{AdaptationConfig, LoraConfig};
use crate::rng::Rng;

/// Number of N-best lists scored per forward pass during evaluation.
const EVAL_CHUNK: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct ScoringModel {
    pub config: EncoderConfig,
    pub vocab: Vocabulary,
    pub params: ParamStore,
    pub adaptation: Option<AdaptationConfig>,
}

/// Dropout is only sampled in training mode.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut Rng),
}

/// Tape handles for every model parameter, aligned with `ParamStore` order.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

pub struct Forward {
    /// `[n_seq·seq_len × d_model]`
    pub hidden: Var,
    /// `[n_seq × d_model]`, the final state at each `[CLS]` position.
    pub cls: Var,
    /// `[n_seq]` second-pass scores.
    pub scores: Var,
}

fn normal_tensor(shape: &[usize], std: f64, rng: &mut Rng) -> Tensor {
    let mut t = Tensor::zeros(shape);
    t.data_mut().iter_mut().for_each(|x| *x = std * rng.normal());
    t
}

pub(crate) fn sinusoidal_positions(seq_len: usize, d: usize) -> Vec<f64> {
    let mut pe = vec![0.0; seq_len * d];
    for pos in 0..seq_len {
        for i in 0..d {
            let pair = (i / 2) as f64;
            let angle = pos as f64 / 10000f64.powf(2.0 * pair / d as f64);
            pe[pos * d + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    pe
}

impl ScoringModel {
    /// Randomly initialized model. Weights are `N(0, 1/fan_in)`, embeddings
    /// `N(0, 1)`, biases zero and layer-norm gains one.
    pub fn new(config: EncoderConfig, vocab: Vocabulary) -> Result<Self> {
        config.validate()?;
        if config.vocab_size != vocab.len() {
            return Err(Error::Config(format!(
                "vocab_size {} but vocabulary has {} entries",
                config.vocab_size,
                vocab.len()
            )));
        }
        let d = config.d_model;
        let h = config.head_hidden();
        let root = Rng::new(config.seed);
        let mut params = ParamStore::default();
        let mut add = |name: String, t: Tensor| params.insert(name, t).map(|_| ());
        let mut draw = {
            let mut counter = 0u64;
            move |shape: &[usize], std: f64| {
                counter += 1;
                normal_tensor(shape, std, &mut root.split(counter))
            }
        };
        let scaled = |fan_in: usize| 1.0 / (fan_in as f64).sqrt();

        add("embed.tokens".into(), draw(&[config.vocab_size, d], 1.0))?;
        for l in 0..config.layers {
            for m in ["q", "k", "v", "o"] {
                add(format!("layer{l}.attn.{m}.weight"), draw(&[d, d], scaled(d)))?;
                add(format!("layer{l}.attn.{m}.bias"), Tensor::zeros(&[d]))?;
            }
            add(format!("layer{l}.ln1.gain"), Tensor::vector(vec![1.0; d]))?;
            add(format!("layer{l}.ln1.bias"), Tensor::zeros(&[d]))?;
            add(format!("layer{l}.ffn.f1.weight"), draw(&[config.d_ff, d], scaled(d)))?;
            add(format!("layer{l}.ffn.f1.bias"), Tensor::zeros(&[config.d_ff]))?;
            add(
                format!("layer{l}.ffn.f2.weight"),
                draw(&[d, config.d_ff], scaled(config.d_ff)),
            )?;
            add(format!("layer{l}.ffn.f2.bias"), Tensor::zeros(&[d]))?;
            add(format!("layer{l}.ln2.gain"), Tensor::vector(vec![1.0; d]))?;
            add(format!("layer{l}.ln2.bias"), Tensor::zeros(&[d]))?;
        }
        add("head.h1.weight".into(), draw(&[h, d], scaled(d)))?;
        add("head.h1.bias".into(), Tensor::zeros(&[h]))?;
        add("head.h2.weight".into(), draw(&[1, h], scaled(h)))?;
        add("head.h2.bias".into(), Tensor::zeros(&[1]))?;

        Ok(Self {
            config,
            vocab,
            params,
            adaptation: None,
        })
    }

    /// Registers every parameter on `tape`. With `trainable`, unfrozen
    /// parameters are leaves that receive gradients; otherwise all are
    /// constants.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|p| {
                let rg = trainable && !p.frozen;
                tape.leaf(p.tensor.clone().with_requires_grad(rg))
            })
            .collect();
        Bound { vars }
    }

    /// Like [`bind`](Self::bind) with constants, but parameters listed in
    /// `overrides` (by store position) use the given tape variables.
    pub fn bind_with(&self, tape: &mut Tape, overrides: &[(usize, Var)]) -> Bound {
        let mut bound = self.bind(tape, false);
        for &(i, v) in overrides {
            bound.vars[i] = v;
        }
        bound
    }

    fn var(&self, bound: &Bound, name: &str) -> Result<Var> {
        self.params
            .position(name)
            .map(|i| bound.vars[i])
            .ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))
    }

    fn lora(&self) -> Option<&LoraConfig> {
        match &self.adaptation {
            Some(AdaptationConfig::Lora(cfg)) => Some(cfg),
            _ => None,
        }
    }

    fn has_adapters(&self) -> bool {
        matches!(self.adaptation, Some(AdaptationConfig::Adapter(_)))
    }

    /// `x·Wᵀ + b`, plus the low-rank branch `(α/r)·B·A·dropout(x)` when the
    /// matrix carries a LoRA pair.
    fn linear(&self, tape: &mut Tape, bound: &Bound, x: Var, prefix: &str, mode: &mut Mode<'_>) -> Result<Var> {
        let w = self.var(bound, &format!("{prefix}.weight"))?;
        let b = self.var(bound, &format!("{prefix}.bias"))?;
        let xw = tape.matmul_nt(x, w)?;
        let mut y = tape.add_row(xw, b)?;
        if let Some(cfg) = self.lora() {
            if let Some(ia) = self.params.position(&format!("{prefix}.lora_a")) {
                let a = bound.vars[ia];
                let b = self.var(bound, &format!("{prefix}.lora_b"))?;
                let xin = match mode {
                    Mode::Train(rng) => tape.dropout(x, cfg.dropout, rng)?,
                    Mode::Eval => x,
                };
                let down = tape.matmul_nt(xin, a)?;
                let up = tape.matmul_nt(down, b)?;
                let scaled = tape.scale(up, cfg.scaling());
                y = tape.add(y, scaled)?;
            }
        }
        Ok(y)
    }

    /// Residual bottleneck adapter `y + up(gelu(down(y)))`.
    fn adapter(&self, tape: &mut Tape, bound: &Bound, y: Var, prefix: &str, mode: &mut Mode<'_>) -> Result<Var> {
        let down = self.linear(tape, bound, y, &format!("{prefix}.down"), mode)?;
        let act = tape.gelu(down);
        let up = self.linear(tape, bound, act, &format!("{prefix}.up"), mode)?;
        tape.add(y, up)
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        batch: &EncodedBatch,
        mode: &mut Mode<'_>,
    ) -> Result<Forward> {
        let cfg = &self.config;
        if batch.seq_len > cfg.max_len {
            return Err(Error::SequenceTooLong {
                len: batch.seq_len,
                max: cfg.max_len,
            });
        }
        let d = cfg.d_model;
        let rows = batch.n_seq * batch.seq_len;

        let table = self.var(bound, "embed.tokens")?;
        let tok = tape.embedding(table, batch.ids.clone())?;
        let pe = sinusoidal_positions(batch.seq_len, d);
        let pos: Vec<f64> = (0..batch.n_seq).flat_map(|_| pe.iter().copied()).collect();
        let pos = tape.constant(Tensor::matrix(rows, d, pos)?);
        let mut h = tape.add(tok, pos)?;

        for l in 0..cfg.layers {
            let q = self.linear(tape, bound, h, &format!("layer{l}.attn.q"), mode)?;
            let k = self.linear(tape, bound, h, &format!("layer{l}.attn.k"), mode)?;
            let v = self.linear(tape, bound, h, &format!("layer{l}.attn.v"), mode)?;
            let ctx = tape.attention(q, k, v, batch.n_seq, batch.seq_len, cfg.heads, batch.key_valid.clone())?;
            let mut o = self.linear(tape, bound, ctx, &format!("layer{l}.attn.o"), mode)?;
            if self.has_adapters() {
                o = self.adapter(tape, bound, o, &format!("layer{l}.adapter_attn"), mode)?;
            }
            let res = tape.add(h, o)?;
            let h1 = tape.layer_norm(
                res,
                self.var(bound, &format!("layer{l}.ln1.gain"))?,
                self.var(bound, &format!("layer{l}.ln1.bias"))?,
            )?;

            let f = self.linear(tape, bound, h1, &format!("layer{l}.ffn.f1"), mode)?;
            let f = tape.gelu(f);
            let mut f = self.linear(tape, bound, f, &format!("layer{l}.ffn.f2"), mode)?;
            if self.has_adapters() {
                f = self.adapter(tape, bound, f, &format!("layer{l}.adapter_ffn"), mode)?;
            }
            let res = tape.add(h1, f)?;
            h = tape.layer_norm(
                res,
                self.var(bound, &format!("layer{l}.ln2.gain"))?,
                self.var(bound, &format!("layer{l}.ln2.bias"))?,
            )?;
        }

        let cls = tape.select_rows(h, batch.cls_rows())?;
        let scores = self.head(tape, bound, cls)?;
        Ok(Forward { hidden: h, cls, scores })
    }

    /// Two-layer feed-forward head `d → d/2 → 1` with tanh; returns `[n]`.
    pub fn head(&self, tape: &mut Tape, bound: &Bound, cls: Var) -> Result<Var> {
        let n = tape.value(cls).dims2().0;
        let w1 = self.var(bound, "head.h1.weight")?;
        let b1 = self.var(bound, "head.h1.bias")?;
        let w2 = self.var(bound, "head.h2.weight")?;
        let b2 = self.var(bound, "head.h2.bias")?;
        let z = tape.matmul_nt(cls, w1)?;
        let z = tape.add_row(z, b1)?;
        let z = tape.tanh(z);
        let s = tape.matmul_nt(z, w2)?;
        let s = tape.add_row(s, b2)?;
        tape.reshape(s, vec![n])
    }

    /// Encodes one sequence; `mask[i]` is false at `[PAD]` positions.
    /// Returns the hidden states `[len × d]` and `g_cls` `[d]`.
    pub fn encode(&self, ids: &[usize], mask: &[bool]) -> Result<(Tensor, Tensor)> {
        if ids.len() > self.config.max_len {
            return Err(Error::SequenceTooLong {
                len: ids.len(),
                max: self.config.max_len,
            });
        }
        if ids.len() != mask.len() || ids.is_empty() {
            return Err(Error::shape("encode", &[ids.len()], &[mask.len()]));
        }
        let batch = EncodedBatch {
            ids: ids.to_vec(),
            key_valid: mask.to_vec(),
            n_seq: 1,
            seq_len: ids.len(),
        };
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let out = self.forward(&mut tape, &bound, &batch, &mut Mode::Eval)?;
        let hidden = tape.value(out.hidden).clone();
        let cls = tape.value(out.cls).clone().reshape(vec![self.config.d_model])?;
        Ok((hidden, cls))
    }

    /// Second-pass score `s^l` of a `[CLS]` vector.
    pub fn score_head(&self, g_cls: &Tensor) -> Result<f64> {
        if g_cls.numel() != self.config.d_model {
            return Err(Error::shape("score_head", g_cls.shape(), &[self.config.d_model]));
        }
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let cls = tape.constant(g_cls.clone().reshape(vec![1, self.config.d_model])?);
        let s = self.head(&mut tape, &bound, cls)?;
        Ok(tape.value(s).item())
    }

    /// Second-pass scores of already-encoded sequences.
    pub fn score_sequences(&self, seqs: &[Vec<usize>]) -> Result<Vec<f64>> {
        let batch = EncodedBatch::collate(seqs)?;
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let out = self.forward(&mut tape, &bound, &batch, &mut Mode::Eval)?;
        Ok(tape.value(out.scores).data().to_vec())
    }

    /// Second-pass scores for the first `nbest` hypotheses of every list.
    pub fn score_lists(&self, lists: &[NBestList], nbest: usize) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(lists.len());
        for chunk in lists.chunks(EVAL_CHUNK) {
            let refs: Vec<&NBestList> = chunk.iter().collect();
            let batch = HypothesisBatch::build(&self.vocab, &refs, nbest, self.config.max_len)?;
            let mut tape = Tape::new();
            let bound = self.bind(&mut tape, false);
            let fwd = self.forward(&mut tape, &bound, &batch.encoded, &mut Mode::Eval)?;
            let scores = tape.value(fwd.scores).data();
            for w in batch.offsets.windows(2) {
                out.push(scores[w[0]..w[1]].to_vec());
            }
        }
        Ok(out)
    }

    pub fn parameter_count(&self) -> usize {
        self.params.total_count()
    }
}
