//! Run configuration: built-in defaults, overridden by a JSON config file,
//! overridden by command-line flags.

use std::path::Path;

use serde::{Deserialize, Serialize};

use lorb_core::data::{ChannelConfig, Domain};
use lorb_core::encoder::{EncoderConfig, PretrainConfig};
use lorb_core::peft::{AdaptationConfig, AdapterConfig, LoraConfig, Method, Target};
use lorb_core::trainer::{EvalSettings, TrainConfig};

use crate::Usage;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads for sweep and comparison grids.
    pub jobs: usize,
    pub method: Method,
    pub lora: LoraConfig,
    pub adapter: AdapterConfig,
    pub data: DataSection,
    pub encoder: EncoderSection,
    pub pretrain: PretrainSection,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub sweep: SweepSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            jobs: 1,
            method: Method::Lora,
            lora: LoraConfig::default(),
            adapter: AdapterConfig::default(),
            data: DataSection::default(),
            encoder: EncoderSection::default(),
            pretrain: PretrainSection::default(),
            train: TrainSection::default(),
            eval: EvalSection::default(),
            sweep: SweepSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub domains: Vec<Domain>,
    pub utts_per_domain: usize,
    pub sub_rate: f64,
    pub del_rate: f64,
    pub ins_rate: f64,
    pub nbest: usize,
    pub noise_scale: f64,
    pub train_frac: f64,
    pub dev_frac: f64,
    pub vocab_cap: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        let ch = ChannelConfig::new(Domain::AssistantCommands, 0);
        Self {
            domains: Domain::ALL.to_vec(),
            utts_per_domain: 600,
            sub_rate: ch.sub_rate,
            del_rate: ch.del_rate,
            ins_rate: ch.ins_rate,
            nbest: ch.nbest,
            noise_scale: ch.noise_scale,
            train_frac: 0.6,
            dev_frac: 0.2,
            vocab_cap: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderSection {
    pub layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub max_len: usize,
}

impl Default for EncoderSection {
    fn default() -> Self {
        let d = EncoderConfig::desk(1, 0);
        Self {
            layers: d.layers,
            d_model: d.d_model,
            heads: d.heads,
            d_ff: d.d_ff,
            max_len: d.max_len,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainSection {
    pub steps: usize,
    pub lr: f64,
    pub warmup: usize,
    pub batch_utts: usize,
}

impl Default for PretrainSection {
    fn default() -> Self {
        let p = PretrainConfig::default();
        Self {
            steps: p.steps,
            lr: p.lr,
            warmup: p.warmup,
            batch_utts: p.batch_utts,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub lr: f64,
    pub warmup: usize,
    pub max_steps: usize,
    pub batch_utts: usize,
    pub nbest: usize,
    pub beta: f64,
    pub lambda: f64,
    pub patience: usize,
    pub eval_every: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            lr: t.lr,
            warmup: t.warmup,
            max_steps: t.max_steps,
            batch_utts: t.batch_utts,
            nbest: t.nbest,
            beta: t.beta,
            lambda: t.lambda,
            patience: t.patience,
            eval_every: t.eval_every,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub beta: f64,
    pub nbest: usize,
    pub beta_grid: Vec<f64>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            beta: 1.0,
            nbest: 4,
            beta_grid: (0..=16).map(|i| i as f64 * 0.25).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub methods: Vec<Method>,
    pub warmups: Vec<usize>,
    pub lrs: Vec<f64>,
    pub sizes: Vec<usize>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            methods: Method::ALL.to_vec(),
            warmups: vec![50, 200],
            lrs: vec![1e-2, 1e-4],
            sizes: vec![45, 90, 180, 360],
        }
    }
}

/// Hyperparameter flags shared by every subcommand. Unset flags leave the
/// file or built-in value in place.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    /// Adaptation method
    #[arg(long, value_parser = parse_method)]
    pub method: Option<Method>,
    /// LoRA rank
    #[arg(long)]
    pub rank: Option<usize>,
    /// LoRA scaling numerator (the branch is scaled by alpha/rank)
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Dropout on the LoRA branch input
    #[arg(long = "lora-dropout")]
    pub lora_dropout: Option<f64>,
    /// LoRA target matrices, comma separated: q,k,v,o,f1,f2
    #[arg(long, value_delimiter = ',', value_parser = parse_target)]
    pub targets: Option<Vec<Target>>,
    /// First-pass/second-pass interpolation weight, in training and evaluation
    #[arg(long)]
    pub beta: Option<f64>,
    /// Correlation regularizer weight
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Peak learning rate
    #[arg(long)]
    pub lr: Option<f64>,
    /// Linear warmup steps
    #[arg(long)]
    pub warmup: Option<usize>,
    /// Step budget (pretraining steps for `pretrain`)
    #[arg(long = "max-steps")]
    pub max_steps: Option<usize>,
    /// Dev evaluations without improvement before stopping
    #[arg(long)]
    pub patience: Option<usize>,
}

pub fn parse_method(s: &str) -> Result<Method, String> {
    Method::parse(s).ok_or_else(|| format!("unknown method `{s}` (expected ft, lora, bitfit or adapter)"))
}

fn parse_target(s: &str) -> Result<Target, String> {
    Target::parse(s).ok_or_else(|| format!("unknown target `{s}` (expected q, k, v, o, f1 or f2)"))
}

pub fn parse_domain(s: &str) -> Result<Domain, String> {
    Domain::parse(s).ok_or_else(|| {
        let names: Vec<&str> = Domain::ALL.iter().map(|d| d.name()).collect();
        format!("unknown domain `{s}` (expected one of {})", names.join(", "))
    })
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text =
            std::fs::read_to_string(path).map_err(|e| Usage(format!("cannot read config {}: {e}", path.display())))?;
        let cfg = serde_json::from_str(&text).map_err(|e| Usage(format!("config {}: {e}", path.display())))?;
        Ok(cfg)
    }

    /// Applies flags. `pretraining` routes the optimizer flags to the
    /// pretraining section instead of the adaptation one.
    pub fn apply(&mut self, seed: Option<u64>, jobs: Option<usize>, o: &Overrides, pretraining: bool) {
        if let Some(s) = seed {
            self.seed = s;
        }
        if let Some(j) = jobs {
            self.jobs = j;
        }
        if let Some(m) = o.method {
            self.method = m;
        }
        if let Some(r) = o.rank {
            self.lora.rank = r;
        }
        if let Some(a) = o.alpha {
            self.lora.alpha = a;
        }
        if let Some(p) = o.lora_dropout {
            self.lora.dropout = p;
        }
        if let Some(t) = &o.targets {
            self.lora.targets = t.clone();
        }
        if let Some(b) = o.beta {
            self.train.beta = b;
            self.eval.beta = b;
        }
        if let Some(l) = o.lambda {
            self.train.lambda = l;
        }
        if let Some(p) = o.patience {
            self.train.patience = p;
        }
        if pretraining {
            if let Some(lr) = o.lr {
                self.pretrain.lr = lr;
            }
            if let Some(w) = o.warmup {
                self.pretrain.warmup = w;
            }
            if let Some(s) = o.max_steps {
                self.pretrain.steps = s;
            }
        } else {
            if let Some(lr) = o.lr {
                self.train.lr = lr;
            }
            if let Some(w) = o.warmup {
                self.train.warmup = w;
            }
            if let Some(s) = o.max_steps {
                self.train.max_steps = s;
            }
        }
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.jobs == 0 {
            return Err(Usage("jobs must be at least 1".into()).into());
        }
        if self.data.domains.is_empty() {
            return Err(Usage("at least one domain is required".into()).into());
        }
        let fr = (self.data.train_frac, self.data.dev_frac);
        if !(fr.0 > 0.0 && fr.1 > 0.0 && fr.0 + fr.1 < 1.0) {
            return Err(Usage(format!("split fractions {fr:?} must be positive and sum below 1")).into());
        }
        self.channel(Domain::AssistantCommands).validate().map_err(usage)?;
        self.encoder_config(1).validate().map_err(usage)?;
        self.train_config(self.method).validate().map_err(usage)?;
        Ok(())
    }

    pub fn adaptation(&self, method: Method) -> AdaptationConfig {
        match method {
            Method::Ft => AdaptationConfig::Ft,
            Method::Lora => AdaptationConfig::Lora(self.lora.clone()),
            Method::Bitfit => AdaptationConfig::Bitfit,
            Method::Adapter => AdaptationConfig::Adapter(self.adapter.clone()),
        }
    }

    pub fn channel(&self, domain: Domain) -> ChannelConfig {
        ChannelConfig {
            sub_rate: self.data.sub_rate,
            del_rate: self.data.del_rate,
            ins_rate: self.data.ins_rate,
            nbest: self.data.nbest,
            noise_scale: self.data.noise_scale,
            domain,
            seed: self.seed,
        }
    }

    pub fn encoder_config(&self, vocab_size: usize) -> EncoderConfig {
        let e = &self.encoder;
        EncoderConfig {
            layers: e.layers,
            d_model: e.d_model,
            heads: e.heads,
            d_ff: e.d_ff,
            max_len: e.max_len,
            vocab_size,
            seed: self.seed,
        }
    }

    pub fn pretrain_config(&self) -> PretrainConfig {
        PretrainConfig {
            steps: self.pretrain.steps,
            lr: self.pretrain.lr,
            warmup: self.pretrain.warmup,
            batch_utts: self.pretrain.batch_utts,
            nbest: self.train.nbest,
            beta: self.train.beta,
            seed: self.seed,
        }
    }

    pub fn train_config(&self, method: Method) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            method: self.adaptation(method),
            lr: t.lr,
            warmup: t.warmup,
            max_steps: t.max_steps,
            batch_utts: t.batch_utts,
            nbest: t.nbest,
            beta: t.beta,
            lambda: t.lambda,
            patience: t.patience,
            seed: self.seed,
            eval_every: t.eval_every,
        }
    }

    pub fn eval_settings(&self) -> EvalSettings {
        EvalSettings {
            beta: self.eval.beta,
            nbest: self.eval.nbest,
        }
    }
}

pub fn usage(e: lorb_core::Error) -> anyhow::Error {
    Usage(e.to_string()).into()
}
