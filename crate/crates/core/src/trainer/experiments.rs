use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::train::{train, TrainConfig, TrainReport};
use crate::canonical::to_canonical_json;
use crate::data::NBestList;
use crate::encoder::ScoringModel;
use crate::error::{Error, Result};
use crate::eval::{evaluate, werr};
use crate::peft::{trainable_fraction, Method};

#[derive(Debug, Clone)]
pub struct DomainData {
    pub domain: String,
    pub train: Vec<NBestList>,
    pub dev: Vec<NBestList>,
    pub test: Vec<NBestList>,
}

/// A named training recipe; `train.method` selects the adaptation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSpec {
    pub name: String,
    pub train: TrainConfig,
}

impl MethodSpec {
    pub fn new(train: TrainConfig) -> Self {
        Self {
            name: train.method.method().to_string(),
            train,
        }
    }
}

/// How trained models are scored on held-out data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    pub beta: f64,
    pub nbest: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self { beta: 1.0, nbest: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WerCell {
    pub domain: String,
    pub wer: f64,
    /// Percent relative reduction against the unadapted base.
    pub werr_percent: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRow {
    pub name: String,
    pub method: Option<Method>,
    pub trainable_fraction: f64,
    pub cells: Vec<WerCell>,
    pub train: Option<TrainReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub target: String,
    pub domains: Vec<String>,
    pub eval: EvalSettings,
    /// Unadapted base first, then one row per method.
    pub rows: Vec<MethodRow>,
}

impl ComparisonReport {
    pub fn to_json(&self) -> Result<String> {
        to_canonical_json(self)
    }

    pub fn row(&self, name: &str) -> Option<&MethodRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    /// WERR percent of `row` on `domain`.
    pub fn werr(&self, row: &str, domain: &str) -> Option<f64> {
        self.row(row)?.cells.iter().find(|c| c.domain == domain)?.werr_percent
    }

    /// Mean WERR percent of a row over every domain except the target.
    pub fn non_target_werr(&self, row: &str) -> Option<f64> {
        let vals: Vec<f64> = self
            .domains
            .iter()
            .filter(|d| **d != self.target)
            .map(|d| self.werr(row, d))
            .collect::<Option<_>>()?;
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    /// Rows are systems, columns are domains with WERR; the target domain
    /// is starred.
    pub fn to_table(&self) -> String {
        let name_w = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(0).max(6);
        let heads: Vec<String> = self
            .domains
            .iter()
            .map(|d| if *d == self.target { format!("{d}*") } else { d.clone() })
            .collect();
        let col_w: Vec<usize> = heads.iter().map(|h| h.len().max(9)).collect();
        let mut out = String::new();
        let _ = write!(out, "{:<name_w$}", "system");
        for (h, w) in heads.iter().zip(&col_w) {
            let _ = write!(out, "  {h:>w$}");
        }
        let _ = writeln!(out, "  {:>10}", "Δ-params%");
        for r in &self.rows {
            let _ = write!(out, "{:<name_w$}", r.name);
            for (c, w) in r.cells.iter().zip(&col_w) {
                let v = c
                    .werr_percent
                    .map(|x| format!("{x:+.2}%"))
                    .unwrap_or_else(|| "-".into());
                let _ = write!(out, "  {v:>w$}");
            }
            let _ = writeln!(out, "  {:>9.4}%", 100.0 * r.trainable_fraction);
        }
        out
    }
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn werr_percent(base: f64, wer: f64) -> Option<f64> {
    werr(base, wer).map(|x| 100.0 * x)
}

/// Trains every method on the target domain and evaluates it on the test
/// split of every domain, as WERR against the unadapted base.
pub fn compare_methods(
    base: &ScoringModel,
    domains: &[DomainData],
    target: usize,
    methods: &[MethodSpec],
    eval: EvalSettings,
    jobs: usize,
) -> Result<ComparisonReport> {
    if domains.len() < 2 {
        return Err(Error::Config(
            "comparison needs a target and at least one other domain".into(),
        ));
    }
    let tgt = domains
        .get(target)
        .ok_or_else(|| Error::Config(format!("target index {target} out of range")))?;
    if base.adaptation.is_some() {
        return Err(Error::Config("comparison base must be unadapted".into()));
    }
    let base_wer = domains
        .iter()
        .map(|d| Ok(evaluate(base, &d.test, eval.beta, eval.nbest)?.wer))
        .collect::<Result<Vec<f64>>>()?;
    let cells_for = |wers: &[f64]| -> Vec<WerCell> {
        domains
            .iter()
            .zip(wers.iter().zip(&base_wer))
            .map(|(d, (&w, &b))| WerCell {
                domain: d.domain.clone(),
                wer: w,
                werr_percent: werr_percent(b, w),
            })
            .collect()
    };
    let mut rows = vec![MethodRow {
        name: "base".into(),
        method: None,
        trainable_fraction: 0.0,
        cells: cells_for(&base_wer),
        train: None,
    }];
    let trained = pool(jobs)?.install(|| {
        methods
            .par_iter()
            .map(|m| {
                let out = train(base.clone(), &tgt.train, &tgt.dev, &m.train)?;
                let wers = domains
                    .iter()
                    .map(|d| Ok(evaluate(&out.model, &d.test, eval.beta, eval.nbest)?.wer))
                    .collect::<Result<Vec<f64>>>()?;
                Ok(MethodRow {
                    name: m.name.clone(),
                    method: Some(m.train.method.method()),
                    trainable_fraction: trainable_fraction(&out.model),
                    cells: cells_for(&wers),
                    train: Some(out.report),
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    rows.extend(trained);
    Ok(ComparisonReport {
        target: tgt.domain.clone(),
        domains: domains.iter().map(|d| d.domain.clone()).collect(),
        eval,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityCell {
    pub method: String,
    pub warmup: usize,
    pub lr: f64,
    pub wer: f64,
    pub werr_percent: Option<f64>,
    pub diverged: bool,
    pub divergence_step: Option<usize>,
    pub best_step: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilitySpread {
    pub method: String,
    pub min_werr_percent: Option<f64>,
    pub max_werr_percent: Option<f64>,
    /// `max − min` WERR over the method's cells.
    pub spread: Option<f64>,
    pub diverged_cells: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub domain: String,
    pub base_wer: f64,
    pub warmups: Vec<usize>,
    pub lrs: Vec<f64>,
    pub cells: Vec<StabilityCell>,
    pub spreads: Vec<StabilitySpread>,
}

impl StabilityReport {
    pub fn to_json(&self) -> Result<String> {
        to_canonical_json(self)
    }

    pub fn spread(&self, method: &str) -> Option<&StabilitySpread> {
        self.spreads.iter().find(|s| s.method == method)
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<8}  {:>7}  {:>9}  {:>8}  {:>9}  diverged",
            "method", "warmup", "lr", "WER", "WERR"
        );
        for c in &self.cells {
            let werr = c
                .werr_percent
                .map(|x| format!("{x:+.2}%"))
                .unwrap_or_else(|| "-".into());
            let _ = writeln!(
                out,
                "{:<8}  {:>7}  {:>9.1e}  {:>7.2}%  {:>9}  {}",
                c.method,
                c.warmup,
                c.lr,
                100.0 * c.wer,
                werr,
                if c.diverged { "yes" } else { "no" }
            );
        }
        for s in &self.spreads {
            let spread = s.spread.map(|x| format!("{x:.2}")).unwrap_or_else(|| "-".into());
            let _ = writeln!(
                out,
                "spread {}: {spread} WERR points, {} diverged",
                s.method, s.diverged_cells
            );
        }
        out
    }
}

/// Runs `train` for every (warmup, lr) pair and every method, on the
/// domain's train/dev split, scoring the test split. Divergent cells are
/// recorded, not fatal.
pub fn stability_sweep(
    base: &ScoringModel,
    data: &DomainData,
    methods: &[MethodSpec],
    warmups: &[usize],
    lrs: &[f64],
    eval: EvalSettings,
    jobs: usize,
) -> Result<StabilityReport> {
    if warmups.is_empty() || lrs.is_empty() || methods.is_empty() {
        return Err(Error::Empty("stability grid"));
    }
    let base_wer = evaluate(base, &data.test, eval.beta, eval.nbest)?.wer;
    let mut grid = Vec::new();
    for m in methods {
        for &w in warmups {
            for &lr in lrs {
                let cfg = TrainConfig {
                    warmup: w,
                    lr,
                    ..m.train.clone()
                };
                cfg.validate()?;
                grid.push((m.name.clone(), cfg));
            }
        }
    }
    let cells = pool(jobs)?.install(|| {
        grid.par_iter()
            .map(|(name, cfg)| {
                let out = train(base.clone(), &data.train, &data.dev, cfg)?;
                let wer = evaluate(&out.model, &data.test, eval.beta, eval.nbest)?.wer;
                Ok(StabilityCell {
                    method: name.clone(),
                    warmup: cfg.warmup,
                    lr: cfg.lr,
                    wer,
                    werr_percent: werr_percent(base_wer, wer),
                    diverged: out.report.diverged,
                    divergence_step: out.report.divergence_step,
                    best_step: out.report.best_step,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let spreads = methods
        .iter()
        .map(|m| {
            let mine: Vec<&StabilityCell> = cells.iter().filter(|c| c.method == m.name).collect();
            let vals: Vec<f64> = mine.iter().filter_map(|c| c.werr_percent).collect();
            let min = vals.iter().copied().reduce(f64::min);
            let max = vals.iter().copied().reduce(f64::max);
            StabilitySpread {
                method: m.name.clone(),
                min_werr_percent: min,
                max_werr_percent: max,
                spread: min.zip(max).map(|(a, b)| b - a),
                diverged_cells: mine.iter().filter(|c| c.diverged).count(),
            }
        })
        .collect();
    Ok(StabilityReport {
        domain: data.domain.clone(),
        base_wer,
        warmups: warmups.to_vec(),
        lrs: lrs.to_vec(),
        cells,
        spreads,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub size: usize,
    pub wer: f64,
    pub diverged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingCurve {
    pub method: String,
    pub points: Vec<ScalingPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub domain: String,
    pub base_wer: f64,
    pub sizes: Vec<usize>,
    pub curves: Vec<ScalingCurve>,
}

impl ScalingReport {
    pub fn to_json(&self) -> Result<String> {
        to_canonical_json(self)
    }

    /// `method,size,wer` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,size,wer\n");
        for c in &self.curves {
            for p in &c.points {
                let _ = writeln!(out, "{},{},{}", c.method, p.size, p.wer);
            }
        }
        out
    }
}

/// Trains every method on nested prefixes of the training split and
/// reports test WER against subset size.
pub fn scaling_sweep(
    base: &ScoringModel,
    data: &DomainData,
    methods: &[MethodSpec],
    sizes: &[usize],
    eval: EvalSettings,
    jobs: usize,
) -> Result<ScalingReport> {
    if sizes.is_empty() || methods.is_empty() {
        return Err(Error::Empty("scaling grid"));
    }
    if sizes[0] == 0 || sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("sizes must be positive and strictly ascending".into()));
    }
    let largest = *sizes.last().expect("nonempty");
    if largest > data.train.len() {
        return Err(Error::Config(format!(
            "size {largest} exceeds the {} training utterances",
            data.train.len()
        )));
    }
    let base_wer = evaluate(base, &data.test, eval.beta, eval.nbest)?.wer;
    let grid: Vec<(usize, usize)> = (0..methods.len())
        .flat_map(|m| sizes.iter().map(move |&s| (m, s)))
        .collect();
    let points = pool(jobs)?.install(|| {
        grid.par_iter()
            .map(|&(m, size)| {
                let out = train(base.clone(), &data.train[..size], &data.dev, &methods[m].train)?;
                let wer = evaluate(&out.model, &data.test, eval.beta, eval.nbest)?.wer;
                Ok(ScalingPoint {
                    size,
                    wer,
                    diverged: out.report.diverged,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let curves = methods
        .iter()
        .zip(points.chunks(sizes.len()))
        .map(|(m, pts)| ScalingCurve {
            method: m.name.clone(),
            points: pts.to_vec(),
        })
        .collect();
    Ok(ScalingReport {
        domain: data.domain.clone(),
        base_wer,
        sizes: sizes.to_vec(),
        curves,
    })
}
