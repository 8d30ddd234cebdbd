use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::canonical::to_canonical_json;
use crate::error::Result;

/// Relative WER reduction against a baseline, as a fraction.
/// `None` when the baseline has zero errors and the system does not.
pub fn werr(baseline_wer: f64, wer: f64) -> Option<f64> {
    if baseline_wer == 0.0 {
        return (wer == 0.0).then_some(0.0);
    }
    Some((baseline_wer - wer) / baseline_wer)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainResult {
    pub domain: String,
    pub wer: f64,
    pub errors: u64,
    pub words: u64,
    /// Percentage relative to `EvalReport::baseline`.
    pub werr_percent: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub system: String,
    pub baseline: Option<String>,
    pub beta: f64,
    pub domains: Vec<DomainResult>,
    pub trainable_fraction: f64,
    pub config_digest: String,
    /// Not serialized: reports must be byte-identical across reruns.
    #[serde(skip)]
    pub wall_clock_seconds: f64,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        to_canonical_json(self)
    }

    /// Fills in WERR of each domain from a baseline report's WER.
    pub fn set_baseline(&mut self, baseline: &EvalReport) {
        self.baseline = Some(baseline.system.clone());
        for d in &mut self.domains {
            d.werr_percent = baseline
                .domains
                .iter()
                .find(|b| b.domain == d.domain)
                .and_then(|b| werr(b.wer, d.wer))
                .map(|x| 100.0 * x);
        }
    }

    /// Aligned plain-text table: domain, WER, WERR, trainable params.
    pub fn to_table(&self) -> String {
        let width = self
            .domains
            .iter()
            .map(|d| d.domain.len())
            .max()
            .unwrap_or(0)
            .max("domain".len());
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<width$}  {:>8}  {:>9}  {:>10}",
            "domain", "WER", "WERR", "Δ-params%"
        );
        for d in &self.domains {
            let werr = d
                .werr_percent
                .map(|w| format!("{w:+.2}%"))
                .unwrap_or_else(|| "-".into());
            let _ = writeln!(
                out,
                "{:<width$}  {:>7.2}%  {:>9}  {:>9.4}%",
                d.domain,
                100.0 * d.wer,
                werr,
                100.0 * self.trainable_fraction
            );
        }
        out
    }
}
