use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;

use lorb_core::data::{read_nbest, split_dataset, synthesize_corpus, vocab_from_lists, write_nbest, Domain, NBestList};
use lorb_core::encoder::{
    pretrain_proxy, read_checkpoint, read_lora_delta, write_checkpoint, write_lora_delta, ScoringModel,
};
use lorb_core::eval::{
    corpus_wer, evaluate, oracle_selection, second_pass_scores, select_all, sweep_beta_scores, DomainResult,
    EvalReport, RescoreParams,
};
use lorb_core::peft::{trainable_fraction, AdaptationConfig, Method};
use lorb_core::trainer::{
    compare_methods, dataset_mwer_loss, scaling_sweep, stability_sweep, train, DomainData, MethodSpec,
};

use crate::config::RunConfig;
use crate::manifest::Run;
use crate::{Diverged, Usage};

pub const BASE_CKPT: &str = "base.ckpt";
pub const MODEL_CKPT: &str = "model.ckpt";
pub const LORA_DELTA: &str = "lora_delta.ckpt";

pub fn data_file(dir: &Path, domain: Domain) -> PathBuf {
    dir.join(format!("{}.jsonl", domain.name()))
}

fn load_model(run: &mut Run, path: &Path, delta: Option<&Path>) -> anyhow::Result<ScoringModel> {
    let bytes = run.read(path)?;
    let model = read_checkpoint(&mut bytes.as_slice()).with_context(|| format!("loading {}", path.display()))?;
    let Some(delta) = delta else {
        return Ok(model);
    };
    let bytes = run.read(delta)?;
    read_lora_delta(model, &mut bytes.as_slice()).with_context(|| format!("loading {}", delta.display()))
}

fn save_model(run: &mut Run, name: &str, model: &ScoringModel) -> anyhow::Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, model)?;
    run.write(name, &buf)?;
    Ok(())
}

fn load_lists(run: &mut Run, path: &Path) -> anyhow::Result<Vec<NBestList>> {
    let bytes = run.read(path)?;
    Ok(read_nbest(bytes.as_slice(), path)?)
}

/// Every configured domain's file from `dir`, split into train/dev/test.
fn load_domains(run: &mut Run, dir: &Path) -> anyhow::Result<Vec<DomainData>> {
    let cfg = run.config().clone();
    let mut out = Vec::new();
    for &domain in &cfg.data.domains {
        let lists = load_lists(run, &data_file(dir, domain))?;
        let (train, dev, test) = split_dataset(&lists, cfg.data.train_frac, cfg.data.dev_frac);
        if train.is_empty() || dev.is_empty() || test.is_empty() {
            return Err(Usage(format!(
                "{}: {} lists are too few for a train/dev/test split",
                domain.name(),
                lists.len()
            ))
            .into());
        }
        out.push(DomainData {
            domain: domain.name().to_owned(),
            train,
            dev,
            test,
        });
    }
    Ok(out)
}

fn target_index(domains: &[DomainData], target: Option<Domain>) -> anyhow::Result<usize> {
    let Some(t) = target else {
        return Ok(0);
    };
    domains
        .iter()
        .position(|d| d.domain == t.name())
        .ok_or_else(|| Usage(format!("domain {} is not in the configured domain list", t.name())).into())
}

#[derive(Serialize)]
struct SynthDomain {
    domain: String,
    utterances: usize,
    first_pass_wer: f64,
    oracle_wer: f64,
}

pub fn synth(mut run: Run) -> anyhow::Result<String> {
    let cfg = run.config().clone();
    let mut rows = Vec::new();
    for &domain in &cfg.data.domains {
        let lists = synthesize_corpus(&cfg.channel(domain), cfg.data.utts_per_domain)?;
        let mut buf = Vec::new();
        write_nbest(&mut buf, &lists)?;
        run.write(&format!("{}.jsonl", domain.name()), &buf)?;
        rows.push(SynthDomain {
            domain: domain.name().to_owned(),
            utterances: lists.len(),
            first_pass_wer: corpus_wer(&vec![0; lists.len()], &lists)?.wer,
            oracle_wer: corpus_wer(&oracle_selection(&lists), &lists)?.wer,
        });
    }
    run.write_json("synth_report.json", &rows)?;
    run.finish()?;
    let mut out = format!(
        "{:<20}  {:>6}  {:>10}  {:>10}\n",
        "domain", "utts", "first-pass", "oracle"
    );
    for r in &rows {
        let _ = writeln!(
            out,
            "{:<20}  {:>6}  {:>9.2}%  {:>9.2}%",
            r.domain,
            r.utterances,
            100.0 * r.first_pass_wer,
            100.0 * r.oracle_wer
        );
    }
    Ok(out)
}

#[derive(Serialize)]
struct PretrainReport {
    steps: usize,
    parameter_count: usize,
    vocab_size: usize,
    final_loss: Option<f64>,
    dev_mwer_loss: Vec<(String, f64)>,
}

pub fn pretrain(mut run: Run, data: &Path) -> anyhow::Result<String> {
    let cfg = run.config().clone();
    let domains = load_domains(&mut run, data)?;
    let vocab = vocab_from_lists(domains.iter().flat_map(|d| &d.train), cfg.data.vocab_cap)?;
    let model = ScoringModel::new(cfg.encoder_config(vocab.len()), vocab)?;
    // Interleave the domains so every mixture prefix is balanced.
    let longest = domains.iter().map(|d| d.train.len()).max().unwrap_or(0);
    let corpus: Vec<NBestList> = (0..longest)
        .flat_map(|i| domains.iter().filter_map(move |d| d.train.get(i).cloned()))
        .collect();
    log::info!("pretraining on {} lists from {} domains", corpus.len(), domains.len());
    let out = match pretrain_proxy(model, &corpus, &cfg.pretrain_config()) {
        Ok(o) => o,
        Err(lorb_core::Error::Diverged { step }) => {
            return Err(Diverged(format!("pretraining diverged at step {step}")).into())
        }
        Err(e) => return Err(e.into()),
    };
    save_model(&mut run, BASE_CKPT, &out.model)?;
    let mut csv = String::from("step,loss\n");
    for (i, l) in out.losses.iter().enumerate() {
        let _ = writeln!(csv, "{},{l}", i + 1);
    }
    run.write("pretrain_losses.csv", csv.as_bytes())?;
    let dev_mwer_loss = domains
        .iter()
        .map(|d| {
            Ok((
                d.domain.clone(),
                dataset_mwer_loss(&out.model, &d.dev, cfg.train.beta, cfg.train.nbest)?,
            ))
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let report = PretrainReport {
        steps: out.losses.len(),
        parameter_count: out.model.parameter_count(),
        vocab_size: out.model.vocab.len(),
        final_loss: out.losses.last().copied(),
        dev_mwer_loss,
    };
    run.write_json("pretrain_report.json", &report)?;
    run.finish()?;
    let mut text = format!(
        "pretrained {} parameters for {} steps, final loss {}\n",
        report.parameter_count,
        report.steps,
        report.final_loss.map_or("-".into(), |l| format!("{l:.5}"))
    );
    for (d, l) in &report.dev_mwer_loss {
        let _ = writeln!(text, "  dev MWER loss {d}: {l:.5}");
    }
    Ok(text)
}

pub fn train_cmd(mut run: Run, base: &Path, data: &Path, target: Option<Domain>) -> anyhow::Result<String> {
    let cfg = run.config().clone();
    let model = load_model(&mut run, base, None)?;
    let domains = load_domains(&mut run, data)?;
    let t = target_index(&domains, target)?;
    run.arg("domain", &domains[t].domain)?;
    let tc = cfg.train_config(cfg.method);
    log::info!("training {} on {}", cfg.method, domains[t].domain);
    let out = train(model, &domains[t].train, &domains[t].dev, &tc)?;
    save_model(&mut run, MODEL_CKPT, &out.model)?;
    if matches!(tc.method, AdaptationConfig::Lora(_)) {
        let mut buf = Vec::new();
        write_lora_delta(&mut buf, &out.model)?;
        run.write(LORA_DELTA, &buf)?;
    }
    run.write_json("train_report.json", &out.report)?;
    run.write("curves.csv", out.report.curves_csv().as_bytes())?;
    run.finish()?;
    let r = &out.report;
    let summary = format!(
        "{} on {}: dev WER {:.2}% -> {:.2}% (best step {}, {} steps run), trainable {:.4}%\n",
        r.method,
        domains[t].domain,
        100.0 * r.initial_dev_wer,
        100.0 * r.best_dev_wer,
        r.best_step,
        r.steps_run,
        100.0 * r.trainable_fraction
    );
    if r.diverged {
        return Err(Diverged(format!(
            "{summary}training diverged at step {}",
            r.divergence_step.unwrap_or(0)
        ))
        .into());
    }
    Ok(summary)
}

#[derive(Serialize)]
struct Rescored {
    utt_id: String,
    selected: usize,
    text: String,
    first_pass: Vec<f64>,
    second_pass: Vec<f64>,
    combined: Vec<f64>,
}

pub fn rescore(mut run: Run, model: &Path, delta: Option<&Path>, input: &Path) -> anyhow::Result<String> {
    let cfg = run.config().clone();
    let model = load_model(&mut run, model, delta)?;
    let lists = load_lists(&mut run, input)?;
    if lists.is_empty() {
        return Err(Usage(format!("{} contains no N-best lists", input.display())).into());
    }
    let params = RescoreParams { beta: cfg.eval.beta };
    let lm = second_pass_scores(&model, &lists, cfg.eval.nbest)?;
    let picks = select_all(&lists, &lm, params);
    let mut out = String::new();
    for ((list, scores), &pick) in lists.iter().zip(&lm).zip(&picks) {
        let first: Vec<f64> = list
            .hypotheses
            .iter()
            .take(scores.len())
            .map(|h| h.first_pass_score)
            .collect();
        let combined = first.iter().zip(scores).map(|(a, l)| a + cfg.eval.beta * l).collect();
        let rec = Rescored {
            utt_id: list.utt_id.clone(),
            selected: pick,
            text: list.hypotheses[pick].text.join(" "),
            first_pass: first,
            second_pass: scores.clone(),
            combined,
        };
        out.push_str(&serde_json::to_string(&rec)?);
        out.push('\n');
    }
    run.write("rescored.jsonl", out.as_bytes())?;
    run.finish()?;
    let mut text = format!("rescored {} utterances\n", lists.len());
    if lists.iter().all(|l| !l.reference.is_empty()) {
        let first = corpus_wer(&vec![0; lists.len()], &lists)?.wer;
        let second = corpus_wer(&picks, &lists)?.wer;
        let _ = writeln!(
            text,
            "WER first-pass {:.2}% -> rescored {:.2}%",
            100.0 * first,
            100.0 * second
        );
    }
    Ok(text)
}

fn eval_report(model: &ScoringModel, domains: &[DomainData], beta: f64, nbest: usize) -> anyhow::Result<EvalReport> {
    let results = domains
        .iter()
        .map(|d| {
            let b = evaluate(model, &d.test, beta, nbest)?;
            Ok(DomainResult {
                domain: d.domain.clone(),
                wer: b.wer,
                errors: b.errors,
                words: b.words,
                werr_percent: None,
            })
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    Ok(EvalReport {
        system: model
            .adaptation
            .as_ref()
            .map_or("base".to_owned(), |a| a.method().to_string()),
        baseline: None,
        beta,
        domains: results,
        trainable_fraction: if model.adaptation.is_some() {
            trainable_fraction(model)
        } else {
            0.0
        },
        config_digest: String::new(),
        wall_clock_seconds: 0.0,
    })
}

fn eval_csv(r: &EvalReport) -> String {
    let mut out = String::from("system,domain,wer,werr_percent\n");
    for d in &r.domains {
        let werr = d.werr_percent.map(|w| w.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{},{},{},{werr}", r.system, d.domain, d.wer);
    }
    out
}

pub fn eval_cmd(
    mut run: Run,
    model: &Path,
    delta: Option<&Path>,
    data: &Path,
    baseline: Option<&Path>,
) -> anyhow::Result<String> {
    let cfg = run.config().clone();
    let started = std::time::Instant::now();
    let model = load_model(&mut run, model, delta)?;
    let base = baseline.map(|p| load_model(&mut run, p, None)).transpose()?;
    let domains = load_domains(&mut run, data)?;
    let mut report = eval_report(&model, &domains, cfg.eval.beta, cfg.eval.nbest)?;
    if let Some(base) = &base {
        let b = eval_report(base, &domains, cfg.eval.beta, cfg.eval.nbest)?;
        report.set_baseline(&b);
    }
    report.config_digest = run.digest()?;
    report.wall_clock_seconds = started.elapsed().as_secs_f64();
    let table = report.to_table();
    run.write("eval_report.json", format!("{}\n", report.to_json()?).as_bytes())?;
    run.write("eval_table.txt", table.as_bytes())?;
    run.write("eval.csv", eval_csv(&report).as_bytes())?;
    run.finish()?;
    Ok(table)
}

fn method_specs(cfg: &RunConfig, methods: &[Method]) -> Vec<MethodSpec> {
    methods.iter().map(|&m| MethodSpec::new(cfg.train_config(m))).collect()
}

pub fn compare(
    mut run: Run,
    base: &Path,
    data: &Path,
    target: Option<Domain>,
    methods: Option<Vec<Method>>,
) -> anyhow::Result<String> {
    let cfg = run.config().clone();
    let model = load_model(&mut run, base, None)?;
    let domains = load_domains(&mut run, data)?;
    let t = target_index(&domains, target)?;
    let methods = methods.unwrap_or_else(|| cfg.sweep.methods.clone());
    run.arg("domain", &domains[t].domain)?;
    run.arg("methods", &methods)?;
    log::info!("comparing {} methods on {}", methods.len(), domains[t].domain);
    let report = compare_methods(
        &model,
        &domains,
        t,
        &method_specs(&cfg, &methods),
        cfg.eval_settings(),
        cfg.jobs,
    )?;
    let table = report.to_table();
    let mut csv = String::from("method,domain,wer,werr_percent,trainable_fraction\n");
    for row in &report.rows {
        for c in &row.cells {
            let werr = c.werr_percent.map(|w| w.to_string()).unwrap_or_default();
            let _ = writeln!(
                csv,
                "{},{},{},{werr},{}",
                row.name, c.domain, c.wer, row.trainable_fraction
            );
        }
    }
    run.write("compare_report.json", format!("{}\n", report.to_json()?).as_bytes())?;
    run.write("compare_table.txt", table.as_bytes())?;
    run.write("compare.csv", csv.as_bytes())?;
    run.finish()?;
    Ok(table)
}

pub struct StabilityArgs {
    pub target: Option<Domain>,
    pub methods: Option<Vec<Method>>,
    pub warmups: Option<Vec<usize>>,
    pub lrs: Option<Vec<f64>>,
}

pub fn sweep_stability(mut run: Run, base: &Path, data: &Path, a: StabilityArgs) -> anyhow::Result<String> {
    let cfg = run.config().clone();
    let model = load_model(&mut run, base, None)?;
    let domains = load_domains(&mut run, data)?;
    let t = target_index(&domains, a.target)?;
    let methods = a.methods.unwrap_or_else(|| cfg.sweep.methods.clone());
    let warmups = a.warmups.unwrap_or_else(|| cfg.sweep.warmups.clone());
    let lrs = a.lrs.unwrap_or_else(|| cfg.sweep.lrs.clone());
    run.arg("domain", &domains[t].domain)?;
    run.arg("methods", &methods)?;
    run.arg("warmups", &warmups)?;
    run.arg("lrs", &lrs)?;
    // A warmup longer than the step budget is a grid the user asked for, so
    // stretch the budget instead of rejecting the cell.
    let mut specs = method_specs(&cfg, &methods);
    let longest = warmups.iter().copied().max().unwrap_or(0);
    for s in &mut specs {
        s.train.max_steps = s.train.max_steps.max(longest);
    }
    log::info!("stability grid of {} cells", specs.len() * warmups.len() * lrs.len());
    let report = stability_sweep(
        &model,
        &domains[t],
        &specs,
        &warmups,
        &lrs,
        cfg.eval_settings(),
        cfg.jobs,
    )?;
    let table = report.to_table();
    let mut csv = String::from("method,warmup,lr,wer,werr_percent,diverged,best_step\n");
    for c in &report.cells {
        let werr = c.werr_percent.map(|w| w.to_string()).unwrap_or_default();
        let _ = writeln!(
            csv,
            "{},{},{},{},{werr},{},{}",
            c.method, c.warmup, c.lr, c.wer, c.diverged, c.best_step
        );
    }
    run.write("stability_report.json", format!("{}\n", report.to_json()?).as_bytes())?;
    run.write("stability_table.txt", table.as_bytes())?;
    run.write("stability.csv", csv.as_bytes())?;
    run.finish()?;
    Ok(table)
}

pub fn sweep_scale(
    mut run: Run,
    base: &Path,
    data: &Path,
    target: Option<Domain>,
    methods: Option<Vec<Method>>,
    sizes: Option<Vec<usize>>,
) -> anyhow::Result<String> {
    let cfg = run.config().clone();
    let model = load_model(&mut run, base, None)?;
    let domains = load_domains(&mut run, data)?;
    let t = target_index(&domains, target)?;
    let methods = methods.unwrap_or_else(|| cfg.sweep.methods.clone());
    let sizes = sizes.unwrap_or_else(|| cfg.sweep.sizes.clone());
    run.arg("domain", &domains[t].domain)?;
    run.arg("methods", &methods)?;
    run.arg("sizes", &sizes)?;
    log::info!("scaling sweep over sizes {sizes:?}");
    let report = scaling_sweep(
        &model,
        &domains[t],
        &method_specs(&cfg, &methods),
        &sizes,
        cfg.eval_settings(),
        cfg.jobs,
    )?;
    let csv = report.to_csv();
    run.write("scaling_report.json", format!("{}\n", report.to_json()?).as_bytes())?;
    run.write("scaling.csv", csv.as_bytes())?;
    run.finish()?;
    let mut text = format!("{:<10}  {:>6}  {:>8}\n", "method", "size", "WER");
    for c in &report.curves {
        for p in &c.points {
            let _ = writeln!(text, "{:<10}  {:>6}  {:>7.2}%", c.method, p.size, 100.0 * p.wer);
        }
    }
    Ok(text)
}

#[derive(Serialize)]
struct BetaPoint {
    beta: f64,
    dev_wer: f64,
}

#[derive(Serialize)]
struct BetaReport {
    domain: String,
    grid: Vec<BetaPoint>,
    best_beta: f64,
    test_wer: f64,
}

pub fn sweep_beta(
    mut run: Run,
    model: &Path,
    data: &Path,
    target: Option<Domain>,
    betas: Option<Vec<f64>>,
) -> anyhow::Result<String> {
    let cfg = run.config().clone();
    let model = load_model(&mut run, model, None)?;
    let domains = load_domains(&mut run, data)?;
    let t = target_index(&domains, target)?;
    let grid = betas.unwrap_or_else(|| cfg.eval.beta_grid.clone());
    run.arg("domain", &domains[t].domain)?;
    run.arg("betas", &grid)?;
    let d = &domains[t];
    let lm = second_pass_scores(&model, &d.dev, cfg.eval.nbest)?;
    let best_beta = sweep_beta_scores(&d.dev, &lm, &grid)?;
    let points = grid
        .iter()
        .map(|&beta| {
            let picks = select_all(&d.dev, &lm, RescoreParams { beta });
            Ok(BetaPoint {
                beta,
                dev_wer: corpus_wer(&picks, &d.dev)?.wer,
            })
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let report = BetaReport {
        domain: d.domain.clone(),
        test_wer: evaluate(&model, &d.test, best_beta, cfg.eval.nbest)?.wer,
        grid: points,
        best_beta,
    };
    let mut csv = String::from("beta,dev_wer\n");
    for p in &report.grid {
        let _ = writeln!(csv, "{},{}", p.beta, p.dev_wer);
    }
    run.write_json("beta_sweep.json", &report)?;
    run.write("beta_sweep.csv", csv.as_bytes())?;
    run.finish()?;
    Ok(format!(
        "best beta {} on {} dev; test WER {:.2}%\n",
        report.best_beta,
        report.domain,
        100.0 * report.test_wer
    ))
}
