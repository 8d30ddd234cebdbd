use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const SMALL: &str = r#"{
  "data": {"utts_per_domain": 80},
  "encoder": {"layers": 1, "d_model": 16, "heads": 2, "d_ff": 32},
  "pretrain": {"steps": 20},
  "train": {"max_steps": 20, "warmup": 5, "eval_every": 5}
}"#;

fn lorb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lorb"))
        .args(args)
        .env("LORB_LOG", "error")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = lorb(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new(config: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("cfg.json"), config).unwrap();
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn cfg(&self) -> String {
        s(&self.path("cfg.json")).to_owned()
    }

    fn synth(&self, out: &str) -> PathBuf {
        ok(&["synth", "--config", &self.cfg(), "--out", s(&self.path(out))]);
        self.path(out)
    }

    fn pretrained(&self) -> (PathBuf, PathBuf) {
        let data = self.synth("data");
        let pre = self.path("pre");
        ok(&[
            "pretrain",
            "--config",
            &self.cfg(),
            "--data",
            s(&data),
            "--out",
            s(&pre),
        ]);
        (data, pre.join("base.ckpt"))
    }
}

fn json(path: PathBuf) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn help_lists_every_flag() {
    let help = ok(&["train", "--help"]);
    for flag in [
        "--config",
        "--seed",
        "--method",
        "--rank",
        "--alpha",
        "--lora-dropout",
        "--targets",
        "--beta",
        "--lambda",
        "--lr",
        "--warmup",
        "--max-steps",
        "--patience",
        "--jobs",
        "--out",
    ] {
        assert!(help.contains(flag), "missing {flag}");
    }
    let top = ok(&["--help"]);
    for cmd in [
        "synth",
        "pretrain",
        "train",
        "rescore",
        "eval",
        "compare",
        "sweep-stability",
        "sweep-scale",
        "sweep-beta",
    ] {
        assert!(top.contains(cmd), "missing {cmd}");
    }
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(lorb(&["synth", "--frobnicate"]).status.code(), Some(2));
    assert_eq!(lorb(&["train", "--method", "prefix"]).status.code(), Some(2));
    let ws = Workspace::new(r#"{"sede": 1}"#);
    let out = lorb(&["synth", "--config", &ws.cfg(), "--out", s(&ws.path("x"))]);
    assert_eq!(out.status.code(), Some(2));
    let out = lorb(&["synth", "--config", s(&ws.path("absent.json"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_input_exits_2_with_path() {
    let ws = Workspace::new(SMALL);
    let data = ws.synth("data");
    let out = lorb(&[
        "train",
        "--config",
        &ws.cfg(),
        "--data",
        s(&data),
        "--base",
        "/no/such/base.ckpt",
        "--out",
        s(&ws.path("t")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/no/such/base.ckpt"));
}

#[test]
fn synth_is_reproducible_and_writes_one_file_per_domain() {
    let ws = Workspace::new(SMALL);
    let a = ws.synth("a");
    let b = ws.synth("b");
    for name in ["assistant-commands.jsonl", "entity-rich.jsonl"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap());
    }
    let jsonl = fs::read_dir(&a)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "jsonl"))
        .count();
    assert_eq!(jsonl, 2);
    assert!(a.join("manifest.json").exists());
}

#[test]
fn noiseless_synth_has_zero_first_pass_wer() {
    let ws = Workspace::new(r#"{"data": {"utts_per_domain": 30, "sub_rate": 0, "del_rate": 0, "ins_rate": 0}}"#);
    let dir = ws.synth("data");
    let report = json(dir.join("synth_report.json"));
    for d in report.as_array().unwrap() {
        assert_eq!(d["first_pass_wer"], 0.0);
    }
}

#[test]
fn lora_flags_reach_the_train_report() {
    let ws = Workspace::new(SMALL);
    let (data, base) = ws.pretrained();
    let out = ws.path("t");
    ok(&[
        "train",
        "--config",
        &ws.cfg(),
        "--data",
        s(&data),
        "--base",
        s(&base),
        "--method",
        "lora",
        "--rank",
        "8",
        "--targets",
        "q,v",
        "--out",
        s(&out),
    ]);
    let report = json(out.join("train_report.json"));
    assert_eq!(report["method"], "lora");
    let frac = report["trainable_fraction"].as_f64().unwrap();
    assert!(frac > 0.0 && frac < 1.0);
    let manifest = json(out.join("manifest.json"));
    assert_eq!(manifest["config"]["lora"]["rank"], 8);
    assert_eq!(manifest["config"]["lora"]["targets"], serde_json::json!(["q", "v"]));
    assert!(out.join("lora_delta.ckpt").exists());
    assert!(fs::read_to_string(out.join("curves.csv"))
        .unwrap()
        .starts_with("step,loss,dev_wer\n"));

    // The delta on top of the base scores like the full adapted checkpoint.
    let via_delta = ws.path("e1");
    let via_model = ws.path("e2");
    let d = s(&data);
    ok(&[
        "eval",
        "--config",
        &ws.cfg(),
        "--data",
        d,
        "--model",
        s(&base),
        "--delta",
        s(&out.join("lora_delta.ckpt")),
        "--out",
        s(&via_delta),
    ]);
    ok(&[
        "eval",
        "--config",
        &ws.cfg(),
        "--data",
        d,
        "--model",
        s(&out.join("model.ckpt")),
        "--out",
        s(&via_model),
    ]);
    assert_eq!(
        json(via_delta.join("eval_report.json"))["domains"],
        json(via_model.join("eval_report.json"))["domains"]
    );
}

#[test]
fn eval_of_base_matches_compare_baseline_row() {
    let ws = Workspace::new(SMALL);
    let (data, base) = ws.pretrained();
    let ev = ws.path("ev");
    let cmp = ws.path("cmp");
    ok(&[
        "eval",
        "--config",
        &ws.cfg(),
        "--data",
        s(&data),
        "--model",
        s(&base),
        "--out",
        s(&ev),
    ]);
    ok(&[
        "compare",
        "--config",
        &ws.cfg(),
        "--data",
        s(&data),
        "--base",
        s(&base),
        "--methods",
        "bitfit",
        "--out",
        s(&cmp),
    ]);
    let eval = json(ev.join("eval_report.json"));
    let compare = json(cmp.join("compare_report.json"));
    let row = &compare["rows"][0];
    assert_eq!(row["name"], "base");
    let eval_wers: Vec<f64> = eval["domains"]
        .as_array()
        .unwrap()
        .iter()
        .map(|d| d["wer"].as_f64().unwrap())
        .collect();
    let cmp_wers: Vec<f64> = row["cells"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["wer"].as_f64().unwrap())
        .collect();
    assert_eq!(eval_wers, cmp_wers);
    assert_eq!(compare["rows"].as_array().unwrap().len(), 2);
}

#[test]
fn divergence_exits_1() {
    let ws = Workspace::new(SMALL);
    let (data, base) = ws.pretrained();
    let out = lorb(&[
        "train",
        "--config",
        &ws.cfg(),
        "--data",
        s(&data),
        "--base",
        s(&base),
        "--method",
        "ft",
        "--lr",
        "1e300",
        "--warmup",
        "0",
        "--out",
        s(&ws.path("t")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let report = json(ws.path("t").join("train_report.json"));
    assert_eq!(report["diverged"], true);
}

#[test]
fn sweeps_and_rescore_write_their_artifacts() {
    let ws = Workspace::new(SMALL);
    let (data, base) = ws.pretrained();
    let c = ws.cfg();
    let d = s(&data);
    let b = s(&base);
    let st = ws.path("st");
    ok(&[
        "sweep-stability",
        "--config",
        &c,
        "--data",
        d,
        "--base",
        b,
        "--methods",
        "lora,bitfit",
        "--warmups",
        "2,4",
        "--lrs",
        "1e-2,1e-4",
        "--jobs",
        "2",
        "--out",
        s(&st),
    ]);
    let report = json(st.join("stability_report.json"));
    assert_eq!(report["cells"].as_array().unwrap().len(), 8);
    assert_eq!(report["spreads"].as_array().unwrap().len(), 2);

    let sc = ws.path("sc");
    ok(&[
        "sweep-scale",
        "--config",
        &c,
        "--data",
        d,
        "--base",
        b,
        "--methods",
        "lora",
        "--sizes",
        "10,48",
        "--out",
        s(&sc),
    ]);
    assert_eq!(fs::read_to_string(sc.join("scaling.csv")).unwrap().lines().count(), 3);

    let sb = ws.path("sb");
    ok(&[
        "sweep-beta",
        "--config",
        &c,
        "--data",
        d,
        "--model",
        b,
        "--betas",
        "0,0.5,1",
        "--out",
        s(&sb),
    ]);
    let beta = json(sb.join("beta_sweep.json"));
    assert_eq!(beta["grid"].as_array().unwrap().len(), 3);

    let rs = ws.path("rs");
    let input = data.join("entity-rich.jsonl");
    ok(&[
        "rescore",
        "--config",
        &c,
        "--model",
        b,
        "--input",
        s(&input),
        "--out",
        s(&rs),
    ]);
    let lines = fs::read_to_string(rs.join("rescored.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 80);
}

#[test]
fn flags_override_config_file() {
    let ws = Workspace::new(r#"{"seed": 5, "train": {"lr": 0.5}}"#);
    let out = ws.path("s");
    ok(&[
        "synth",
        "--config",
        &ws.cfg(),
        "--seed",
        "9",
        "--lr",
        "0.25",
        "--out",
        s(&out),
    ]);
    let m = json(out.join("manifest.json"));
    assert_eq!(m["seed"], 9);
    assert_eq!(m["config"]["train"]["lr"], 0.25);
    assert_eq!(m["config"]["train"]["max_steps"], 300);
}
