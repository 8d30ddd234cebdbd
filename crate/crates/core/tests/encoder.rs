mod common;

use lorb_core::autodiff::{check_gradients, Tape, Tensor, Var};
use lorb_core::data::{HypothesisBatch, NBestList, CLS, PAD, SEP};
use lorb_core::encoder::{
    load_checkpoint, load_lora_delta, pretrain_proxy, read_checkpoint, save_checkpoint, save_lora_delta,
    write_checkpoint, EncoderConfig, PretrainConfig, ScoringModel,
};
use lorb_core::losses::RegularizerConfig;
use lorb_core::peft::{attach_full_ft, attach_lora, LoraConfig};
use lorb_core::rng::Rng;
use lorb_core::trainer::{check_model_gradients, dataset_mwer_loss};
use lorb_core::Error;

fn batch(model: &ScoringModel, lists: &[NBestList]) -> HypothesisBatch {
    let refs: Vec<&NBestList> = lists.iter().collect();
    HypothesisBatch::build(&model.vocab, &refs, 4, model.config.max_len).unwrap()
}

#[test]
fn full_model_gradient_check_two_layers() {
    let t = common::task(20, 2, 16, 1);
    let model = attach_full_ft(t.model).unwrap();
    let b = batch(&model, &t.train[..2]);
    let err = check_model_gradients(&model, &b, 1.0, &RegularizerConfig::with_lambda(0.1), None).unwrap();
    assert!(err < 1e-4, "{err:e}");
}

#[test]
fn head_gradient_matches_finite_differences() {
    let t = common::task(10, 1, 8, 2);
    let model = t.model;
    let mut rng = Rng::new(3);
    let g = Tensor::matrix(3, 8, (0..24).map(|_| rng.normal()).collect()).unwrap();
    let head: Vec<usize> = ["head.h1.weight", "head.h1.bias", "head.h2.weight", "head.h2.bias"]
        .iter()
        .map(|n| model.params.position(n).unwrap())
        .collect();
    let mut inputs: Vec<Tensor> = head
        .iter()
        .map(|&i| model.params.as_slice()[i].tensor.clone())
        .collect();
    inputs.push(g);
    let err = check_gradients(
        |tape: &mut Tape, v: &[Var]| {
            let overrides: Vec<(usize, Var)> = head.iter().copied().zip(v.iter().copied()).collect();
            let bound = model.bind_with(tape, &overrides);
            let s = model.head(tape, &bound, v[4])?;
            Ok(tape.sum(s))
        },
        &inputs,
    )
    .unwrap();
    assert!(err < 1e-5, "{err:e}");
}

#[test]
fn padding_has_no_influence_on_cls() {
    let t = common::task(10, 2, 16, 4);
    let mut model = t.model;
    let ids = [CLS, 5, 6, 7, SEP];
    let (_, reference) = model.encode(&ids, &[true; 5]).unwrap();
    let padded: Vec<usize> = ids.iter().copied().chain([PAD; 4]).collect();
    let mask: Vec<bool> = (0..9).map(|i| i < 5).collect();
    let (hidden, with_pad) = model.encode(&padded, &mask).unwrap();
    assert_eq!(hidden.shape(), &[9, 16]);
    assert!(with_pad.max_abs_diff(&reference) < 1e-10);

    // Perturb the [PAD] embedding itself.
    let table = model.params.get_mut("embed.tokens").unwrap();
    for x in &mut table.tensor.data_mut()[PAD * 16..(PAD + 1) * 16] {
        *x += 3.0;
    }
    let (_, perturbed) = model.encode(&padded, &mask).unwrap();
    assert!(perturbed.max_abs_diff(&with_pad) < 1e-10);
}

#[test]
fn zero_head_scores_zero() {
    let mut model = common::task(10, 1, 8, 5).model;
    for p in model.params.iter_mut().filter(|p| p.role.is_head()) {
        p.tensor.data_mut().fill(0.0);
    }
    let mut rng = Rng::new(1);
    for _ in 0..5 {
        let g = Tensor::vector((0..8).map(|_| rng.normal()).collect());
        assert_eq!(model.score_head(&g).unwrap(), 0.0);
    }
}

#[test]
fn over_length_input_is_rejected() {
    let model = common::task(10, 1, 8, 5).model;
    let ids = vec![CLS; 25];
    assert!(matches!(
        model.encode(&ids, &[true; 25]),
        Err(Error::SequenceTooLong { len: 25, max: 24 })
    ));
}

#[test]
fn parameter_count_formula_matches_enumeration() {
    for (layers, d, ff) in [(1, 8, 16), (2, 16, 32), (4, 64, 128)] {
        let t = common::task(10, layers, d, 0);
        let mut cfg = t.model.config.clone();
        cfg.d_ff = ff;
        let model = ScoringModel::new(cfg.clone(), t.model.vocab.clone()).unwrap();
        let v = cfg.vocab_size;
        let h = d / 2;
        let expected = v * d + layers * (4 * d * d + 2 * d * ff + 4 * d + 4 * d + ff + d) + d * h + h + h + 1;
        assert_eq!(model.parameter_count(), expected);
        assert_eq!(cfg.parameter_count(), expected);
    }
}

#[test]
fn desk_config_defaults() {
    let cfg = EncoderConfig::desk(100, 0);
    assert_eq!(
        (cfg.layers, cfg.d_model, cfg.heads, cfg.d_ff, cfg.max_len),
        (4, 64, 4, 128, 32)
    );
    let bad = EncoderConfig { heads: 3, ..cfg };
    assert!(bad.validate().is_err());
}

#[test]
fn checkpoint_roundtrip_is_bit_exact() {
    let t = common::task(30, 2, 16, 6);
    let model = attach_lora(
        t.model,
        &LoraConfig {
            rank: 2,
            ..LoraConfig::default()
        },
    )
    .unwrap();
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, &model).unwrap();
    let back = read_checkpoint(&mut buf.as_slice()).unwrap();
    assert_eq!(back, model);
    let mut again = Vec::new();
    write_checkpoint(&mut again, &back).unwrap();
    assert_eq!(buf, again);
    for (a, b) in model.params.iter().zip(back.params.iter()) {
        assert_eq!(a.frozen, b.frozen);
        assert!(a
            .tensor
            .data()
            .iter()
            .zip(b.tensor.data())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let model = common::task(10, 1, 8, 7).model;
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, &model).unwrap();
    let mut bad_magic = buf.clone();
    bad_magic[0] = b'X';
    assert!(matches!(
        read_checkpoint(&mut bad_magic.as_slice()),
        Err(Error::Checkpoint(_))
    ));
    let truncated = &buf[..buf.len() / 2];
    assert!(read_checkpoint(&mut &truncated[..]).is_err());
}

#[test]
fn lora_delta_ships_separately() {
    let t = common::task(30, 2, 16, 8);
    let base = t.model.clone();
    let mut adapted = attach_lora(
        t.model,
        &LoraConfig {
            rank: 2,
            ..LoraConfig::default()
        },
    )
    .unwrap();
    let mut rng = Rng::new(2);
    for p in adapted.params.iter_mut().filter(|p| p.role.is_lora()) {
        p.tensor.data_mut().iter_mut().for_each(|x| *x = rng.normal());
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("delta.ckpt");
    save_lora_delta(&path, &adapted).unwrap();
    let restored = load_lora_delta(base.clone(), &path).unwrap();
    for p in adapted.params.iter().filter(|p| p.role.is_lora()) {
        assert_eq!(restored.params.get(&p.name).unwrap().tensor, p.tensor);
    }
    // The delta is not a model checkpoint.
    assert!(load_checkpoint(&path).is_err());
    assert!(matches!(save_lora_delta(&path, &base), Err(Error::NoLora)));
}

#[test]
fn pretrain_zero_steps_is_identity() {
    let t = common::task(20, 1, 8, 9);
    let cfg = PretrainConfig {
        steps: 0,
        ..PretrainConfig::default()
    };
    let out = pretrain_proxy(t.model.clone(), &t.train, &cfg).unwrap();
    assert_eq!(out.model.params, t.model.params);
    assert!(out.losses.is_empty());
}

#[test]
fn pretraining_lowers_dev_loss_and_reload_reproduces_it() {
    let t = common::task(200, 2, 16, 10);
    let before = dataset_mwer_loss(&t.model, &t.dev, 1.0, 4).unwrap();
    let cfg = PretrainConfig {
        steps: 80,
        ..PretrainConfig::default()
    };
    let out = pretrain_proxy(t.model, &t.train, &cfg).unwrap();
    let after = dataset_mwer_loss(&out.model, &t.dev, 1.0, 4).unwrap();
    assert!(after <= before, "{after} > {before}");
    assert!(out.model.adaptation.is_none());
    assert!(out.model.params.iter().all(|p| !p.frozen));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("base.ckpt");
    save_checkpoint(&path, &out.model).unwrap();
    let reloaded = load_checkpoint(&path).unwrap();
    assert_eq!(
        dataset_mwer_loss(&reloaded, &t.dev, 1.0, 4).unwrap().to_bits(),
        after.to_bits()
    );
}

#[test]
fn pretraining_divergence_reports_step() {
    let t = common::task(20, 1, 8, 11);
    let mut model = t.model;
    model.params.get_mut("head.h2.bias").unwrap().tensor.data_mut()[0] = f64::NAN;
    let err = pretrain_proxy(model, &t.train, &PretrainConfig::default()).unwrap_err();
    assert!(matches!(err, Error::Diverged { step: 1 }), "{err}");
}
