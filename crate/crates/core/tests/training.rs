mod common;

use std::collections::BTreeMap;

use common::tiny_config;
use latentmix::data::Split;
use latentmix::harness::{load_dataset, train_loop, Setting, TrainConfig, TrainData, TrainState};
use latentmix::Error;
use tch::{nn, Tensor};

fn data_for(cfg: &TrainConfig) -> TrainData {
    let dataset = load_dataset(cfg).unwrap();
    let (images, labels) = dataset.split(Split::Train);
    TrainData::new(images, labels, dataset.manifest.num_domains()).unwrap()
}

fn snapshot(state: &TrainState) -> BTreeMap<String, Tensor> {
    let t = &state.models.translator;
    let stores: [(&str, &nn::VarStore); 4] =
        [("E", &t.vs_encoder), ("F", &t.vs_mapper), ("G", &t.vs_generator), ("D", &state.models.vs_discriminator)];
    let mut out = BTreeMap::new();
    for (group, vs) in stores {
        for (name, v) in vs.variables() {
            out.insert(format!("{group}/{name}"), v.detach().copy());
        }
    }
    out
}

fn run(cfg: &TrainConfig, steps: u64) -> TrainState {
    let data = data_for(cfg);
    let mut state = TrainState::new(cfg.clone(), data.len()).unwrap();
    train_loop(&mut state, &data, steps, None, &mut |_, _| {}).unwrap();
    state
}

fn identical(a: &BTreeMap<String, Tensor>, b: &BTreeMap<String, Tensor>) -> bool {
    a.len() == b.len() && a.iter().all(|(k, v)| b.get(k).is_some_and(|w| v.equal(w)))
}

#[test]
fn zero_weight_regularizers_match_baseline_bit_exactly() {
    let mut baseline = tiny_config().without_regularizers();
    baseline.adv_mix_on_d = false;
    baseline.cls_mix_on_d = false;
    let mut zeroed = tiny_config();
    zeroed.lambda_shr = 0.0;
    zeroed.lambda_adv_mix = 0.0;
    zeroed.lambda_cls_mix = 0.0;
    zeroed.adv_mix_on_d = true;
    zeroed.cls_mix_on_d = true;
    zeroed.mix_beta = 0.5;
    // Two steps cover both style sources.
    let a = run(&baseline, 2);
    let b = run(&zeroed, 2);
    assert!(identical(&snapshot(&a), &snapshot(&b)));

    let regularized = run(&tiny_config(), 2);
    assert!(!identical(&snapshot(&a), &snapshot(&regularized)));
}

#[test]
fn mmuit_records_expected_terms() {
    let cfg = tiny_config();
    let data = data_for(&cfg);
    let mut state = TrainState::new(cfg, data.len()).unwrap();
    let history = train_loop(&mut state, &data, 2, None, &mut |_, _| {}).unwrap();
    for rec in &history {
        for key in [
            "d/adv",
            "d/cls",
            "d/r1",
            "d/adv_mix",
            "d/cls_mix",
            "g/adv",
            "g/cls",
            "g/sty",
            "g/ds",
            "g/cyc",
            "g/shr",
            "g/adv_mix",
            "g/cls_mix",
        ] {
            assert!(rec.contains_key(key), "missing {key}");
        }
        assert!(rec.values().all(|v| v.is_finite()));
        assert!(!rec.contains_key("e/mi"));
    }
    assert_eq!(state.step, 2);
}

#[test]
fn tunit_queue_warms_up_before_contrastive_terms() {
    let mut cfg = tiny_config();
    cfg.setting = Setting::Tunit;
    let data = data_for(&cfg);
    let mut state = TrainState::new(cfg.clone(), data.len()).unwrap();
    assert_eq!(state.queue_len(), 0);
    let history = train_loop(&mut state, &data, 3, None, &mut |_, _| {}).unwrap();
    assert!(history[0].contains_key("e/mi"));
    assert!(!history[0].contains_key("e/con"));
    assert!(history[1].contains_key("e/con") && history[1].contains_key("g/con"));
    assert!(history.iter().all(|r| !r.contains_key("g/sty") && r.contains_key("g/rec")));
    assert_eq!(state.queue_len(), 3 * cfg.batch_size);
}

#[test]
fn tunit_queue_is_bounded() {
    let mut cfg = tiny_config();
    cfg.setting = Setting::Tunit;
    cfg.queue_size = 6;
    let state = run(&cfg, 3);
    assert_eq!(state.queue_len(), 6);
}

#[test]
fn averaged_generator_is_used_for_evaluation_and_not_trained() {
    let cfg = tiny_config();
    let state = run(&cfg, 2);
    let avg = state.models.averaged.as_ref().expect("averaging enabled by default");
    assert!(std::ptr::eq(state.models.eval_translator(), avg));
    for (_, v) in avg.vs_generator.variables() {
        assert!(!v.requires_grad());
    }
    let mut off = tiny_config();
    off.ema_decay = 0.0;
    let state = run(&off, 1);
    assert!(state.models.averaged.is_none());
    assert!(std::ptr::eq(state.models.eval_translator(), &state.models.translator));
}

#[test]
fn exploding_loss_aborts_with_term_name() {
    let mut cfg = tiny_config();
    cfg.lr_g = 1e30;
    cfg.lr_e = 1e30;
    cfg.lr_d = 1e30;
    let data = data_for(&cfg);
    let mut state = TrainState::new(cfg, data.len()).unwrap();
    let err = train_loop(&mut state, &data, 50, None, &mut |_, _| {}).unwrap_err();
    assert!(matches!(err, Error::NonFiniteLoss { .. }), "{err}");
}

#[test]
fn checkpoints_written_on_schedule() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config();
    cfg.checkpoint_every = 2;
    let data = data_for(&cfg);
    let mut state = TrainState::new(cfg, data.len()).unwrap();
    train_loop(&mut state, &data, 4, Some(dir.path()), &mut |_, _| {}).unwrap();
    assert!(dir.path().join("step_000002.safetensors").exists());
    assert!(dir.path().join("step_000004.safetensors").exists());
    assert!(!dir.path().join("step_000003.safetensors").exists());
}
