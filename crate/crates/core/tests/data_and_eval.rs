mod common;

use std::collections::HashSet;

use common::{ks_two_sample, tiny_config};
use latentmix::data::{generate_synthetic, Split, SyntheticDomainSpec};
use latentmix::harness::eval::Metric;
use latentmix::harness::grid::interpolation_frames;
use latentmix::harness::{
    intra_domain_grid, load_dataset, render_interpolation_grid, run_interpolation_eval, EvalParams, EvalReport,
};
use latentmix::networks::ModelSet;
use latentmix::perceptual::{ConvBackbone, PerceptualEmbedder};

#[test]
fn content_factors_match_across_domains() {
    let specs = SyntheticDomainSpec::defaults(2).unwrap();
    let set = generate_synthetic(&specs, 2000, 8, 11).unwrap();
    let labels = set.data.labels();
    let pick = |d: usize, f: &dyn Fn(&latentmix::data::ContentFactors) -> f64| -> Vec<f64> {
        set.content.iter().zip(&labels).filter(|(_, &l)| l == d).map(|(c, _)| f(c)).collect()
    };
    let factors: [(&str, &dyn Fn(&latentmix::data::ContentFactors) -> f64); 4] =
        [("cx", &|c| c.cx), ("cy", &|c| c.cy), ("scale", &|c| c.scale), ("rotation", &|c| c.rotation)];
    for (name, f) in factors {
        let (a, b) = (pick(0, f), pick(1, f));
        assert_eq!(a.len(), 2000);
        let (d, p) = ks_two_sample(&a, &b);
        assert!(p > 0.01, "{name}: D = {d}, p = {p}");
    }
}

#[test]
fn synthetic_splits_are_disjoint() {
    let cfg = tiny_config();
    let dataset = load_dataset(&cfg).unwrap();
    let m = &dataset.manifest;
    let train: HashSet<_> = m.indices(Split::Train).into_iter().map(|i| m.entries()[i].source.clone()).collect();
    let test: HashSet<_> = m.indices(Split::Test).into_iter().map(|i| m.entries()[i].source.clone()).collect();
    assert_eq!(train.len(), 2 * cfg.synth_train_per_domain);
    assert_eq!(test.len(), 2 * cfg.synth_test_per_domain);
    assert!(train.is_disjoint(&test));
}

fn small_params() -> EvalParams {
    EvalParams {
        num_sources: 6,
        steps: 6,
        styles_per_domain: 2,
        p2_triplets: 20,
        p2eq_draws: 20,
        ppl_samples: 10,
        lpips_sources: 3,
        seed: 5,
        ..Default::default()
    }
}

fn eval_fixture() -> (ModelSet, Vec<tch::Tensor>, PerceptualEmbedder) {
    let cfg = tiny_config();
    let models = ModelSet::new(&cfg.network(), 3, true).unwrap();
    let test = load_dataset(&cfg).unwrap().by_domain(Split::Test);
    let phi = PerceptualEmbedder::uniform(Box::new(ConvBackbone::desk_default(3, 2, 1).unwrap())).unwrap();
    (models, test, phi)
}

#[test]
fn eval_report_is_reproducible_from_its_provenance() {
    let (models, test, phi) = eval_fixture();
    let params = small_params();
    let first = run_interpolation_eval(models.eval_translator(), &test, &phi, "ckpt", &params).unwrap();
    for key in ["fid", "fid/0->1", "fid/1->0", "lpips", "ppl", "p2", "p2eq", "maxstep"] {
        assert!(first.metric(key).is_some_and(f64::is_finite), "missing {key}");
    }
    assert!(first.provenance["scale"].starts_with("reduced"));
    assert_eq!(first.provenance["phi"], phi.fingerprint());

    let parsed = EvalReport::from_text(&first.to_string()).unwrap();
    let replay_params = EvalParams::from_report(&parsed).unwrap();
    let replay = run_interpolation_eval(models.eval_translator(), &test, &phi, "ckpt", &replay_params).unwrap();
    for (k, v) in &first.metrics {
        assert!((v - replay.metrics[k]).abs() <= 1e-6 * v.abs().max(1.0), "{k}: {v} vs {}", replay.metrics[k]);
    }
}

#[test]
fn eval_respects_metric_selection() {
    let (models, test, phi) = eval_fixture();
    let params = EvalParams { metrics: vec![Metric::P2], ..small_params() };
    let report = run_interpolation_eval(models.eval_translator(), &test, &phi, "ckpt", &params).unwrap();
    assert!(report.metric("p2").is_some());
    assert!(report.metric("fid").is_none() && report.metric("lpips").is_none());
}

#[test]
fn grid_endpoints_are_direct_translations() {
    let (models, test, _) = eval_fixture();
    let t = models.eval_translator();
    let (src, ra, rb) = (test[0].narrow(0, 0, 1), test[0].narrow(0, 1, 1), test[1].narrow(0, 0, 1));
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("grid.png");
    let grid = render_interpolation_grid(t, &src, &ra, &rb, 20, &out).unwrap();
    assert_eq!(grid.frames.len(), 20);
    assert!(out.exists());
    let direct = |r: &tch::Tensor| tch::no_grad(|| t.generate(&src, &t.encoder.encode(r).unwrap()).unwrap());
    assert!(grid.frames[0].equal(&direct(&ra)));
    assert!(grid.frames[19].equal(&direct(&rb)));
    assert_eq!(grid.row().size(), [3, 16, 23 * 16]);
    let img = image::open(&out).unwrap();
    assert_eq!((img.width(), img.height()), (23 * 16, 16));
}

#[test]
fn grid_needs_two_frames() {
    let (models, test, _) = eval_fixture();
    let x = test[0].narrow(0, 0, 1);
    assert!(interpolation_frames(models.eval_translator(), &x, &x, &x, 1).is_err());
}

#[test]
fn intra_domain_grid_checks_reference_domains() {
    let (models, test, _) = eval_fixture();
    let t = models.eval_translator();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("g.png");
    let (src, a, b) = (test[0].narrow(0, 0, 1), test[1].narrow(0, 0, 1), test[1].narrow(0, 1, 1));
    assert!(intra_domain_grid(t, &src, (&a, 1), (&test[0].narrow(0, 2, 1), 0), 20, &out).is_err());
    let grid = intra_domain_grid(t, &src, (&a, 1), (&b, 1), 20, &out).unwrap();
    assert_eq!(grid.frames.len(), 20);
}
