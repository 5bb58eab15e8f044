//! The interpolation evaluation protocol and its self-describing report.
//!
//! For every ordered pair of distinct domains `(i, j)`, each source image is
//! translated along the straight path between the style of a reference from
//! `i` and the style of a reference from `j`. Fréchet distance is computed
//! between all generated frames and real images of `j`. The same frames
//! feed the equal-step proportionality score and the adjacent-frame
//! smoothness statistic.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tch::Tensor;

use crate::error::{ensure_arg, invalid, Error, Result};
use crate::latent::interpolate_batch;
use crate::metrics::{
    frechet_distance, gaussian_stats, lpips_diversity, p2_equal_step, p2_score, ppl_score, AlternatingStyles, P2Config,
    ReferenceStyles,
};
use crate::networks::Translator;
use crate::perceptual::{ConvBackbone, PerceptualDistanceKind, PerceptualEmbedder};

/// Sources and path length of the full-scale protocol.
pub const FULL_SCALE_SOURCES: usize = 1000;
pub const FULL_SCALE_STEPS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Metric {
    Fid,
    Lpips,
    Ppl,
    P2,
    P2Eq,
    /// Median over paths of the largest metric-form distance between
    /// adjacent frames.
    MaxStep,
}

impl Metric {
    pub const ALL: [Metric; 6] = [Metric::Fid, Metric::Lpips, Metric::Ppl, Metric::P2, Metric::P2Eq, Metric::MaxStep];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Fid => "fid",
            Metric::Lpips => "lpips",
            Metric::Ppl => "ppl",
            Metric::P2 => "p2",
            Metric::P2Eq => "p2eq",
            Metric::MaxStep => "maxstep",
        }
    }

    /// Parses a comma-separated list such as `fid,p2`.
    pub fn parse_list(s: &str) -> Result<Vec<Metric>> {
        let mut out: Vec<Metric> =
            s.split(',').filter(|t| !t.trim().is_empty()).map(|t| t.trim().parse()).collect::<Result<_>>()?;
        out.sort();
        out.dedup();
        ensure_arg!(!out.is_empty(), "no metrics requested");
        Ok(out)
    }
}

impl FromStr for Metric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| invalid(format!("unknown metric {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalParams {
    pub num_sources: usize,
    /// Frames per interpolation path.
    pub steps: usize,
    pub styles_per_domain: usize,
    pub p2_triplets: usize,
    pub p2_eps: f64,
    pub p2eq_draws: usize,
    pub ppl_samples: usize,
    pub ppl_eps: f64,
    /// Sources used for diversity; capped by `num_sources`.
    pub lpips_sources: usize,
    pub metrics: Vec<Metric>,
    pub seed: u64,
}

impl Default for EvalParams {
    fn default() -> Self {
        Self {
            num_sources: 200,
            steps: FULL_SCALE_STEPS,
            styles_per_domain: 10,
            p2_triplets: 1000,
            p2_eps: 1e-8,
            p2eq_draws: 1000,
            ppl_samples: 1000,
            ppl_eps: 1e-4,
            lpips_sources: 100,
            metrics: Metric::ALL.to_vec(),
            seed: 0,
        }
    }
}

impl EvalParams {
    fn wants(&self, m: Metric) -> bool {
        self.metrics.contains(&m)
    }

    fn provenance(&self) -> Vec<(&'static str, String)> {
        let names: Vec<&str> = self.metrics.iter().map(|m| m.name()).collect();
        vec![
            ("T", self.steps.to_string()),
            ("num_sources", self.num_sources.to_string()),
            ("styles_per_domain", self.styles_per_domain.to_string()),
            ("p2_triplets", self.p2_triplets.to_string()),
            ("p2_eps", self.p2_eps.to_string()),
            ("p2eq_draws", self.p2eq_draws.to_string()),
            ("ppl_samples", self.ppl_samples.to_string()),
            ("ppl_eps", self.ppl_eps.to_string()),
            ("lpips_sources", self.lpips_sources.to_string()),
            ("metrics", names.join(",")),
            ("seed", self.seed.to_string()),
        ]
    }

    /// Rebuilds parameters from a report's provenance block.
    pub fn from_report(report: &EvalReport) -> Result<Self> {
        let get = |k: &str| report.provenance.get(k).ok_or_else(|| invalid(format!("report lacks `{k}`")));
        fn num<T: FromStr>(k: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| invalid(format!("bad value for `{k}`: {v:?}")))
        }
        Ok(Self {
            num_sources: num("num_sources", get("num_sources")?)?,
            steps: num("T", get("T")?)?,
            styles_per_domain: num("styles_per_domain", get("styles_per_domain")?)?,
            p2_triplets: num("p2_triplets", get("p2_triplets")?)?,
            p2_eps: num("p2_eps", get("p2_eps")?)?,
            p2eq_draws: num("p2eq_draws", get("p2eq_draws")?)?,
            ppl_samples: num("ppl_samples", get("ppl_samples")?)?,
            ppl_eps: num("ppl_eps", get("ppl_eps")?)?,
            lpips_sources: num("lpips_sources", get("lpips_sources")?)?,
            metrics: Metric::parse_list(get("metrics")?)?,
            seed: num("seed", get("seed")?)?,
        })
    }
}

/// Metric values plus everything needed to recompute them.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub metrics: BTreeMap<String, f64>,
    pub provenance: BTreeMap<String, String>,
}

impl EvalReport {
    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).copied()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut report = Self::default();
        let mut section = "";
        for line in text.lines().map(str::trim_end).filter(|l| !l.is_empty()) {
            if line.starts_with('[') {
                section = line;
                continue;
            }
            let (k, v) =
                line.split_once('\t').ok_or_else(|| Error::Config(format!("malformed report line {line:?}")))?;
            match section {
                "[metrics]" => {
                    let v = v.parse().map_err(|_| Error::Config(format!("bad metric value {v:?}")))?;
                    report.metrics.insert(k.to_string(), v);
                }
                "[provenance]" => {
                    report.provenance.insert(k.to_string(), v.to_string());
                }
                other => return Err(Error::Config(format!("unknown report section {other:?}"))),
            }
        }
        Ok(report)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, self.to_string())?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "[metrics]")?;
        for (k, v) in &self.metrics {
            writeln!(f, "{k}\t{v}")?;
        }
        writeln!(f, "[provenance]")?;
        for (k, v) in &self.provenance {
            writeln!(f, "{k}\t{v}")?;
        }
        Ok(())
    }
}

/// Trains the desk-scale `φ` on labelled images and wraps it with uniform
/// layer weights.
pub fn desk_phi(images: &Tensor, labels: &[usize], num_domains: usize, seed: u64) -> Result<(PerceptualEmbedder, f64)> {
    let mut backbone = ConvBackbone::desk_default(images.size()[1], num_domains as i64, seed)?;
    let accuracy = backbone.train_on_labels(images, labels, 300, 32, seed)?;
    Ok((PerceptualEmbedder::uniform(Box::new(backbone))?, accuracy))
}

/// Interpolation frames for one ordered domain pair: `[T, C, H, W]` per source.
pub fn interpolation_paths(
    translator: &Translator,
    sources: &Tensor,
    refs_from: &Tensor,
    refs_to: &Tensor,
    steps: usize,
) -> Result<Vec<Tensor>> {
    ensure_arg!(steps >= 2, "paths need at least two frames, got {steps}");
    let n = sources.size()[0];
    ensure_arg!(refs_from.size()[0] == n && refs_to.size()[0] == n, "one reference pair per source is required");
    tch::no_grad(|| {
        let s_a = translator.encoder.encode(refs_from)?;
        let s_b = translator.encoder.encode(refs_to)?;
        (0..n)
            .map(|k| {
                let codes = interpolate_batch(&s_a.get(k), &s_b.get(k), steps)?;
                let x = sources.narrow(0, k, 1).repeat([steps as i64, 1, 1, 1]);
                translator.generate(&x, &codes)
            })
            .collect()
    })
}

fn pick(images: &Tensor, n: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let len = images.size()[0];
    let idx: Vec<i64> = (0..n).map(|_| rng.random_range(0..len)).collect();
    images.index_select(0, &Tensor::from_slice(&idx))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Largest metric-form distance between consecutive frames of a path.
pub fn max_adjacent_distance(frames: &Tensor, phi: &PerceptualEmbedder) -> Result<f64> {
    let t = frames.size()[0];
    ensure_arg!(t >= 2, "a path needs at least two frames");
    let d =
        phi.distance(&frames.narrow(0, 0, t - 1), &frames.narrow(0, 1, t - 1), PerceptualDistanceKind::MetricForm)?;
    Ok(d.max().double_value(&[]))
}

/// Runs the protocol with `translator` on held-out images grouped by
/// domain. `checkpoint` identifies the evaluated weights in the report.
pub fn run_interpolation_eval(
    translator: &Translator,
    test_by_domain: &[Tensor],
    phi: &PerceptualEmbedder,
    checkpoint: &str,
    params: &EvalParams,
) -> Result<EvalReport> {
    let m = test_by_domain.len();
    ensure_arg!(m >= 2, "evaluation needs at least two domains, got {m}");
    for (d, t) in test_by_domain.iter().enumerate() {
        ensure_arg!(t.size()[0] > 0, "domain {d} has no test images");
    }
    ensure_arg!(params.num_sources >= 1, "need at least one source image");
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let all = Tensor::cat(test_by_domain, 0);
    let mut report = EvalReport::default();

    let needs_paths = params.wants(Metric::Fid) || params.wants(Metric::P2Eq) || params.wants(Metric::MaxStep);
    if needs_paths {
        let (mut fids, mut sequences, mut max_steps) = (Vec::new(), Vec::new(), Vec::new());
        for i in 0..m {
            for j in (0..m).filter(|&j| j != i) {
                let sources = pick(&all, params.num_sources, &mut rng);
                let refs_a = pick(&test_by_domain[i], params.num_sources, &mut rng);
                let refs_b = pick(&test_by_domain[j], params.num_sources, &mut rng);
                let paths = interpolation_paths(translator, &sources, &refs_a, &refs_b, params.steps)?;
                if params.wants(Metric::Fid) {
                    let fake = tch::no_grad(|| phi.extractor().pooled_features(&Tensor::cat(&paths, 0)))?;
                    let real = tch::no_grad(|| phi.extractor().pooled_features(&test_by_domain[j]))?;
                    let fid = frechet_distance(&gaussian_stats(&real)?, &gaussian_stats(&fake)?)?;
                    report.metrics.insert(format!("fid/{i}->{j}"), fid);
                    fids.push(fid);
                }
                if params.wants(Metric::MaxStep) {
                    for p in &paths {
                        max_steps.push(max_adjacent_distance(p, phi)?);
                    }
                }
                sequences.extend(paths);
            }
        }
        if params.wants(Metric::Fid) {
            report.metrics.insert("fid".into(), fids.iter().sum::<f64>() / fids.len() as f64);
        }
        if params.wants(Metric::MaxStep) {
            report.metrics.insert("maxstep".into(), median(max_steps));
        }
        if params.wants(Metric::P2Eq) {
            if params.steps >= 5 {
                let v = p2_equal_step(&sequences, phi, params.p2_eps, params.p2eq_draws, &mut rng)?;
                report.metrics.insert("p2eq".into(), v);
            } else {
                log::warn!("equal-step P2 needs at least 5 frames per path; skipped");
            }
        }
    }

    let sources = pick(&all, params.num_sources, &mut rng);
    if params.wants(Metric::P2) {
        let cfg = P2Config { num_triplets: params.p2_triplets, eps: params.p2_eps, ..Default::default() };
        let mut sampler = AlternatingStyles::new(translator, &all);
        let out = p2_score(translator, &mut sampler, &sources, phi, &cfg, &mut rng)?;
        report.metrics.insert("p2".into(), out.score);
        report.metrics.insert("p2/skipped".into(), out.skipped as f64);
    }
    if params.wants(Metric::Ppl) {
        let mut sampler = AlternatingStyles::new(translator, &all);
        let v = ppl_score(translator, &mut sampler, &sources, phi, params.ppl_eps, params.ppl_samples, &mut rng)?;
        report.metrics.insert("ppl".into(), v);
    }
    if params.wants(Metric::Lpips) {
        let n = params.lpips_sources.min(params.num_sources) as i64;
        let mut sampler = ReferenceStyles::new(translator, test_by_domain.iter().map(Tensor::shallow_clone).collect())?;
        let v = lpips_diversity(
            translator,
            &mut sampler,
            &sources.narrow(0, 0, n),
            params.styles_per_domain,
            phi,
            &mut rng,
        )?;
        report.metrics.insert("lpips".into(), v);
    }

    for (k, v) in params.provenance() {
        report.provenance.insert(k.into(), v);
    }
    report.provenance.insert("phi".into(), phi.fingerprint());
    report.provenance.insert("checkpoint".into(), checkpoint.to_string());
    let full = params.num_sources == FULL_SCALE_SOURCES && params.steps == FULL_SCALE_STEPS;
    report.provenance.insert(
        "scale".into(),
        if full {
            "full".into()
        } else {
            format!("reduced from num_sources={FULL_SCALE_SOURCES},T={FULL_SCALE_STEPS}")
        },
    );
    Ok(report)
}
