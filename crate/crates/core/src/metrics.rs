//! Evaluation metrics: perceptual proportionality (P²) in its triplet and
//! equal-step variants, perceptual path length, Fréchet distance between
//! Gaussian feature fits, and LPIPS-style diversity.
//!
//! All accumulations happen in double precision and are averaged at the
//! end. Randomness comes only from the caller's RNG.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use tch::{Kind, Tensor};

use crate::error::{ensure_arg, invalid, Error, Result};
use crate::latent::{noise_batch, NoiseMapping, StyleEncoding};
use crate::networks::ImageTranslator;
use crate::perceptual::{PerceptualDistanceKind, PerceptualEmbedder};

/// Tolerance for negative eigenvalues produced by round-off.
const PSD_TOLERANCE: f64 = 1e-6;

/// Produces batches of style codes for metric evaluation.
pub trait StyleSampler {
    fn sample(&mut self, n: i64, rng: &mut ChaCha8Rng) -> Result<Tensor>;

    /// Three `[n, D]` batches `(s1, s2, s3)`. The default draws all three from
    /// one call so they share a source.
    fn sample_triplet(&mut self, n: i64, rng: &mut ChaCha8Rng) -> Result<[Tensor; 3]> {
        let all = self.sample(3 * n, rng)?;
        Ok([all.narrow(0, 0, n), all.narrow(0, n, n), all.narrow(0, 2 * n, n)])
    }
}

/// Standard-normal codes of a fixed dimension.
#[derive(Debug, Clone, Copy)]
pub struct GaussianStyles {
    pub dim: i64,
}

impl StyleSampler for GaussianStyles {
    fn sample(&mut self, n: i64, rng: &mut ChaCha8Rng) -> Result<Tensor> {
        Ok(noise_batch(n, self.dim, rng))
    }
}

/// Alternates per call between encoding random reference images and mapping
/// noise, mirroring the training-time source alternation.
pub struct AlternatingStyles<'a, T> {
    translator: &'a T,
    references: &'a Tensor,
    calls: u64,
}

impl<'a, T> AlternatingStyles<'a, T> {
    pub fn new(translator: &'a T, references: &'a Tensor) -> Self {
        Self { translator, references, calls: 0 }
    }
}

impl<T: StyleEncoding + NoiseMapping> StyleSampler for AlternatingStyles<'_, T> {
    fn sample(&mut self, n: i64, rng: &mut ChaCha8Rng) -> Result<Tensor> {
        let from_refs = self.calls % 2 == 0;
        self.calls += 1;
        tch::no_grad(|| {
            if from_refs {
                let idx = random_indices(self.references.size()[0], n, rng)?;
                StyleEncoding::encode(self.translator, &self.references.index_select(0, &idx))
            } else {
                let z = noise_batch(n, self.translator.noise_dim(), rng);
                self.translator.map_noise(&z)
            }
        })
    }
}

/// Samples styles inside a chosen domain by encoding reference images of
/// that domain.
pub trait DomainStyleSampler {
    fn num_domains(&self) -> usize;
    fn sample_in_domain(&mut self, domain: usize, n: i64, rng: &mut ChaCha8Rng) -> Result<Tensor>;
}

pub struct ReferenceStyles<'a, E> {
    encoder: &'a E,
    by_domain: Vec<Tensor>,
}

impl<'a, E: StyleEncoding> ReferenceStyles<'a, E> {
    /// `images[k]` are the reference images of domain `k`.
    pub fn new(encoder: &'a E, by_domain: Vec<Tensor>) -> Result<Self> {
        ensure_arg!(by_domain.len() >= 2, "need references for at least two domains");
        ensure_arg!(by_domain.iter().all(|t| t.size()[0] > 0), "every domain needs at least one reference image");
        Ok(Self { encoder, by_domain })
    }
}

impl<E: StyleEncoding> DomainStyleSampler for ReferenceStyles<'_, E> {
    fn num_domains(&self) -> usize {
        self.by_domain.len()
    }

    fn sample_in_domain(&mut self, domain: usize, n: i64, rng: &mut ChaCha8Rng) -> Result<Tensor> {
        let refs = self.by_domain.get(domain).ok_or_else(|| invalid(format!("no references for domain {domain}")))?;
        let idx = random_indices(refs.size()[0], n, rng)?;
        tch::no_grad(|| self.encoder.encode(&refs.index_select(0, &idx)))
    }
}

/// Triplets whose first code comes from domain `a` and last from domain `b`,
/// with the middle code drawn from either. This is the inter-domain variant
/// of the triplet sampler.
pub struct CrossDomainTriplets<S> {
    pub inner: S,
    pub domain_a: usize,
    pub domain_b: usize,
}

impl<S: DomainStyleSampler> StyleSampler for CrossDomainTriplets<S> {
    fn sample(&mut self, n: i64, rng: &mut ChaCha8Rng) -> Result<Tensor> {
        let d = if rng.random_bool(0.5) { self.domain_a } else { self.domain_b };
        self.inner.sample_in_domain(d, n, rng)
    }

    fn sample_triplet(&mut self, n: i64, rng: &mut ChaCha8Rng) -> Result<[Tensor; 3]> {
        let s1 = self.inner.sample_in_domain(self.domain_a, n, rng)?;
        let s2 = self.sample(n, rng)?;
        let s3 = self.inner.sample_in_domain(self.domain_b, n, rng)?;
        Ok([s1, s2, s3])
    }
}

fn random_indices(len: i64, n: i64, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    ensure_arg!(len > 0, "cannot sample from an empty set");
    let idx: Vec<i64> = (0..n).map(|_| rng.random_range(0..len)).collect();
    Ok(Tensor::from_slice(&idx))
}

fn euclidean_rows(a: &Tensor, b: &Tensor) -> Tensor {
    (a.to_kind(Kind::Double) - b.to_kind(Kind::Double))
        .square()
        .sum_dim_intlist([1].as_slice(), false, Kind::Double)
        .sqrt()
}

fn to_vec(t: &Tensor) -> Result<Vec<f64>> {
    Ok(Vec::<f64>::try_from(t.detach().to_kind(Kind::Double).flatten(0, -1))?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct P2Config {
    pub num_triplets: usize,
    pub eps: f64,
    pub kind: PerceptualDistanceKind,
    /// Triplets evaluated per generator call.
    pub batch_size: usize,
}

impl Default for P2Config {
    fn default() -> Self {
        Self { num_triplets: 1000, eps: 1e-8, kind: PerceptualDistanceKind::MetricForm, batch_size: 50 }
    }
}

impl P2Config {
    pub fn validate(&self) -> Result<()> {
        ensure_arg!(self.num_triplets >= 1, "P2 needs at least one triplet");
        ensure_arg!(self.eps > 0.0, "P2 epsilon must be positive");
        ensure_arg!(self.batch_size >= 1, "P2 batch size must be positive");
        ensure_arg!(self.kind == PerceptualDistanceKind::MetricForm, "P2 requires the metric-form perceptual distance");
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct P2Outcome {
    pub score: f64,
    pub evaluated: usize,
    pub skipped: usize,
}

/// Mean over triplets of `|Δp1/(Δp2 + ε) − Δs1/(Δs2 + ε)|`, where `Δs` are
/// Euclidean distances between consecutive style codes and `Δp` are
/// metric-form perceptual distances between the corresponding translations
/// of a random source image. Triplets with a non-finite term are skipped;
/// more than 1% skipped is an error.
pub fn p2_score(
    generator: &dyn ImageTranslator,
    sampler: &mut dyn StyleSampler,
    sources: &Tensor,
    phi: &PerceptualEmbedder,
    cfg: &P2Config,
    rng: &mut ChaCha8Rng,
) -> Result<P2Outcome> {
    cfg.validate()?;
    let n_sources = sources.size()[0];
    let (mut sum, mut evaluated, mut skipped) = (0.0f64, 0usize, 0usize);
    let mut remaining = cfg.num_triplets;
    while remaining > 0 {
        let n = remaining.min(cfg.batch_size) as i64;
        remaining -= n as usize;
        let [s1, s2, s3] = sampler.sample_triplet(n, rng)?;
        let x = sources.index_select(0, &random_indices(n_sources, n, rng)?);
        let (p1, p2, p3) = tch::no_grad(|| -> Result<_> {
            Ok((
                phi.embed(&generator.translate(&x, &s1)?)?,
                phi.embed(&generator.translate(&x, &s2)?)?,
                phi.embed(&generator.translate(&x, &s3)?)?,
            ))
        })?;
        let dp1 = to_vec(&phi.distance_embedded(&p1, &p2, cfg.kind)?)?;
        let dp2 = to_vec(&phi.distance_embedded(&p2, &p3, cfg.kind)?)?;
        let ds1 = to_vec(&euclidean_rows(&s1, &s2))?;
        let ds2 = to_vec(&euclidean_rows(&s2, &s3))?;
        for k in 0..n as usize {
            let term = (dp1[k] / (dp2[k] + cfg.eps) - ds1[k] / (ds2[k] + cfg.eps)).abs();
            if term.is_finite() {
                sum += term;
                evaluated += 1;
            } else {
                skipped += 1;
            }
        }
    }
    if skipped * 100 > cfg.num_triplets {
        return Err(Error::Numerical(format!(
            "P2: {skipped} of {} triplets had non-finite distances",
            cfg.num_triplets
        )));
    }
    ensure_arg!(evaluated > 0, "P2: no triplet could be evaluated");
    Ok(P2Outcome { score: sum / evaluated as f64, evaluated, skipped })
}

/// P² for sequences of frames generated from equally spaced codes:
/// frames `i`, `i+k`, `i+2k` are drawn uniformly among all valid `(i, k)`
/// with `k ≥ 1`, so the style-space ratio is 1 and each draw contributes
/// `|d′(x_i, x_{i+k}) / (d′(x_{i+k}, x_{i+2k}) + ε) − 1|`.
///
/// Each element of `sequences` is a `[T, C, H, W]` tensor with `T ≥ 5`.
pub fn p2_equal_step(
    sequences: &[Tensor],
    phi: &PerceptualEmbedder,
    eps: f64,
    num_draws: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    ensure_arg!(!sequences.is_empty(), "need at least one sequence");
    ensure_arg!(num_draws >= 1, "need at least one draw");
    ensure_arg!(eps > 0.0, "epsilon must be positive");
    for s in sequences {
        ensure_arg!(s.dim() == 4 && s.size()[0] >= 5, "each sequence needs T >= 5 frames, got {:?}", s.size());
    }
    let embedded: Vec<Vec<Tensor>> = sequences.iter().map(|s| phi.embed(s)).collect::<Result<_>>()?;
    let mut sum = 0.0;
    for _ in 0..num_draws {
        let q = rng.random_range(0..sequences.len());
        let t = sequences[q].size()[0];
        let (i, k) = sample_equal_step(t, rng);
        let frame = |idx: i64| -> Vec<Tensor> { embedded[q].iter().map(|f| f.narrow(0, idx, 1)).collect() };
        let (a, b, c) = (frame(i), frame(i + k), frame(i + 2 * k));
        let dp1 = phi.distance_embedded(&a, &b, PerceptualDistanceKind::MetricForm)?.double_value(&[0]);
        let dp2 = phi.distance_embedded(&b, &c, PerceptualDistanceKind::MetricForm)?.double_value(&[0]);
        sum += (dp1 / (dp2 + eps) - 1.0).abs();
    }
    Ok(sum / num_draws as f64)
}

/// Uniform draw over `{(i, k) : k ≥ 1, i ≥ 0, i + 2k ≤ T − 1}`.
fn sample_equal_step(t: i64, rng: &mut ChaCha8Rng) -> (i64, i64) {
    let max_k = (t - 1) / 2;
    // For step k there are T − 2k valid starts.
    let total: i64 = (1..=max_k).map(|k| t - 2 * k).sum();
    let mut r = rng.random_range(0..total);
    for k in 1..=max_k {
        let count = t - 2 * k;
        if r < count {
            return (r, k);
        }
        r -= count;
    }
    unreachable!("draw exceeded the enumerated range")
}

/// Perceptual path length: `E[d(G(x, lerp(s1, s2, t)), G(x, lerp(s1, s2, t + ε))) / ε²]`
/// with `t ~ U[0, 1 − ε]` and the squared-form distance.
pub fn ppl_score(
    generator: &dyn ImageTranslator,
    sampler: &mut dyn StyleSampler,
    sources: &Tensor,
    phi: &PerceptualEmbedder,
    epsilon: f64,
    num_samples: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    ensure_arg!(epsilon > 0.0 && epsilon < 1.0, "PPL step must lie in (0, 1), got {epsilon}");
    ensure_arg!(num_samples >= 1, "PPL needs at least one sample");
    let batch = 50usize;
    let n_sources = sources.size()[0];
    let mut sum = 0.0;
    let mut remaining = num_samples;
    while remaining > 0 {
        let n = remaining.min(batch) as i64;
        remaining -= n as usize;
        let s = sampler.sample(2 * n, rng)?.to_kind(Kind::Double);
        let (s1, s2) = (s.narrow(0, 0, n), s.narrow(0, n, n));
        let t: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..=1.0 - epsilon)).collect();
        let t = Tensor::from_slice(&t).unsqueeze(1);
        let sa = (&s1 + (&s2 - &s1) * &t).to_kind(Kind::Float);
        let sb = (&s1 + (&s2 - &s1) * (t + epsilon)).to_kind(Kind::Float);
        let x = sources.index_select(0, &random_indices(n_sources, n, rng)?);
        let d = tch::no_grad(|| -> Result<Tensor> {
            let ga = generator.translate(&x, &sa)?;
            let gb = generator.translate(&x, &sb)?;
            phi.distance(&ga, &gb, PerceptualDistanceKind::SquaredForm)
        })?;
        sum += to_vec(&d)?.iter().sum::<f64>() / (epsilon * epsilon);
    }
    Ok(sum / num_samples as f64)
}

/// Sample mean and unbiased covariance of a feature set.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStats {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Gaussian fit of `[N, D]` features, `N ≥ 2`.
pub fn gaussian_stats(features: &Tensor) -> Result<GaussianStats> {
    ensure_arg!(features.dim() == 2, "expected [N, D] features, got {:?}", features.size());
    let (n, d) = (features.size()[0] as usize, features.size()[1] as usize);
    ensure_arg!(n >= 2, "need at least two feature vectors, got {n}");
    let data = to_vec(features)?;
    let rows = DMatrix::from_row_slice(n, d, &data);
    gaussian_stats_from_matrix(&rows)
}

/// Gaussian fit of feature vectors given as rows.
pub fn gaussian_stats_from_rows(rows: &[Vec<f64>]) -> Result<GaussianStats> {
    ensure_arg!(rows.len() >= 2, "need at least two feature vectors, got {}", rows.len());
    let d = rows[0].len();
    ensure_arg!(rows.iter().all(|r| r.len() == d), "feature vectors differ in dimension");
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    gaussian_stats_from_matrix(&DMatrix::from_row_slice(rows.len(), d, &flat))
}

fn gaussian_stats_from_matrix(rows: &DMatrix<f64>) -> Result<GaussianStats> {
    let n = rows.nrows();
    let mean: DVector<f64> = rows.row_mean().transpose();
    let mut centered = rows.clone();
    for mut r in centered.row_iter_mut() {
        r -= mean.transpose();
    }
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    Ok(GaussianStats { mean, cov })
}

/// Symmetric PSD square root via eigendecomposition. Eigenvalues below
/// `−PSD_TOLERANCE` are a numerical error; small negatives are clamped.
fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let scale = eig.eigenvalues.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    let mut roots = eig.eigenvalues.clone();
    for v in roots.iter_mut() {
        if *v < -PSD_TOLERANCE * scale {
            return Err(Error::Numerical(format!("matrix is not positive semidefinite (eigenvalue {v})")));
        }
        *v = v.max(0.0).sqrt();
    }
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose())
}

/// Fréchet distance `‖μ₁ − μ₂‖² + Tr(Σ₁ + Σ₂ − 2(Σ₁Σ₂)^{1/2})`.
///
/// The trace of `(Σ₁Σ₂)^{1/2}` is computed as the trace of the square root
/// of the symmetric product `Σ₁^{1/2} Σ₂ Σ₁^{1/2}`, which has the same
/// eigenvalues.
pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    ensure_arg!(a.dim() == b.dim(), "dimension mismatch: {} vs {}", a.dim(), b.dim());
    let root_a = psd_sqrt(&a.cov)?;
    let inner = &root_a * &b.cov * &root_a;
    let cross = psd_sqrt(&inner)?.trace();
    let diff = &a.mean - &b.mean;
    let value = diff.dot(&diff) + a.cov.trace() + b.cov.trace() - 2.0 * cross;
    if !value.is_finite() {
        return Err(Error::Numerical("Fréchet distance is not finite".into()));
    }
    Ok(value.max(0.0))
}

/// Average squared-form perceptual distance over every unordered pair of
/// `styles_per_domain` translations of each source into each domain.
pub fn lpips_diversity(
    generator: &dyn ImageTranslator,
    sampler: &mut dyn DomainStyleSampler,
    sources: &Tensor,
    styles_per_domain: usize,
    phi: &PerceptualEmbedder,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    ensure_arg!(styles_per_domain >= 2, "need at least two styles per domain, got {styles_per_domain}");
    let k = styles_per_domain as i64;
    let (mut sum, mut pairs) = (0.0, 0usize);
    for src in 0..sources.size()[0] {
        let x = sources.narrow(0, src, 1).repeat([k, 1, 1, 1]);
        for domain in 0..sampler.num_domains() {
            let styles = sampler.sample_in_domain(domain, k, rng)?;
            let feats = tch::no_grad(|| phi.embed(&generator.translate(&x, &styles)?))?;
            let (left, right) = pair_indices(k);
            let fa: Vec<Tensor> = feats.iter().map(|f| f.index_select(0, &left)).collect();
            let fb: Vec<Tensor> = feats.iter().map(|f| f.index_select(0, &right)).collect();
            let d = phi.distance_embedded(&fa, &fb, PerceptualDistanceKind::SquaredForm)?;
            sum += to_vec(&d)?.iter().sum::<f64>();
            pairs += left.size()[0] as usize;
        }
    }
    ensure_arg!(pairs > 0, "no source images supplied");
    Ok(sum / pairs as f64)
}

fn pair_indices(k: i64) -> (Tensor, Tensor) {
    let (mut l, mut r) = (Vec::new(), Vec::new());
    for i in 0..k {
        for j in i + 1..k {
            l.push(i);
            r.push(j);
        }
    }
    (Tensor::from_slice(&l), Tensor::from_slice(&r))
}

/// Number of unordered pairs scored per (source, domain) by [`lpips_diversity`].
pub fn lpips_pairs_per_domain(styles_per_domain: usize) -> usize {
    styles_per_domain * styles_per_domain.saturating_sub(1) / 2
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use tch::Device;

    fn echo(x: &Tensor, s: &Tensor) -> Result<Tensor> {
        let _ = x;
        let d = s.size()[1];
        Ok(s.view([-1, d, 1, 1]))
    }

    #[test]
    fn p2_of_style_echo_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sources = Tensor::zeros([4, 1, 1, 1], (Kind::Float, Device::Cpu));
        let cfg = P2Config { num_triplets: 500, ..Default::default() };
        let out =
            p2_score(&echo, &mut GaussianStyles { dim: 8 }, &sources, &PerceptualEmbedder::identity(), &cfg, &mut rng)
                .unwrap();
        assert!(out.score < 1e-6);
        assert_eq!(out.evaluated, 500);
    }

    #[test]
    fn p2_rejects_squared_form() {
        let cfg = P2Config { kind: PerceptualDistanceKind::SquaredForm, ..Default::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn equal_step_draws_are_valid_and_cover_all_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut seen = std::collections::HashSet::new();
        for _ in 0..5000 {
            let (i, k) = sample_equal_step(7, &mut rng);
            assert!(k >= 1 && i >= 0 && i + 2 * k <= 6);
            seen.insert((i, k));
        }
        // k = 1: 5 starts, k = 2: 3, k = 3: 1.
        assert_eq!(seen.len(), 9);
    }

    #[test]
    fn equal_step_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let phi = PerceptualEmbedder::identity();
        let frozen = Tensor::ones([6, 2, 1, 1], (Kind::Float, Device::Cpu)).view([6, 2, 1, 1]);
        let v = p2_equal_step(&[frozen], &phi, 1e-8, 200, &mut rng).unwrap();
        assert!((v - 1.0).abs() < 1e-12);

        let steps = Tensor::arange(8, (Kind::Double, Device::Cpu)).view([8, 1, 1, 1]) * 0.3;
        let v = p2_equal_step(&[steps.repeat([1, 3, 1, 1])], &phi, 1e-8, 200, &mut rng).unwrap();
        assert!(v < 1e-6);

        let short = Tensor::zeros([4, 1, 1, 1], (Kind::Float, Device::Cpu));
        assert!(p2_equal_step(&[short], &phi, 1e-8, 10, &mut rng).is_err());
    }

    #[test]
    fn ppl_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let phi = PerceptualEmbedder::identity();
        let sources = Tensor::zeros([3, 1, 1, 1], (Kind::Float, Device::Cpu));
        let constant = |x: &Tensor, _s: &Tensor| -> Result<Tensor> { Ok(x.zeros_like()) };
        let v = ppl_score(&constant, &mut GaussianStyles { dim: 4 }, &sources, &phi, 1e-4, 100, &mut rng).unwrap();
        assert_eq!(v, 0.0);
        assert!(ppl_score(&constant, &mut GaussianStyles { dim: 4 }, &sources, &phi, 0.0, 10, &mut rng).is_err());
    }

    #[test]
    fn gaussian_stats_examples() {
        let s = gaussian_stats_from_rows(&[vec![0.0, 0.0], vec![2.0, 2.0]]).unwrap();
        assert_eq!(s.mean.as_slice(), &[1.0, 1.0]);
        let same = gaussian_stats_from_rows(&vec![vec![1.5, -2.0]; 4]).unwrap();
        assert!(same.cov.iter().all(|v| *v == 0.0));
        assert!(gaussian_stats_from_rows(&[vec![1.0]]).is_err());
        let t = Tensor::from_slice(&[0.0f32, 0.0, 2.0, 2.0]).view([2, 2]);
        assert_eq!(gaussian_stats(&t).unwrap(), s);
    }

    #[test]
    fn frechet_examples() {
        let a = GaussianStats { mean: DVector::from_vec(vec![0.0, 0.0]), cov: DMatrix::identity(2, 2) };
        let b = GaussianStats { mean: DVector::from_vec(vec![3.0, 4.0]), cov: DMatrix::identity(2, 2) };
        assert!(frechet_distance(&a, &a).unwrap().abs() < 1e-6);
        assert!((frechet_distance(&a, &b).unwrap() - 25.0).abs() < 1e-9);
        let wide = GaussianStats { mean: DVector::from_vec(vec![0.0]), cov: DMatrix::from_element(1, 1, 4.0) };
        let unit = GaussianStats { mean: DVector::from_vec(vec![0.0]), cov: DMatrix::from_element(1, 1, 1.0) };
        assert!((frechet_distance(&wide, &unit).unwrap() - 1.0).abs() < 1e-12);
        assert!(frechet_distance(&a, &unit).is_err());
    }

    #[test]
    fn lpips_pair_count() {
        assert_eq!(lpips_pairs_per_domain(2), 1);
        assert_eq!(lpips_pairs_per_domain(10), 45);
        assert_eq!(pair_indices(2).0.size(), [1]);
    }
}
