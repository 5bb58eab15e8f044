//! Style-space primitives: style codes, the Mix operation, Beta-distributed
//! mixing coefficients, style-pair sampling and linear interpolation paths.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use tch::{Kind, Tensor};

use crate::error::{ensure_arg, invalid, Result};

/// A point of the latent style space.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleCode(Vec<f32>);

impl StyleCode {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        ensure_arg!(!values.is_empty(), "style code must have at least one dimension");
        ensure_arg!(values.iter().all(|v| v.is_finite()), "style code entries must be finite");
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.0
    }

    /// Euclidean distance, accumulated in double precision.
    pub fn distance(&self, other: &StyleCode) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| {
                let d = *a as f64 - *b as f64;
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Single code as a `[1, D]` float tensor.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_slice(&self.0).view([1, self.0.len() as i64])
    }

    /// Stacks codes of equal dimension into a `[B, D]` float tensor.
    pub fn stack(codes: &[StyleCode]) -> Result<Tensor> {
        let first = codes.first().ok_or_else(|| invalid("cannot stack zero style codes"))?;
        let dim = first.dim();
        ensure_arg!(codes.iter().all(|c| c.dim() == dim), "style codes have mismatched dimensions");
        let flat: Vec<f32> = codes.iter().flat_map(|c| c.0.iter().copied()).collect();
        Ok(Tensor::from_slice(&flat).view([codes.len() as i64, dim as i64]))
    }

    /// Splits a `[B, D]` tensor into `B` codes.
    pub fn unstack(batch: &Tensor) -> Result<Vec<StyleCode>> {
        ensure_arg!(batch.dim() == 2, "expected a [B, D] style batch, got {:?}", batch.size());
        let rows: Vec<Vec<f32>> = Vec::<Vec<f32>>::try_from(batch.detach().to_kind(Kind::Float))?;
        rows.into_iter().map(StyleCode::new).collect()
    }
}

/// Standard-normal input of the mapping network.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentNoise(Vec<f32>);

impl LatentNoise {
    pub fn sample<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        Self((0..dim).map(|_| StandardNormal.sample(rng)).collect())
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }
}

/// `[n, dim]` tensor of standard-normal noise drawn from a host RNG, so the
/// draw is reproducible independently of libtorch's generator.
pub fn noise_batch<R: Rng + ?Sized>(n: i64, dim: i64, rng: &mut R) -> Tensor {
    let values: Vec<f32> = (0..n * dim).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::from_slice(&values).view([n, dim])
}

/// A (pseudo-)domain tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DomainLabel {
    index: usize,
    num_domains: usize,
}

impl DomainLabel {
    pub fn new(index: usize, num_domains: usize) -> Result<Self> {
        ensure_arg!(num_domains >= 2, "need at least two domains, got {num_domains}");
        ensure_arg!(index < num_domains, "domain {index} out of range for {num_domains} domains");
        Ok(Self { index, num_domains })
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn num_domains(&self) -> usize {
        self.num_domains
    }

    /// Labels as an int64 tensor, the form the classification losses take.
    pub fn to_tensor(labels: &[DomainLabel]) -> Tensor {
        let idx: Vec<i64> = labels.iter().map(|l| l.index as i64).collect();
        Tensor::from_slice(&idx)
    }
}

/// One mixup draw: the two endpoint codes and the Beta(b, b) coefficient.
#[derive(Debug, Clone, PartialEq)]
pub struct MixDraw {
    pub s1: StyleCode,
    pub s2: StyleCode,
    pub alpha: f64,
    pub b: f64,
}

impl MixDraw {
    pub fn new(s1: StyleCode, s2: StyleCode, alpha: f64, b: f64) -> Result<Self> {
        ensure_arg!(s1.dim() == s2.dim(), "mix endpoints differ in dimension");
        ensure_arg!((0.0..=1.0).contains(&alpha), "alpha {alpha} outside [0, 1]");
        ensure_arg!(b > 0.0, "Beta shape must be positive, got {b}");
        Ok(Self { s1, s2, alpha, b })
    }

    pub fn mixed(&self) -> Result<StyleCode> {
        mix(&self.s1, &self.s2, self.alpha)
    }
}

/// Where a mini-batch draws its style codes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StyleSourceMode {
    /// `s = E(x)` for real images.
    FromRealImages,
    /// `s = F(z)` for standard-normal noise.
    FromNoise,
}

impl StyleSourceMode {
    /// Even steps use real images, odd steps use noise.
    pub fn for_step(step: u64) -> Self {
        if step % 2 == 0 {
            Self::FromRealImages
        } else {
            Self::FromNoise
        }
    }
}

/// Linear path between two codes sampled at `steps` equally spaced points,
/// endpoints included.
#[derive(Debug, Clone, PartialEq)]
pub struct InterpolationPath {
    start: StyleCode,
    end: StyleCode,
    steps: usize,
}

impl InterpolationPath {
    pub fn new(start: StyleCode, end: StyleCode, steps: usize) -> Result<Self> {
        ensure_arg!(steps >= 2, "an interpolation path needs at least 2 points, got {steps}");
        ensure_arg!(start.dim() == end.dim(), "path endpoints differ in dimension");
        Ok(Self { start, end, steps })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn points(&self) -> Vec<StyleCode> {
        (0..self.steps)
            .map(|t| {
                let alpha = t as f64 / (self.steps - 1) as f64;
                mix_unchecked(&self.start, &self.end, alpha)
            })
            .collect()
    }
}

/// `Mix(s1, s2, α) = (1 − α)·s1 + α·s2`.
pub fn mix(s1: &StyleCode, s2: &StyleCode, alpha: f64) -> Result<StyleCode> {
    ensure_arg!(s1.dim() == s2.dim(), "cannot mix codes of dimension {} and {}", s1.dim(), s2.dim());
    ensure_arg!((0.0..=1.0).contains(&alpha), "alpha {alpha} outside [0, 1]");
    Ok(mix_unchecked(s1, s2, alpha))
}

fn mix_unchecked(s1: &StyleCode, s2: &StyleCode, alpha: f64) -> StyleCode {
    // The affine form keeps mix(s, s, α) = s exactly; α = 1 is special-cased
    // so the far endpoint is exact too.
    if alpha == 1.0 {
        return s2.clone();
    }
    let a = alpha as f32;
    let values = s1.0.iter().zip(&s2.0).map(|(x, y)| x + a * (y - x)).collect();
    StyleCode(values)
}

/// Row-wise mix of two `[B, D]` style batches with per-row coefficients
/// `alpha` of shape `[B]`. Differentiable in both style inputs.
pub fn mix_batch(s1: &Tensor, s2: &Tensor, alpha: &Tensor) -> Result<Tensor> {
    ensure_arg!(
        s1.size() == s2.size() && s1.dim() == 2,
        "mix_batch expects equal [B, D] inputs, got {:?} and {:?}",
        s1.size(),
        s2.size()
    );
    ensure_arg!(alpha.size() == [s1.size()[0]], "alpha must have shape [{}], got {:?}", s1.size()[0], alpha.size());
    let a = alpha.to_kind(s1.kind()).unsqueeze(1);
    Ok(s1 * (1.0 - &a) + s2 * a)
}

/// Draws `α ~ Beta(b, b)`.
pub fn sample_alpha<R: Rng + ?Sized>(b: f64, rng: &mut R) -> Result<f64> {
    ensure_arg!(b > 0.0 && b.is_finite(), "Beta shape must be positive, got {b}");
    let beta = Beta::new(b, b).map_err(|e| invalid(format!("Beta({b}, {b}): {e}")))?;
    Ok(beta.sample(rng))
}

/// `n` independent Beta(b, b) draws as a float tensor of shape `[n]`.
pub fn sample_alpha_batch<R: Rng + ?Sized>(b: f64, n: usize, rng: &mut R) -> Result<(Vec<f64>, Tensor)> {
    ensure_arg!(b > 0.0 && b.is_finite(), "Beta shape must be positive, got {b}");
    let beta = Beta::new(b, b).map_err(|e| invalid(format!("Beta({b}, {b}): {e}")))?;
    let draws: Vec<f64> = (0..n).map(|_| beta.sample(rng)).collect();
    let as_f32: Vec<f32> = draws.iter().map(|&a| a as f32).collect();
    Ok((draws, Tensor::from_slice(&as_f32)))
}

/// Image-to-style map `s = E(x)`.
pub trait StyleEncoding {
    fn style_dim(&self) -> i64;
    fn encode(&self, x: &Tensor) -> Result<Tensor>;
}

/// Noise-to-style map `s = F(z)`.
pub trait NoiseMapping {
    fn noise_dim(&self) -> i64;
    fn style_dim(&self) -> i64;
    fn map_noise(&self, z: &Tensor) -> Result<Tensor>;
}

/// Shuffles a `[B, D]` batch of codes and pairs element `i` with element
/// `(i + 1) mod B` of the shuffled order, giving `B` pairs of distinct rows.
pub fn pair_within_batch<R: Rng + ?Sized>(codes: &Tensor, rng: &mut R) -> Result<(Tensor, Tensor)> {
    ensure_arg!(codes.dim() == 2, "expected [B, D] codes, got {:?}", codes.size());
    let n = codes.size()[0];
    ensure_arg!(n >= 2, "pairing needs at least two codes, got {n}");
    let mut order: Vec<i64> = (0..n).collect();
    order.shuffle(rng);
    let next: Vec<i64> = (0..n as usize).map(|i| order[(i + 1) % n as usize]).collect();
    let first = codes.index_select(0, &Tensor::from_slice(&order));
    let second = codes.index_select(0, &Tensor::from_slice(&next));
    Ok((first, second))
}

/// Every unordered pair `(i, j)`, `i < j`, of a `[B, D]` batch.
pub fn all_pairs(codes: &Tensor) -> Result<(Tensor, Tensor)> {
    ensure_arg!(codes.dim() == 2, "expected [B, D] codes, got {:?}", codes.size());
    let n = codes.size()[0];
    ensure_arg!(n >= 2, "pairing needs at least two codes, got {n}");
    let (mut left, mut right) = (Vec::new(), Vec::new());
    for i in 0..n {
        for j in i + 1..n {
            left.push(i);
            right.push(j);
        }
    }
    Ok((codes.index_select(0, &Tensor::from_slice(&left)), codes.index_select(0, &Tensor::from_slice(&right))))
}

/// Style pairs for one mini-batch following the step-parity alternation:
/// even steps encode the real `images` and pair them, odd steps map one
/// noise vector per image through `mapper` and pair those. Codes of the same
/// domain may end up paired.
pub fn sample_style_pair<E, F, R>(
    step: u64,
    images: &Tensor,
    encoder: &E,
    mapper: &F,
    rng: &mut R,
) -> Result<(Tensor, Tensor)>
where
    E: StyleEncoding + ?Sized,
    F: NoiseMapping + ?Sized,
    R: Rng + ?Sized,
{
    ensure_arg!(
        encoder.style_dim() == mapper.style_dim(),
        "encoder and mapper disagree on style dimension ({} vs {})",
        encoder.style_dim(),
        mapper.style_dim()
    );
    let n = images.size().first().copied().unwrap_or(0);
    let codes = match StyleSourceMode::for_step(step) {
        StyleSourceMode::FromRealImages => encoder.encode(images)?,
        StyleSourceMode::FromNoise => {
            let z = noise_batch(n, mapper.noise_dim(), rng);
            mapper.map_noise(&z)?
        }
    };
    pair_within_batch(&codes, rng)
}

/// `steps` equally spaced codes from `start` to `end`; element `t` is
/// `mix(start, end, t / (steps − 1))`.
pub fn interpolate_path(start: &StyleCode, end: &StyleCode, steps: usize) -> Result<Vec<StyleCode>> {
    Ok(InterpolationPath::new(start.clone(), end.clone(), steps)?.points())
}

/// Batched linear interpolation: for `[B, D]` endpoints returns a
/// `[steps, B, D]` tensor whose slice `t` is `mix(start, end, t / (steps − 1))`.
pub fn interpolate_batch(start: &Tensor, end: &Tensor, steps: usize) -> Result<Tensor> {
    ensure_arg!(steps >= 2, "an interpolation path needs at least 2 points, got {steps}");
    ensure_arg!(start.size() == end.size(), "path endpoints differ in shape: {:?} vs {:?}", start.size(), end.size());
    let delta = end - start;
    let frames: Vec<Tensor> = (0..steps)
        .map(|t| {
            if t == steps - 1 {
                return end.copy();
            }
            let a = (t as f64 / (steps - 1) as f64) as f32;
            start + &delta * a as f64
        })
        .collect();
    Ok(Tensor::stack(&frames, 0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn code(v: &[f32]) -> StyleCode {
        StyleCode::new(v.to_vec()).unwrap()
    }

    #[test]
    fn mix_endpoints_and_midpoint() {
        let (a, b) = (code(&[1.0, 0.0]), code(&[0.0, 1.0]));
        assert_eq!(mix(&a, &b, 0.0).unwrap(), a);
        assert_eq!(mix(&a, &b, 1.0).unwrap(), b);
        let m = mix(&code(&[0.0, 2.0]), &code(&[2.0, 0.0]), 0.5).unwrap();
        assert_eq!(m.as_slice(), &[1.0, 1.0]);
    }

    #[test]
    fn mix_rejects_bad_input() {
        assert!(mix(&code(&[1.0]), &code(&[1.0, 2.0]), 0.5).is_err());
        assert!(mix(&code(&[1.0]), &code(&[2.0]), 1.5).is_err());
        assert!(StyleCode::new(vec![f32::NAN]).is_err());
    }

    #[test]
    fn interpolation_examples() {
        let (a, b) = (code(&[0.0, 0.0]), code(&[2.0, 2.0]));
        assert_eq!(interpolate_path(&a, &b, 2).unwrap(), vec![a.clone(), b.clone()]);
        let path = interpolate_path(&a, &b, 3).unwrap();
        assert_eq!(path[1].as_slice(), &[1.0, 1.0]);
        assert!(interpolate_path(&a, &b, 1).is_err());

        let path = interpolate_path(&code(&[-1.5, 3.0]), &code(&[2.0, -4.0]), 20).unwrap();
        assert_eq!(path.len(), 20);
        let gaps: Vec<f64> = path.windows(2).map(|w| w[0].distance(&w[1])).collect();
        for g in &gaps {
            assert!((g - gaps[0]).abs() < 1e-6);
        }
        let same = interpolate_path(&a, &a, 7).unwrap();
        assert!(same.iter().all(|c| c == &a));
    }

    #[test]
    fn interpolate_batch_matches_scalar_path() {
        let start = code(&[0.5, -1.0, 2.0]);
        let end = code(&[-0.5, 1.0, 0.0]);
        let batch = interpolate_batch(&start.to_tensor(), &end.to_tensor(), 6).unwrap();
        let scalar = interpolate_path(&start, &end, 6).unwrap();
        for (t, c) in scalar.iter().enumerate() {
            let row = StyleCode::unstack(&batch.get(t as i64)).unwrap();
            assert_eq!(&row[0], c);
        }
    }

    #[test]
    fn sample_alpha_rejects_nonpositive_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_alpha(0.0, &mut rng).is_err());
        assert!(sample_alpha(-1.0, &mut rng).is_err());
        let a = sample_alpha(2.0, &mut rng).unwrap();
        assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn source_mode_alternates_by_parity() {
        assert_eq!(StyleSourceMode::for_step(0), StyleSourceMode::FromRealImages);
        assert_eq!(StyleSourceMode::for_step(1), StyleSourceMode::FromNoise);
        for k in 0..50 {
            assert_eq!(StyleSourceMode::for_step(2 * k), StyleSourceMode::for_step(0));
        }
    }

    #[test]
    fn pairing_never_pairs_a_row_with_itself() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let codes = Tensor::arange(8, (Kind::Float, tch::Device::Cpu)).view([8, 1]);
        let (a, b) = pair_within_batch(&codes, &mut rng).unwrap();
        let a: Vec<f32> = Vec::try_from(a.view([-1])).unwrap();
        let b: Vec<f32> = Vec::try_from(b.view([-1])).unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| x != y));
        let mut seen = a.clone();
        seen.sort_by(|x, y| x.partial_cmp(y).unwrap());
        assert_eq!(seen, (0..8).map(|v| v as f32).collect::<Vec<_>>());
        assert!(pair_within_batch(&codes.narrow(0, 0, 1), &mut rng).is_err());
    }

    #[test]
    fn all_pairs_count() {
        let codes = Tensor::zeros([5, 3], (Kind::Float, tch::Device::Cpu));
        let (a, _) = all_pairs(&codes).unwrap();
        assert_eq!(a.size()[0], 10);
    }

    #[test]
    fn domain_label_bounds() {
        assert!(DomainLabel::new(0, 1).is_err());
        assert!(DomainLabel::new(2, 2).is_err());
        assert_eq!(DomainLabel::new(1, 3).unwrap().index(), 1);
    }
}
