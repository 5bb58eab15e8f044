//! Perceptual embedding `φ` and the two layer-weighted perceptual distances
//! built on it.
//!
//! Both distances average per-position feature differences over each tapped
//! layer's spatial grid and sum the layers with weights `w_l`:
//!
//! * [`PerceptualDistanceKind::SquaredForm`] sums squared L2 norms. It is the
//!   classic learned-perceptual form and does not satisfy the triangle
//!   inequality.
//! * [`PerceptualDistanceKind::MetricForm`] sums plain L2 norms, which makes
//!   it a pseudometric over images; ratio-based smoothness scores need it.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use tch::nn::{self, OptimizerConfig};
use tch::{Device, Kind, Tensor};

use crate::error::{ensure_arg, invalid, Result};

const CHANNEL_NORM_EPS: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PerceptualDistanceKind {
    SquaredForm,
    MetricForm,
}

/// A fixed feature extractor with `L` tapped layers.
pub trait FeatureExtractor {
    fn num_layers(&self) -> usize;
    /// `L` feature maps `[B, C_l, H_l, W_l]` for a batch of images.
    fn layer_features(&self, x: &Tensor) -> Result<Vec<Tensor>>;
    /// Global image descriptors `[B, D]`, used for Fréchet distances.
    fn pooled_features(&self, x: &Tensor) -> Result<Tensor>;
    /// Identifies the extractor's architecture, tapped layers and parameters.
    fn fingerprint(&self) -> String;
}

/// Treats the image itself as the only feature layer.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityExtractor;

impl FeatureExtractor for IdentityExtractor {
    fn num_layers(&self) -> usize {
        1
    }

    fn layer_features(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        ensure_arg!(x.dim() == 4, "expected [B, C, H, W] images, got {:?}", x.size());
        Ok(vec![x.shallow_clone()])
    }

    fn pooled_features(&self, x: &Tensor) -> Result<Tensor> {
        ensure_arg!(x.dim() == 4, "expected [B, C, H, W] images, got {:?}", x.size());
        Ok(x.flatten(1, -1))
    }

    fn fingerprint(&self) -> String {
        "identity".to_string()
    }
}

/// Small convolutional classifier used as `φ` at desk scale: stages of
/// 3×3 conv + ReLU, each tapped after its activation, separated by 2×
/// average pooling. The last stage's global average is the pooled
/// descriptor.
#[derive(Debug)]
pub struct ConvBackbone {
    vs: nn::VarStore,
    convs: Vec<nn::Conv2D>,
    classifier: nn::Linear,
    widths: Vec<i64>,
    channels: i64,
}

impl ConvBackbone {
    pub fn new(channels: i64, widths: &[i64], num_classes: i64, seed: u64) -> Result<Self> {
        ensure_arg!(!widths.is_empty(), "backbone needs at least one stage");
        tch::manual_seed(seed as i64);
        let vs = nn::VarStore::new(Device::Cpu);
        let root = vs.root();
        let mut c_in = channels;
        let mut convs = Vec::new();
        for (i, &w) in widths.iter().enumerate() {
            let cfg = nn::ConvConfig { padding: 1, ..Default::default() };
            convs.push(nn::conv2d(&root / format!("conv{i}"), c_in, w, 3, cfg));
            c_in = w;
        }
        let classifier = nn::linear(&root / "classifier", c_in, num_classes, Default::default());
        Ok(Self { vs, convs, classifier, widths: widths.to_vec(), channels })
    }

    /// Default desk-scale backbone: four stages for 3-channel images.
    pub fn desk_default(channels: i64, num_classes: i64, seed: u64) -> Result<Self> {
        Self::new(channels, &[16, 32, 64, 64], num_classes, seed)
    }

    fn stages(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        ensure_arg!(
            x.dim() == 4 && x.size()[1] == self.channels,
            "backbone expects [B, {}, H, W], got {:?}",
            self.channels,
            x.size()
        );
        let mut taps = Vec::with_capacity(self.convs.len());
        let mut h = x.to_kind(Kind::Float);
        for (i, c) in self.convs.iter().enumerate() {
            if i > 0 && h.size()[2] >= 2 && h.size()[3] >= 2 {
                h = crate::networks::avg_pool2(&h);
            }
            h = h.apply(c).relu();
            taps.push(h.shallow_clone());
        }
        Ok(taps)
    }

    fn logits(&self, x: &Tensor) -> Result<Tensor> {
        let last = self.stages(x)?.pop().expect("at least one stage");
        Ok(last.mean_dim([2, 3].as_slice(), false, Kind::Float).apply(&self.classifier))
    }

    /// Fits the classifier to domain labels with Adam, then freezes it.
    /// Returns the final training accuracy over the full set.
    pub fn train_on_labels(
        &mut self,
        images: &Tensor,
        labels: &[usize],
        steps: usize,
        batch_size: usize,
        seed: u64,
    ) -> Result<f64> {
        let n = images.size()[0] as usize;
        ensure_arg!(n == labels.len() && n > 0, "backbone training needs one label per image");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut opt = nn::Adam::default().build(&self.vs, 1e-3)?;
        let all_labels = Tensor::from_slice(&labels.iter().map(|&l| l as i64).collect::<Vec<_>>());
        let mut order: Vec<i64> = (0..n as i64).collect();
        let mut cursor = n;
        for _ in 0..steps {
            if cursor + batch_size > n {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let idx = Tensor::from_slice(&order[cursor..(cursor + batch_size).min(n)]);
            cursor += batch_size;
            let x = images.index_select(0, &idx);
            let y = all_labels.index_select(0, &idx);
            let loss = self.logits(&x)?.cross_entropy_for_logits(&y);
            opt.backward_step(&loss);
        }
        self.vs.freeze();
        let correct = tch::no_grad(|| -> Result<f64> {
            let mut correct = 0.0;
            for start in (0..n).step_by(256) {
                let len = (256).min(n - start) as i64;
                let x = images.narrow(0, start as i64, len);
                let pred = self.logits(&x)?.argmax(-1, false);
                let y = all_labels.narrow(0, start as i64, len);
                correct += pred.eq_tensor(&y).sum(Kind::Float).double_value(&[]);
            }
            Ok(correct)
        })?;
        Ok(correct / n as f64)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.vs.save(path)?;
        Ok(())
    }

    pub fn load(&mut self, path: impl AsRef<Path>) -> Result<()> {
        self.vs.load(path)?;
        self.vs.freeze();
        Ok(())
    }
}

impl FeatureExtractor for ConvBackbone {
    fn num_layers(&self) -> usize {
        self.convs.len()
    }

    fn layer_features(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        tch::no_grad(|| self.stages(x))
    }

    fn pooled_features(&self, x: &Tensor) -> Result<Tensor> {
        tch::no_grad(|| {
            let last = self.stages(x)?.pop().expect("at least one stage");
            Ok(last.mean_dim([2, 3].as_slice(), false, Kind::Float))
        })
    }

    fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(format!("conv-backbone c={} widths={:?} taps=post-relu", self.channels, self.widths));
        let mut vars: Vec<(String, Tensor)> = self.vs.variables().into_iter().collect();
        vars.sort_by(|a, b| a.0.cmp(&b.0));
        for (name, t) in vars {
            hasher.update(name.as_bytes());
            let values: Vec<f32> = Vec::try_from(t.detach().flatten(0, -1)).unwrap_or_default();
            for v in values {
                hasher.update(v.to_le_bytes());
            }
        }
        let digest = hasher.finalize();
        format!("conv-backbone:{}", digest.iter().take(8).map(|b| format!("{b:02x}")).collect::<String>())
    }
}

/// `φ` together with per-layer weights and the per-position channel
/// normalization convention.
pub struct PerceptualEmbedder {
    extractor: Box<dyn FeatureExtractor>,
    weights: Vec<f64>,
    normalize: bool,
}

impl std::fmt::Debug for PerceptualEmbedder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PerceptualEmbedder")
            .field("extractor", &self.extractor.fingerprint())
            .field("weights", &self.weights)
            .field("normalize", &self.normalize)
            .finish()
    }
}

impl PerceptualEmbedder {
    pub fn new(extractor: Box<dyn FeatureExtractor>, weights: Vec<f64>, normalize: bool) -> Result<Self> {
        ensure_arg!(
            weights.len() == extractor.num_layers(),
            "expected {} layer weights, got {}",
            extractor.num_layers(),
            weights.len()
        );
        ensure_arg!(weights.iter().all(|w| *w >= 0.0 && w.is_finite()), "layer weights must be nonnegative");
        ensure_arg!(weights.iter().any(|w| *w > 0.0), "layer weights must not all be zero");
        Ok(Self { extractor, weights, normalize })
    }

    /// Uniform weights `1/L` and channel normalization.
    pub fn uniform(extractor: Box<dyn FeatureExtractor>) -> Result<Self> {
        let l = extractor.num_layers();
        Self::new(extractor, vec![1.0 / l as f64; l], true)
    }

    /// Identity features without normalization: distances become plain
    /// per-pixel channel-vector distances.
    pub fn identity() -> Self {
        Self { extractor: Box::new(IdentityExtractor), weights: vec![1.0], normalize: false }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        let normalize = self.normalize;
        self = Self::new(self.extractor, weights, normalize)?;
        Ok(self)
    }

    pub fn extractor(&self) -> &dyn FeatureExtractor {
        self.extractor.as_ref()
    }

    pub fn fingerprint(&self) -> String {
        let w: Vec<String> = self.weights.iter().map(|w| format!("{w}")).collect();
        format!("{};w=[{}];norm={}", self.extractor.fingerprint(), w.join(","), self.normalize)
    }

    /// Per-layer feature maps in double precision, unit-normalized along
    /// channels at each spatial position when normalization is on.
    pub fn embed(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let layers = tch::no_grad(|| self.extractor.layer_features(x))?;
        ensure_arg!(layers.len() == self.weights.len(), "extractor returned {} layers", layers.len());
        Ok(layers
            .into_iter()
            .map(|f| {
                let f = f.detach().to_kind(Kind::Double);
                if self.normalize {
                    let norm = f.square().sum_dim_intlist([1].as_slice(), true, Kind::Double).sqrt();
                    f / (norm + CHANNEL_NORM_EPS)
                } else {
                    f
                }
            })
            .collect())
    }

    /// Distances `[B]` between two embedded batches.
    pub fn distance_embedded(&self, a: &[Tensor], b: &[Tensor], kind: PerceptualDistanceKind) -> Result<Tensor> {
        ensure_arg!(a.len() == b.len() && a.len() == self.weights.len(), "layer count mismatch");
        let mut total: Option<Tensor> = None;
        for ((fa, fb), &w) in a.iter().zip(b).zip(&self.weights) {
            ensure_arg!(fa.size() == fb.size(), "feature shape mismatch {:?} vs {:?}", fa.size(), fb.size());
            let sq = (fa - fb).square().sum_dim_intlist([1].as_slice(), false, Kind::Double);
            let per_pos = match kind {
                PerceptualDistanceKind::SquaredForm => sq,
                PerceptualDistanceKind::MetricForm => sq.sqrt(),
            };
            let layer = per_pos.mean_dim([1, 2].as_slice(), false, Kind::Double) * w;
            total = Some(match total {
                Some(t) => t + layer,
                None => layer,
            });
        }
        total.ok_or_else(|| invalid("no feature layers"))
    }

    pub fn distance(&self, x1: &Tensor, x2: &Tensor, kind: PerceptualDistanceKind) -> Result<Tensor> {
        ensure_arg!(x1.size() == x2.size(), "image shape mismatch {:?} vs {:?}", x1.size(), x2.size());
        self.distance_embedded(&self.embed(x1)?, &self.embed(x2)?, kind)
    }

    /// The classic squared-norm perceptual distance, per image.
    pub fn distance_squared_form(&self, x1: &Tensor, x2: &Tensor) -> Result<Tensor> {
        self.distance(x1, x2, PerceptualDistanceKind::SquaredForm)
    }

    /// The pseudometric form, per image.
    pub fn distance_metric_form(&self, x1: &Tensor, x2: &Tensor) -> Result<Tensor> {
        self.distance(x1, x2, PerceptualDistanceKind::MetricForm)
    }
}

/// Reads layer weights: one nonnegative decimal per line, blank lines
/// ignored.
pub fn read_layer_weights(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    parse_layer_weights(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

pub fn parse_layer_weights(text: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let w: f64 = line.parse().map_err(|_| invalid(format!("line {}: `{line}` is not a number", lineno + 1)))?;
        ensure_arg!(w >= 0.0 && w.is_finite(), "line {}: weight must be nonnegative", lineno + 1);
        out.push(w);
    }
    ensure_arg!(!out.is_empty(), "weight file is empty");
    Ok(out)
}
