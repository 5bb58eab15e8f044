//! The four networks of the translation framework and their checkpoint
//! archive.
//!
//! * [`StyleEncoder`] `E`: image → style code (plus a cluster head used by
//!   the unsupervised setting).
//! * [`MappingNetwork`] `F`: noise → style code, an MLP.
//! * [`Generator`] `G`: (image, style) → image, with style injected through
//!   adaptive instance normalization and a `tanh` output.
//! * [`Discriminator`] `D`: shared residual trunk down to 4×4, then a
//!   real/fake head of width 1 and a domain head of width `m`.
//!
//! Depth scales with the image size: every trunk halves the resolution until
//! it reaches 4×4, so a 64×64 configuration uses four downsampling stages.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use tch::nn;
use tch::{Device, Kind, Tensor};

use crate::error::{ensure_arg, invalid, Error, Result};
use crate::latent::{NoiseMapping, StyleEncoding};

const LRELU_SLOPE: f64 = 0.2;
const NORM_EPS: f64 = 1e-5;

fn lrelu(x: &Tensor) -> Tensor {
    (x * LRELU_SLOPE).maximum(x)
}

fn conv(p: nn::Path, c_in: i64, c_out: i64, k: i64, padding: i64) -> nn::Conv2D {
    let cfg = nn::ConvConfig { padding, ..Default::default() };
    nn::conv2d(p, c_in, c_out, k, cfg)
}

/// 2×2 mean pooling. `Tensor::avg_pool2d_default` overrides the divisor
/// with 1 and would sum instead.
pub(crate) fn avg_pool2(x: &Tensor) -> Tensor {
    x.avg_pool2d([2, 2], [2, 2], [0, 0], false, true, None::<i64>)
}

/// Per-sample, per-channel normalization over the spatial axes.
fn instance_norm(x: &Tensor) -> Tensor {
    let mean = x.mean_dim([2, 3].as_slice(), true, Kind::Float);
    let centered = x - mean;
    let var = centered.square().mean_dim([2, 3].as_slice(), true, Kind::Float);
    centered / (var + NORM_EPS).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub channels: i64,
    pub image_size: i64,
    pub style_dim: i64,
    pub noise_dim: i64,
    pub num_domains: i64,
    /// Width of the first convolutional stage.
    pub base_width: i64,
    /// Cap on stage widths; each downsampling stage doubles up to this value.
    pub max_width: i64,
    pub mapping_hidden: i64,
    pub mapping_layers: i64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            channels: 3,
            image_size: 64,
            style_dim: 16,
            noise_dim: 16,
            num_domains: 2,
            base_width: 16,
            max_width: 128,
            mapping_hidden: 128,
            mapping_layers: 3,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        ensure_arg!(self.channels >= 1, "channels must be positive");
        ensure_arg!(
            self.image_size >= 8 && (self.image_size as u64).is_power_of_two(),
            "image size must be a power of two >= 8, got {}",
            self.image_size
        );
        ensure_arg!(self.style_dim >= 1 && self.noise_dim >= 1, "latent dimensions must be positive");
        ensure_arg!(self.num_domains >= 2, "need at least two domains, got {}", self.num_domains);
        ensure_arg!(
            self.base_width >= 1 && self.max_width >= self.base_width,
            "invalid widths base={} max={}",
            self.base_width,
            self.max_width
        );
        ensure_arg!(self.mapping_hidden >= 1 && self.mapping_layers >= 1, "invalid mapping network shape");
        Ok(())
    }

    /// Halvings needed to bring the image down to 4×4.
    pub fn trunk_stages(&self) -> i64 {
        (self.image_size as f64 / 4.0).log2().round() as i64
    }

    /// Downsampling stages inside the generator before the style-modulated
    /// decoder; a 64×64 image is processed at 16×16 in the bottleneck.
    pub fn generator_stages(&self) -> i64 {
        (self.trunk_stages() - 2).max(1)
    }

    fn width(&self, stage: i64) -> i64 {
        (self.base_width << stage.min(20)).min(self.max_width)
    }

    /// Checks that `x` is a `[B, C, H, W]` batch matching this configuration.
    pub fn check_images(&self, x: &Tensor) -> Result<()> {
        let size = x.size();
        ensure_arg!(
            size.len() == 4
                && size[0] >= 1
                && size[1] == self.channels
                && size[2] == self.image_size
                && size[3] == self.image_size,
            "expected image batch [B, {}, {}, {}], got {:?}",
            self.channels,
            self.image_size,
            self.image_size,
            size
        );
        Ok(())
    }
}

/// A validated `[B, C, H, W]` float batch with values in `[-1, 1]`.
#[derive(Debug)]
pub struct ImageBatch(Tensor);

impl ImageBatch {
    pub fn new(values: Tensor) -> Result<Self> {
        let size = values.size();
        ensure_arg!(size.len() == 4 && size[0] >= 1, "image batch must be [B, C, H, W] with B >= 1, got {size:?}");
        let values = values.to_kind(Kind::Float);
        let finite = values.isfinite().all().int64_value(&[]) == 1;
        ensure_arg!(finite, "image batch contains non-finite values");
        let (lo, hi) = (values.min().double_value(&[]), values.max().double_value(&[]));
        ensure_arg!(lo >= -1.0 - 1e-6 && hi <= 1.0 + 1e-6, "image values outside [-1, 1]: [{lo}, {hi}]");
        Ok(Self(values))
    }

    pub fn len(&self) -> i64 {
        self.0.size()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }
}

/// Pre-activation residual block with optional instance norm and 2× average
/// pooling, as used by the encoder trunks.
#[derive(Debug)]
struct ResBlock {
    conv1: nn::Conv2D,
    conv2: nn::Conv2D,
    shortcut: Option<nn::Conv2D>,
    norms: Option<[(Tensor, Tensor); 2]>,
    downsample: bool,
}

impl ResBlock {
    fn new(p: nn::Path, c_in: i64, c_out: i64, normalize: bool, downsample: bool) -> Self {
        let norms = normalize.then(|| {
            let affine = |name: &str, c: i64| {
                (
                    p.var(&format!("{name}_weight"), &[c], nn::Init::Const(1.0)),
                    p.var(&format!("{name}_bias"), &[c], nn::Init::Const(0.0)),
                )
            };
            [affine("norm1", c_in), affine("norm2", c_in)]
        });
        let shortcut = (c_in != c_out)
            .then(|| nn::conv2d(&p / "shortcut", c_in, c_out, 1, nn::ConvConfig { bias: false, ..Default::default() }));
        Self {
            conv1: conv(&p / "conv1", c_in, c_in, 3, 1),
            conv2: conv(&p / "conv2", c_in, c_out, 3, 1),
            shortcut,
            norms,
            downsample,
        }
    }

    fn norm(&self, idx: usize, x: &Tensor) -> Tensor {
        match &self.norms {
            Some(n) => {
                let (w, b) = &n[idx];
                instance_norm(x) * w.view([1, -1, 1, 1]) + b.view([1, -1, 1, 1])
            }
            None => x.shallow_clone(),
        }
    }

    fn forward(&self, x: &Tensor) -> Tensor {
        let mut short = match &self.shortcut {
            Some(c) => x.apply(c),
            None => x.shallow_clone(),
        };
        let mut h = lrelu(&self.norm(0, x)).apply(&self.conv1);
        if self.downsample {
            short = avg_pool2(&short);
            h = avg_pool2(&h);
        }
        let h = lrelu(&self.norm(1, &h)).apply(&self.conv2);
        (short + h) / std::f64::consts::SQRT_2
    }
}

/// Adaptive instance normalization: `(1 + γ(s))·IN(x) + β(s)`.
#[derive(Debug)]
struct AdaIn {
    fc: nn::Linear,
    channels: i64,
}

impl AdaIn {
    fn new(p: nn::Path, style_dim: i64, channels: i64) -> Self {
        Self { fc: nn::linear(p, style_dim, 2 * channels, Default::default()), channels }
    }

    fn forward(&self, x: &Tensor, s: &Tensor) -> Tensor {
        let h = s.apply(&self.fc).view([-1, 2 * self.channels, 1, 1]);
        let gamma = h.narrow(1, 0, self.channels);
        let beta = h.narrow(1, self.channels, self.channels);
        (gamma + 1.0) * instance_norm(x) + beta
    }
}

#[derive(Debug)]
struct AdaInResBlock {
    conv1: nn::Conv2D,
    conv2: nn::Conv2D,
    norm1: AdaIn,
    norm2: AdaIn,
    shortcut: Option<nn::Conv2D>,
    upsample: bool,
}

impl AdaInResBlock {
    fn new(p: nn::Path, c_in: i64, c_out: i64, style_dim: i64, upsample: bool) -> Self {
        let shortcut = (c_in != c_out)
            .then(|| nn::conv2d(&p / "shortcut", c_in, c_out, 1, nn::ConvConfig { bias: false, ..Default::default() }));
        Self {
            conv1: conv(&p / "conv1", c_in, c_out, 3, 1),
            conv2: conv(&p / "conv2", c_out, c_out, 3, 1),
            norm1: AdaIn::new(&p / "norm1", style_dim, c_in),
            norm2: AdaIn::new(&p / "norm2", style_dim, c_out),
            shortcut,
            upsample,
        }
    }

    fn upsample(x: &Tensor) -> Tensor {
        let s = x.size();
        x.upsample_nearest2d([s[2] * 2, s[3] * 2], None, None)
    }

    fn forward(&self, x: &Tensor, s: &Tensor) -> Tensor {
        let mut short = x.shallow_clone();
        if self.upsample {
            short = Self::upsample(&short);
        }
        if let Some(c) = &self.shortcut {
            short = short.apply(c);
        }
        let mut h = lrelu(&self.norm1.forward(x, s));
        if self.upsample {
            h = Self::upsample(&h);
        }
        let h = h.apply(&self.conv1);
        let h = lrelu(&self.norm2.forward(&h, s)).apply(&self.conv2);
        (short + h) / std::f64::consts::SQRT_2
    }
}

/// Residual trunk shared by `E` and `D`: a 3×3 stem followed by
/// downsampling blocks down to a 4×4 map.
#[derive(Debug)]
struct Trunk {
    stem: nn::Conv2D,
    blocks: Vec<ResBlock>,
    out_width: i64,
}

impl Trunk {
    fn new(p: nn::Path, cfg: &NetworkConfig) -> Self {
        let stem = conv(&p / "stem", cfg.channels, cfg.base_width, 3, 1);
        let stages = cfg.trunk_stages();
        let blocks = (0..stages)
            .map(|i| ResBlock::new(&p / format!("block{i}"), cfg.width(i), cfg.width(i + 1), false, true))
            .collect();
        Self { stem, blocks, out_width: cfg.width(stages) }
    }

    fn forward(&self, x: &Tensor) -> Tensor {
        self.blocks.iter().fold(x.apply(&self.stem), |h, b| b.forward(&h))
    }
}

/// Head on a 4×4 map: LReLU → 4×4 conv → LReLU → 1×1 conv.
#[derive(Debug)]
struct Head {
    conv4: nn::Conv2D,
    conv1: nn::Conv2D,
}

impl Head {
    fn new(p: nn::Path, width: i64, out: i64) -> Self {
        Self { conv4: conv(&p / "conv4x4", width, width, 4, 0), conv1: conv(&p / "conv1x1", width, out, 1, 0) }
    }

    fn forward(&self, h: &Tensor) -> Tensor {
        lrelu(&lrelu(h).apply(&self.conv4)).apply(&self.conv1).flatten(1, -1)
    }
}

/// Style encoder `E`. The cluster head is the pseudo-label classifier of the
/// unsupervised setting; the supervised setting ignores it.
#[derive(Debug)]
pub struct StyleEncoder {
    cfg: NetworkConfig,
    trunk: Trunk,
    conv4: nn::Conv2D,
    style_head: nn::Linear,
    cluster_head: nn::Linear,
}

impl StyleEncoder {
    pub fn new(p: nn::Path, cfg: &NetworkConfig) -> Self {
        let trunk = Trunk::new(&p / "trunk", cfg);
        let w = trunk.out_width;
        Self {
            cfg: cfg.clone(),
            conv4: conv(&p / "conv4x4", w, w, 4, 0),
            style_head: nn::linear(&p / "style", w, cfg.style_dim, Default::default()),
            cluster_head: nn::linear(&p / "cluster", w, cfg.num_domains, Default::default()),
            trunk,
        }
    }

    fn features(&self, x: &Tensor) -> Result<Tensor> {
        self.cfg.check_images(x)?;
        Ok(lrelu(&lrelu(&self.trunk.forward(x)).apply(&self.conv4)).flatten(1, -1))
    }

    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.features(x)?.apply(&self.style_head))
    }

    /// Style codes together with softmax cluster probabilities.
    pub fn encode_with_clusters(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let h = self.features(x)?;
        Ok((h.apply(&self.style_head), h.apply(&self.cluster_head).softmax(-1, Kind::Float)))
    }
}

/// Mapping network `F`, an MLP from noise to style space.
#[derive(Debug)]
pub struct MappingNetwork {
    cfg: NetworkConfig,
    layers: Vec<nn::Linear>,
}

impl MappingNetwork {
    pub fn new(p: nn::Path, cfg: &NetworkConfig) -> Self {
        let mut layers = Vec::new();
        let mut d_in = cfg.noise_dim;
        for i in 0..cfg.mapping_layers {
            layers.push(nn::linear(&p / format!("fc{i}"), d_in, cfg.mapping_hidden, Default::default()));
            d_in = cfg.mapping_hidden;
        }
        layers.push(nn::linear(&p / "out", d_in, cfg.style_dim, Default::default()));
        Self { cfg: cfg.clone(), layers }
    }

    pub fn map_noise(&self, z: &Tensor) -> Result<Tensor> {
        ensure_arg!(
            z.dim() == 2 && z.size()[1] == self.cfg.noise_dim,
            "expected noise [B, {}], got {:?}",
            self.cfg.noise_dim,
            z.size()
        );
        let (last, hidden) = self.layers.split_last().expect("at least one layer");
        let h = hidden.iter().fold(z.shallow_clone(), |h, l| h.apply(l).relu());
        Ok(h.apply(last))
    }
}

/// Generator `G`.
#[derive(Debug)]
pub struct Generator {
    cfg: NetworkConfig,
    stem: nn::Conv2D,
    encode: Vec<ResBlock>,
    decode: Vec<AdaInResBlock>,
    out_norm: (Tensor, Tensor),
    to_image: nn::Conv2D,
}

impl Generator {
    pub fn new(p: nn::Path, cfg: &NetworkConfig) -> Self {
        let stages = cfg.generator_stages();
        let mut encode = Vec::new();
        for i in 0..stages {
            encode.push(ResBlock::new(&p / format!("enc{i}"), cfg.width(i), cfg.width(i + 1), true, true));
        }
        let bottleneck = cfg.width(stages);
        encode.push(ResBlock::new(&p / "enc_bottleneck", bottleneck, bottleneck, true, false));
        let mut decode = vec![AdaInResBlock::new(&p / "dec_bottleneck", bottleneck, bottleneck, cfg.style_dim, false)];
        for i in (0..stages).rev() {
            decode.push(AdaInResBlock::new(
                &p / format!("dec{i}"),
                cfg.width(i + 1),
                cfg.width(i),
                cfg.style_dim,
                true,
            ));
        }
        let out_norm = (
            p.var("out_norm_weight", &[cfg.base_width], nn::Init::Const(1.0)),
            p.var("out_norm_bias", &[cfg.base_width], nn::Init::Const(0.0)),
        );
        Self {
            cfg: cfg.clone(),
            stem: conv(&p / "stem", cfg.channels, cfg.base_width, 3, 1),
            encode,
            decode,
            out_norm,
            to_image: conv(&p / "to_image", cfg.base_width, cfg.channels, 1, 0),
        }
    }

    pub fn generate(&self, x: &Tensor, s: &Tensor) -> Result<Tensor> {
        self.cfg.check_images(x)?;
        ensure_arg!(
            s.dim() == 2 && s.size()[1] == self.cfg.style_dim,
            "expected styles [B, {}], got {:?}",
            self.cfg.style_dim,
            s.size()
        );
        ensure_arg!(
            s.size()[0] == x.size()[0],
            "batch size mismatch: {} images vs {} styles",
            x.size()[0],
            s.size()[0]
        );
        let h = self.encode.iter().fold(x.apply(&self.stem), |h, b| b.forward(&h));
        let h = self.decode.iter().fold(h, |h, b| b.forward(&h, s));
        let (w, b) = &self.out_norm;
        let h = instance_norm(&h) * w.view([1, -1, 1, 1]) + b.view([1, -1, 1, 1]);
        Ok(lrelu(&h).apply(&self.to_image).tanh())
    }
}

/// Real/fake logits `[B]` and domain logits `[B, m]`.
#[derive(Debug)]
pub struct DiscriminatorOutput {
    pub rf_logits: Tensor,
    pub domain_logits: Tensor,
}

impl DiscriminatorOutput {
    /// Independent per-domain probabilities (elementwise sigmoid).
    pub fn domain_probs(&self) -> Tensor {
        self.domain_logits.sigmoid()
    }
}

/// Two-branch discriminator `D`.
#[derive(Debug)]
pub struct Discriminator {
    cfg: NetworkConfig,
    trunk: Trunk,
    rf_head: Head,
    cls_head: Head,
}

impl Discriminator {
    pub fn new(p: nn::Path, cfg: &NetworkConfig) -> Self {
        let trunk = Trunk::new(&p / "trunk", cfg);
        let w = trunk.out_width;
        Self {
            cfg: cfg.clone(),
            rf_head: Head::new(&p / "rf", w, 1),
            cls_head: Head::new(&p / "cls", w, cfg.num_domains),
            trunk,
        }
    }

    pub fn discriminate(&self, x: &Tensor) -> Result<DiscriminatorOutput> {
        self.cfg.check_images(x)?;
        let h = self.trunk.forward(x);
        Ok(DiscriminatorOutput {
            rf_logits: self.rf_head.forward(&h).view([-1]),
            domain_logits: self.cls_head.forward(&h),
        })
    }
}

/// Any `(image, style) → image` map. Metrics are written against this trait
/// so they can evaluate toy generators as well as trained ones.
pub trait ImageTranslator {
    fn translate(&self, x: &Tensor, s: &Tensor) -> Result<Tensor>;
}

impl<F> ImageTranslator for F
where
    F: Fn(&Tensor, &Tensor) -> Result<Tensor>,
{
    fn translate(&self, x: &Tensor, s: &Tensor) -> Result<Tensor> {
        self(x, s)
    }
}

/// The style-producing half of the framework, `E`, `F` and `G`, each with its
/// own variable store so they can be optimized with separate settings.
/// `dst ← decay·dst + (1 − decay)·src` over parameters with matching names.
pub(crate) fn ema_store(dst: &nn::VarStore, src: &nn::VarStore, decay: f64) {
    let src_vars = src.variables();
    tch::no_grad(|| {
        for (name, mut var) in dst.variables() {
            let s = &src_vars[&name];
            let updated = &var * decay + s * (1.0 - decay);
            var.copy_(&updated);
        }
    });
}

#[derive(Debug)]
pub struct Translator {
    pub cfg: NetworkConfig,
    pub vs_encoder: nn::VarStore,
    pub vs_mapper: nn::VarStore,
    pub vs_generator: nn::VarStore,
    pub encoder: StyleEncoder,
    pub mapper: MappingNetwork,
    pub generator: Generator,
}

impl Translator {
    pub fn new(cfg: &NetworkConfig) -> Result<Self> {
        cfg.validate()?;
        let vs_encoder = nn::VarStore::new(Device::Cpu);
        let vs_mapper = nn::VarStore::new(Device::Cpu);
        let vs_generator = nn::VarStore::new(Device::Cpu);
        let encoder = StyleEncoder::new(vs_encoder.root(), cfg);
        let mapper = MappingNetwork::new(vs_mapper.root(), cfg);
        let generator = Generator::new(vs_generator.root(), cfg);
        Ok(Self { cfg: cfg.clone(), vs_encoder, vs_mapper, vs_generator, encoder, mapper, generator })
    }

    pub fn generate(&self, x: &Tensor, s: &Tensor) -> Result<Tensor> {
        self.generator.generate(x, s)
    }

    fn stores(&self) -> [(&'static str, &nn::VarStore); 3] {
        [("E", &self.vs_encoder), ("F", &self.vs_mapper), ("G", &self.vs_generator)]
    }

    fn stores_mut(&mut self) -> [(&'static str, &mut nn::VarStore); 3] {
        [("E", &mut self.vs_encoder), ("F", &mut self.vs_mapper), ("G", &mut self.vs_generator)]
    }

    /// Exponential moving average `self ← decay·self + (1 − decay)·src`.
    pub fn ema_update(&mut self, src: &Translator, decay: f64) {
        for ((_, dst), (_, src)) in self.stores().iter().zip(src.stores().iter()) {
            ema_store(dst, src, decay);
        }
    }

    /// Overwrites every parameter with the matching one from `src`.
    pub fn copy_from(&mut self, src: &Translator) -> Result<()> {
        for ((_, dst), (_, src)) in self.stores_mut().into_iter().zip(src.stores()) {
            dst.copy(src)?;
        }
        Ok(())
    }

    pub fn freeze(&mut self) {
        for (_, vs) in self.stores_mut() {
            vs.freeze();
        }
    }
}

impl StyleEncoding for Translator {
    fn style_dim(&self) -> i64 {
        self.cfg.style_dim
    }

    fn encode(&self, x: &Tensor) -> Result<Tensor> {
        self.encoder.encode(x)
    }
}

impl NoiseMapping for Translator {
    fn noise_dim(&self) -> i64 {
        self.cfg.noise_dim
    }

    fn style_dim(&self) -> i64 {
        self.cfg.style_dim
    }

    fn map_noise(&self, z: &Tensor) -> Result<Tensor> {
        self.mapper.map_noise(z)
    }
}

impl ImageTranslator for Translator {
    fn translate(&self, x: &Tensor, s: &Tensor) -> Result<Tensor> {
        self.generator.generate(x, s)
    }
}

/// The full trainable model: translator, discriminator and the optional
/// averaged translator used for evaluation.
#[derive(Debug)]
pub struct ModelSet {
    pub cfg: NetworkConfig,
    pub translator: Translator,
    pub vs_discriminator: nn::VarStore,
    pub discriminator: Discriminator,
    pub averaged: Option<Translator>,
}

impl ModelSet {
    /// Builds freshly initialized networks; parameters are drawn from
    /// libtorch's generator seeded with `seed`.
    pub fn new(cfg: &NetworkConfig, seed: u64, with_average: bool) -> Result<Self> {
        cfg.validate()?;
        tch::manual_seed(seed as i64);
        let translator = Translator::new(cfg)?;
        let vs_discriminator = nn::VarStore::new(Device::Cpu);
        let discriminator = Discriminator::new(vs_discriminator.root(), cfg);
        let averaged = if with_average {
            let mut avg = Translator::new(cfg)?;
            avg.copy_from(&translator)?;
            avg.freeze();
            Some(avg)
        } else {
            None
        };
        Ok(Self { cfg: cfg.clone(), translator, vs_discriminator, discriminator, averaged })
    }

    /// The translator evaluation should use: the averaged one when present.
    pub fn eval_translator(&self) -> &Translator {
        self.averaged.as_ref().unwrap_or(&self.translator)
    }

    fn named_groups(&self) -> Vec<(String, &nn::VarStore)> {
        let mut groups: Vec<(String, &nn::VarStore)> =
            self.translator.stores().into_iter().map(|(n, vs)| (n.to_string(), vs)).collect();
        groups.push(("D".to_string(), &self.vs_discriminator));
        if let Some(avg) = &self.averaged {
            groups.extend(avg.stores().into_iter().map(|(n, vs)| (format!("{n}_avg"), vs)));
        }
        groups
    }

    /// Writes every parameter group plus the step counter and an opaque
    /// metadata string to a single safetensors archive.
    pub fn save(&self, path: impl AsRef<Path>, step: u64, meta: &str) -> Result<()> {
        let mut named: Vec<(String, Tensor)> = Vec::new();
        for (group, vs) in self.named_groups() {
            let vars: BTreeMap<String, Tensor> = vs.variables().into_iter().collect();
            for (name, t) in vars {
                named.push((format!("{group}/{name}"), t.detach()));
            }
        }
        named.push(("meta/step".into(), Tensor::from_slice(&[step as i64])));
        named.push(("meta/text".into(), Tensor::from_slice(meta.as_bytes())));
        named.push(("meta/has_avg".into(), Tensor::from_slice(&[self.averaged.is_some() as u8])));
        Tensor::write_safetensors(&named, path)?;
        Ok(())
    }
}

/// The contents of a checkpoint archive before networks are rebuilt.
#[derive(Debug)]
pub struct Checkpoint {
    pub step: u64,
    pub meta: String,
    has_average: bool,
    tensors: HashMap<String, Tensor>,
}

impl Checkpoint {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let tensors: HashMap<String, Tensor> = Tensor::read_safetensors(path)?.into_iter().collect();
        let get = |name: &str| {
            tensors.get(name).ok_or_else(|| invalid(format!("checkpoint {} lacks `{name}`", path.display())))
        };
        let step = get("meta/step")?.int64_value(&[0]) as u64;
        let bytes: Vec<u8> = Vec::try_from(get("meta/text")?)?;
        let meta = String::from_utf8(bytes).map_err(|e| invalid(format!("checkpoint metadata: {e}")))?;
        let has_average = get("meta/has_avg")?.int64_value(&[0]) == 1;
        Ok(Self { step, meta, has_average, tensors })
    }

    /// Rebuilds the networks for `cfg` and loads every parameter group.
    pub fn into_models(self, cfg: &NetworkConfig) -> Result<ModelSet> {
        let models = ModelSet::new(cfg, 0, self.has_average)?;
        for (group, vs) in models.named_groups() {
            for (name, mut var) in vs.variables() {
                let key = format!("{group}/{name}");
                let src =
                    self.tensors.get(&key).ok_or_else(|| invalid(format!("checkpoint lacks parameter `{key}`")))?;
                if src.size() != var.size() {
                    return Err(Error::InvalidArgument(format!(
                        "parameter `{key}` has shape {:?} in checkpoint but {:?} in model",
                        src.size(),
                        var.size()
                    )));
                }
                tch::no_grad(|| var.copy_(src));
            }
        }
        Ok(models)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> NetworkConfig {
        NetworkConfig {
            image_size: 16,
            base_width: 8,
            max_width: 16,
            mapping_hidden: 16,
            num_domains: 3,
            ..Default::default()
        }
    }

    fn images(b: i64, cfg: &NetworkConfig, seed: i64) -> Tensor {
        tch::manual_seed(seed);
        Tensor::rand([b, cfg.channels, cfg.image_size, cfg.image_size], (Kind::Float, Device::Cpu)) * 2.0 - 1.0
    }

    #[test]
    fn stage_counts_follow_image_size() {
        let cfg = NetworkConfig::default();
        assert_eq!(cfg.trunk_stages(), 4);
        assert_eq!(cfg.generator_stages(), 2);
        assert_eq!(NetworkConfig { image_size: 256, ..cfg.clone() }.trunk_stages(), 6);
        assert!(NetworkConfig { image_size: 48, ..cfg }.validate().is_err());
    }

    #[test]
    fn forward_shapes_and_ranges() {
        let cfg = small_cfg();
        let models = ModelSet::new(&cfg, 1, false).unwrap();
        let x = images(4, &cfg, 2);
        let t = &models.translator;
        let s = t.encoder.encode(&x).unwrap();
        assert_eq!(s.size(), [4, cfg.style_dim]);
        let z = Tensor::randn([4, cfg.noise_dim], (Kind::Float, Device::Cpu));
        assert_eq!(t.mapper.map_noise(&z).unwrap().size(), [4, cfg.style_dim]);
        let y = t.generate(&x, &s).unwrap();
        assert_eq!(y.size(), x.size());
        assert!(y.min().double_value(&[]) >= -1.0 && y.max().double_value(&[]) <= 1.0);
        let out = models.discriminator.discriminate(&x).unwrap();
        assert_eq!(out.rf_logits.size(), [4]);
        assert_eq!(out.domain_logits.size(), [4, 3]);
        let p = out.domain_probs();
        assert!(p.min().double_value(&[]) > 0.0 && p.max().double_value(&[]) < 1.0);
    }

    #[test]
    fn shape_errors() {
        let cfg = small_cfg();
        let models = ModelSet::new(&cfg, 1, false).unwrap();
        let t = &models.translator;
        let wrong = Tensor::zeros([2, 3, 8, 8], (Kind::Float, Device::Cpu));
        assert!(t.encoder.encode(&wrong).is_err());
        assert!(models.discriminator.discriminate(&wrong).is_err());
        let x = images(2, &cfg, 3);
        let s = Tensor::zeros([3, cfg.style_dim], (Kind::Float, Device::Cpu));
        assert!(t.generate(&x, &s).is_err());
        let z = Tensor::zeros([2, cfg.noise_dim + 1], (Kind::Float, Device::Cpu));
        assert!(t.mapper.map_noise(&z).is_err());
    }

    #[test]
    fn forward_is_deterministic() {
        let cfg = small_cfg();
        let models = ModelSet::new(&cfg, 5, false).unwrap();
        let x = images(1, &cfg, 4).repeat([2, 1, 1, 1]);
        let t = &models.translator;
        let s = t.encoder.encode(&x).unwrap();
        assert!(s.get(0).equal(&s.get(1)));
        assert!(s.equal(&t.encoder.encode(&x).unwrap()));
        let y1 = t.generate(&x, &s).unwrap();
        assert!(y1.equal(&t.generate(&x, &s).unwrap()));
    }

    #[test]
    fn distinct_noise_gives_distinct_styles() {
        let cfg = small_cfg();
        let models = ModelSet::new(&cfg, 9, false).unwrap();
        let z = Tensor::randn([200, cfg.noise_dim], (Kind::Float, Device::Cpu));
        let s = models.translator.mapper.map_noise(&z).unwrap();
        let a = s.narrow(0, 0, 100);
        let b = s.narrow(0, 100, 100);
        let gaps = (a - b).abs().sum_dim_intlist([1].as_slice(), false, Kind::Float);
        assert!(gaps.min().double_value(&[]) > 0.0);
    }

    #[test]
    fn image_batch_validation() {
        assert!(ImageBatch::new(Tensor::zeros([1, 3, 4, 4], (Kind::Float, Device::Cpu))).is_ok());
        assert!(ImageBatch::new(Tensor::ones([1, 3, 4, 4], (Kind::Float, Device::Cpu)) * 2.0).is_err());
        assert!(ImageBatch::new(Tensor::zeros([3, 4, 4], (Kind::Float, Device::Cpu))).is_err());
    }
}
