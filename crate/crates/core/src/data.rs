//! Data provision: a procedural multi-domain image set with controllable
//! style factors, a directory-per-domain loader, PNG IO, augmentation and a
//! deterministic batch order.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::imageops::FilterType;
use image::{ImageBuffer, Rgb, RgbImage};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tch::{Device, Kind, Tensor};

use crate::error::{ensure_arg, invalid, Error, Result};

/// Fraction of unreadable files tolerated by [`load_folder_dataset`].
const MAX_SKIPPED_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ShapeFamily {
    Ellipse,
    Rectangle,
    Triangle,
}

impl ShapeFamily {
    const ALL: [ShapeFamily; 3] = [ShapeFamily::Ellipse, ShapeFamily::Rectangle, ShapeFamily::Triangle];
}

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Band {
    pub lo: f64,
    pub hi: f64,
}

impl Band {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        ensure_arg!(lo.is_finite() && hi.is_finite() && lo <= hi, "invalid band [{lo}, {hi}]");
        Ok(Self { lo, hi })
    }

    pub fn contains(&self, v: f64) -> bool {
        (self.lo..=self.hi).contains(&v)
    }

    pub fn overlaps(&self, other: &Band) -> bool {
        self.lo <= other.hi && other.lo <= self.hi
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.random_range(self.lo..=self.hi)
        }
    }
}

/// Style factors of one synthetic domain. Hue is in turns (`[0, 1)`),
/// texture frequency in stripes per image width, stroke width in pixels at
/// 64×64 and scaled with the image size.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDomainSpec {
    pub domain: usize,
    pub shape: ShapeFamily,
    pub hue: Band,
    pub texture_frequency: Band,
    pub stroke_width: Band,
}

impl SyntheticDomainSpec {
    /// Evenly spread, mutually disjoint bands for `m` domains.
    pub fn defaults(m: usize) -> Result<Vec<Self>> {
        ensure_arg!(m >= 2, "need at least two domains, got {m}");
        (0..m)
            .map(|d| {
                let step = 1.0 / m as f64;
                let lo = d as f64 * step;
                Ok(Self {
                    domain: d,
                    shape: ShapeFamily::ALL[d % 3],
                    hue: Band::new(lo, lo + 0.4 * step)?,
                    texture_frequency: Band::new(1.0 + 3.0 * d as f64, 2.5 + 3.0 * d as f64)?,
                    stroke_width: Band::new(1.0 + (d % 3) as f64, 1.5 + (d % 3) as f64)?,
                })
            })
            .collect()
    }

    fn separable_from(&self, other: &Self) -> bool {
        !self.hue.overlaps(&other.hue)
            || !self.texture_frequency.overlaps(&other.texture_frequency)
            || !self.stroke_width.overlaps(&other.stroke_width)
    }
}

/// Domain-independent factors of a synthetic image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContentFactors {
    /// Centre in `[0.3, 0.7]` of the image side.
    pub cx: f64,
    pub cy: f64,
    /// Half-extent in `[0.15, 0.3]` of the image side.
    pub scale: f64,
    /// Radians in `[0, π)`.
    pub rotation: f64,
}

impl ContentFactors {
    fn sample(rng: &mut ChaCha8Rng) -> Self {
        Self {
            cx: rng.random_range(0.3..0.7),
            cy: rng.random_range(0.3..0.7),
            scale: rng.random_range(0.15..0.3),
            rotation: rng.random_range(0.0..std::f64::consts::PI),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StyleFactors {
    pub hue: f64,
    pub texture_frequency: f64,
    pub stroke_width: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(invalid(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    /// File path, or `synth:<seed>:<domain>:<index>` for generated images.
    pub source: String,
    pub label: usize,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    entries: Vec<ManifestEntry>,
    num_domains: usize,
}

impl DatasetManifest {
    pub fn new(entries: Vec<ManifestEntry>, num_domains: usize) -> Result<Self> {
        ensure_arg!(num_domains >= 2, "need at least two domains, got {num_domains}");
        if let Some(e) = entries.iter().find(|e| e.label >= num_domains) {
            return Err(invalid(format!("label {} out of range for {num_domains} domains", e.label)));
        }
        let train: HashSet<&str> =
            entries.iter().filter(|e| e.split == Split::Train).map(|e| e.source.as_str()).collect();
        if let Some(e) = entries.iter().find(|e| e.split == Split::Test && train.contains(e.source.as_str())) {
            return Err(invalid(format!("{} appears in both splits", e.source)));
        }
        Ok(Self { entries, num_domains })
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn num_domains(&self) -> usize {
        self.num_domains
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.entries.len()).filter(|&i| self.entries[i].split == split).collect()
    }

    pub fn label_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.num_domains];
        for e in &self.entries {
            h[e.label] += 1;
        }
        h
    }

    /// One `source<TAB>label<TAB>split` line per entry.
    pub fn to_tsv(&self) -> String {
        self.entries.iter().map(|e| format!("{}\t{}\t{}\n", e.source, e.label, e.split)).collect()
    }

    /// Parses [`to_tsv`](Self::to_tsv) output. The domain count is the
    /// largest label plus one.
    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(Error::Config(format!("manifest line {}: expected 3 fields", n + 1)));
            }
            let label = fields[1]
                .parse()
                .map_err(|_| Error::Config(format!("manifest line {}: bad label {:?}", n + 1, fields[1])))?;
            entries.push(ManifestEntry { source: fields[0].to_string(), label, split: fields[2].parse()? });
        }
        let m = entries.iter().map(|e| e.label + 1).max().unwrap_or(0);
        Self::new(entries, m)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        Ok(fs::write(path, self.to_tsv())?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_tsv(&fs::read_to_string(path)?)
    }
}

/// Images `[N, 3, H, W]` in `[-1, 1]` alongside their manifest.
#[derive(Debug)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub images: Tensor,
}

impl Dataset {
    pub fn labels(&self) -> Vec<usize> {
        self.manifest.entries().iter().map(|e| e.label).collect()
    }

    /// Images and labels of one split.
    pub fn split(&self, split: Split) -> (Tensor, Vec<usize>) {
        let idx = self.manifest.indices(split);
        let labels = idx.iter().map(|&i| self.manifest.entries()[i].label).collect();
        let idx: Vec<i64> = idx.into_iter().map(|i| i as i64).collect();
        (self.images.index_select(0, &Tensor::from_slice(&idx)), labels)
    }

    /// Images of `split` grouped by domain.
    pub fn by_domain(&self, split: Split) -> Vec<Tensor> {
        (0..self.manifest.num_domains())
            .map(|d| {
                let idx: Vec<i64> = self
                    .manifest
                    .entries()
                    .iter()
                    .enumerate()
                    .filter(|(_, e)| e.split == split && e.label == d)
                    .map(|(i, _)| i as i64)
                    .collect();
                self.images.index_select(0, &Tensor::from_slice(&idx))
            })
            .collect()
    }
}

/// Generated images with the factors that produced them.
#[derive(Debug)]
pub struct SyntheticDataset {
    pub data: Dataset,
    pub content: Vec<ContentFactors>,
    pub style: Vec<StyleFactors>,
}

impl SyntheticDataset {
    /// Moves the last `per_domain` images of every domain into the test split.
    pub fn with_test_split(self, per_domain: usize) -> Result<Self> {
        let m = self.data.manifest.num_domains();
        let mut entries = self.data.manifest.entries().to_vec();
        for d in 0..m {
            let idx: Vec<usize> = (0..entries.len()).filter(|&i| entries[i].label == d).collect();
            ensure_arg!(per_domain < idx.len(), "domain {d} has only {} images", idx.len());
            for &i in &idx[idx.len() - per_domain..] {
                entries[i].split = Split::Test;
            }
        }
        Ok(Self { data: Dataset { manifest: DatasetManifest::new(entries, m)?, ..self.data }, ..self })
    }
}

/// Renders `count_per_domain` images for every domain at `size × size`.
/// Content factors are drawn from one distribution for all domains; style
/// factors from the domain's bands. Bit-identical for equal seeds.
pub fn generate_synthetic(
    specs: &[SyntheticDomainSpec],
    count_per_domain: usize,
    size: usize,
    seed: u64,
) -> Result<SyntheticDataset> {
    ensure_arg!(specs.len() >= 2, "need at least two domains, got {}", specs.len());
    ensure_arg!(count_per_domain >= 1, "need at least one image per domain");
    ensure_arg!(size >= 8, "image size must be at least 8, got {size}");
    for (d, s) in specs.iter().enumerate() {
        ensure_arg!(s.domain == d, "domain ids must be 0..m in order, found {} at {d}", s.domain);
    }
    for i in 0..specs.len() {
        for j in i + 1..specs.len() {
            if !specs[i].separable_from(&specs[j]) {
                return Err(invalid(format!("domains {i} and {j} overlap on every style factor")));
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = specs.len() * count_per_domain;
    let mut pixels = Vec::with_capacity(n * 3 * size * size);
    let (mut entries, mut content, mut style) = (Vec::new(), Vec::new(), Vec::new());
    for spec in specs {
        for k in 0..count_per_domain {
            let c = ContentFactors::sample(&mut rng);
            let s = StyleFactors {
                hue: spec.hue.sample(&mut rng),
                texture_frequency: spec.texture_frequency.sample(&mut rng),
                stroke_width: spec.stroke_width.sample(&mut rng),
            };
            render(spec.shape, &c, &s, size, &mut pixels);
            entries.push(ManifestEntry {
                source: format!("synth:{seed}:{}:{k}", spec.domain),
                label: spec.domain,
                split: Split::Train,
            });
            content.push(c);
            style.push(s);
        }
    }
    let images = Tensor::from_slice(&pixels).view([n as i64, 3, size as i64, size as i64]);
    Ok(SyntheticDataset {
        data: Dataset { manifest: DatasetManifest::new(entries, specs.len())?, images },
        content,
        style,
    })
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let i = h6.floor();
    let f = h6 - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match i as u8 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Signed distance-like value: negative inside the shape, in shape-local
/// units scaled to pixels.
fn shape_distance(shape: ShapeFamily, u: f64, v: f64, r: f64) -> f64 {
    match shape {
        ShapeFamily::Ellipse => ((u / r).powi(2) + (v / (0.7 * r)).powi(2)).sqrt() * 0.7 * r - 0.7 * r,
        ShapeFamily::Rectangle => (u.abs() - r).max(v.abs() - 0.7 * r),
        ShapeFamily::Triangle => {
            // Equilateral triangle with circumradius r.
            let k = 3f64.sqrt();
            let d1 = v - 0.5 * r;
            let d2 = (-k * u - v) / 2.0 - 0.5 * r;
            let d3 = (k * u - v) / 2.0 - 0.5 * r;
            d1.max(d2).max(d3)
        }
    }
}

/// Appends a `[3, size, size]` image in `[-1, 1]` to `out`, channel-major.
fn render(shape: ShapeFamily, c: &ContentFactors, s: &StyleFactors, size: usize, out: &mut Vec<f32>) {
    let n = size as f64;
    let base = hsv_to_rgb(s.hue, 0.8, 0.9);
    let rim = hsv_to_rgb(s.hue, 0.9, 0.35);
    let background = [0.5, 0.5, 0.5];
    let stroke = s.stroke_width * n / 64.0;
    let r = c.scale * n;
    let (sin, cos) = c.rotation.sin_cos();
    let mut img = vec![[0.0f64; 3]; size * size];
    for y in 0..size {
        for x in 0..size {
            let dx = x as f64 + 0.5 - c.cx * n;
            let dy = y as f64 + 0.5 - c.cy * n;
            let u = cos * dx + sin * dy;
            let v = -sin * dx + cos * dy;
            let d = shape_distance(shape, u, v, r);
            let px = if d > 0.0 {
                background
            } else if d > -stroke {
                rim
            } else {
                let stripe = 0.75 + 0.25 * (2.0 * std::f64::consts::PI * s.texture_frequency * u / n).sin();
                [base[0] * stripe, base[1] * stripe, base[2] * stripe]
            };
            img[y * size + x] = px;
        }
    }
    for ch in 0..3 {
        out.extend(img.iter().map(|p| (2.0 * p[ch] - 1.0) as f32));
    }
}

/// Reads one RGB image, resizes it bilinearly and maps it to `[-1, 1]` as a
/// `[3, size, size]` tensor.
pub fn read_image(path: &Path, size: u32) -> Result<Tensor> {
    let img = image::open(path)?.to_rgb8();
    let img = if img.dimensions() == (size, size) {
        img
    } else {
        image::imageops::resize(&img, size, size, FilterType::Triangle)
    };
    Ok(rgb_to_tensor(&img))
}

fn rgb_to_tensor(img: &RgbImage) -> Tensor {
    let (w, h) = img.dimensions();
    let hwc = Tensor::from_slice(img.as_raw()).view([h as i64, w as i64, 3]);
    hwc.permute([2, 0, 1]).to_kind(Kind::Float) * (2.0 / 255.0) - 1.0
}

/// Writes a `[3, H, W]` tensor in `[-1, 1]` as PNG. Values are clamped
/// and rounded to the nearest byte.
pub fn write_png(image: &Tensor, path: &Path) -> Result<()> {
    ensure_arg!(image.dim() == 3 && image.size()[0] == 3, "expected a [3, H, W] image, got {:?}", image.size());
    let (h, w) = (image.size()[1] as u32, image.size()[2] as u32);
    let bytes = ((image.detach().to_kind(Kind::Double).clamp(-1.0, 1.0) + 1.0) * 127.5)
        .round()
        .to_kind(Kind::Uint8)
        .permute([1, 2, 0])
        .contiguous()
        .flatten(0, -1);
    let raw = Vec::<u8>::try_from(bytes)?;
    let buf: ImageBuffer<Rgb<u8>, _> =
        ImageBuffer::from_raw(w, h, raw).ok_or_else(|| invalid("image buffer size mismatch"))?;
    buf.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

/// Writes every image of a dataset as `<dir>/<split>/<domain>/<index>.png`
/// and the manifest as `<dir>/manifest.tsv`, with manifest sources
/// pointing at the files relative to `dir`.
pub fn write_dataset(data: &Dataset, dir: &Path) -> Result<DatasetManifest> {
    let mut entries = Vec::with_capacity(data.manifest.len());
    for (i, e) in data.manifest.entries().iter().enumerate() {
        let rel = PathBuf::from(e.split.to_string()).join(e.label.to_string()).join(format!("{i:06}.png"));
        let full = dir.join(&rel);
        if let Some(parent) = full.parent() {
            fs::create_dir_all(parent)?;
        }
        write_png(&data.images.get(i as i64), &full)?;
        entries.push(ManifestEntry { source: rel.to_string_lossy().into_owned(), ..e.clone() });
    }
    let manifest = DatasetManifest::new(entries, data.manifest.num_domains())?;
    manifest.write(&dir.join("manifest.tsv"))?;
    Ok(manifest)
}

/// Loads the images a manifest points at, resolving relative paths against
/// `base`.
pub fn load_manifest_images(manifest: DatasetManifest, base: &Path, size: u32) -> Result<Dataset> {
    let images =
        manifest.entries().iter().map(|e| read_image(&base.join(&e.source), size)).collect::<Result<Vec<_>>>()?;
    ensure_arg!(!images.is_empty(), "manifest is empty");
    Ok(Dataset { manifest, images: Tensor::stack(&images, 0) })
}

/// Loads a directory-per-domain layout. Labels follow the sorted
/// subdirectory names; files are read in sorted order. Unreadable files are
/// skipped with a warning unless more than 5% fail.
pub fn load_folder_dataset(root: &Path, size: u32) -> Result<Dataset> {
    let mut dirs: Vec<PathBuf> =
        fs::read_dir(root)?.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.is_dir()).collect();
    dirs.sort();
    ensure_arg!(dirs.len() >= 2, "need at least two domain directories under {}", root.display());

    let (mut entries, mut images) = (Vec::new(), Vec::new());
    let (mut attempted, mut skipped) = (0usize, 0usize);
    for (label, dir) in dirs.iter().enumerate() {
        let mut files: Vec<PathBuf> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && !p.file_name().is_some_and(|n| n.to_string_lossy().starts_with('.')))
            .collect();
        files.sort();
        ensure_arg!(!files.is_empty(), "domain directory {} is empty", dir.display());
        for f in files {
            attempted += 1;
            match read_image(&f, size) {
                Ok(t) => {
                    images.push(t);
                    entries.push(ManifestEntry {
                        source: f.to_string_lossy().into_owned(),
                        label,
                        split: Split::Train,
                    });
                }
                Err(e) => {
                    log::warn!("skipping unreadable image {}: {e}", f.display());
                    skipped += 1;
                }
            }
        }
    }
    if skipped as f64 > MAX_SKIPPED_FRACTION * attempted as f64 {
        return Err(invalid(format!("{skipped} of {attempted} images under {} were unreadable", root.display())));
    }
    ensure_arg!(!images.is_empty(), "no readable images under {}", root.display());
    Ok(Dataset { manifest: DatasetManifest::new(entries, dirs.len())?, images: Tensor::stack(&images, 0) })
}

/// Per-image horizontal flip with probability 0.5 and a random square
/// crop of side fraction in `[0.8, 1]` resized back to the input size.
pub fn augment(x: &Tensor, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    augment_with(x, rng, 0.5, (0.8, 1.0))
}

/// [`augment`] with explicit flip probability and crop-scale range.
pub fn augment_with(x: &Tensor, rng: &mut ChaCha8Rng, flip_p: f64, scale: (f64, f64)) -> Result<Tensor> {
    ensure_arg!(x.dim() == 4, "expected [B, C, H, W], got {:?}", x.size());
    ensure_arg!((0.0..=1.0).contains(&flip_p), "flip probability must lie in [0, 1]");
    ensure_arg!(0.0 < scale.0 && scale.0 <= scale.1 && scale.1 <= 1.0, "invalid crop scale range");
    let (h, w) = (x.size()[2], x.size()[3]);
    let mut out = Vec::with_capacity(x.size()[0] as usize);
    for i in 0..x.size()[0] {
        let mut img = x.narrow(0, i, 1);
        if rng.random_bool(flip_p) {
            img = img.flip([3]);
        }
        let s = if scale.0 == scale.1 { scale.0 } else { rng.random_range(scale.0..=scale.1) };
        let (ch, cw) = (((h as f64 * s).round() as i64).clamp(1, h), ((w as f64 * s).round() as i64).clamp(1, w));
        let top = rng.random_range(0..=h - ch);
        let left = rng.random_range(0..=w - cw);
        if ch != h || cw != w {
            img = img.narrow(2, top, ch).narrow(3, left, cw).upsample_bilinear2d([h, w], false, None, None);
        }
        out.push(img);
    }
    Ok(Tensor::cat(&out, 0))
}

/// Shuffled minibatch order that depends only on `(seed, epoch)`.
#[derive(Debug, Clone, Copy)]
pub struct BatchSampler {
    pub len: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl BatchSampler {
    pub fn new(len: usize, batch_size: usize, seed: u64) -> Result<Self> {
        ensure_arg!(batch_size >= 1 && batch_size <= len, "batch size {batch_size} invalid for {len} items");
        Ok(Self { len, batch_size, seed })
    }

    /// Full batches of `epoch`; the incomplete tail is dropped.
    pub fn batches(&self, epoch: u64) -> Vec<Vec<usize>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(epoch);
        let mut order: Vec<usize> = (0..self.len).collect();
        order.shuffle(&mut rng);
        order.chunks_exact(self.batch_size).map(<[usize]>::to_vec).collect()
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.len / self.batch_size
    }

    /// Indices of the `step`-th batch counting across epochs.
    pub fn batch_at(&self, step: u64) -> Vec<usize> {
        let per = self.batches_per_epoch() as u64;
        self.batches(step / per).swap_remove((step % per) as usize)
    }
}

/// Gathers rows of `images` as a batch on the CPU.
pub fn gather(images: &Tensor, idx: &[usize]) -> Tensor {
    let idx: Vec<i64> = idx.iter().map(|&i| i as i64).collect();
    images.index_select(0, &Tensor::from_slice(&idx).to_device(Device::Cpu))
}
