//! The supervised (labelled domains) and unsupervised (pseudo-labelled)
//! training steps, and the loop that drives them.
//!
//! Each step performs one discriminator update followed by one update of
//! generator, style encoder and mapping network. All generator forwards of a
//! step are computed once; the discriminator update sees them detached, and
//! the generator update re-scores them with the freshly updated
//! discriminator. Randomness is split into independent host RNG streams so
//! that disabling a term never shifts the draws of another.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tch::nn::{self, OptimizerConfig};
use tch::{Device, Kind, Tensor};

use super::config::{Setting, TrainConfig};
use crate::data::{augment, gather, BatchSampler};
use crate::error::{ensure_arg, Error, Result};
use crate::latent::{mix_batch, noise_batch, pair_within_batch, sample_alpha_batch, StyleSourceMode};
use crate::losses::{
    adversarial_loss_d, adversarial_loss_g, cycle_consistency_loss, diversity_sensitive_loss, domain_cls_loss_d,
    domain_cls_loss_g, r1_penalty, style_reconstruction_loss, LossValue,
};
use crate::networks::{ema_store, ModelSet, StyleEncoder};
use crate::regularizers::{
    adversarial_mixup_loss_d, adversarial_mixup_loss_g, routed_domain_mixup_loss, shrinkage_loss,
};
use crate::tunit::{
    assign_pseudo_labels, contrastive_style_loss_e, image_reconstruction_loss, joint_probability_matrix, mi_loss,
    style_contrastive_loss_g, NegativeQueue,
};

/// Named loss values of one step, in a stable order.
pub type LossRecord = BTreeMap<String, f64>;

/// Independent RNG streams derived from the run seed.
#[derive(Debug, Clone)]
struct Streams {
    data: ChaCha8Rng,
    style: ChaCha8Rng,
    mix: ChaCha8Rng,
    pair: ChaCha8Rng,
    aug: ChaCha8Rng,
}

impl Streams {
    fn new(seed: u64) -> Self {
        let stream = |k: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(k + 1);
            r
        };
        Self { data: stream(0), style: stream(1), mix: stream(2), pair: stream(3), aug: stream(4) }
    }
}

/// Training images held in memory with their labels.
#[derive(Debug)]
pub struct TrainData {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub num_domains: usize,
    by_domain: Vec<Vec<usize>>,
}

impl TrainData {
    pub fn new(images: Tensor, labels: Vec<usize>, num_domains: usize) -> Result<Self> {
        ensure_arg!(images.size()[0] as usize == labels.len(), "image and label counts differ");
        let mut by_domain = vec![Vec::new(); num_domains];
        for (i, &l) in labels.iter().enumerate() {
            ensure_arg!(l < num_domains, "label {l} out of range");
            by_domain[l].push(i);
        }
        ensure_arg!(by_domain.iter().all(|d| !d.is_empty()), "every domain needs training images");
        Ok(Self { images, labels, num_domains, by_domain })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// One step's inputs. Reference images are drawn from the whole training
/// set; the second reference shares the first one's domain.
#[derive(Debug)]
pub struct Batch {
    pub x_src: Tensor,
    pub y_src: Vec<usize>,
    pub x_ref: Tensor,
    pub y_ref: Vec<usize>,
    pub x_ref2: Tensor,
    pub z1: Tensor,
    pub z2: Tensor,
}

pub struct TrainState {
    pub config: TrainConfig,
    pub models: ModelSet,
    pub step: u64,
    opt_g: nn::Optimizer,
    opt_e: nn::Optimizer,
    opt_f: nn::Optimizer,
    opt_d: nn::Optimizer,
    streams: Streams,
    sampler: BatchSampler,
    queue: Option<NegativeQueue>,
    momentum_encoder: Option<(nn::VarStore, StyleEncoder)>,
}

impl std::fmt::Debug for TrainState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TrainState").field("step", &self.step).field("config", &self.config).finish_non_exhaustive()
    }
}

fn adam(cfg: &TrainConfig, vs: &nn::VarStore, lr: f64) -> Result<nn::Optimizer> {
    Ok(nn::Adam { beta1: cfg.beta1, beta2: cfg.beta2, wd: cfg.weight_decay, eps: 1e-8, amsgrad: false }
        .build(vs, lr)?)
}

fn labels_tensor(labels: &[usize]) -> Tensor {
    let v: Vec<i64> = labels.iter().map(|&l| l as i64).collect();
    Tensor::from_slice(&v)
}

/// Assigns each code the domain whose centroid of `reference` codes is
/// nearest. Domains absent from `reference_labels` are never chosen.
fn nearest_centroid_labels(
    codes: &Tensor,
    reference: &Tensor,
    reference_labels: &[usize],
    m: usize,
) -> Result<Vec<usize>> {
    let reference = reference.detach();
    let mut centroids = Vec::new();
    let mut domains = Vec::new();
    for d in 0..m {
        let idx: Vec<i64> =
            reference_labels.iter().enumerate().filter(|(_, &l)| l == d).map(|(i, _)| i as i64).collect();
        if !idx.is_empty() {
            centroids.push(reference.index_select(0, &Tensor::from_slice(&idx)).mean_dim(0, false, Kind::Float));
            domains.push(d);
        }
    }
    ensure_arg!(!domains.is_empty(), "no reference codes to build centroids from");
    let c = Tensor::stack(&centroids, 0);
    let dist = codes.detach().unsqueeze(1).f_sub(&c.unsqueeze(0))?.square().sum_dim_intlist(
        [2].as_slice(),
        false,
        Kind::Float,
    );
    let nearest = Vec::<i64>::try_from(dist.argmin(1, false))?;
    Ok(nearest.into_iter().map(|k| domains[k as usize]).collect())
}

struct Recorder {
    step: u64,
    record: LossRecord,
    total: Option<Tensor>,
}

impl Recorder {
    fn new(step: u64) -> Self {
        Self { step, record: LossRecord::new(), total: None }
    }

    /// Records `loss` under `name` and adds `weight·objective` to the total.
    /// Terms with zero weight are neither computed by callers nor recorded.
    fn add(&mut self, name: &str, weight: f64, loss: LossValue) -> Result<()> {
        let v = loss.item();
        if !v.is_finite() {
            return Err(Error::NonFiniteLoss { term: name.to_string(), step: self.step });
        }
        self.record.insert(name.to_string(), v);
        let term = loss.objective() * weight;
        self.total = Some(match self.total.take() {
            Some(t) => t + term,
            None => term,
        });
        Ok(())
    }

    fn finish(mut self, name: &str, into: &mut LossRecord) -> Result<Option<Tensor>> {
        if let Some(t) = &self.total {
            let v = t.double_value(&[]);
            if !v.is_finite() {
                return Err(Error::NonFiniteLoss { term: name.to_string(), step: self.step });
            }
            self.record.insert(name.to_string(), v);
        }
        into.append(&mut self.record);
        Ok(self.total)
    }
}

/// Generator-side quantities shared by the D and G updates of a step.
struct Forward {
    x_src: Tensor,
    y_src: Vec<usize>,
    s_src: Tensor,
    s_trg: Tensor,
    s_trg2: Tensor,
    y_trg: Vec<usize>,
    x_fake: Tensor,
    mix: Option<(Tensor, Tensor)>,
    mode: StyleSourceMode,
}

impl TrainState {
    pub fn new(config: TrainConfig, num_train: usize) -> Result<Self> {
        config.validate()?;
        let net = config.network();
        let models = ModelSet::new(&net, config.seed, config.ema_decay > 0.0)?;
        let t = &models.translator;
        let opt_g = adam(&config, &t.vs_generator, config.lr_g)?;
        let opt_e = adam(&config, &t.vs_encoder, config.lr_e)?;
        let opt_f = adam(&config, &t.vs_mapper, config.lr_f)?;
        let opt_d = adam(&config, &models.vs_discriminator, config.lr_d)?;
        let sampler = BatchSampler::new(num_train, config.batch_size, config.seed)?;
        let (queue, momentum_encoder) = if config.setting == Setting::Tunit {
            let queue = NegativeQueue::new(config.queue_size, config.tau)?;
            let momentum = if config.queue_momentum > 0.0 {
                let mut vs = nn::VarStore::new(Device::Cpu);
                let enc = StyleEncoder::new(vs.root(), &net);
                vs.copy(&t.vs_encoder)?;
                vs.freeze();
                Some((vs, enc))
            } else {
                None
            };
            (Some(queue), momentum)
        } else {
            (None, None)
        };
        Ok(Self {
            streams: Streams::new(config.seed),
            config,
            models,
            step: 0,
            opt_g,
            opt_e,
            opt_f,
            opt_d,
            sampler,
            queue,
            momentum_encoder,
        })
    }

    pub fn queue_len(&self) -> usize {
        self.queue.as_ref().map_or(0, NegativeQueue::len)
    }

    /// Draws the batch for the current step. Source order is a pure
    /// function of `(seed, epoch)`; everything else comes from the data and
    /// style streams.
    pub fn next_batch(&mut self, data: &TrainData) -> Result<Batch> {
        ensure_arg!(data.len() == self.sampler.len, "training set size changed");
        let src = self.sampler.batch_at(self.step);
        let b = src.len();
        let rng = &mut self.streams.data;
        let refs: Vec<usize> = (0..b).map(|_| rng.random_range(0..data.len())).collect();
        let refs2: Vec<usize> =
            refs.iter().map(|&r| *data.by_domain[data.labels[r]].choose(rng).expect("domains are non-empty")).collect();
        let noise_dim = self.config.noise_dim;
        Ok(Batch {
            x_src: gather(&data.images, &src),
            y_src: src.iter().map(|&i| data.labels[i]).collect(),
            x_ref: gather(&data.images, &refs),
            y_ref: refs.iter().map(|&i| data.labels[i]).collect(),
            x_ref2: gather(&data.images, &refs2),
            z1: noise_batch(b as i64, noise_dim, &mut self.streams.style),
            z2: noise_batch(b as i64, noise_dim, &mut self.streams.style),
        })
    }

    /// One training step on `batch` in the configured setting.
    pub fn train_step(&mut self, batch: &Batch) -> Result<LossRecord> {
        match self.config.setting {
            Setting::Mmuit => self.train_step_mmuit(batch),
            Setting::Tunit => self.train_step_tunit(batch),
        }
    }

    /// Supervised step: labels come from the batch.
    pub fn train_step_mmuit(&mut self, batch: &Batch) -> Result<LossRecord> {
        let fw = self.forward(batch, batch.y_src.clone(), batch.y_ref.clone(), None)?;
        let mut record = LossRecord::new();
        self.update_d(&fw, &mut record)?;
        let mut g = Recorder::new(self.step);
        let t = &self.models.translator;
        let cfg = &self.config;
        if cfg.lambda_sty > 0.0 {
            g.add("g/sty", cfg.lambda_sty, style_reconstruction_loss(&fw.s_trg, &t.encoder.encode(&fw.x_fake)?)?)?;
        }
        let lambda_ds = cfg.lambda_ds_at(self.step);
        if cfg.lambda_ds > 0.0 {
            let x_fake2 = t.generate(&fw.x_src, &fw.s_trg2)?;
            g.add("g/ds", lambda_ds, diversity_sensitive_loss(&fw.x_fake, &x_fake2)?)?;
        }
        if cfg.lambda_cyc > 0.0 {
            let x_cyc = t.generate(&fw.x_fake, &fw.s_src)?;
            g.add("g/cyc", cfg.lambda_cyc, cycle_consistency_loss(&fw.x_src, &x_cyc)?)?;
        }
        self.update_g(&fw, g, None, &mut record)?;
        Ok(record)
    }

    /// Unsupervised step: every label is a pseudo-label from the encoder's
    /// cluster head; the batch's labels are never read.
    pub fn train_step_tunit(&mut self, batch: &Batch) -> Result<LossRecord> {
        let t = &self.models.translator;
        let x_aug = augment(&batch.x_src, &mut self.streams.aug)?;
        let (s_src, p_src) = t.encoder.encode_with_clusters(&batch.x_src)?;
        let (s_aug, p_aug) = t.encoder.encode_with_clusters(&x_aug)?;
        let y_src = assign_pseudo_labels(&p_src.detach())?;
        let y_ref = tch::no_grad(|| -> Result<Vec<usize>> {
            let (_, p_ref) = t.encoder.encode_with_clusters(&batch.x_ref)?;
            assign_pseudo_labels(&p_ref)
        })?;

        let fw = self.forward(batch, y_src, y_ref, Some(s_src.shallow_clone()))?;
        let mut record = LossRecord::new();
        self.update_d(&fw, &mut record)?;

        let t = &self.models.translator;
        let cfg = &self.config;
        let queue = self.queue.as_ref().expect("unsupervised state owns a queue");
        let mut g = Recorder::new(self.step);
        if cfg.lambda_mi > 0.0 {
            g.add("e/mi", cfg.lambda_mi, mi_loss(&joint_probability_matrix(&p_src, &p_aug)?)?)?;
        }
        if !queue.is_empty() {
            if cfg.lambda_con_e > 0.0 {
                g.add("e/con", cfg.lambda_con_e, contrastive_style_loss_e(&s_src, &s_aug, queue)?)?;
            }
            if cfg.lambda_con_g > 0.0 {
                let s_gen = t.encoder.encode(&fw.x_fake)?;
                g.add("g/con", cfg.lambda_con_g, style_contrastive_loss_g(&s_gen, &fw.s_trg, queue)?)?;
            }
        }
        if cfg.lambda_rec > 0.0 {
            let x_rec = t.generate(&fw.x_src, &fw.s_src)?;
            g.add("g/rec", cfg.lambda_rec, image_reconstruction_loss(&fw.x_src, &x_rec)?)?;
        }
        self.update_g(&fw, g, Some(&x_aug), &mut record)?;
        Ok(record)
    }

    fn forward(
        &mut self,
        batch: &Batch,
        y_src: Vec<usize>,
        y_ref: Vec<usize>,
        s_src: Option<Tensor>,
    ) -> Result<Forward> {
        let t = &self.models.translator;
        let cfg = &self.config;
        let m = cfg.num_domains as usize;
        let mode = StyleSourceMode::for_step(self.step);
        let s_src = match s_src {
            Some(s) => s,
            None => t.encoder.encode(&batch.x_src)?,
        };
        let (s_trg, s_trg2, y_trg) = match mode {
            StyleSourceMode::FromRealImages => {
                let s_trg2 = if cfg.setting == Setting::Mmuit && cfg.lambda_ds > 0.0 {
                    t.encoder.encode(&batch.x_ref2)?
                } else {
                    Tensor::new()
                };
                (t.encoder.encode(&batch.x_ref)?, s_trg2, y_ref)
            }
            StyleSourceMode::FromNoise => {
                let s_trg = t.mapper.map_noise(&batch.z1)?;
                let wants_ds = cfg.setting == Setting::Mmuit && cfg.lambda_ds > 0.0;
                let s_trg2 =
                    if wants_ds || cfg.lambda_shr > 0.0 { t.mapper.map_noise(&batch.z2)? } else { Tensor::new() };
                let y = nearest_centroid_labels(&s_trg, &s_src, &y_src, m)?;
                (s_trg, s_trg2, y)
            }
        };
        let x_fake = t.generate(&batch.x_src, &s_trg)?;
        let reg = cfg.regularizers();
        let mix = if reg.any_mixup() {
            let (_, alpha) = sample_alpha_batch(cfg.mix_beta, y_src.len(), &mut self.streams.mix)?;
            let x_mix = t.generate(&batch.x_src, &mix_batch(&s_src, &s_trg, &alpha)?)?;
            Some((x_mix, alpha))
        } else {
            None
        };
        Ok(Forward { x_src: batch.x_src.shallow_clone(), y_src, s_src, s_trg, s_trg2, y_trg, x_fake, mix, mode })
    }

    fn update_d(&mut self, fw: &Forward, record: &mut LossRecord) -> Result<()> {
        let cfg = &self.config;
        let d = &self.models.discriminator;
        let mut rec = Recorder::new(self.step);
        let x_real = fw.x_src.detach().set_requires_grad(cfg.r1_gamma > 0.0);
        let real = d.discriminate(&x_real)?;
        let fake = d.discriminate(&fw.x_fake.detach())?;
        let y_src = labels_tensor(&fw.y_src);
        if cfg.lambda_adv > 0.0 {
            rec.add("d/adv", cfg.lambda_adv, adversarial_loss_d(&real.rf_logits, &fake.rf_logits)?)?;
        }
        if cfg.lambda_cls > 0.0 {
            rec.add("d/cls", cfg.lambda_cls, domain_cls_loss_d(&real.domain_probs(), &y_src)?)?;
        }
        if cfg.r1_gamma > 0.0 {
            rec.add("d/r1", cfg.r1_gamma, LossValue::minimize(r1_penalty(&real.rf_logits, &x_real)?))?;
        }
        if let Some((x_mix, alpha)) = &fw.mix {
            let wants_adv = cfg.adv_mix_on_d && cfg.lambda_adv_mix > 0.0;
            let wants_cls = cfg.cls_mix_on_d && cfg.lambda_cls_mix > 0.0;
            if wants_adv || wants_cls {
                let out = d.discriminate(&x_mix.detach())?;
                if wants_adv {
                    rec.add("d/adv_mix", cfg.lambda_adv_mix, adversarial_mixup_loss_d(&out.rf_logits)?)?;
                }
                if wants_cls {
                    let y_trg = labels_tensor(&fw.y_trg);
                    let loss = routed_domain_mixup_loss(&out.domain_probs(), &y_src, &y_trg, alpha)?;
                    rec.add("d/cls_mix", cfg.lambda_cls_mix, loss)?;
                }
            }
        }
        if let Some(total) = rec.finish("d/total", record)? {
            self.opt_d.zero_grad();
            total.backward();
            self.opt_d.step();
        }
        Ok(())
    }

    fn update_g(
        &mut self,
        fw: &Forward,
        mut g: Recorder,
        x_aug: Option<&Tensor>,
        record: &mut LossRecord,
    ) -> Result<()> {
        let cfg = self.config.clone();
        self.models.vs_discriminator.freeze();
        let result = (|| -> Result<Option<Tensor>> {
            let d = &self.models.discriminator;
            let fake = d.discriminate(&fw.x_fake)?;
            let y_trg = labels_tensor(&fw.y_trg);
            if cfg.lambda_adv > 0.0 {
                g.add("g/adv", cfg.lambda_adv, adversarial_loss_g(&fake.rf_logits)?)?;
            }
            if cfg.lambda_cls > 0.0 {
                g.add("g/cls", cfg.lambda_cls, domain_cls_loss_g(&fake.domain_probs(), &y_trg)?)?;
            }
            if cfg.lambda_shr > 0.0 {
                let pool = match fw.mode {
                    StyleSourceMode::FromRealImages => Tensor::cat(&[&fw.s_src, &fw.s_trg], 0),
                    StyleSourceMode::FromNoise if fw.s_trg2.defined() => Tensor::cat(&[&fw.s_trg, &fw.s_trg2], 0),
                    StyleSourceMode::FromNoise => fw.s_trg.shallow_clone(),
                };
                let (a, b) = pair_within_batch(&pool, &mut self.streams.pair)?;
                g.add("g/shr", cfg.lambda_shr, shrinkage_loss(&a, &b)?)?;
            }
            if let Some((x_mix, alpha)) = &fw.mix {
                let out = d.discriminate(x_mix)?;
                if cfg.lambda_adv_mix > 0.0 {
                    g.add("g/adv_mix", cfg.lambda_adv_mix, adversarial_mixup_loss_g(&out.rf_logits)?)?;
                }
                if cfg.lambda_cls_mix > 0.0 {
                    let y_src = labels_tensor(&fw.y_src);
                    let loss = routed_domain_mixup_loss(&out.domain_probs(), &y_src, &y_trg, alpha)?;
                    g.add("g/cls_mix", cfg.lambda_cls_mix, loss)?;
                }
            }
            g.finish("g/total", record)
        })();
        self.models.vs_discriminator.unfreeze();
        if let Some(total) = result? {
            self.opt_g.zero_grad();
            self.opt_e.zero_grad();
            self.opt_f.zero_grad();
            total.backward();
            self.opt_g.step();
            self.opt_e.step();
            self.opt_f.step();
        }
        let t = &self.models.translator;
        if let Some(avg) = self.models.averaged.as_mut() {
            avg.ema_update(t, cfg.ema_decay);
        }
        if let (Some(queue), Some(x_aug)) = (self.queue.as_mut(), x_aug) {
            let codes = tch::no_grad(|| -> Result<Tensor> {
                match &self.momentum_encoder {
                    Some((vs, enc)) => {
                        ema_store(vs, &t.vs_encoder, cfg.queue_momentum);
                        enc.encode(x_aug)
                    }
                    None => t.encoder.encode(x_aug),
                }
            })?;
            queue.push(&codes)?;
        }
        self.step += 1;
        Ok(())
    }
}

/// Progress callback: `(step, record)` after every step.
pub type StepHook<'a> = dyn FnMut(u64, &LossRecord) + 'a;

/// Runs `steps` training steps, optionally saving checkpoints under `out`.
/// Returns the loss record of every step.
pub fn train_loop(
    state: &mut TrainState,
    data: &TrainData,
    steps: u64,
    out: Option<&Path>,
    hook: &mut StepHook<'_>,
) -> Result<Vec<LossRecord>> {
    let mut history = Vec::with_capacity(steps as usize);
    for _ in 0..steps {
        let batch = state.next_batch(data)?;
        let record = state.train_step(&batch)?;
        hook(state.step, &record);
        if let Some(dir) = out {
            if state.config.checkpoint_every > 0 && state.step % state.config.checkpoint_every == 0 {
                save_checkpoint(state, &dir.join(format!("step_{:06}.safetensors", state.step)))?;
            }
        }
        history.push(record);
    }
    Ok(history)
}

/// Saves every network with the training configuration as metadata.
pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    state.models.save(path, state.step, &state.config.to_text())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn centroid_labels_pick_nearest_present_domain() {
        let refs = Tensor::from_slice(&[0.0f32, 0.0, 0.2, 0.0, 10.0, 10.0]).view([3, 2]);
        let codes = Tensor::from_slice(&[9.0f32, 9.0, 1.0, -1.0]).view([2, 2]);
        assert_eq!(nearest_centroid_labels(&codes, &refs, &[0, 0, 2], 3).unwrap(), vec![2, 0]);
    }

    #[test]
    fn streams_are_distinct() {
        let mut s = Streams::new(3);
        let a: u64 = s.data.random();
        let b: u64 = s.style.random();
        assert_ne!(a, b);
        let mut again = Streams::new(3);
        assert_eq!(a, again.data.random::<u64>());
    }
}
