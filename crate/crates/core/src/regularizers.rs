//! Style-space regularizers: the shrinkage loss that compacts the style
//! space, and the mixup losses that train on translations produced from
//! convex combinations of style codes.

use tch::{Kind, Tensor};

use crate::error::{ensure_arg, Result};
use crate::latent::{mix_batch, MixDraw, StyleCode};
use crate::losses::{check_labels, neg_log_prob_at, LossValue, PROB_FLOOR};
use crate::networks::Translator;

/// Weights of the three regularization terms; zero disables a term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularizerWeights {
    pub shrinkage: f64,
    pub adv_mix: f64,
    pub cls_mix: f64,
}

impl Default for RegularizerWeights {
    fn default() -> Self {
        Self { shrinkage: 1e-2, adv_mix: 1.0, cls_mix: 1.0 }
    }
}

impl RegularizerWeights {
    pub fn disabled() -> Self {
        Self { shrinkage: 0.0, adv_mix: 0.0, cls_mix: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("shrinkage", self.shrinkage), ("adv_mix", self.adv_mix), ("cls_mix", self.cls_mix)] {
            ensure_arg!(v >= 0.0 && v.is_finite(), "regularizer weight {name} must be nonnegative, got {v}");
        }
        Ok(())
    }

    pub fn any_mixup(&self) -> bool {
        self.adv_mix > 0.0 || self.cls_mix > 0.0
    }
}

/// Mean squared Euclidean distance over pairs: row `k` of `first` is paired
/// with row `k` of `second`.
pub fn shrinkage_loss(first: &Tensor, second: &Tensor) -> Result<LossValue> {
    ensure_arg!(first.dim() == 2, "shrinkage expects [P, D] codes, got {:?}", first.size());
    ensure_arg!(first.size()[0] > 0, "shrinkage needs at least one pair");
    ensure_arg!(
        first.size() == second.size(),
        "shrinkage pair shape mismatch {:?} vs {:?}",
        first.size(),
        second.size()
    );
    let sq = (first - second).square().sum_dim_intlist([1].as_slice(), false, first.kind());
    Ok(LossValue::minimize(sq.mean(first.kind())))
}

fn check_logits(t: &Tensor) -> Result<()> {
    ensure_arg!(t.dim() == 1 && t.numel() > 0, "expected [B] logits, got {:?}", t.size());
    Ok(())
}

/// Generator side of the adversarial mixup loss, non-saturating:
/// `E[−log σ(D_rf(G(x_i, s_mix)))]`.
pub fn adversarial_mixup_loss_g(rf_mix: &Tensor) -> Result<LossValue> {
    check_logits(rf_mix)?;
    Ok(LossValue::minimize(-rf_mix.log_sigmoid().mean(rf_mix.kind())))
}

/// Discriminator side: `E[log(1 − σ(D_rf(G(x_i, s_mix))))]`, maximized by
/// `D`, which treats mixed-style translations as fakes.
pub fn adversarial_mixup_loss_d(rf_mix: &Tensor) -> Result<LossValue> {
    check_logits(rf_mix)?;
    Ok(LossValue::maximize((-rf_mix).log_sigmoid().mean(rf_mix.kind())))
}

fn check_alpha(alpha: &Tensor, b: i64) -> Result<()> {
    ensure_arg!(alpha.size() == [b], "expected {b} mixing coefficients, got {:?}", alpha.size());
    let lo = alpha.min().double_value(&[]);
    let hi = alpha.max().double_value(&[]);
    ensure_arg!(lo >= 0.0 && hi <= 1.0, "mixing coefficients outside [0, 1]: [{lo}, {hi}]");
    Ok(())
}

/// Per-sample `−[(1 − α)·log p_i + α·log p_j]` without the `i ≠ j` check.
pub(crate) fn domain_mixup_terms(probs: &Tensor, i: &Tensor, j: &Tensor, alpha: &Tensor) -> Tensor {
    let a = alpha.to_kind(probs.kind());
    let pick = |labels: &Tensor| -> Tensor {
        probs.gather(1, &labels.to_kind(Kind::Int64).unsqueeze(1), false).squeeze_dim(1).clamp_min(PROB_FLOOR).log()
    };
    let mixed: Tensor = (1.0 - &a) * pick(i) + a * pick(j);
    -mixed
}

/// Domain-mixup classification loss
/// `E[−((1 − α)·log D_cls(y = i | ·) + α·log D_cls(y = j | ·))]` on the
/// sigmoid domain head. Every sample must have `i ≠ j`; same-domain samples
/// belong to [`crate::losses::domain_cls_loss_g`] instead.
pub fn domain_mixup_cls_loss(
    domain_probs: &Tensor,
    source_labels: &Tensor,
    other_labels: &Tensor,
    alpha: &Tensor,
) -> Result<LossValue> {
    check_labels(domain_probs, source_labels, "domain mixup (i)")?;
    check_labels(domain_probs, other_labels, "domain mixup (j)")?;
    check_alpha(alpha, domain_probs.size()[0])?;
    let same = source_labels.eq_tensor(other_labels).any().int64_value(&[]) == 1;
    ensure_arg!(!same, "domain mixup requires i != j for every sample");
    let terms = domain_mixup_terms(domain_probs, source_labels, other_labels, alpha);
    Ok(LossValue::minimize(terms.mean(domain_probs.kind())))
}

/// Domain-mixup classification over a batch that may contain same-domain
/// samples: rows with `i ≠ j` use the mixup loss, rows with `i = j` fall back
/// to single-domain classification towards `i`. The result is the mean over
/// all rows.
pub fn routed_domain_mixup_loss(
    domain_probs: &Tensor,
    source_labels: &Tensor,
    other_labels: &Tensor,
    alpha: &Tensor,
) -> Result<LossValue> {
    check_labels(domain_probs, source_labels, "domain mixup (i)")?;
    check_labels(domain_probs, other_labels, "domain mixup (j)")?;
    check_alpha(alpha, domain_probs.size()[0])?;
    let same = source_labels.eq_tensor(other_labels);
    let mixed = domain_mixup_terms(domain_probs, source_labels, other_labels, alpha);
    let single = neg_log_prob_at(domain_probs, source_labels);
    Ok(LossValue::minimize(single.where_self(&same, &mixed).mean(domain_probs.kind())))
}

/// Where the second endpoint of a mix comes from.
#[derive(Debug)]
pub enum MixPartner<'a> {
    /// Reference images `x_j`; `s_j = E(x_j)`.
    Reference(&'a Tensor),
    /// Noise `z`; `s_j = F(z)`.
    Noise(&'a Tensor),
}

/// A batch of mixed-style translations and the draws that produced them.
#[derive(Debug)]
pub struct MixedTranslation {
    pub images: Tensor,
    pub s_source: Tensor,
    pub s_partner: Tensor,
    pub s_mix: Tensor,
    pub alphas: Vec<f64>,
    pub b: f64,
}

impl MixedTranslation {
    /// Per-sample mixup records.
    pub fn draws(&self) -> Result<Vec<MixDraw>> {
        let s1 = StyleCode::unstack(&self.s_source)?;
        let s2 = StyleCode::unstack(&self.s_partner)?;
        s1.into_iter().zip(s2).zip(&self.alphas).map(|((a, b), &alpha)| MixDraw::new(a, b, alpha, self.b)).collect()
    }

    pub fn alpha_tensor(&self) -> Tensor {
        let a: Vec<f32> = self.alphas.iter().map(|&a| a as f32).collect();
        Tensor::from_slice(&a)
    }
}

/// `G(x_i, Mix(E(x_i), s_j, α))` with `s_j` from `partner`. The returned
/// tensors keep their autograd history so the same translation can feed both
/// mixup losses.
pub fn build_mixed_translation(
    x_source: &Tensor,
    partner: MixPartner<'_>,
    alphas: &[f64],
    b: f64,
    translator: &Translator,
) -> Result<MixedTranslation> {
    let n = x_source.size().first().copied().unwrap_or(0);
    ensure_arg!(alphas.len() as i64 == n, "expected {n} mixing coefficients, got {}", alphas.len());
    ensure_arg!(alphas.iter().all(|a| (0.0..=1.0).contains(a)), "mixing coefficients outside [0, 1]");
    let s_source = translator.encoder.encode(x_source)?;
    let s_partner = match partner {
        MixPartner::Reference(x) => translator.encoder.encode(x)?,
        MixPartner::Noise(z) => translator.mapper.map_noise(z)?,
    };
    ensure_arg!(s_partner.size()[0] == n, "partner batch size differs from source batch size");
    let a: Vec<f32> = alphas.iter().map(|&a| a as f32).collect();
    let s_mix = mix_batch(&s_source, &s_partner, &Tensor::from_slice(&a))?;
    let images = translator.generate(x_source, &s_mix)?;
    Ok(MixedTranslation { images, s_source, s_partner, s_mix, alphas: alphas.to_vec(), b })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t2(rows: &[&[f64]]) -> Tensor {
        let m = rows[0].len() as i64;
        let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Tensor::from_slice(&flat).view([-1, m])
    }

    #[test]
    fn shrinkage_examples() {
        let a = t2(&[&[0.0, 0.0], &[1.0, 2.0]]);
        assert_eq!(shrinkage_loss(&a, &a).unwrap().item(), 0.0);
        let v = shrinkage_loss(&t2(&[&[0.0, 0.0]]), &t2(&[&[3.0, 4.0]])).unwrap().item();
        assert_eq!(v, 25.0);
        let b = t2(&[&[-1.0, 0.5], &[2.0, 2.0]]);
        let base = shrinkage_loss(&a, &b).unwrap().item();
        let scaled = shrinkage_loss(&(&a * 2.0), &(&b * 2.0)).unwrap().item();
        assert!((scaled - 4.0 * base).abs() < 1e-12);
        let empty = Tensor::zeros([0, 2], (Kind::Double, tch::Device::Cpu));
        assert!(shrinkage_loss(&empty, &empty).is_err());
    }

    #[test]
    fn adversarial_mixup_examples() {
        let zero = Tensor::from_slice(&[0.0f64]);
        assert!((adversarial_mixup_loss_g(&zero).unwrap().item() - 2f64.ln()).abs() < 1e-12);
        assert!((adversarial_mixup_loss_d(&zero).unwrap().item() - 0.5f64.ln()).abs() < 1e-12);
        assert!(adversarial_mixup_loss_g(&Tensor::from_slice(&[60.0f64])).unwrap().item() < 1e-20);
        assert!(adversarial_mixup_loss_d(&Tensor::from_slice(&[-60.0f64])).unwrap().item().abs() < 1e-20);
        // Stable form agrees with −softplus(r).
        for r in [-30.0f64, -2.0, -0.3, 0.0, 0.7, 4.0, 25.0] {
            let direct = adversarial_mixup_loss_d(&Tensor::from_slice(&[r])).unwrap().item();
            let softplus = if r > 0.0 { r + (-r).exp().ln_1p() } else { r.exp().ln_1p() };
            assert!((direct + softplus).abs() < 1e-6, "r = {r}");
        }
    }

    #[test]
    fn domain_mixup_examples() {
        let i = Tensor::from_slice(&[0i64]);
        let j = Tensor::from_slice(&[1i64]);
        let a = |v: f64| Tensor::from_slice(&[v]);
        let v = domain_mixup_cls_loss(&t2(&[&[1.0, 0.2]]), &i, &j, &a(0.0)).unwrap().item();
        assert_eq!(v, 0.0);
        let v = domain_mixup_cls_loss(&t2(&[&[0.5, 0.5]]), &i, &j, &a(0.5)).unwrap().item();
        assert!((v - 2f64.ln()).abs() < 1e-12);
        let v = domain_mixup_cls_loss(&t2(&[&[1.0, 1.0]]), &i, &j, &a(0.3)).unwrap().item();
        assert_eq!(v, 0.0);
        assert!(domain_mixup_cls_loss(&t2(&[&[0.5, 0.5]]), &i, &i, &a(0.5)).is_err());
        assert!(domain_mixup_cls_loss(&t2(&[&[0.5, 0.5]]), &i, &j, &a(1.5)).is_err());
    }

    #[test]
    fn routing_splits_same_and_cross_domain_rows() {
        let probs = t2(&[&[0.3, 0.6], &[0.8, 0.1]]);
        let i = Tensor::from_slice(&[0i64, 0]);
        let j = Tensor::from_slice(&[1i64, 0]);
        let alpha = Tensor::from_slice(&[0.25f64, 0.9]);
        let routed = routed_domain_mixup_loss(&probs, &i, &j, &alpha).unwrap().item();
        let row0 = -(0.75 * 0.3f64.ln() + 0.25 * 0.6f64.ln());
        let row1 = -(0.8f64.ln());
        assert!((routed - 0.5 * (row0 + row1)).abs() < 1e-12);
    }
}
