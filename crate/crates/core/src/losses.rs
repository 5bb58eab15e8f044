//! Base translation losses: style reconstruction, diversity sensitivity,
//! cycle consistency, adversarial and domain classification terms, plus the
//! R1 penalty the discriminator update uses.
//!
//! L1 norms are means over elements, so magnitudes do not depend on image
//! resolution or style dimension. Log-probabilities of the real/fake head are
//! computed from logits through `log_sigmoid`.

use tch::{Kind, Tensor};

use crate::error::{ensure_arg, Result};

/// Floor applied to probabilities before taking a log.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Minimize,
    Maximize,
}

/// A scalar loss tensor tagged with the direction its owner optimizes it in.
#[derive(Debug)]
pub struct LossValue {
    value: Tensor,
    direction: Direction,
}

impl LossValue {
    pub fn new(value: Tensor, direction: Direction) -> Self {
        Self { value, direction }
    }

    pub fn minimize(value: Tensor) -> Self {
        Self::new(value, Direction::Minimize)
    }

    pub fn maximize(value: Tensor) -> Self {
        Self::new(value, Direction::Maximize)
    }

    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn item(&self) -> f64 {
        self.value.double_value(&[])
    }

    /// The tensor to hand to a minimizing optimizer: the value itself, or its
    /// negation for maximized terms.
    pub fn objective(&self) -> Tensor {
        match self.direction {
            Direction::Minimize => self.value.shallow_clone(),
            Direction::Maximize => -&self.value,
        }
    }
}

fn check_same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    ensure_arg!(a.size() == b.size() && a.numel() > 0, "{what}: shape mismatch {:?} vs {:?}", a.size(), b.size());
    Ok(())
}

pub(crate) fn mean_abs_diff(a: &Tensor, b: &Tensor, what: &str) -> Result<Tensor> {
    check_same_shape(a, b, what)?;
    Ok((a - b).abs().mean(a.kind()))
}

/// `‖s_target − s_rec‖₁` averaged over batch and dimensions.
pub fn style_reconstruction_loss(s_target: &Tensor, s_rec: &Tensor) -> Result<LossValue> {
    Ok(LossValue::minimize(mean_abs_diff(s_target, s_rec, "style reconstruction")?))
}

/// `‖G(x, s1) − G(x, s2)‖₁`; maximized by the generator.
pub fn diversity_sensitive_loss(img_a: &Tensor, img_b: &Tensor) -> Result<LossValue> {
    Ok(LossValue::maximize(mean_abs_diff(img_a, img_b, "diversity sensitive")?))
}

/// `‖x − G(G(x, s), E(x))‖₁`.
pub fn cycle_consistency_loss(x: &Tensor, x_cyc: &Tensor) -> Result<LossValue> {
    Ok(LossValue::minimize(mean_abs_diff(x, x_cyc, "cycle consistency")?))
}

fn check_logits(t: &Tensor, what: &str) -> Result<()> {
    ensure_arg!(t.dim() == 1 && t.numel() > 0, "{what}: expected [B] logits, got {:?}", t.size());
    Ok(())
}

/// Discriminator objective `E[log σ(r_real)] + E[log(1 − σ(r_fake))]`,
/// maximized by `D`.
pub fn adversarial_loss_d(rf_real: &Tensor, rf_fake: &Tensor) -> Result<LossValue> {
    check_logits(rf_real, "adversarial (real)")?;
    check_logits(rf_fake, "adversarial (fake)")?;
    let real = rf_real.log_sigmoid().mean(rf_real.kind());
    let fake = (-rf_fake).log_sigmoid().mean(rf_fake.kind());
    Ok(LossValue::maximize(real + fake))
}

/// Non-saturating generator term `E[−log σ(r_fake)]`.
pub fn adversarial_loss_g(rf_fake: &Tensor) -> Result<LossValue> {
    check_logits(rf_fake, "adversarial (generator)")?;
    Ok(LossValue::minimize(-rf_fake.log_sigmoid().mean(rf_fake.kind())))
}

pub(crate) fn check_labels(probs: &Tensor, labels: &Tensor, what: &str) -> Result<()> {
    ensure_arg!(probs.dim() == 2, "{what}: expected [B, m] probabilities, got {:?}", probs.size());
    let (b, m) = (probs.size()[0], probs.size()[1]);
    ensure_arg!(labels.size() == [b], "{what}: expected {b} labels, got shape {:?}", labels.size());
    ensure_arg!(b > 0, "{what}: empty batch");
    let lo = labels.min().int64_value(&[]);
    let hi = labels.max().int64_value(&[]);
    ensure_arg!(lo >= 0 && hi < m, "{what}: labels must lie in [0, {m}), got [{lo}, {hi}]");
    Ok(())
}

/// `−log p_y` per sample, with `p` floored at [`PROB_FLOOR`].
pub(crate) fn neg_log_prob_at(probs: &Tensor, labels: &Tensor) -> Tensor {
    let picked = probs.gather(1, &labels.to_kind(Kind::Int64).unsqueeze(1), false).squeeze_dim(1);
    -picked.clamp_min(PROB_FLOOR).log()
}

/// Domain classification on real images: `E[−log D_cls(y = i | x)]`,
/// binary cross-entropy on the true-domain sigmoid output only.
pub fn domain_cls_loss_d(domain_probs: &Tensor, labels: &Tensor) -> Result<LossValue> {
    check_labels(domain_probs, labels, "domain classification (D)")?;
    Ok(LossValue::minimize(neg_log_prob_at(domain_probs, labels).mean(domain_probs.kind())))
}

/// Domain classification of translations: `E[−log D_cls(y = j | G(x, s))]`.
pub fn domain_cls_loss_g(domain_probs: &Tensor, target_labels: &Tensor) -> Result<LossValue> {
    check_labels(domain_probs, target_labels, "domain classification (G)")?;
    Ok(LossValue::minimize(neg_log_prob_at(domain_probs, target_labels).mean(domain_probs.kind())))
}

/// R1 penalty `½·E‖∇ₓ r(x)‖²` on real images. `x_real` must require
/// gradients and `rf_real` must be computed from it; the returned tensor is
/// differentiable with respect to the discriminator parameters.
pub fn r1_penalty(rf_real: &Tensor, x_real: &Tensor) -> Result<Tensor> {
    ensure_arg!(x_real.requires_grad(), "R1 penalty needs an input that requires grad");
    let grads = Tensor::f_run_backward(&[rf_real.sum(rf_real.kind())], &[x_real], true, true)?;
    let g = &grads[0];
    let b = g.size()[0];
    Ok(g.square().view([b, -1]).sum_dim_intlist([1].as_slice(), false, g.kind()).mean(g.kind()) * 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tch::Device;

    fn t(v: &[f64]) -> Tensor {
        Tensor::from_slice(v)
    }

    fn t2(rows: &[&[f64]]) -> Tensor {
        let m = rows[0].len() as i64;
        let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Tensor::from_slice(&flat).view([-1, m])
    }

    #[test]
    fn style_reconstruction_examples() {
        let a = t2(&[&[1.0, -1.0]]);
        assert_eq!(style_reconstruction_loss(&a, &a).unwrap().item(), 0.0);
        let z = t2(&[&[0.0, 0.0]]);
        assert_eq!(style_reconstruction_loss(&a, &z).unwrap().item(), 1.0);
        let scaled = style_reconstruction_loss(&(&a * -3.0), &(&z * -3.0)).unwrap().item();
        assert!((scaled - 3.0).abs() < 1e-12);
        assert!(style_reconstruction_loss(&a, &t2(&[&[0.0, 0.0, 0.0]])).is_err());
    }

    #[test]
    fn pixel_losses_examples() {
        let img = Tensor::rand([2, 3, 4, 4], (Kind::Double, Device::Cpu)) * 2.0 - 1.0;
        assert_eq!(diversity_sensitive_loss(&img, &img).unwrap().item(), 0.0);
        let shifted = &img + 0.5;
        assert!((diversity_sensitive_loss(&shifted, &img).unwrap().item() - 0.5).abs() < 1e-12);
        assert_eq!(
            diversity_sensitive_loss(&shifted, &img).unwrap().item(),
            diversity_sensitive_loss(&img, &shifted).unwrap().item()
        );
        assert_eq!(diversity_sensitive_loss(&img, &img).unwrap().direction(), Direction::Maximize);

        let half = Tensor::full([1, 3, 4, 4], 0.5, (Kind::Double, Device::Cpu));
        assert_eq!(cycle_consistency_loss(&half, &half).unwrap().item(), 0.0);
        assert!((cycle_consistency_loss(&half, &(-&half)).unwrap().item() - 1.0).abs() < 1e-12);
        assert!(cycle_consistency_loss(&img, &half).is_err());
    }

    #[test]
    fn adversarial_examples() {
        let zero = t(&[0.0, 0.0]);
        let v = adversarial_loss_d(&zero, &zero).unwrap().item();
        assert!((v - 2.0 * 0.5f64.ln()).abs() < 1e-12);
        let perfect = adversarial_loss_d(&t(&[60.0]), &t(&[-60.0])).unwrap().item();
        assert!(perfect.abs() < 1e-20);
        let extreme = adversarial_loss_d(&t(&[-100.0]), &t(&[100.0])).unwrap().item();
        assert!(extreme.is_finite());

        let g0 = adversarial_loss_g(&t(&[0.0])).unwrap().item();
        assert!((g0 - 2f64.ln()).abs() < 1e-12);
        assert!(adversarial_loss_g(&t(&[60.0])).unwrap().item() < 1e-20);
        assert!(adversarial_loss_g(&t(&[-100.0])).unwrap().item().is_finite());
        let xs = [-5.0, -1.0, 0.0, 0.5, 3.0, 10.0];
        let vals: Vec<f64> = xs.iter().map(|&x| adversarial_loss_g(&t(&[x])).unwrap().item()).collect();
        assert!(vals.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn domain_classification_examples() {
        let labels = Tensor::from_slice(&[0i64]);
        let p = |v: f64| t2(&[&[v, 0.3]]);
        assert_eq!(domain_cls_loss_d(&p(1.0), &labels).unwrap().item(), 0.0);
        assert!((domain_cls_loss_d(&p(0.5), &labels).unwrap().item() - 2f64.ln()).abs() < 1e-12);
        let e = (-1.0f64).exp();
        assert!((domain_cls_loss_d(&p(e), &labels).unwrap().item() - 1.0).abs() < 1e-12);

        let target = Tensor::from_slice(&[1i64]);
        assert_eq!(domain_cls_loss_g(&t2(&[&[0.2, 1.0]]), &target).unwrap().item(), 0.0);
        let v = domain_cls_loss_g(&t2(&[&[0.9, 0.25]]), &target).unwrap().item();
        assert!((v - 4f64.ln()).abs() < 1e-12);
        let w = domain_cls_loss_g(&t2(&[&[0.01, 0.25]]), &target).unwrap().item();
        assert_eq!(v, w);

        assert!(domain_cls_loss_g(&t2(&[&[0.5, 0.5]]), &Tensor::from_slice(&[2i64])).is_err());
        let floored = domain_cls_loss_d(&t2(&[&[0.0, 1.0]]), &labels).unwrap().item();
        assert!(floored.is_finite());
    }

    #[test]
    fn r1_of_linear_discriminator() {
        // r(x) = Σ w·x has gradient w for every sample, so R1 = ½‖w‖².
        let x = Tensor::rand([3, 4], (Kind::Double, Device::Cpu)).set_requires_grad(true);
        let w = t(&[1.0, -2.0, 0.5, 3.0]);
        let r = (&x * &w).sum_dim_intlist([1].as_slice(), false, Kind::Double);
        let pen = r1_penalty(&r, &x).unwrap().double_value(&[]);
        assert!((pen - 0.5 * (1.0 + 4.0 + 0.25 + 9.0)).abs() < 1e-12);
    }
}
