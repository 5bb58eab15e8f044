//! Truly-unsupervised extension: pseudo-labels mined by mutual-information
//! clustering, contrastive style learning against a queue of negatives, and
//! image reconstruction.

use std::collections::VecDeque;

use tch::{Kind, Tensor};

use crate::error::{ensure_arg, Result};
use crate::losses::{mean_abs_diff, LossValue};

const MI_FLOOR: f64 = 1e-12;
const NORM_EPS: f64 = 1e-12;

fn check_probs(p: &Tensor, what: &str) -> Result<()> {
    ensure_arg!(p.dim() == 2 && p.size()[0] > 0, "{what}: expected [B, m] probabilities, got {:?}", p.size());
    let row_err = (p.sum_dim_intlist([1].as_slice(), false, Kind::Double) - 1.0).abs().max().double_value(&[]);
    ensure_arg!(row_err < 1e-4, "{what}: rows must sum to 1 (max deviation {row_err})");
    ensure_arg!(p.min().double_value(&[]) >= 0.0, "{what}: negative probability");
    Ok(())
}

/// `P = E[E_C(x)·E_C(f(x))ᵀ]`, symmetrized to `(P + Pᵀ)/2` and renormalized
/// to sum to one.
pub fn joint_probability_matrix(probs_a: &Tensor, probs_b: &Tensor) -> Result<Tensor> {
    check_probs(probs_a, "joint probability (a)")?;
    check_probs(probs_b, "joint probability (b)")?;
    ensure_arg!(
        probs_a.size() == probs_b.size(),
        "joint probability: batch mismatch {:?} vs {:?}",
        probs_a.size(),
        probs_b.size()
    );
    let b = probs_a.size()[0] as f64;
    let p = probs_a.transpose(0, 1).matmul(probs_b) / b;
    let p = (&p + p.transpose(0, 1)) / 2.0;
    Ok(&p / p.sum(p.kind()))
}

/// Mutual information `Σ P_ij ln(P_ij / (P_i P_j))` of a joint probability
/// matrix, maximized. Zero entries contribute zero.
pub fn mi_loss(p: &Tensor) -> Result<LossValue> {
    ensure_arg!(
        p.dim() == 2 && p.size()[0] == p.size()[1] && p.size()[0] >= 1,
        "expected a square joint probability matrix, got {:?}",
        p.size()
    );
    let m = p.size()[0];
    let pi = p.sum_dim_intlist([1].as_slice(), true, p.kind()).expand([m, m], false);
    let pj = p.sum_dim_intlist([0].as_slice(), true, p.kind()).expand([m, m], false);
    let log_ratio = p.clamp_min(MI_FLOOR).log() - pi.clamp_min(MI_FLOOR).log() - pj.clamp_min(MI_FLOOR).log();
    Ok(LossValue::maximize((p * log_ratio).sum(p.kind())))
}

/// Argmax cluster per row, ties resolved toward the lowest index.
pub fn assign_pseudo_labels(probs: &Tensor) -> Result<Vec<usize>> {
    ensure_arg!(probs.dim() == 2, "expected [B, m] probabilities, got {:?}", probs.size());
    let rows: Vec<Vec<f64>> = Vec::try_from(probs.detach().to_kind(Kind::Double))?;
    Ok(rows
        .iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (k, &v)| if v > best.1 { (k, v) } else { best })
                .0
        })
        .collect())
}

/// FIFO ring of unit-length style codes used as contrastive negatives.
#[derive(Debug)]
pub struct NegativeQueue {
    capacity: usize,
    tau: f64,
    dim: Option<i64>,
    codes: VecDeque<Tensor>,
}

impl NegativeQueue {
    pub fn new(capacity: usize, tau: f64) -> Result<Self> {
        ensure_arg!(capacity >= 1, "queue capacity must be positive");
        ensure_arg!(tau > 0.0 && tau.is_finite(), "temperature must be positive, got {tau}");
        Ok(Self { capacity, tau, dim: None, codes: VecDeque::with_capacity(capacity) })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    /// Length-normalizes and enqueues a `[B, D]` batch, evicting the oldest
    /// entries beyond capacity.
    pub fn push(&mut self, codes: &Tensor) -> Result<()> {
        ensure_arg!(codes.dim() == 2, "expected [B, D] codes, got {:?}", codes.size());
        let d = codes.size()[1];
        if let Some(dim) = self.dim {
            ensure_arg!(d == dim, "queue holds {dim}-dimensional codes, got {d}");
        }
        let codes = codes.detach().to_kind(Kind::Double);
        let norms = codes.norm_scalaropt_dim(2, [1].as_slice(), true);
        ensure_arg!(norms.min().double_value(&[]) > 0.0, "cannot enqueue a zero-norm code");
        let unit = codes / norms;
        self.dim = Some(d);
        for row in 0..unit.size()[0] {
            if self.codes.len() == self.capacity {
                self.codes.pop_front();
            }
            self.codes.push_back(unit.get(row));
        }
        Ok(())
    }

    /// Queue contents as `[N, D]`, oldest first.
    pub fn negatives(&self) -> Result<Tensor> {
        ensure_arg!(!self.codes.is_empty(), "negative queue is empty");
        let rows: Vec<&Tensor> = self.codes.iter().collect();
        Ok(Tensor::stack(&rows, 0))
    }
}

/// Batched InfoNCE on precomputed logits: `mean(logsumexp([pos, neg]) − pos)`
/// for `pos: [B]`, `neg: [B, N]`.
pub fn info_nce_from_logits(pos: &Tensor, neg: &Tensor) -> Result<Tensor> {
    ensure_arg!(pos.dim() == 1 && neg.dim() == 2, "expected [B] and [B, N] logits");
    ensure_arg!(pos.size()[0] == neg.size()[0], "logit batch mismatch");
    let all = Tensor::cat(&[pos.unsqueeze(1), neg.shallow_clone()], 1);
    Ok((all.logsumexp([1].as_slice(), false) - pos).mean(pos.kind()))
}

fn unit_rows(x: &Tensor) -> Tensor {
    x / x.norm_scalaropt_dim(2, [1].as_slice(), true).clamp_min(NORM_EPS)
}

fn contrastive(anchor: &Tensor, positive: &Tensor, queue: &NegativeQueue) -> Result<Tensor> {
    ensure_arg!(
        anchor.dim() == 2 && anchor.size() == positive.size(),
        "contrastive: shape mismatch {:?} vs {:?}",
        anchor.size(),
        positive.size()
    );
    let negatives = queue.negatives()?.to_kind(anchor.kind());
    ensure_arg!(
        negatives.size()[1] == anchor.size()[1],
        "contrastive: code dimension {} differs from queue dimension {}",
        anchor.size()[1],
        negatives.size()[1]
    );
    let a = unit_rows(anchor);
    let p = unit_rows(positive);
    let pos = (&a * p).sum_dim_intlist([1].as_slice(), false, a.kind()) / queue.tau();
    let neg = a.matmul(&negatives.transpose(0, 1)) / queue.tau();
    info_nce_from_logits(&pos, &neg)
}

/// `−log(exp(a·p/τ) / (exp(a·p/τ) + Σ_k exp(a·n_k/τ)))` with `a = E_S(x)` and
/// `p = E_S(f(x))`, both length-normalized, against the queued negatives.
pub fn contrastive_style_loss_e(anchor: &Tensor, positive: &Tensor, queue: &NegativeQueue) -> Result<LossValue> {
    Ok(LossValue::minimize(contrastive(anchor, positive, queue)?))
}

/// The same InfoNCE form with the generated image's code as anchor and the
/// target style as positive.
pub fn style_contrastive_loss_g(gen_style: &Tensor, target_style: &Tensor, queue: &NegativeQueue) -> Result<LossValue> {
    Ok(LossValue::minimize(contrastive(gen_style, target_style, queue)?))
}

/// `‖x − G(x, E_S(x))‖₁`.
pub fn image_reconstruction_loss(x: &Tensor, x_rec: &Tensor) -> Result<LossValue> {
    Ok(LossValue::minimize(mean_abs_diff(x, x_rec, "image reconstruction")?))
}
