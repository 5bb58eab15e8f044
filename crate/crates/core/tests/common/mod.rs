//! Independent reference implementations used as test oracles. Everything
//! here works on plain `Vec<f64>` with naive loops and shares no code with
//! the library.

#![allow(dead_code)]

use latentmix::harness::TrainConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tch::{Kind, Tensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

pub fn matrix(rows: &[Vec<f64>]) -> Tensor {
    let cols = rows[0].len() as i64;
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Tensor::from_slice(&flat).view([-1, cols])
}

pub fn vector(v: &[f64]) -> Tensor {
    Tensor::from_slice(v)
}

pub fn labels(v: &[usize]) -> Tensor {
    let v: Vec<i64> = v.iter().map(|&x| x as i64).collect();
    Tensor::from_slice(&v)
}

pub fn to_vec(t: &Tensor) -> Vec<f64> {
    Vec::<f64>::try_from(t.detach().to_kind(Kind::Double).flatten(0, -1)).unwrap()
}

pub fn rel_err(actual: f64, expected: f64) -> f64 {
    (actual - expected).abs() / expected.abs().max(1e-12)
}

// ---- loss oracles ----

pub fn mean_abs(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 0..a.len() {
        s += (a[k] - b[k]).abs();
    }
    s / a.len() as f64
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn adv_d(real: &[f64], fake: &[f64]) -> f64 {
    let r: f64 = real.iter().map(|&x| sigmoid(x).ln()).sum::<f64>() / real.len() as f64;
    let f: f64 = fake.iter().map(|&x| (1.0 - sigmoid(x)).ln()).sum::<f64>() / fake.len() as f64;
    r + f
}

pub fn adv_g(fake: &[f64]) -> f64 {
    -fake.iter().map(|&x| sigmoid(x).ln()).sum::<f64>() / fake.len() as f64
}

pub fn adv_mix_d(mix: &[f64]) -> f64 {
    mix.iter().map(|&x| (1.0 - sigmoid(x)).ln()).sum::<f64>() / mix.len() as f64
}

pub fn cls(probs: &[Vec<f64>], y: &[usize]) -> f64 {
    let mut s = 0.0;
    for (row, &l) in probs.iter().zip(y) {
        s -= row[l].ln();
    }
    s / y.len() as f64
}

pub fn domain_mixup(probs: &[Vec<f64>], i: &[usize], j: &[usize], alpha: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 0..i.len() {
        s -= (1.0 - alpha[k]) * probs[k][i[k]].ln() + alpha[k] * probs[k][j[k]].ln();
    }
    s / i.len() as f64
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Mean squared distance over every unordered pair of rows.
pub fn shrinkage_all_pairs(codes: &[Vec<f64>]) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for i in 0..codes.len() {
        for j in i + 1..codes.len() {
            s += sq_dist(&codes[i], &codes[j]);
            n += 1;
        }
    }
    s / n as f64
}

pub fn joint(pa: &[Vec<f64>], pb: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let m = pa[0].len();
    let b = pa.len() as f64;
    let mut p = vec![vec![0.0; m]; m];
    for n in 0..pa.len() {
        for i in 0..m {
            for j in 0..m {
                p[i][j] += pa[n][i] * pb[n][j] / b;
            }
        }
    }
    let mut sym = vec![vec![0.0; m]; m];
    let mut total = 0.0;
    for i in 0..m {
        for j in 0..m {
            sym[i][j] = 0.5 * (p[i][j] + p[j][i]);
            total += sym[i][j];
        }
    }
    sym.iter().map(|r| r.iter().map(|v| v / total).collect()).collect()
}

pub fn mutual_information(p: &[Vec<f64>]) -> f64 {
    let m = p.len();
    let row: Vec<f64> = (0..m).map(|i| p[i].iter().sum()).collect();
    let col: Vec<f64> = (0..m).map(|j| (0..m).map(|i| p[i][j]).sum()).collect();
    let mut s = 0.0;
    for i in 0..m {
        for j in 0..m {
            if p[i][j] > 0.0 {
                s += p[i][j] * (p[i][j] / (row[i] * col[j])).ln();
            }
        }
    }
    s
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Mean InfoNCE over rows with unit-normalized anchor, positive and queue.
pub fn info_nce(anchor: &[Vec<f64>], positive: &[Vec<f64>], queue: &[Vec<f64>], tau: f64) -> f64 {
    let queue: Vec<Vec<f64>> = queue.iter().map(|q| unit(q)).collect();
    let mut s = 0.0;
    for (a, p) in anchor.iter().zip(positive) {
        let (a, p) = (unit(a), unit(p));
        let pos = (dot(&a, &p) / tau).exp();
        let neg: f64 = queue.iter().map(|q| (dot(&a, q) / tau).exp()).sum();
        s -= (pos / (pos + neg)).ln();
    }
    s / anchor.len() as f64
}

// ---- finite differences ----

/// Central-difference gradient of `f` at `x`.
pub fn numeric_grad(x: &[f64], h: f64, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut g = Vec::with_capacity(x.len());
    let mut probe = x.to_vec();
    for k in 0..x.len() {
        probe[k] = x[k] + h;
        let up = f(&probe);
        probe[k] = x[k] - h;
        let down = f(&probe);
        probe[k] = x[k];
        g.push((up - down) / (2.0 * h));
    }
    g
}

/// Autograd gradient of a scalar tensor function of one `[shape]` input.
pub fn analytic_grad(x: &[f64], shape: &[i64], f: impl Fn(&Tensor) -> Tensor) -> Vec<f64> {
    let t = Tensor::from_slice(x).view(shape).set_requires_grad(true);
    let y = f(&t);
    y.backward();
    to_vec(&t.grad())
}

/// Norm-relative discrepancy `‖a − n‖ / ‖n‖`.
pub fn grad_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n) * (a - n)).sum::<f64>().sqrt();
    let norm: f64 = numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
    diff / norm.max(1e-12)
}

// ---- Kolmogorov–Smirnov ----

/// Asymptotic Kolmogorov survival function `P(K > λ)`.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut s = 0.0;
    for k in 1..200 {
        let k = k as f64;
        let term = 2.0 * (-1f64).powi(k as i32 - 1) * (-2.0 * k * k * lambda * lambda).exp();
        s += term;
        if term.abs() < 1e-16 {
            break;
        }
    }
    s.clamp(0.0, 1.0)
}

/// One-sample KS statistic and p-value against `cdf`.
pub fn ks_one_sample(samples: &[f64], cdf: impl Fn(f64) -> f64) -> (f64, f64) {
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in v.iter().enumerate() {
        let c = cdf(x);
        d = d.max((i as f64 + 1.0) / n - c).max(c - i as f64 / n);
    }
    let sqrt_n = n.sqrt();
    (d, kolmogorov_sf((sqrt_n + 0.12 + 0.11 / sqrt_n) * d))
}

/// Two-sample KS statistic and p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len(), b.len());
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < na && j < nb {
        let x = a[i].min(b[j]);
        while i < na && a[i] <= x {
            i += 1;
        }
        while j < nb && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na as f64 - j as f64 / nb as f64).abs());
    }
    let ne = (na * nb) as f64 / (na + nb) as f64;
    let sqrt_n = ne.sqrt();
    (d, kolmogorov_sf((sqrt_n + 0.12 + 0.11 / sqrt_n) * d))
}

// ---- training configs ----

/// A configuration small enough for many training steps in a test.
pub fn tiny_config() -> TrainConfig {
    TrainConfig {
        image_size: 16,
        base_width: 8,
        max_width: 16,
        style_dim: 8,
        noise_dim: 8,
        mapping_hidden: 16,
        mapping_layers: 2,
        batch_size: 4,
        steps: 100,
        synth_train_per_domain: 24,
        synth_test_per_domain: 8,
        queue_size: 32,
        log_every: 0,
        checkpoint_every: 0,
        ..TrainConfig::default()
    }
}
