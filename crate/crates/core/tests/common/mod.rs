//! Oracles recomputed from raw preference matrices, independent of the
//! library's solvers: closed-form values, simplex grid search and central
//! differences.
#![allow(dead_code)]

use rand::Rng;
use rand_distr::StandardNormal;

pub const RPS_REFERENCE: [f64; 3] = [11.0 / 18.0, 1.0 / 3.0, 1.0 / 18.0];

pub fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

pub fn random_logits<R: Rng + ?Sized>(n: usize, scale: f64, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

pub fn random_simplex<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    softmax(&random_logits(n, 1.0, rng))
}

/// Random symmetric preference matrix: upper triangle uniform, `M + Mᵀ = 1`.
pub fn random_matrix<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    let mut m = vec![0.5; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v: f64 = rng.random();
            m[i * n + j] = v;
            m[j * n + i] = 1.0 - v;
        }
    }
    m
}

pub fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).filter(|(a, _)| **a > 0.0).map(|(a, b)| a * (a / b).ln()).sum()
}

/// Probability that an action drawn from `q` beats each action `y`.
pub fn loss_against(m: &[f64], q: &[f64]) -> Vec<f64> {
    let n = q.len();
    (0..n).map(|y| (0..n).map(|z| q[z] * m[z * n + y]).sum()).collect()
}

/// `P(q ≻ p) + β KL(p ‖ reference)`.
pub fn value(m: &[f64], p: &[f64], q: &[f64], beta: f64, reference: &[f64]) -> f64 {
    let c = loss_against(m, q);
    p.iter().zip(&c).map(|(a, b)| a * b).sum::<f64>() + beta * kl(p, reference)
}

/// `min_p value(p, q)` in closed form: `−β log Σ_y ref(y) exp(−c_y/β)`.
pub fn best_response_value(m: &[f64], q: &[f64], beta: f64, reference: &[f64]) -> f64 {
    let c = loss_against(m, q);
    let logs: Vec<f64> = c.iter().zip(reference).map(|(cy, r)| r.ln() - cy / beta).collect();
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    -beta * (top + logs.iter().map(|l| (l - top).exp()).sum::<f64>().ln())
}

/// `value(p, p) − min_q value(q, p)`.
pub fn exploitability(m: &[f64], p: &[f64], beta: f64, reference: &[f64]) -> f64 {
    value(m, p, p, beta, reference) - best_response_value(m, p, beta, reference)
}

/// Minimum of `f` over the probability simplex by grid search: a full grid of
/// step `1/coarse`, then repeated refinement windows of ±`WINDOW` cells around
/// the incumbent, each level four times finer, down to step `finest`.
/// The objective must be convex for the refinement to be sound.
pub fn simplex_grid_min(n: usize, coarse: usize, finest: f64, f: &dyn Fn(&[f64]) -> f64) -> (f64, Vec<f64>) {
    const WINDOW: f64 = 3.0;
    let mut h = 1.0 / coarse as f64;
    let mut best = (f64::INFINITY, vec![1.0 / n as f64; n]);
    let mut lo = vec![0.0; n - 1];
    let mut hi = vec![1.0; n - 1];
    loop {
        let mut point = vec![0.0; n];
        scan(0, n, h, &lo, &hi, &mut point, f, &mut best);
        if h <= finest {
            return best;
        }
        for i in 0..n - 1 {
            lo[i] = (best.1[i] - WINDOW * h).max(0.0);
            hi[i] = (best.1[i] + WINDOW * h).min(1.0);
        }
        h /= 4.0;
    }
}

#[allow(clippy::too_many_arguments)]
fn scan(i: usize, n: usize, h: f64, lo: &[f64], hi: &[f64], point: &mut [f64], f: &dyn Fn(&[f64]) -> f64, best: &mut (f64, Vec<f64>)) {
    if i == n - 1 {
        let rest = 1.0 - point[..n - 1].iter().sum::<f64>();
        if rest < -1e-15 {
            return;
        }
        point[n - 1] = rest.max(0.0);
        let v = f(point);
        if v < best.0 {
            *best = (v, point.to_vec());
        }
        return;
    }
    let used: f64 = point[..i].iter().sum();
    let start = (lo[i] / h).ceil() as i64;
    let end = (hi[i].min(1.0 - used) / h + 1e-9).floor() as i64;
    for k in start..=end {
        point[i] = k as f64 * h;
        scan(i + 1, n, h, lo, hi, point, f, best);
    }
}

/// Central differences of `f` at `theta`.
pub fn central_difference(theta: &[f64], h: f64, f: &dyn Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut x = theta.to_vec();
    (0..theta.len())
        .map(|i| {
            x[i] = theta[i] + h;
            let up = f(&x);
            x[i] = theta[i] - h;
            let down = f(&x);
            x[i] = theta[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&d) / norm(b).max(1e-12)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Half the range of `v`.
pub fn span(v: &[f64]) -> f64 {
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    (hi - lo) / 2.0
}
