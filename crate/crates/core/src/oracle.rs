//! Closed-form values, best responses and exploitability, and a proximal-point
//! fixed-point solver for the regularized von Neumann winner of tabular games.

use crate::error::{Error, Result};
use crate::game::{bilinear, check_simplex, kl_divergence, kl_from_logs, payoff_against, Context, ContextBatch, PreferenceGame, RegularizedSpec};
use crate::numeric::{half_range, log_softmax, log_sum_exp};
use crate::policy::Policy;

/// Default fixed-point tolerance for oracle solutions used as test fixtures.
pub const DEFAULT_TOL: f64 = 1e-10;

/// Iteration cap for each inner fixed-point loop; the contraction factor is at most 1/2.
const MAX_INNER: usize = 200;

#[derive(Clone, Debug, PartialEq)]
pub struct ExploitabilityReport {
    /// Batch-averaged suboptimality, `self_value − best_response_value`.
    pub value: f64,
    pub self_value: f64,
    pub best_response_value: f64,
    pub per_context: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VnwSolution {
    pub policy: Vec<f64>,
    /// Span seminorm of `log π − log normalize(π_ref · exp(−P(π ≻ ·)/β))`.
    pub residual: f64,
    /// Outer proximal steps taken.
    pub iterations: usize,
    pub eta: f64,
}

/// `V(p; q | x) = P(q ≻ p | x) + β KL(p‖π_ref) + β_target KL(p‖anchor)`.
pub fn value(game: &PreferenceGame, spec: &RegularizedSpec, p: &[f64], q: &[f64], x: &Context) -> Result<f64> {
    let n = game.num_actions();
    check_simplex(p, n, "p")?;
    check_simplex(q, n, "q")?;
    let m = game.preference_matrix(x)?;
    Ok(bilinear(&m, q, p) + spec.penalty(x, p)?)
}

/// Log-probabilities of the best response to `q` at `x`, and the unnormalized
/// log-weights' log-sum-exp (so that `V* = −λ · lse`).
fn best_response_logs(m: &[f64], anchor_log_u: &[f64], lambda: f64, q: &[f64]) -> (Vec<f64>, f64) {
    let c = payoff_against(m, q);
    let logits: Vec<f64> = anchor_log_u.iter().zip(&c).map(|(a, cy)| a - cy / lambda).collect();
    let lse = log_sum_exp(&logits);
    (logits.iter().map(|v| v - lse).collect(), lse)
}

fn check_lambda(spec: &RegularizedSpec) -> Result<f64> {
    let lambda = spec.lambda();
    if !(lambda > 0.0) {
        return Err(Error::Config("total regularization must be positive".into()));
    }
    Ok(lambda)
}

/// `min_p V(p; q | x) = −λ log Σ_y π̃(y) exp(−P(q ≻ y | x)/λ)` with `π̃` the
/// geometric mixture of reference and anchor.
pub fn best_response_value(game: &PreferenceGame, spec: &RegularizedSpec, q: &[f64], x: &Context) -> Result<f64> {
    Ok(best_response(game, spec, q, x)?.0)
}

/// Best-response value together with the minimizing distribution.
pub fn best_response(game: &PreferenceGame, spec: &RegularizedSpec, q: &[f64], x: &Context) -> Result<(f64, Vec<f64>)> {
    let lambda = check_lambda(spec)?;
    check_simplex(q, game.num_actions(), "q")?;
    let m = game.preference_matrix(x)?;
    let anchor = spec.effective_anchor_log(x)?;
    let (log_br, lse) = best_response_logs(&m, &anchor, lambda, q);
    Ok((-lambda * lse, log_br.into_iter().map(f64::exp).collect()))
}

/// Exploitability of `policy`, averaged over the batch.
///
/// Per context the gap is computed as `λ KL(π ‖ BR(π))`, which equals
/// `V(π; π) − V*(π)` without the cancellation of subtracting two values near 1/2.
pub fn exploitability(
    game: &PreferenceGame,
    spec: &RegularizedSpec,
    policy: &Policy,
    contexts: &ContextBatch,
) -> Result<ExploitabilityReport> {
    let lambda = check_lambda(spec)?;
    let xs = contexts.effective();
    let mut per_context = Vec::with_capacity(xs.len());
    let (mut self_total, mut br_total) = (0.0, 0.0);
    for (x, log_p) in xs.iter().zip(policy.log_probs_batch(xs)?) {
        let p: Vec<f64> = log_p.iter().map(|v| v.exp()).collect();
        let m = game.preference_matrix(x)?;
        let anchor = spec.effective_anchor_log(x)?;
        let (log_br, lse) = best_response_logs(&m, &anchor, lambda, &p);
        let gap = lambda * kl_from_logs(&log_p, &log_br)?;
        self_total += 0.5 + spec.penalty(x, &p)?;
        br_total += -lambda * lse;
        per_context.push(gap);
    }
    let n = xs.len() as f64;
    Ok(ExploitabilityReport {
        value: per_context.iter().sum::<f64>() / n,
        self_value: self_total / n,
        best_response_value: br_total / n,
        per_context: Some(per_context),
    })
}

/// Exploitability of a raw distribution at one context.
pub fn exploitability_of(game: &PreferenceGame, spec: &RegularizedSpec, p: &[f64], x: &Context) -> Result<f64> {
    let lambda = check_lambda(spec)?;
    check_simplex(p, game.num_actions(), "p")?;
    let m = game.preference_matrix(x)?;
    let anchor = spec.effective_anchor_log(x)?;
    let (log_br, _) = best_response_logs(&m, &anchor, lambda, p);
    let log_p: Vec<f64> = p.iter().map(|v| v.ln()).collect();
    Ok(lambda * kl_from_logs(&log_p, &log_br)?)
}

/// The regularized game reduced to one KL term: strength `λ` toward the
/// normalized geometric mixture of reference and anchor.
struct Reduced {
    matrix: Vec<f64>,
    log_ref: Vec<f64>,
    beta: f64,
}

impl Reduced {
    fn new(game: &PreferenceGame, spec: &RegularizedSpec, x: &Context) -> Result<Self> {
        Ok(Self {
            matrix: game.preference_matrix(x)?,
            log_ref: log_softmax(&spec.effective_anchor_log(x)?),
            beta: spec.lambda(),
        })
    }

    /// `log normalize(ref · exp(−P(q ≻ ·)/β))`.
    fn response(&self, log_ref: &[f64], beta: f64, q: &[f64]) -> Vec<f64> {
        let c = payoff_against(&self.matrix, q);
        log_softmax(&log_ref.iter().zip(&c).map(|(r, cy)| r - cy / beta).collect::<Vec<_>>())
    }

    fn residual(&self, log_p: &[f64]) -> f64 {
        let p: Vec<f64> = log_p.iter().map(|v| v.exp()).collect();
        let target = self.response(&self.log_ref, self.beta, &p);
        let diff: Vec<f64> = log_p.iter().zip(&target).map(|(a, b)| a - b).collect();
        half_range(&diff)
    }

    /// Exact proximal-point iteration from `start` until the fixed-point residual is at most `tol`.
    fn solve(&self, eta: Option<f64>, tol: f64, max_outer: usize, start: Option<&[f64]>) -> Result<VnwSolution> {
        let beta = self.beta;
        let eta = match eta {
            Some(e) => {
                if !(e > 0.0) {
                    return Err(Error::Config(format!("eta must be positive, got {e}")));
                }
                if beta * (1.0 + 1.0 / e) < 1.0 - 1e-12 {
                    return Err(Error::Config(format!(
                        "eta = {e} gives total regularization below 1; the inner map may not contract"
                    )));
                }
                e
            }
            None if beta < 1.0 => beta / (1.0 - beta),
            None => 1.0,
        };
        let lambda = beta * (1.0 + 1.0 / eta);
        let inner_tol = (tol * beta / (10.0 * lambda)).max(1e-15);
        let mut log_p = match start {
            Some(s) => s.iter().map(|v| v.ln()).collect(),
            None => self.log_ref.clone(),
        };
        if log_p.iter().any(|v| !v.is_finite()) {
            return Err(Error::Support("starting point must have full support".into()));
        }
        let mut residual = self.residual(&log_p);
        for k in 0..max_outer {
            if residual <= tol {
                return Ok(VnwSolution { policy: log_p.iter().map(|v| v.exp()).collect(), residual, iterations: k, eta });
            }
            let anchor: Vec<f64> = log_softmax(
                &self.log_ref.iter().zip(&log_p).map(|(r, a)| (beta * r + beta / eta * a) / lambda).collect::<Vec<_>>(),
            );
            let mut q = log_p.clone();
            for _ in 0..MAX_INNER {
                let probs: Vec<f64> = q.iter().map(|v| v.exp()).collect();
                let next = self.response(&anchor, lambda, &probs);
                let step: Vec<f64> = next.iter().zip(&q).map(|(a, b)| a - b).collect();
                q = next;
                if half_range(&step) <= inner_tol {
                    break;
                }
            }
            log_p = q;
            residual = self.residual(&log_p);
            if !residual.is_finite() {
                return Err(Error::Numeric("fixed-point residual became non-finite".into()));
            }
        }
        if residual <= tol {
            return Ok(VnwSolution { policy: log_p.iter().map(|v| v.exp()).collect(), residual, iterations: max_outer, eta });
        }
        Err(Error::Convergence { iterations: max_outer, residual })
    }
}

/// Regularized VNW of a context-free game. `eta = None` picks the proximal weight
/// so that every inner map is a contraction.
pub fn solve_vnw(game: &PreferenceGame, spec: &RegularizedSpec, eta: Option<f64>, tol: f64, max_outer: usize) -> Result<VnwSolution> {
    solve_vnw_at(game, spec, &Context::Unit, eta, tol, max_outer)
}

/// [`solve_vnw`] for the game restricted to a single context.
pub fn solve_vnw_at(
    game: &PreferenceGame,
    spec: &RegularizedSpec,
    x: &Context,
    eta: Option<f64>,
    tol: f64,
    max_outer: usize,
) -> Result<VnwSolution> {
    check_lambda(spec)?;
    if !(tol > 0.0) {
        return Err(Error::Config("tolerance must be positive".into()));
    }
    Reduced::new(game, spec, x)?.solve(eta, tol, max_outer, None)
}

/// `‖log π − log normalize(π̃ · exp(−P(π ≻ ·)/λ))‖_span` at `x`.
pub fn fixed_point_residual(game: &PreferenceGame, spec: &RegularizedSpec, p: &[f64], x: &Context) -> Result<f64> {
    check_lambda(spec)?;
    check_simplex(p, game.num_actions(), "p")?;
    let log_p: Vec<f64> = p.iter().map(|v| v.ln()).collect();
    Ok(Reduced::new(game, spec, x)?.residual(&log_p))
}

/// `normalize(π_ref^{η/(1+η)} · π_k^{1/(1+η)})` from log-probabilities.
pub fn geometric_mixture_log(log_ref: &[f64], log_k: &[f64], eta: f64) -> Vec<f64> {
    let a = eta / (1.0 + eta);
    let b = 1.0 / (1.0 + eta);
    log_softmax(&log_ref.iter().zip(log_k).map(|(r, k)| a * r + b * k).collect::<Vec<_>>())
}

/// KL(π* ‖ π_k) along exact proximal-point iterates `π_{k+1} = VNW of the game
/// regularized toward the geometric mixture of π_ref and π_k`.
///
/// Entry `k` of the result is `(k, KL(π*‖π_k))`, for `k = 0..=steps`. The first
/// iterate is `start`, or `π_ref` when absent.
pub fn pp_contraction_certificate(
    game: &PreferenceGame,
    spec: &RegularizedSpec,
    eta: f64,
    steps: usize,
    start: Option<&[f64]>,
) -> Result<Vec<(usize, f64)>> {
    if spec.beta_target > 0.0 {
        return Err(Error::Config("the certificate runs on the single-anchor game".into()));
    }
    if !(eta > 0.0) {
        return Err(Error::Config(format!("eta must be positive, got {eta}")));
    }
    let x = Context::Unit;
    let base = Reduced::new(game, spec, &x)?;
    let star = base.solve(None, 1e-11, 1_000_000, None)?;
    let beta = spec.beta;
    let lambda = beta * (1.0 + 1.0 / eta);
    let mut log_p: Vec<f64> = match start {
        Some(s) => {
            check_simplex(s, game.num_actions(), "start")?;
            s.iter().map(|v| v.ln()).collect()
        }
        None => base.log_ref.clone(),
    };
    let mut out = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let p: Vec<f64> = log_p.iter().map(|v| v.exp()).collect();
        out.push((k, kl_divergence(&star.policy, &p)?));
        if k == steps {
            break;
        }
        let sub = Reduced { matrix: base.matrix.clone(), log_ref: geometric_mixture_log(&base.log_ref, &log_p, eta), beta: lambda };
        let next = sub.solve(None, 1e-11, 1_000_000, Some(&p))?;
        log_p = next.policy.iter().map(|v| v.ln()).collect();
    }
    Ok(out)
}
