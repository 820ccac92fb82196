//! Gradient estimators for the self-play objective `J(θ; π) = V(π_θ; π)`:
//! pairwise REINFORCE with clipped advantages, exact gradients by enumeration,
//! and the loss-form gradients of the IPO-style objectives.

use rand::Rng;

use crate::error::{Error, Result};
use crate::game::{payoff_against, Context, ContextBatch, PreferenceGame, RegularizedSpec};
use crate::policy::{sample_index, Policy};

/// How preference outcomes are observed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Feedback {
    /// `p ~ Bernoulli(P(y ≻ y' | x))`.
    #[default]
    Bernoulli,
    /// `p = P(y ≻ y' | x)`.
    Exact,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairSample {
    pub x: Context,
    pub y: usize,
    pub y_prime: usize,
    pub p: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradientEstimate {
    pub vector: Vec<f64>,
    pub batch_size: usize,
    pub clip_threshold: f64,
    /// Fraction of samples whose advantage was clipped to `±M`.
    pub clipped_fraction: f64,
}

/// Effectively disables clipping.
pub const NO_CLIP: f64 = 1e9;

/// Draws one pair per context from `policy` and observes its outcome.
pub fn sample_pairs<R: Rng + ?Sized>(
    game: &PreferenceGame,
    policy: &Policy,
    contexts: &[Context],
    feedback: Feedback,
    rng: &mut R,
) -> Result<Vec<PairSample>> {
    let mut out = Vec::with_capacity(contexts.len());
    for (x, log_p) in contexts.iter().zip(policy.log_probs_batch(contexts)?) {
        let probs: Vec<f64> = log_p.iter().map(|v| v.exp()).collect();
        let y = sample_index(&probs, rng);
        let y_prime = sample_index(&probs, rng);
        let pref = game.preference_prob(x, y, y_prime)?;
        let p = match feedback {
            Feedback::Exact => pref,
            Feedback::Bernoulli => {
                if rng.random::<f64>() < pref {
                    1.0
                } else {
                    0.0
                }
            }
        };
        out.push(PairSample { x: x.clone(), y, y_prime, p });
    }
    Ok(out)
}

/// Log-probabilities of reference and (when active) anchor at `x`.
struct Anchors {
    reference: Vec<f64>,
    anchor: Option<Vec<f64>>,
}

impl Anchors {
    fn at(spec: &RegularizedSpec, x: &Context) -> Result<Self> {
        Ok(Self { reference: spec.reference_log_probs(x)?, anchor: spec.anchor_log_probs(x)? })
    }

    fn batch(spec: &RegularizedSpec, xs: &[Context]) -> Result<Vec<Self>> {
        let reference = spec.reference_log_probs_batch(xs)?;
        let anchor = spec.anchor_log_probs_batch(xs)?;
        Ok(match anchor {
            Some(a) => reference.into_iter().zip(a).map(|(r, a)| Self { reference: r, anchor: Some(a) }).collect(),
            None => reference.into_iter().map(|r| Self { reference: r, anchor: None }).collect(),
        })
    }

    fn advantage(&self, spec: &RegularizedSpec, log_p: &[f64], s: &PairSample) -> f64 {
        let (y, z) = (s.y, s.y_prime);
        let mut a = 0.5 - s.p + spec.beta * ((log_p[y] - self.reference[y]) - (log_p[z] - self.reference[z]));
        if let Some(anc) = &self.anchor {
            a += spec.beta_target * ((log_p[y] - anc[y]) - (log_p[z] - anc[z]));
        }
        a
    }
}

fn check_sample(policy: &Policy, s: &PairSample) -> Result<()> {
    let n = policy.num_actions();
    if s.y >= n || s.y_prime >= n {
        return Err(Error::Argument(format!("sample actions ({}, {}) out of range", s.y, s.y_prime)));
    }
    Ok(())
}

/// `1/2 − p + β[ℓ_ref(y) − ℓ_ref(y')] + β_target[ℓ_anchor(y) − ℓ_anchor(y')]`,
/// with `ℓ_a(y) = log(π(y|x)/a(y|x))`.
pub fn advantage(spec: &RegularizedSpec, policy: &Policy, s: &PairSample) -> Result<f64> {
    check_sample(policy, s)?;
    let log_p = policy.log_probs(&s.x)?;
    Ok(Anchors::at(spec, &s.x)?.advantage(spec, &log_p, s))
}

pub fn clip_advantage(a: f64, m: f64) -> f64 {
    a.clamp(-m, m)
}

/// `(1/B) Σ_j ½ (∇log π(y_j) − ∇log π(y'_j)) · clip(A_j, M)`.
///
/// The expectation of a single term over `y, y' ~ π` and `p` equals the exact
/// self-play gradient.
pub fn pairwise_reinforce(spec: &RegularizedSpec, policy: &Policy, batch: &[PairSample], m: f64) -> Result<GradientEstimate> {
    if batch.is_empty() {
        return Err(Error::Argument("empty sample batch".into()));
    }
    if !(m >= 0.0) {
        return Err(Error::Argument(format!("clip threshold must be nonnegative, got {m}")));
    }
    let n = policy.num_actions();
    let scale = 1.0 / batch.len() as f64;
    let mut vector = vec![0.0; policy.num_params()];
    let mut clipped = 0usize;
    for s in batch {
        check_sample(policy, s)?;
    }
    let xs: Vec<Context> = batch.iter().map(|s| s.x.clone()).collect();
    let anchors = Anchors::batch(spec, &xs)?;
    policy.accumulate_grad_batch(&xs, &mut vector, scale, |i, log_p| {
        let s = &batch[i];
        let mut d = vec![0.0; n];
        if s.y == s.y_prime {
            return Ok(d);
        }
        let a = anchors[i].advantage(spec, log_p, s);
        if a.abs() > m {
            clipped += 1;
        }
        let c = 0.5 * clip_advantage(a, m);
        d[s.y] += c;
        d[s.y_prime] -= c;
        Ok(d)
    })?;
    if vector.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("gradient estimate is not finite".into()));
    }
    Ok(GradientEstimate { vector, batch_size: batch.len(), clip_threshold: m, clipped_fraction: clipped as f64 / batch.len() as f64 })
}

/// Gradient of `J(θ; π_θ)` in the first argument with the competitor frozen,
/// averaged over the batch.
pub fn exact_gradient(game: &PreferenceGame, spec: &RegularizedSpec, policy: &Policy, contexts: &ContextBatch) -> Result<Vec<f64>> {
    let xs = contexts.effective();
    let scale = 1.0 / xs.len() as f64;
    let mut out = vec![0.0; policy.num_params()];
    let anchors = Anchors::batch(spec, xs)?;
    policy.accumulate_grad_batch(xs, &mut out, scale, |i, log_p| {
        let anchors = &anchors[i];
        let m = game.preference_matrix(&xs[i])?;
        let p: Vec<f64> = log_p.iter().map(|v| v.exp()).collect();
        let mut c = payoff_against(&m, &p);
        for (y, cy) in c.iter_mut().enumerate() {
            *cy += spec.beta * (log_p[y] - anchors.reference[y]);
            if let Some(anc) = &anchors.anchor {
                *cy += spec.beta_target * (log_p[y] - anc[y]);
            }
        }
        let mean: f64 = p.iter().zip(&c).map(|(a, b)| a * b).sum();
        Ok(p.iter().zip(&c).map(|(py, cy)| py * (cy - mean)).collect())
    })?;
    Ok(out)
}

/// `J(θ; q) = mean_x V(π_θ; q)`: the self-play objective with the competitor given explicitly.
pub fn objective(game: &PreferenceGame, spec: &RegularizedSpec, policy: &Policy, competitor: &Policy, contexts: &ContextBatch) -> Result<f64> {
    let xs = contexts.effective();
    let mut total = 0.0;
    for x in xs {
        let p = policy.probs(x)?;
        let q = competitor.probs(x)?;
        let c = payoff_against(&game.preference_matrix(x)?, &q);
        total += p.iter().zip(&c).map(|(a, b)| a * b).sum::<f64>() + spec.penalty(x, &p)?;
    }
    Ok(total / xs.len() as f64)
}

/// Per-sample IPO-style residual `ℓ(y) − ℓ(y') − (p − 1/2)/λ` with
/// `ℓ = (β/λ) log(π/π_ref) + (β_target/λ) log(π/anchor)`.
fn ipo_residual(spec: &RegularizedSpec, anchors: &Anchors, log_p: &[f64], s: &PairSample) -> f64 {
    let lambda = spec.lambda();
    let ell = |y: usize| {
        let mut v = spec.beta / lambda * (log_p[y] - anchors.reference[y]);
        if let Some(anc) = &anchors.anchor {
            v += spec.beta_target / lambda * (log_p[y] - anc[y]);
        }
        v
    };
    ell(s.y) - ell(s.y_prime) - (s.p - 0.5) / lambda
}

fn nash_prox_residual(spec: &RegularizedSpec, policy: &Policy, s: &PairSample) -> Result<f64> {
    check_sample(policy, s)?;
    let log_p = policy.log_probs(&s.x)?;
    Ok(ipo_residual(spec, &Anchors::at(spec, &s.x)?, &log_p, s))
}

/// Mean squared IPO-style residual against reference and target.
pub fn nash_prox_loss(spec: &RegularizedSpec, policy: &Policy, batch: &[PairSample]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Argument("empty sample batch".into()));
    }
    let mut total = 0.0;
    for s in batch {
        total += nash_prox_residual(spec, policy, s)?.powi(2);
    }
    Ok(total / batch.len() as f64)
}

/// Gradient of [`nash_prox_loss`] with the samples held fixed:
/// `(1/B) Σ 2 r_j (∇log π(y_j) − ∇log π(y'_j))`.
pub fn nash_prox_loss_gradient(spec: &RegularizedSpec, policy: &Policy, batch: &[PairSample]) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(Error::Argument("empty sample batch".into()));
    }
    let n = policy.num_actions();
    let scale = 1.0 / batch.len() as f64;
    let mut out = vec![0.0; policy.num_params()];
    for s in batch {
        check_sample(policy, s)?;
    }
    let xs: Vec<Context> = batch.iter().map(|s| s.x.clone()).collect();
    let anchors = Anchors::batch(spec, &xs)?;
    policy.accumulate_grad_batch(&xs, &mut out, scale, |i, log_p| {
        let s = &batch[i];
        let r = ipo_residual(spec, &anchors[i], log_p, s);
        // ℓ(y) − ℓ(y') moves with θ as (β + β_target)/λ = 1 times the score difference,
        // which in logit coordinates is e_y − e_y'
        let mut d = vec![0.0; n];
        d[s.y] += 2.0 * r;
        d[s.y_prime] -= 2.0 * r;
        Ok(d)
    })?;
    Ok(out)
}

/// Online IPO loss gradient on fixed samples, single anchor at strength `β`.
///
/// `centered` uses the target `(p − 1/2)/β`; otherwise the target is `p/(2β)`,
/// whose expected gradient is `(2/β)` times the exact self-play gradient of the
/// game regularized at `2β`.
pub fn online_ipo_loss_gradient(spec: &RegularizedSpec, policy: &Policy, batch: &[PairSample], centered: bool) -> Result<Vec<f64>> {
    if spec.beta_target > 0.0 {
        return Err(Error::Config("online IPO uses the reference as its only anchor".into()));
    }
    if centered {
        return nash_prox_loss_gradient(spec, policy, batch);
    }
    if batch.is_empty() {
        return Err(Error::Argument("empty sample batch".into()));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut out = vec![0.0; policy.num_params()];
    for s in batch {
        check_sample(policy, s)?;
        let log_p = policy.log_probs(&s.x)?;
        let log_r = spec.reference_log_probs(&s.x)?;
        let h = (log_p[s.y] - log_r[s.y]) - (log_p[s.y_prime] - log_r[s.y_prime]);
        let r = h - s.p / (2.0 * spec.beta);
        let sy = policy.score(&s.x, s.y)?;
        let sz = policy.score(&s.x, s.y_prime)?;
        for ((g, a), b) in out.iter_mut().zip(&sy).zip(&sz) {
            *g += scale * 2.0 * r * (a - b);
        }
    }
    Ok(out)
}

/// Step size and batch size of the growing-batch schedule:
/// `γ_t = (4t + 32κ − 2) / (m (t + 8κ)²)`, `B_t = ⌈(t + 8κ)/m⌉`.
pub fn schedules(kappa_cond: f64, m_pl: f64, t: u64) -> Result<(f64, usize)> {
    if !(kappa_cond >= 1.0) || !(m_pl > 0.0) {
        return Err(Error::Config(format!("need kappa >= 1 and m > 0, got kappa = {kappa_cond}, m = {m_pl}")));
    }
    let t = t as f64;
    let shifted = t + 8.0 * kappa_cond;
    let gamma = (4.0 * t + 32.0 * kappa_cond - 2.0) / (m_pl * shifted * shifted);
    Ok((gamma, (shifted / m_pl).ceil() as usize))
}

/// Clip threshold `M = 1/2 + 2λ log(2√2 λ (1 + π̃_min) / (π̃_min ε))` at which the
/// clipping bias is below `ε`.
pub fn theory_clip(lambda: f64, anchor_min: f64, eps_grad: f64) -> Result<f64> {
    if !(lambda > 0.0 && anchor_min > 0.0 && eps_grad > 0.0) {
        return Err(Error::Config("theory clip needs positive lambda, anchor minimum and epsilon".into()));
    }
    let arg = 2.0 * 2f64.sqrt() * lambda * (1.0 + anchor_min) / (anchor_min * eps_grad);
    Ok(0.5 + 2.0 * lambda * arg.ln().max(0.0))
}
