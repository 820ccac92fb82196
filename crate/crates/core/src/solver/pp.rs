use rand::Rng;

use super::spg::{spg_step, SpgConfig, SpgState};
use super::StepMetrics;
use crate::error::{Error, Result};
use crate::game::{kl_divergence, Context, RegularizedSpec, PreferenceGame};
use crate::oracle::geometric_mixture_log;
use crate::policy::Policy;

/// `normalize(π_ref^{η/(1+η)} · π_k^{1/(1+η)})` at `x`.
pub fn geometric_anchor(pi_ref: &Policy, pi_k: &Policy, eta: f64, x: &Context) -> Result<Vec<f64>> {
    if !(eta > 0.0) {
        return Err(Error::Config(format!("eta must be positive, got {eta}")));
    }
    let r = pi_ref.log_probs(x)?;
    let k = pi_k.log_probs(x)?;
    if r.iter().chain(&k).any(|v| *v == f64::NEG_INFINITY) {
        return Err(Error::Support("geometric anchor needs full-support inputs".into()));
    }
    Ok(geometric_mixture_log(&r, &k, eta).into_iter().map(f64::exp).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct OuterMetrics {
    pub k: usize,
    pub inner_steps: usize,
    /// `KL(π* ‖ π_k)` when a reference solution was supplied.
    pub kl_to_vnw: Option<f64>,
}

/// Proximal-point outer loop with SPG inner steps, driven one inner step at a time.
#[derive(Clone, Debug, PartialEq)]
pub struct PpSpgState {
    pub outer_k: usize,
    pub inner_t: usize,
    pub eta: f64,
    /// Frozen `π_k`.
    pub anchor: Policy,
    pub inner: SpgState,
    pub inner_lengths: Vec<usize>,
}

impl PpSpgState {
    pub fn new(initial: Policy, eta: f64, inner_lengths: Vec<usize>, config: SpgConfig) -> Result<Self> {
        if !(eta > 0.0) {
            return Err(Error::Config(format!("eta must be positive, got {eta}")));
        }
        if inner_lengths.is_empty() {
            return Err(Error::Config("at least one inner length is required".into()));
        }
        Ok(Self { outer_k: 0, inner_t: 0, eta, anchor: initial.clone(), inner: SpgState::new(initial, config), inner_lengths })
    }

    pub fn policy(&self) -> &Policy {
        &self.inner.policy
    }

    /// `T_k`; the last listed length repeats.
    pub fn inner_length(&self, k: usize) -> usize {
        self.inner_lengths[k.min(self.inner_lengths.len() - 1)]
    }

    /// The subproblem spec: `β` toward `π_ref` plus `β/η` toward the frozen anchor.
    pub fn subproblem(&self, spec: &RegularizedSpec) -> Result<RegularizedSpec> {
        RegularizedSpec::proximal(spec.beta, self.eta, spec.reference.clone(), self.anchor.clone())
    }

    fn close_outer(&mut self) {
        self.outer_k += 1;
        self.inner_t = 0;
        self.anchor = self.inner.policy.clone();
        self.inner.reset_optimizer();
    }

    /// One inner SPG step on the current subproblem; rolls over to the next outer
    /// step once `T_k` inner steps are done. Outer steps with `T_k = 0` are skipped.
    pub fn step<R: Rng + ?Sized>(&mut self, game: &PreferenceGame, spec: &RegularizedSpec, rng: &mut R) -> Result<StepMetrics> {
        let mut skipped = 0;
        while self.inner_length(self.outer_k) == 0 {
            if skipped > self.inner_lengths.len() {
                return Err(Error::Config("every inner length is zero".into()));
            }
            self.close_outer();
            skipped += 1;
        }
        let sub = self.subproblem(spec)?;
        self.inner.step = self.inner_t as u64;
        let metrics = spg_step(&mut self.inner, game, &sub, rng)?;
        self.inner_t += 1;
        if self.inner_t == self.inner_length(self.outer_k) {
            self.close_outer();
        }
        Ok(metrics)
    }
}

/// Runs `outer_k` proximal steps from `π_0 = π_ref` (or `initial`), each with `T_k`
/// inner SPG steps against the frozen anchor `π_k`.
#[allow(clippy::too_many_arguments)]
pub fn pp_spg_run<R: Rng + ?Sized>(
    game: &PreferenceGame,
    spec: &RegularizedSpec,
    eta: f64,
    outer_k: usize,
    inner_lengths: &[usize],
    config: SpgConfig,
    initial: Option<Policy>,
    vnw: Option<&[f64]>,
    rng: &mut R,
) -> Result<(Policy, Vec<OuterMetrics>)> {
    if spec.beta_target > 0.0 {
        return Err(Error::Config("the outer loop adds its own anchor; pass the single-anchor spec".into()));
    }
    let lengths = if inner_lengths.is_empty() { vec![0] } else { inner_lengths.to_vec() };
    let mut state = PpSpgState::new(initial.unwrap_or_else(|| spec.reference.clone()), eta, lengths, config)?;
    let kl = |p: &Policy| -> Result<Option<f64>> {
        match vnw {
            Some(star) => Ok(Some(kl_divergence(star, &p.probs(&Context::Unit)?)?)),
            None => Ok(None),
        }
    };
    let mut metrics = vec![OuterMetrics { k: 0, inner_steps: 0, kl_to_vnw: kl(state.policy())? }];
    for k in 0..outer_k {
        let len = state.inner_length(k);
        for _ in 0..len {
            state.step(game, spec, rng)?;
        }
        if len == 0 {
            state.close_outer();
        }
        metrics.push(OuterMetrics { k: k + 1, inner_steps: len, kl_to_vnw: kl(state.policy())? });
    }
    Ok((state.inner.policy, metrics))
}
