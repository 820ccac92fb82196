use rand::Rng;

use super::spg::self_play_gradient;
use super::{step_contexts, BatchRule, GradientMode, KappaRule, LrRule, Optimizer, StepMetrics};
use crate::error::{Error, Result};
use crate::estimator::{nash_prox_loss_gradient, sample_pairs, NO_CLIP};
use crate::game::{PreferenceGame, RegularizedSpec};
use crate::numeric::l2_norm;
use crate::policy::Policy;

#[derive(Clone, Debug, PartialEq)]
pub struct NashProxConfig {
    pub lr: LrRule,
    pub batch: BatchRule,
    pub kappa: KappaRule,
    /// Strength of the KL term toward the target; zero drops the term.
    pub beta_target: f64,
    pub mode: GradientMode,
    /// Multiplies the loss before stepping.
    pub loss_scale: f64,
    pub optimizer: Optimizer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NashProxState {
    pub step: u64,
    pub policy: Policy,
    pub target: Policy,
    pub config: NashProxConfig,
    optimizer: Optimizer,
}

impl NashProxState {
    /// Online and target start from the same parameters.
    pub fn new(policy: Policy, config: NashProxConfig) -> Result<Self> {
        if !(config.beta_target >= 0.0) {
            return Err(Error::Config("beta_target must be nonnegative".into()));
        }
        let optimizer = config.optimizer.clone();
        Ok(Self { step: 0, target: policy.clone(), policy, config, optimizer })
    }

    /// [`RegularizedSpec`] anchored at the current target.
    pub fn anchored(&self, spec: &RegularizedSpec) -> Result<RegularizedSpec> {
        if self.config.beta_target > 0.0 {
            RegularizedSpec::with_anchor(spec.beta, self.config.beta_target, spec.reference.clone(), Some(self.target.clone()))
        } else {
            Ok(spec.without_anchor())
        }
    }
}

/// Optimizer step on the IPO-style loss anchored at the target, then
/// `θ_target ← (1 − κ_t) θ_target + κ_t θ`.
pub fn nash_prox_step<R: Rng + ?Sized>(
    state: &mut NashProxState,
    game: &PreferenceGame,
    spec: &RegularizedSpec,
    rng: &mut R,
) -> Result<StepMetrics> {
    let t = state.step;
    let lr = state.config.lr.at(t)?;
    let b = state.config.batch.at(t)?;
    let kappa = state.config.kappa.at(t)?;
    if b == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let anchored = state.anchored(spec)?;
    let lambda = anchored.lambda();
    let (mut grad, batch_size) = match state.config.mode {
        GradientMode::Exact => {
            // the loss gradient's expectation is (4/λ) times the self-play gradient
            let (g, _, n) = self_play_gradient(game, &anchored, &state.policy, GradientMode::Exact, b, NO_CLIP, rng)?;
            (g.into_iter().map(|v| 4.0 / lambda * v).collect::<Vec<_>>(), n)
        }
        GradientMode::Stochastic(feedback) => {
            let contexts = step_contexts(game, b, rng);
            let pairs = sample_pairs(game, &state.policy, &contexts, feedback, rng)?;
            (nash_prox_loss_gradient(&anchored, &state.policy, &pairs)?, pairs.len())
        }
    };
    for g in grad.iter_mut() {
        *g *= state.config.loss_scale;
    }
    state.optimizer.step(state.policy.params_mut(), &grad, lr)?;
    for (tp, p) in state.target.params_mut().iter_mut().zip(state.policy.params()) {
        *tp = (1.0 - kappa) * *tp + kappa * p;
    }
    state.policy.check_finite()?;
    state.step += 1;
    Ok(StepMetrics { step: state.step, grad_norm: l2_norm(&grad), clipped_fraction: 0.0, kappa, lr, batch_size })
}
