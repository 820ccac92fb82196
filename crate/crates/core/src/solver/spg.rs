use rand::Rng;

use super::{step_contexts, BatchRule, GradientMode, LrRule, Optimizer, StepMetrics};
use crate::error::{Error, Result};
use crate::estimator::{exact_gradient, pairwise_reinforce, sample_pairs};
use crate::game::{ContextBatch, PreferenceGame, RegularizedSpec};
use crate::numeric::l2_norm;
use crate::policy::{improve, ImprovementConfig, Policy};

#[derive(Clone, Debug, PartialEq)]
pub struct SpgConfig {
    pub lr: LrRule,
    pub batch: BatchRule,
    pub clip: f64,
    pub improvement: Option<ImprovementConfig>,
    pub mode: GradientMode,
    pub optimizer: Optimizer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpgState {
    pub step: u64,
    pub policy: Policy,
    pub config: SpgConfig,
    optimizer: Optimizer,
}

impl SpgState {
    pub fn new(policy: Policy, config: SpgConfig) -> Self {
        let optimizer = config.optimizer.clone();
        Self { step: 0, policy, config, optimizer }
    }

    /// Drops optimizer moments, as at the start of a fresh subproblem.
    pub fn reset_optimizer(&mut self) {
        self.optimizer = self.config.optimizer.clone();
    }
}

/// Gradient of `J(θ; π_θ)` for one step: exact over the step's contexts, or the
/// clipped pairwise estimator on one sampled pair per context.
pub(crate) fn self_play_gradient<R: Rng + ?Sized>(
    game: &PreferenceGame,
    spec: &RegularizedSpec,
    policy: &Policy,
    mode: GradientMode,
    batch: usize,
    clip: f64,
    rng: &mut R,
) -> Result<(Vec<f64>, f64, usize)> {
    match mode {
        GradientMode::Exact => {
            let contexts = if game.is_context_free() {
                ContextBatch::singleton()
            } else {
                ContextBatch::new(step_contexts(game, batch, rng), None)
            };
            let n = contexts.effective().len();
            Ok((exact_gradient(game, spec, policy, &contexts)?, 0.0, n))
        }
        GradientMode::Stochastic(feedback) => {
            let contexts = step_contexts(game, batch, rng);
            let pairs = sample_pairs(game, policy, &contexts, feedback, rng)?;
            let est = pairwise_reinforce(spec, policy, &pairs, clip)?;
            Ok((est.vector, est.clipped_fraction, est.batch_size))
        }
    }
}

/// `θ ← 𝒯(θ − γ_t g_t)` with the current policy as its own competitor.
pub fn spg_step<R: Rng + ?Sized>(
    state: &mut SpgState,
    game: &PreferenceGame,
    spec: &RegularizedSpec,
    rng: &mut R,
) -> Result<StepMetrics> {
    let t = state.step;
    let lr = state.config.lr.at(t)?;
    let b = state.config.batch.at(t)?;
    if b == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let (grad, clipped_fraction, batch_size) =
        self_play_gradient(game, spec, &state.policy, state.config.mode, b, state.config.clip, rng)?;
    state.optimizer.step(state.policy.params_mut(), &grad, lr)?;
    if let (Some(cfg), Policy::Tabular(p)) = (&state.config.improvement, &state.policy) {
        state.policy = Policy::Tabular(improve(p, cfg)?);
    }
    state.policy.check_finite()?;
    state.step += 1;
    Ok(StepMetrics { step: state.step, grad_norm: l2_norm(&grad), clipped_fraction, kappa: 0.0, lr, batch_size })
}
