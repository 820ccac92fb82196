//! Training loops: self-play policy gradients, the proximal-point wrapper
//! around them, and Nash Prox with an EMA target.

mod nash_prox;
mod optim;
mod pp;
mod spg;
pub mod theory;

pub use nash_prox::{nash_prox_step, NashProxConfig, NashProxState};
pub use optim::{Adam, Optimizer};
pub use pp::{geometric_anchor, pp_spg_run, OuterMetrics, PpSpgState};
pub use spg::{spg_step, SpgConfig, SpgState};

use rand::Rng;

use crate::error::{Error, Result};
use crate::estimator::{schedules, Feedback};
use crate::game::{Context, PreferenceGame};

/// Learning-rate rule indexed by the zero-based step `t`.
#[derive(Clone, Debug, PartialEq)]
pub enum LrRule {
    Const(f64),
    /// `a / sqrt(t + 1)`.
    InvSqrt(f64),
    /// The growing-batch step size `γ_t` for condition number `kappa` and PL constant `m`.
    Schedule { kappa: f64, m: f64 },
}

impl LrRule {
    pub fn at(&self, t: u64) -> Result<f64> {
        match *self {
            LrRule::Const(a) => Ok(a),
            LrRule::InvSqrt(a) => Ok(a / ((t + 1) as f64).sqrt()),
            LrRule::Schedule { kappa, m } => Ok(schedules(kappa, m, t)?.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum BatchRule {
    Fixed(usize),
    /// `B_t = ⌈(t + 8κ)/m⌉`, capped at `cap`.
    Schedule { kappa: f64, m: f64, cap: usize },
}

impl BatchRule {
    pub fn at(&self, t: u64) -> Result<usize> {
        match *self {
            BatchRule::Fixed(b) => Ok(b),
            BatchRule::Schedule { kappa, m, cap } => Ok(schedules(kappa, m, t)?.1.min(cap)),
        }
    }
}

/// EMA weight rule for the target update.
#[derive(Clone, Debug, PartialEq)]
pub enum KappaRule {
    Const(f64),
    /// `κ_t = 1 / (c t + 1)`.
    Anneal(f64),
}

impl KappaRule {
    pub fn at(&self, t: u64) -> Result<f64> {
        let k = match *self {
            KappaRule::Const(k) => k,
            KappaRule::Anneal(c) => 1.0 / (c * t as f64 + 1.0),
        };
        if !(0.0..=1.0).contains(&k) {
            return Err(Error::Config(format!("kappa must lie in [0, 1], got {k}")));
        }
        Ok(k)
    }
}

/// Whether steps use the exact gradient over the sampled contexts or the
/// sample-based estimator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradientMode {
    Exact,
    Stochastic(Feedback),
}

/// What one optimizer step reports.
#[derive(Clone, Debug, PartialEq)]
pub struct StepMetrics {
    pub step: u64,
    pub grad_norm: f64,
    pub clipped_fraction: f64,
    pub kappa: f64,
    pub lr: f64,
    pub batch_size: usize,
}

/// Contexts for one step: `b` draws for contextual games, `b` unit contexts otherwise.
pub(crate) fn step_contexts<R: Rng + ?Sized>(game: &PreferenceGame, b: usize, rng: &mut R) -> Vec<Context> {
    (0..b).map(|_| game.sample_context(rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{ContextBatch, MatrixPreferenceGame, RegularizedSpec};
    use crate::oracle::{exploitability, solve_vnw};
    use crate::policy::{Policy, TabularSoftmaxPolicy};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rps() -> (PreferenceGame, RegularizedSpec) {
        let reference = Policy::from(TabularSoftmaxPolicy::from_probs(&[11.0 / 18.0, 1.0 / 3.0, 1.0 / 18.0]));
        (MatrixPreferenceGame::rock_paper_scissors().into(), RegularizedSpec::new(0.01, reference).unwrap())
    }

    fn spg_config(mode: GradientMode) -> SpgConfig {
        SpgConfig { lr: LrRule::InvSqrt(1.0), batch: BatchRule::Fixed(8), clip: 1e9, improvement: None, mode, optimizer: Optimizer::Sgd }
    }

    fn np_config(kappa: KappaRule, beta_target: f64) -> NashProxConfig {
        NashProxConfig {
            lr: LrRule::Const(0.05),
            batch: BatchRule::Fixed(4),
            kappa,
            beta_target,
            mode: GradientMode::Stochastic(crate::estimator::Feedback::Bernoulli),
            loss_scale: 1.0,
            optimizer: Optimizer::Sgd,
        }
    }

    #[test]
    fn kappa_rules() {
        assert_eq!(KappaRule::Anneal(0.3).at(10).unwrap(), 0.25);
        assert_eq!(KappaRule::Anneal(0.3).at(0).unwrap(), 1.0);
        assert!(KappaRule::Const(1.5).at(0).is_err());
        assert_eq!(LrRule::InvSqrt(0.2).at(3).unwrap(), 0.1);
    }

    #[test]
    fn geometric_anchor_examples() {
        let r = Policy::from(TabularSoftmaxPolicy::from_probs(&[0.5, 0.5]));
        let k = Policy::from(TabularSoftmaxPolicy::from_probs(&[0.9, 0.1]));
        let a = geometric_anchor(&r, &k, 1.0, &Context::Unit).unwrap();
        assert!((a[0] - 0.75).abs() < 1e-15 && (a[1] - 0.25).abs() < 1e-15);
        let same = geometric_anchor(&k, &k, 0.7, &Context::Unit).unwrap();
        assert!((same[0] - 0.9).abs() < 1e-15);
        let big = geometric_anchor(&r, &k, 1e12, &Context::Unit).unwrap();
        assert!((big[0] - 0.5).abs() < 1e-9);
        let small = geometric_anchor(&r, &k, 1e-12, &Context::Unit).unwrap();
        assert!((small[0] - 0.9).abs() < 1e-9);
        let zero = Policy::from(TabularSoftmaxPolicy::from_probs(&[1.0, 0.0]));
        assert!(matches!(geometric_anchor(&r, &zero, 1.0, &Context::Unit), Err(Error::Support(_))));
    }

    #[test]
    fn pp_without_outer_or_inner_steps_returns_reference() {
        let (g, spec) = rps();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = spg_config(GradientMode::Exact);
        let (p, m) = pp_spg_run(&g, &spec, 1.0, 0, &[5], cfg.clone(), None, None, &mut rng).unwrap();
        assert_eq!(p, spec.reference);
        assert_eq!(m.len(), 1);
        let (p, m) = pp_spg_run(&g, &spec, 1.0, 4, &[0], cfg, None, None, &mut rng).unwrap();
        assert_eq!(p, spec.reference);
        assert_eq!(m.len(), 5);
    }

    #[test]
    fn pp_anchor_is_frozen_within_an_outer_step() {
        let (g, spec) = rps();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut st = PpSpgState::new(spec.reference.clone(), 1.0, vec![3], spg_config(GradientMode::Exact)).unwrap();
        let snapshot = st.anchor.clone();
        st.step(&g, &spec, &mut rng).unwrap();
        st.step(&g, &spec, &mut rng).unwrap();
        assert_eq!(st.anchor, snapshot);
        assert_eq!(st.inner_t, 2);
        st.step(&g, &spec, &mut rng).unwrap();
        assert_eq!(st.outer_k, 1);
        assert_eq!(&st.anchor, st.policy());
    }

    #[test]
    fn ema_with_unit_kappa_copies_online() {
        let (g, spec) = rps();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut st = NashProxState::new(Policy::from(TabularSoftmaxPolicy::uniform(3)), np_config(KappaRule::Const(1.0), 0.1)).unwrap();
        for _ in 0..5 {
            nash_prox_step(&mut st, &g, &spec, &mut rng).unwrap();
            assert_eq!(st.target, st.policy);
        }
        let mut frozen = NashProxState::new(Policy::from(TabularSoftmaxPolicy::uniform(3)), np_config(KappaRule::Const(0.0), 0.1)).unwrap();
        for _ in 0..5 {
            nash_prox_step(&mut frozen, &g, &spec, &mut rng).unwrap();
        }
        assert_eq!(frozen.target, Policy::from(TabularSoftmaxPolicy::uniform(3)));
    }

    #[test]
    fn ema_target_stays_in_the_envelope() {
        let (g, spec) = rps();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut st = NashProxState::new(Policy::from(TabularSoftmaxPolicy::uniform(3)), np_config(KappaRule::Anneal(0.3), 0.1)).unwrap();
        let mut lo = st.target.params().to_vec();
        let mut hi = lo.clone();
        for _ in 0..50 {
            nash_prox_step(&mut st, &g, &spec, &mut rng).unwrap();
            for i in 0..3 {
                lo[i] = lo[i].min(st.policy.params()[i]);
                hi[i] = hi[i].max(st.policy.params()[i]);
                let v = st.target.params()[i];
                assert!(v >= lo[i] - 1e-12 && v <= hi[i] + 1e-12);
            }
        }
    }

    #[test]
    fn solvers_stay_at_the_equilibrium() {
        let (g, spec) = rps();
        let star = solve_vnw(&g, &spec, None, 1e-12, 1_000_000).unwrap();
        let start = Policy::from(TabularSoftmaxPolicy::from_probs(&star.policy));
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut spg = SpgState::new(start.clone(), spg_config(GradientMode::Exact));
        let mut np = NashProxState::new(start.clone(), NashProxConfig { mode: GradientMode::Exact, loss_scale: 0.01 / 4.0, ..np_config(KappaRule::Const(0.1), 0.0) }).unwrap();
        for _ in 0..100 {
            spg_step(&mut spg, &g, &spec, &mut rng).unwrap();
            nash_prox_step(&mut np, &g, &spec, &mut rng).unwrap();
        }
        let one = ContextBatch::singleton();
        let e = exploitability(&g, &spec, &spg.policy, &one).unwrap().value;
        assert!(e <= 1e-8, "spg {e} {:?}", spg.policy);
        assert!(exploitability(&g, &spec, &np.policy, &one).unwrap().value <= 1e-8);
    }

    #[test]
    fn equal_seeds_give_identical_trajectories() {
        let (g, spec) = rps();
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let mut st = SpgState::new(spec.reference.clone(), spg_config(GradientMode::Stochastic(crate::estimator::Feedback::Bernoulli)));
            (0..50).map(|_| spg_step(&mut st, &g, &spec, &mut rng).unwrap().grad_norm).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }
}
