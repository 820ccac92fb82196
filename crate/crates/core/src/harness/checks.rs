//! Property suites run by `nash-prox check`: each check reports the measured
//! quantity next to the tolerance it must respect.

use std::fmt;

use rand::Rng;
use rand_distr::StandardNormal;

use super::rng::rng_split;
use crate::error::{Error, Result};
use crate::estimator::{exact_gradient, nash_prox_loss_gradient, objective, pairwise_reinforce, PairSample, NO_CLIP};
use crate::game::{kl_divergence, span_seminorm, Context, ContextBatch, LowRankContextualGame, MatrixPreferenceGame, PreferenceGame, RegularizedSpec};
use crate::numeric::{l2_norm, softmax};
use crate::oracle::{best_response, exploitability, exploitability_of, pp_contraction_certificate, solve_vnw, value, DEFAULT_TOL};
use crate::policy::{improve, tau0, ImprovementConfig, MlpPolicy, Policy, TabularSoftmaxPolicy};
use crate::solver::theory::SoftmaxConstants;
use crate::solver::{spg_step, BatchRule, GradientMode, LrRule, Optimizer, SpgConfig, SpgState};

pub const SUITES: [&str; 5] = ["gradients", "estimators", "oracle", "contraction", "all"];

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub suite: &'static str,
    pub name: String,
    pub measured: f64,
    pub tolerance: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.measured <= self.tolerance
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CheckReport {
    pub checks: Vec<Check>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(Check::passed)
    }
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            let verdict = if c.passed() { "PASS" } else { "FAIL" };
            writeln!(f, "{verdict} {}/{}: measured {:.3e}, tolerated {:.3e}", c.suite, c.name, c.measured, c.tolerance)?;
        }
        let failed = self.checks.iter().filter(|c| !c.passed()).count();
        write!(f, "{} checks, {failed} failed", self.checks.len())
    }
}

pub fn run_checks(suite: &str) -> Result<CheckReport> {
    let mut report = CheckReport::default();
    let all = suite == "all";
    if !SUITES.contains(&suite) {
        return Err(Error::Argument(format!("unknown suite `{suite}`; expected one of {}", SUITES.join(", "))));
    }
    if all || suite == "gradients" {
        gradients(&mut report.checks)?;
    }
    if all || suite == "estimators" {
        estimators(&mut report.checks)?;
    }
    if all || suite == "oracle" {
        oracle(&mut report.checks)?;
    }
    if all || suite == "contraction" {
        contraction(&mut report.checks)?;
    }
    Ok(report)
}

fn random_simplex<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    softmax(&(0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect::<Vec<_>>())
}

fn random_tabular<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Policy {
    TabularSoftmaxPolicy::new((0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()).unwrap().into()
}

/// Random small game, reference and policy; odd seeds get a contextual game with an MLP.
fn random_instance(seed: u64) -> Result<(PreferenceGame, RegularizedSpec, Policy, ContextBatch)> {
    let mut rng = rng_split(seed, "check");
    let y = rng.random_range(2..=5);
    let beta = 10f64.powf(rng.random_range(-2.0..0.5));
    let reference: Policy = TabularSoftmaxPolicy::from_probs(&random_simplex(y, &mut rng)).into();
    let spec = RegularizedSpec::new(beta, reference)?;
    if seed % 2 == 0 {
        let game = MatrixPreferenceGame::random(y, &mut rng)?.into();
        Ok((game, spec, random_tabular(y, &mut rng), ContextBatch::singleton()))
    } else {
        let game: PreferenceGame = LowRankContextualGame::random(y, 2, &mut rng)?.into();
        let mut policy: Policy = MlpPolicy::glorot(vec![4, 6, 6, y], &mut rng)?.into();
        // Zero biases put dead-unit pre-activations exactly on the ReLU kink.
        for v in policy.params_mut() {
            *v += 0.1 * rng.sample::<f64, _>(StandardNormal);
        }
        let contexts = game.sample_contexts(3, &mut rng, None);
        Ok((game, spec, policy, contexts))
    }
}

/// Relative error of the analytic self-play gradient against central differences.
pub fn gradient_fd_error(game: &PreferenceGame, spec: &RegularizedSpec, policy: &Policy, contexts: &ContextBatch, h: f64) -> Result<f64> {
    let g = exact_gradient(game, spec, policy, contexts)?;
    let mut fd = vec![0.0; g.len()];
    for i in 0..g.len() {
        let mut plus = policy.clone();
        plus.params_mut()[i] += h;
        let mut minus = policy.clone();
        minus.params_mut()[i] -= h;
        let f = |p: &Policy| objective(game, spec, p, policy, contexts);
        fd[i] = (f(&plus)? - f(&minus)?) / (2.0 * h);
    }
    let diff: Vec<f64> = g.iter().zip(&fd).map(|(a, b)| a - b).collect();
    Ok(l2_norm(&diff) / l2_norm(&fd).max(1e-8))
}

fn gradients(out: &mut Vec<Check>) -> Result<()> {
    let mut worst_tab: f64 = 0.0;
    let mut worst_mlp: f64 = 0.0;
    for seed in 0..20 {
        let (game, spec, policy, contexts) = random_instance(seed)?;
        let e = gradient_fd_error(&game, &spec, &policy, &contexts, 1e-5)?;
        match policy {
            Policy::Tabular(_) => worst_tab = worst_tab.max(e),
            Policy::Mlp(_) => worst_mlp = worst_mlp.max(e),
        }
    }
    out.push(Check { suite: "gradients", name: "tabular vs central differences".into(), measured: worst_tab, tolerance: 1e-5 });
    out.push(Check { suite: "gradients", name: "mlp vs central differences".into(), measured: worst_mlp, tolerance: 1e-5 });
    Ok(())
}

/// Expectation of the unclipped pairwise estimator by enumerating `(y, y', p)`.
pub fn enumerated_estimator_mean(game: &PreferenceGame, spec: &RegularizedSpec, policy: &Policy) -> Result<Vec<f64>> {
    let x = Context::Unit;
    let pi = policy.probs(&x)?;
    let mut mean = vec![0.0; policy.num_params()];
    for y in 0..pi.len() {
        for z in 0..pi.len() {
            let pr = game.preference_prob(&x, y, z)?;
            for (p, w) in [(1.0, pr), (0.0, 1.0 - pr)] {
                let s = PairSample { x: x.clone(), y, y_prime: z, p };
                let g = pairwise_reinforce(spec, policy, &[s], NO_CLIP)?.vector;
                let weight = pi[y] * pi[z] * w;
                mean.iter_mut().zip(&g).for_each(|(m, v)| *m += weight * v);
            }
        }
    }
    Ok(mean)
}

fn estimators(out: &mut Vec<Check>) -> Result<()> {
    let mut worst: f64 = 0.0;
    for seed in 0..10 {
        let (game, spec, _, _) = random_instance(2 * seed)?;
        let mut rng = rng_split(seed, "policy");
        let policy = random_tabular(game.num_actions(), &mut rng);
        let mean = enumerated_estimator_mean(&game, &spec, &policy)?;
        let exact = exact_gradient(&game, &spec, &policy, &ContextBatch::singleton())?;
        worst = worst.max(mean.iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }
    out.push(Check { suite: "estimators", name: "enumerated estimator mean vs exact gradient".into(), measured: worst, tolerance: 1e-10 });

    let mut worst: f64 = 0.0;
    let mut rng = rng_split(0, "identity");
    for seed in 0..100 {
        let (game, spec, policy, contexts) = random_instance(seed)?;
        let x = contexts.effective()[0].clone();
        let y = game.num_actions();
        let s = PairSample { x, y: rng.random_range(0..y), y_prime: rng.random_range(0..y), p: rng.random::<f64>() };
        let loss = nash_prox_loss_gradient(&spec, &policy, std::slice::from_ref(&s))?;
        let g = pairwise_reinforce(&spec, &policy, &[s], NO_CLIP)?.vector;
        let scale = 4.0 / spec.lambda();
        worst = worst.max(loss.iter().zip(&g).map(|(a, b)| (a - scale * b).abs()).fold(0.0, f64::max));
    }
    out.push(Check { suite: "estimators", name: "loss gradient vs (4/λ) estimator".into(), measured: worst, tolerance: 1e-12 });
    Ok(())
}

fn oracle(out: &mut Vec<Check>) -> Result<()> {
    let reference: Policy = TabularSoftmaxPolicy::from_probs(&[11.0 / 18.0, 1.0 / 3.0, 1.0 / 18.0]).into();
    let rps: PreferenceGame = MatrixPreferenceGame::rock_paper_scissors().into();
    let spec = RegularizedSpec::new(0.01, reference)?;
    let star = solve_vnw(&rps, &spec, None, DEFAULT_TOL, 1_000_000)?;
    out.push(Check {
        suite: "oracle",
        name: "rps equilibrium exploitability".into(),
        measured: exploitability_of(&rps, &spec, &star.policy, &Context::Unit)?.abs(),
        tolerance: 1e-8,
    });

    let x = Context::Unit;
    let mut br_gap: f64 = 0.0;
    let mut kl_excess = f64::NEG_INFINITY;
    let mut ref_excess = f64::NEG_INFINITY;
    let mut span_excess = f64::NEG_INFINITY;
    for seed in 0..10 {
        let (game, spec, _, _) = random_instance(2 * seed)?;
        let mut rng = rng_split(seed, "points");
        let q = random_simplex(game.num_actions(), &mut rng);
        let (v, br) = best_response(&game, &spec, &q, &x)?;
        br_gap = br_gap.max((value(&game, &spec, &br, &q, &x)? - v).abs());
        for _ in 0..200 {
            let p = random_simplex(game.num_actions(), &mut rng);
            br_gap = br_gap.max(v - value(&game, &spec, &p, &q, &x)?);
        }
        let sol = solve_vnw(&game, &spec, None, DEFAULT_TOL, 1_000_000)?;
        let r = spec.reference.probs(&x)?;
        let bound = 1.0 / (2.0 * spec.beta);
        kl_excess = kl_excess.max(kl_divergence(&sol.policy, &r)? - bound);
        ref_excess = ref_excess.max(exploitability_of(&game, &spec, &r, &x)? - 0.5);
        let diff: Vec<f64> = r.iter().zip(&sol.policy).map(|(a, b)| a.ln() - b.ln()).collect();
        span_excess = span_excess.max(span_seminorm(&diff)? - bound);
    }
    out.push(Check { suite: "oracle", name: "closed-form best response is minimal".into(), measured: br_gap, tolerance: 1e-12 });
    out.push(Check { suite: "oracle", name: "KL(π*‖π_ref) − 1/(2β)".into(), measured: kl_excess, tolerance: 0.0 });
    out.push(Check { suite: "oracle", name: "reference exploitability − 1/2".into(), measured: ref_excess, tolerance: 0.0 });
    out.push(Check { suite: "oracle", name: "span(log π_ref − log π*) − 1/(2β)".into(), measured: span_excess, tolerance: 0.0 });

    let mut floor_violation: f64 = 0.0;
    let mut increase = f64::NEG_INFINITY;
    let mut rng = rng_split(0, "improve");
    for _ in 0..100 {
        let y = rng.random_range(2..=6);
        let beta = rng.random_range(1.0..5.0);
        let nu = random_simplex(y, &mut rng);
        let spec = RegularizedSpec::new(beta, TabularSoftmaxPolicy::from_probs(&random_simplex(y, &mut rng)).into())?;
        let game: PreferenceGame = MatrixPreferenceGame::random(y, &mut rng)?.into();
        let anchor = spec.reference.probs(&x)?;
        let tau = tau0(&nu, &anchor, beta)? * rng.random_range(0.5..=1.0);
        let cfg = ImprovementConfig::new(nu.clone(), tau)?;
        let before = TabularSoftmaxPolicy::new((0..y).map(|_| 3.0 * rng.sample::<f64, _>(StandardNormal)).collect())?;
        let after = improve(&before, &cfg)?;
        let pa = after.probs();
        floor_violation = floor_violation.max(pa.iter().zip(&nu).map(|(p, n)| tau * n - p).fold(0.0, f64::max));
        let eb = exploitability_of(&game, &spec, &before.probs(), &x)?;
        let ea = exploitability_of(&game, &spec, &pa, &x)?;
        increase = increase.max(ea - eb);
    }
    out.push(Check { suite: "oracle", name: "improvement floor violation".into(), measured: floor_violation, tolerance: 1e-15 });
    out.push(Check { suite: "oracle", name: "improvement exploitability increase".into(), measured: increase, tolerance: 1e-9 });
    Ok(())
}

/// Largest per-step KL ratio of exact proximal-point iterates on RPS (β = 0.01),
/// counted until the KL drops below `floor`.
pub fn pp_worst_ratio(eta: f64, steps: usize, floor: f64) -> Result<f64> {
    let reference: Policy = TabularSoftmaxPolicy::from_probs(&[11.0 / 18.0, 1.0 / 3.0, 1.0 / 18.0]).into();
    let rps: PreferenceGame = MatrixPreferenceGame::rock_paper_scissors().into();
    let spec = RegularizedSpec::new(0.01, reference)?;
    let trace = pp_contraction_certificate(&rps, &spec, eta, steps, None)?;
    let mut worst: f64 = 0.0;
    for w in trace.windows(2) {
        if w[0].1 < floor {
            break;
        }
        worst = worst.max(w[1].1 / w[0].1);
    }
    Ok(worst)
}

/// Exploitability trace of deterministic SPG (exact gradients, `γ = 1/(2L)`,
/// τ₀-floor improvement) on a random 10-action game with β = 4 and uniform
/// reference. Returns the guaranteed factor `1 − γm/2` and the trace.
pub fn deterministic_spg_trace(seed: u64, steps: usize) -> Result<(f64, Vec<f64>)> {
    let y = 10;
    let beta = 4.0;
    let game: PreferenceGame = MatrixPreferenceGame::random(y, &mut rng_split(seed, "game"))?.into();
    let uniform = vec![1.0 / y as f64; y];
    let spec = RegularizedSpec::new(beta, TabularSoftmaxPolicy::uniform(y).into())?;
    let c = SoftmaxConstants::new(beta, &uniform, &uniform)?;
    let gamma = 1.0 / (2.0 * c.smoothness);
    let improvement = ImprovementConfig::new(uniform.clone(), tau0(&uniform, &uniform, beta)?)?;
    let start = improve(&TabularSoftmaxPolicy::new({
        let mut rng = rng_split(seed, "init");
        (0..y).map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal)).collect()
    })?, &improvement)?;
    let config = SpgConfig {
        lr: LrRule::Const(gamma),
        batch: BatchRule::Fixed(1),
        clip: NO_CLIP,
        improvement: Some(improvement),
        mode: GradientMode::Exact,
        optimizer: Optimizer::Sgd,
    };
    let mut state = SpgState::new(start.into(), config);
    let one = ContextBatch::singleton();
    let mut rng = rng_split(seed, "train");
    let mut trace = vec![exploitability(&game, &spec, &state.policy, &one)?.value];
    for _ in 0..steps {
        spg_step(&mut state, &game, &spec, &mut rng)?;
        trace.push(exploitability(&game, &spec, &state.policy, &one)?.value);
    }
    Ok((1.0 - gamma * c.pl / 2.0, trace))
}

fn contraction(out: &mut Vec<Check>) -> Result<()> {
    let eta = 1.0;
    let bound = 1.0 / (1.0 + eta / 2.0) + 1e-3;
    out.push(Check { suite: "contraction", name: "proximal-point KL ratio on rps".into(), measured: pp_worst_ratio(eta, 60, 1e-9)?, tolerance: bound });
    let (factor, trace) = deterministic_spg_trace(0, 200)?;
    let excess = trace.windows(2).map(|w| w[1] - factor * w[0]).fold(f64::NEG_INFINITY, f64::max);
    out.push(Check { suite: "contraction", name: "deterministic self-play descent".into(), measured: excess, tolerance: 1e-12 });
    Ok(())
}
