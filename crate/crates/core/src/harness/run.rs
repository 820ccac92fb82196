//! Run orchestration: builds the game, policies and solver for each seed,
//! evaluates exploitability on a frozen batch and persists CSV records.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::config::{
    Algorithm, ExperimentConfig, GameConfig, GameFile, ModeConfig, OptimizerKind, PolicyInit, PolicyKind, ReferenceConfig, Rule,
};
use super::rng::rng_split;
use crate::error::{Error, Result};
use crate::estimator::{theory_clip, Feedback, NO_CLIP};
use crate::game::{kl_divergence, ContextBatch, LowRankContextualGame, MatrixPreferenceGame, PreferenceGame, RegularizedSpec};
use crate::oracle::exploitability;
use crate::policy::{tau0, ImprovementConfig, MlpPolicy, Policy, TabularSoftmaxPolicy};
use crate::solver::theory::SoftmaxConstants;
use crate::solver::{
    nash_prox_step, spg_step, BatchRule, GradientMode, KappaRule, LrRule, NashProxConfig, NashProxState, Optimizer,
    PpSpgState, SpgConfig, SpgState, StepMetrics,
};

/// CSV header of per-seed records.
pub const CSV_COLUMNS: [&str; 9] =
    ["step", "exploitability", "kl_to_ref", "grad_norm", "clipped_fraction", "kappa", "lr", "batch_size", "wall_ms"];

/// CSV header of the across-seed aggregate.
pub const AGGREGATE_COLUMNS: [&str; 6] =
    ["step", "seeds", "exploitability_mean", "exploitability_stderr", "kl_to_ref_mean", "kl_to_ref_stderr"];

#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub step: u64,
    pub exploitability: f64,
    pub kl_to_ref: f64,
    pub grad_norm: f64,
    pub clipped_fraction: f64,
    pub kappa: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub wall_ms: u64,
}

impl RunRecord {
    /// Equality ignoring wall-clock time.
    pub fn same_values(&self, other: &Self) -> bool {
        RunRecord { wall_ms: 0, ..self.clone() } == RunRecord { wall_ms: 0, ..other.clone() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeedRun {
    pub seed: u64,
    pub records: Vec<RunRecord>,
    /// Reason the solver stopped early, if it did.
    pub abort: Option<String>,
}

pub fn build_game(cfg: &ExperimentConfig, seed: u64) -> Result<PreferenceGame> {
    let mut rng = rng_split(seed, "game");
    Ok(match &cfg.game {
        GameConfig::Rps => MatrixPreferenceGame::rock_paper_scissors().into(),
        GameConfig::Matrix { actions, matrix } => MatrixPreferenceGame::new(*actions, matrix.clone())?.into(),
        GameConfig::RandomMatrix { actions } => MatrixPreferenceGame::random(*actions, &mut rng)?.into(),
        GameConfig::LowRank { actions, rank } => LowRankContextualGame::random(*actions, *rank, &mut rng)?.into(),
        GameConfig::File { path } => GameFile::load(Path::new(path))?.build()?,
    })
}

/// The reference policy; context-independent, so a logit table serves every game.
pub fn build_reference(cfg: &ExperimentConfig, actions: usize) -> Result<Policy> {
    match &cfg.spec.reference {
        ReferenceConfig::Named(n) if n == "uniform" => Ok(TabularSoftmaxPolicy::uniform(actions).into()),
        ReferenceConfig::Named(n) => Err(Error::Config(format!("unknown reference `{n}`"))),
        ReferenceConfig::Probs(p) if p.len() == actions => Ok(TabularSoftmaxPolicy::from_probs(p).into()),
        ReferenceConfig::Probs(p) => Err(Error::Config(format!("reference has {} entries for {actions} actions", p.len()))),
    }
}

pub fn build_policy<R: Rng + ?Sized>(cfg: &ExperimentConfig, game: &PreferenceGame, reference: &Policy, rng: &mut R) -> Result<Policy> {
    let y = game.num_actions();
    match (cfg.policy.kind, cfg.policy.init) {
        (PolicyKind::Tabular, PolicyInit::Reference) => Ok(reference.clone()),
        (PolicyKind::Tabular, PolicyInit::Random) => {
            Ok(TabularSoftmaxPolicy::new((0..y).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())?.into())
        }
        (PolicyKind::Mlp, init) => {
            if game.context_dim() == 0 {
                return Err(Error::Config("MLP policies need a contextual game".into()));
            }
            let mut dims = vec![game.context_dim()];
            dims.extend(&cfg.policy.hidden);
            dims.push(y);
            Ok(match init {
                PolicyInit::Reference => MlpPolicy::glorot_uniform_output(dims, rng)?,
                PolicyInit::Random => MlpPolicy::glorot(dims, rng)?,
            }
            .into())
        }
    }
}

fn total_regularization(cfg: &ExperimentConfig) -> f64 {
    let b = cfg.spec.beta;
    match cfg.algorithm.name {
        Algorithm::PpSpg => b * (1.0 + 1.0 / cfg.algorithm.eta),
        Algorithm::NashProx => b + cfg.spec.beta_target,
        _ => b,
    }
}

/// Constants of the softmax parametrization at the start of training, anchored at the reference.
fn theory_constants(cfg: &ExperimentConfig, reference: &[f64]) -> Result<SoftmaxConstants> {
    SoftmaxConstants::new(total_regularization(cfg), reference, reference)
}

/// Solver rules with theory placeholders resolved against the game.
pub struct ResolvedSchedule {
    pub lr: LrRule,
    pub batch: BatchRule,
    pub kappa: KappaRule,
    pub clip: f64,
    pub improvement: Option<ImprovementConfig>,
}

pub fn resolve_schedule(cfg: &ExperimentConfig, reference: &Policy, game: &PreferenceGame) -> Result<ResolvedSchedule> {
    let sc = &cfg.schedule;
    let ref_probs = || reference.probs(&crate::game::Context::Unit);
    let lambda = total_regularization(cfg);
    let lr_rule: Rule = sc.lr.parse()?;
    let batch_rule: Rule = sc.batch.parse()?;
    let theory = |_: ()| -> Result<SoftmaxConstants> {
        if !game.is_context_free() {
            return Err(Error::Config("theory rules need a context-free game".into()));
        }
        theory_constants(cfg, &ref_probs()?)
    };
    let lr = match lr_rule.kind.as_str() {
        "const" => LrRule::Const(lr_rule.value("schedule.lr")?),
        "inv_sqrt" => LrRule::InvSqrt(lr_rule.value("schedule.lr")?),
        "theory" => {
            let c = theory(())?;
            LrRule::Schedule { kappa: c.condition(), m: c.pl }
        }
        other => return Err(Error::Config(format!("unknown lr rule `{other}`"))),
    };
    let batch = match batch_rule.kind.as_str() {
        "fixed" => BatchRule::Fixed(batch_rule.value("schedule.batch")? as usize),
        "theory" => {
            let c = theory(())?;
            BatchRule::Schedule { kappa: c.condition(), m: c.pl, cap: batch_rule.value("schedule.batch")? as usize }
        }
        other => return Err(Error::Config(format!("unknown batch rule `{other}`"))),
    };
    let kappa_rule: Rule = sc.kappa.parse()?;
    let kappa = match kappa_rule.kind.as_str() {
        "const" => KappaRule::Const(kappa_rule.value("schedule.kappa")?),
        "anneal" => KappaRule::Anneal(kappa_rule.value("schedule.kappa")?),
        "updates" => KappaRule::Const((kappa_rule.value("schedule.kappa")? / cfg.run.steps.max(1) as f64).min(1.0)),
        other => return Err(Error::Config(format!("unknown kappa rule `{other}`"))),
    };
    let clip_rule: Rule = sc.clip.parse()?;
    let clip = match clip_rule.kind.as_str() {
        "none" => NO_CLIP,
        "const" => clip_rule.value("schedule.clip")?,
        "theory" => {
            let p = ref_probs()?;
            let min = p.iter().copied().fold(f64::INFINITY, f64::min);
            theory_clip(lambda, min, clip_rule.value("schedule.clip")?)?
        }
        other => return Err(Error::Config(format!("unknown clip rule `{other}`"))),
    };
    let imp: Rule = cfg.algorithm.improvement.parse()?;
    let improvement = match imp.kind.as_str() {
        "none" => None,
        "tau0" => {
            let p = ref_probs()?;
            Some(ImprovementConfig::new(p.clone(), tau0(&p, &p, lambda)?)?)
        }
        "const" => Some(ImprovementConfig::new(ref_probs()?, imp.value("algorithm.improvement")?)?),
        other => return Err(Error::Config(format!("unknown improvement `{other}`"))),
    };
    Ok(ResolvedSchedule { lr, batch, kappa, clip, improvement })
}

enum Solver {
    Spg(SpgState),
    Pp(PpSpgState),
    NashProx(NashProxState),
}

impl Solver {
    fn policy(&self) -> &Policy {
        match self {
            Solver::Spg(s) => &s.policy,
            Solver::Pp(s) => s.policy(),
            Solver::NashProx(s) => &s.policy,
        }
    }

    fn step(&mut self, game: &PreferenceGame, spec: &RegularizedSpec, rng: &mut ChaCha8Rng) -> Result<StepMetrics> {
        match self {
            Solver::Spg(s) => spg_step(s, game, spec, rng),
            Solver::Pp(s) => s.step(game, spec, rng),
            Solver::NashProx(s) => nash_prox_step(s, game, spec, rng),
        }
    }
}

fn build_solver(cfg: &ExperimentConfig, policy: Policy, sched: ResolvedSchedule) -> Result<Solver> {
    let a = &cfg.algorithm;
    let mode = match a.mode {
        ModeConfig::Exact => GradientMode::Exact,
        ModeConfig::Stochastic => GradientMode::Stochastic(Feedback::Bernoulli),
        ModeConfig::ExactFeedback => GradientMode::Stochastic(Feedback::Exact),
    };
    let optimizer = match a.optimizer {
        OptimizerKind::Sgd => Optimizer::Sgd,
        OptimizerKind::Adam => Optimizer::adam(),
    };
    let spg = SpgConfig { lr: sched.lr.clone(), batch: sched.batch.clone(), clip: sched.clip, improvement: sched.improvement, mode, optimizer: optimizer.clone() };
    Ok(match a.name {
        Algorithm::Spg => Solver::Spg(SpgState::new(policy, spg)),
        Algorithm::PpSpg => Solver::Pp(PpSpgState::new(policy, a.eta, vec![a.inner_length], spg)?),
        Algorithm::NashProx | Algorithm::OnlineIpo => {
            let online_ipo = a.name == Algorithm::OnlineIpo;
            let config = NashProxConfig {
                lr: sched.lr,
                batch: sched.batch,
                kappa: if online_ipo { KappaRule::Const(0.0) } else { sched.kappa },
                beta_target: if online_ipo { 0.0 } else { cfg.spec.beta_target },
                mode,
                loss_scale: a.loss_scale,
                optimizer,
            };
            Solver::NashProx(NashProxState::new(policy, config)?)
        }
    })
}

fn evaluate(game: &PreferenceGame, spec: &RegularizedSpec, policy: &Policy, batch: &ContextBatch) -> Result<(f64, f64)> {
    let gap = exploitability(game, spec, policy, batch)?.value;
    let xs = batch.effective();
    let mut kl = 0.0;
    for x in xs {
        kl += kl_divergence(&policy.probs(x)?, &spec.reference.probs(x)?)?;
    }
    Ok((gap, kl / xs.len() as f64))
}

/// Runs one seed. Solver failures end the run early with an abort reason;
/// configuration errors are returned as errors.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<SeedRun> {
    let start = Instant::now();
    let game = build_game(cfg, seed)?;
    let reference = build_reference(cfg, game.num_actions())?;
    let spec = RegularizedSpec::new(cfg.spec.beta, reference.clone())?;
    let sched = resolve_schedule(cfg, &reference, &game)?;
    let mut eval_rng = rng_split(seed, "eval");
    let eval = game.sample_contexts(cfg.run.eval_contexts, &mut eval_rng, Some(seed));
    let policy = build_policy(cfg, &game, &reference, &mut rng_split(seed, "init"))?;
    let mut solver = build_solver(cfg, policy, sched)?;
    let mut train = rng_split(seed, "train");

    let elapsed = |s: &Instant| s.elapsed().as_millis() as u64;
    let (gap, kl) = evaluate(&game, &spec, solver.policy(), &eval)?;
    let mut records = vec![RunRecord {
        step: 0,
        exploitability: gap,
        kl_to_ref: kl,
        grad_norm: 0.0,
        clipped_fraction: 0.0,
        kappa: 0.0,
        lr: 0.0,
        batch_size: 0,
        wall_ms: elapsed(&start),
    }];
    let mut abort = None;
    for t in 1..=cfg.run.steps {
        let m = match solver.step(&game, &spec, &mut train) {
            Ok(m) => m,
            Err(e @ (Error::Numeric(_) | Error::Support(_))) => {
                abort = Some(format!("step {t}: {e}"));
                break;
            }
            Err(e) => return Err(e),
        };
        if t % cfg.run.eval_every == 0 || t == cfg.run.steps {
            let (gap, kl) = match evaluate(&game, &spec, solver.policy(), &eval) {
                Ok(v) => v,
                Err(e) => {
                    abort = Some(format!("step {t}: {e}"));
                    break;
                }
            };
            records.push(RunRecord {
                step: t,
                exploitability: gap,
                kl_to_ref: kl,
                grad_norm: m.grad_norm,
                clipped_fraction: m.clipped_fraction,
                kappa: m.kappa,
                lr: m.lr,
                batch_size: m.batch_size,
                wall_ms: elapsed(&start),
            });
        }
    }
    Ok(SeedRun { seed, records, abort })
}

/// Runs every configured seed concurrently; results keep the configured seed order.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<SeedRun>> {
    cfg.validate()?;
    cfg.run.seeds.par_iter().map(|&s| run_seed(cfg, s)).collect()
}

pub fn records_to_csv(run: &SeedRun) -> String {
    let mut s = CSV_COLUMNS.join(",");
    s.push('\n');
    for r in &run.records {
        writeln!(
            s,
            "{},{:e},{:e},{:e},{:e},{:e},{:e},{},{}",
            r.step, r.exploitability, r.kl_to_ref, r.grad_norm, r.clipped_fraction, r.kappa, r.lr, r.batch_size, r.wall_ms
        )
        .unwrap();
    }
    if let Some(reason) = &run.abort {
        writeln!(s, "#abort,{}", reason.replace('\n', " ")).unwrap();
    }
    s
}

/// Parses a per-seed CSV back into records and the abort reason.
pub fn parse_records(text: &str) -> Result<(Vec<RunRecord>, Option<String>)> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Parse("empty CSV".into()))?;
    if header != CSV_COLUMNS.join(",") {
        return Err(Error::Parse(format!("unexpected header `{header}`")));
    }
    let mut records = Vec::new();
    let mut abort = None;
    for line in lines {
        if let Some(reason) = line.strip_prefix("#abort,") {
            abort = Some(reason.to_string());
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != CSV_COLUMNS.len() {
            return Err(Error::Parse(format!("row `{line}` has {} fields", f.len())));
        }
        let num = |i: usize| f[i].parse::<f64>().map_err(|_| Error::Parse(format!("bad number `{}`", f[i])));
        let int = |i: usize| f[i].parse::<u64>().map_err(|_| Error::Parse(format!("bad integer `{}`", f[i])));
        records.push(RunRecord {
            step: int(0)?,
            exploitability: num(1)?,
            kl_to_ref: num(2)?,
            grad_norm: num(3)?,
            clipped_fraction: num(4)?,
            kappa: num(5)?,
            lr: num(6)?,
            batch_size: int(7)? as usize,
            wall_ms: int(8)?,
        });
    }
    Ok((records, abort))
}

fn mean_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Per-step mean and standard error across the seeds that reached that step.
pub fn aggregate(runs: &[SeedRun]) -> Vec<(u64, usize, f64, f64, f64, f64)> {
    let mut steps: Vec<u64> = runs.iter().flat_map(|r| r.records.iter().map(|x| x.step)).collect();
    steps.sort_unstable();
    steps.dedup();
    steps
        .into_iter()
        .map(|step| {
            let rows: Vec<&RunRecord> = runs.iter().filter_map(|r| r.records.iter().find(|x| x.step == step)).collect();
            let gaps: Vec<f64> = rows.iter().map(|r| r.exploitability).collect();
            let kls: Vec<f64> = rows.iter().map(|r| r.kl_to_ref).collect();
            let (gm, gs) = mean_stderr(&gaps);
            let (km, ks) = mean_stderr(&kls);
            (step, rows.len(), gm, gs, km, ks)
        })
        .collect()
}

pub fn aggregate_to_csv(runs: &[SeedRun]) -> String {
    let mut s = AGGREGATE_COLUMNS.join(",");
    s.push('\n');
    for (step, n, gm, gs, km, ks) in aggregate(runs) {
        writeln!(s, "{step},{n},{gm:e},{gs:e},{km:e},{ks:e}").unwrap();
    }
    s
}

/// Writes `config.toml`, one `seed_<N>.csv` per seed and `aggregate.csv` into `dir`.
pub fn write_outputs(cfg: &ExperimentConfig, runs: &[SeedRun], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("config.toml"), cfg.to_toml())?;
    for run in runs {
        std::fs::write(dir.join(format!("seed_{}.csv", run.seed)), records_to_csv(run))?;
    }
    std::fs::write(dir.join("aggregate.csv"), aggregate_to_csv(runs))?;
    Ok(())
}
