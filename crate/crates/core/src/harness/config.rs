//! Experiment configuration: a TOML file with one table per concern, the
//! rule strings used for schedules, and the built-in presets.

use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{LowRankContextualGame, MatrixPreferenceGame, PreferenceGame};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub game: GameConfig,
    pub spec: SpecConfig,
    pub policy: PolicyConfig,
    pub algorithm: AlgorithmConfig,
    pub schedule: ScheduleConfig,
    pub run: RunConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GameConfig {
    /// Rock-Paper-Scissors.
    Rps,
    Matrix { actions: usize, matrix: Vec<f64> },
    /// Upper triangle uniform on `[0, 1]`, drawn from the seed's `game` stream.
    RandomMatrix { actions: usize },
    /// `U`, `V` standard normal, drawn from the seed's `game` stream.
    LowRank { actions: usize, rank: usize },
    /// A game definition file (see [`GameFile`]).
    File { path: String },
}

/// Contents of a game definition file.
///
/// ```toml
/// kind = "matrix"
/// actions = 3
/// matrix = [0.5, 1.0, 0.0, 0.0, 0.5, 1.0, 1.0, 0.0, 0.5]
/// ```
///
/// or `kind = "low_rank"` with `actions`, `rank` and row-major `u`, `v` (`actions × rank` each).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GameFile {
    Matrix { actions: usize, matrix: Vec<f64> },
    LowRank { actions: usize, rank: usize, u: Vec<f64>, v: Vec<f64> },
}

impl GameFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    }

    pub fn build(self) -> Result<PreferenceGame> {
        Ok(match self {
            GameFile::Matrix { actions, matrix } => MatrixPreferenceGame::new(actions, matrix)?.into(),
            GameFile::LowRank { actions, rank, u, v } => LowRankContextualGame::new(actions, rank, u, v)?.into(),
        })
    }

    pub fn from_game(game: &PreferenceGame) -> Self {
        match game {
            PreferenceGame::Matrix(g) => GameFile::Matrix { actions: g.actions(), matrix: g.matrix().to_vec() },
            PreferenceGame::LowRank(g) => {
                GameFile::LowRank { actions: g.actions(), rank: g.rank(), u: g.u().to_vec(), v: g.v().to_vec() }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ReferenceConfig {
    /// `"uniform"`.
    Named(String),
    Probs(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecConfig {
    pub beta: f64,
    /// Strength of the target term for Nash Prox; zero elsewhere.
    pub beta_target: f64,
    pub reference: ReferenceConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Tabular,
    Mlp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyInit {
    /// Start at the reference policy (tabular), or a uniform-output network (MLP).
    Reference,
    /// Random tabular logits or a fully random network.
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    pub kind: PolicyKind,
    /// Hidden widths of the MLP; ignored for tabular policies.
    pub hidden: Vec<usize>,
    pub init: PolicyInit,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Spg,
    OnlineIpo,
    PpSpg,
    NashProx,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeConfig {
    Exact,
    Stochastic,
    /// Sampled pairs with the true preference probability as the outcome.
    ExactFeedback,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmConfig {
    pub name: Algorithm,
    pub mode: ModeConfig,
    pub optimizer: OptimizerKind,
    /// Proximal weight for PP–SPG.
    pub eta: f64,
    /// Inner steps per outer step for PP–SPG.
    pub inner_length: usize,
    /// Multiplies IPO-style losses before stepping.
    pub loss_scale: f64,
    /// `"none"`, `"tau0"` or `"const:<tau>"`; tabular policies only.
    pub improvement: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    /// `"const:<a>"`, `"inv_sqrt:<a>"` (`a/sqrt(t+1)`) or `"theory"`.
    pub lr: String,
    /// `"fixed:<n>"` or `"theory:<cap>"`.
    pub batch: String,
    /// `"const:<k>"`, `"anneal:<c>"` (`1/(ct+1)`) or `"updates:<n>"` (`n/steps`).
    pub kappa: String,
    /// `"none"`, `"const:<M>"` or `"theory:<eps>"`.
    pub clip: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub steps: u64,
    pub eval_every: u64,
    /// Size of the frozen evaluation batch for contextual games.
    pub eval_contexts: usize,
    pub seeds: Vec<u64>,
    pub out: String,
}

/// A parsed `"<kind>"` or `"<kind>:<value>"` rule string.
#[derive(Clone, Debug, PartialEq)]
pub struct Rule {
    pub kind: String,
    pub value: Option<f64>,
}

impl FromStr for Rule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s.split_once(':') {
            None => Ok(Rule { kind: s.to_string(), value: None }),
            Some((k, v)) => {
                let value = v.trim().parse::<f64>().map_err(|_| Error::Config(format!("bad number in rule `{s}`")))?;
                Ok(Rule { kind: k.trim().to_string(), value: Some(value) })
            }
        }
    }
}

impl Rule {
    pub fn value(&self, key: &str) -> Result<f64> {
        self.value.ok_or_else(|| Error::Config(format!("`{key}` rule `{}` needs a value", self.kind)))
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configs serialize")
    }

    /// Checks every field; the error lists all offending keys.
    pub fn validate(&self) -> Result<()> {
        let mut bad: Vec<String> = Vec::new();
        let s = &self.spec;
        if !(s.beta > 0.0) {
            bad.push("spec.beta".into());
        }
        if !(s.beta_target >= 0.0) {
            bad.push("spec.beta_target".into());
        }
        if s.beta_target > 0.0 && self.algorithm.name != Algorithm::NashProx {
            bad.push("spec.beta_target (only Nash Prox uses a target term)".into());
        }
        if let ReferenceConfig::Named(n) = &s.reference {
            if n != "uniform" {
                bad.push("spec.reference".into());
            }
        }
        if let ReferenceConfig::Probs(p) = &s.reference {
            let total: f64 = p.iter().sum();
            if p.iter().any(|&v| !(v > 0.0)) || (total - 1.0).abs() > 1e-9 {
                bad.push("spec.reference (must be a full-support distribution)".into());
            }
        }
        match &self.game {
            GameConfig::Matrix { actions, matrix } if matrix.len() != actions * actions => bad.push("game.matrix".into()),
            GameConfig::RandomMatrix { actions } | GameConfig::LowRank { actions, .. } if *actions < 2 => {
                bad.push("game.actions".into())
            }
            GameConfig::LowRank { rank: 0, .. } => bad.push("game.rank".into()),
            _ => {}
        }
        let contextual = matches!(self.game, GameConfig::LowRank { .. });
        if self.policy.kind == PolicyKind::Mlp && self.policy.hidden.iter().any(|&h| h == 0) {
            bad.push("policy.hidden".into());
        }
        if self.policy.kind == PolicyKind::Mlp && !contextual && !matches!(self.game, GameConfig::File { .. }) {
            bad.push("policy.kind (MLP policies need a contextual game)".into());
        }
        let a = &self.algorithm;
        if a.name == Algorithm::PpSpg && !(a.eta > 0.0) {
            bad.push("algorithm.eta".into());
        }
        if a.name == Algorithm::PpSpg && a.inner_length == 0 {
            bad.push("algorithm.inner_length".into());
        }
        if !(a.loss_scale > 0.0) {
            bad.push("algorithm.loss_scale".into());
        }
        let imp = a.improvement.parse::<Rule>();
        match imp.as_ref().map(|r| (r.kind.as_str(), r.value)) {
            Ok(("none", None)) | Ok(("tau0", None)) => {}
            Ok(("const", Some(t))) if t > 0.0 && t <= 1.0 => {}
            _ => bad.push("algorithm.improvement".into()),
        }
        if !matches!(imp.as_ref().map(|r| r.kind.as_str()), Ok("none")) && self.policy.kind == PolicyKind::Mlp {
            bad.push("algorithm.improvement (tabular policies only)".into());
        }
        let sc = &self.schedule;
        match sc.lr.parse::<Rule>().map(|r| (r.kind, r.value)) {
            Ok((k, Some(v))) if (k == "const" || k == "inv_sqrt") && v > 0.0 => {}
            Ok((k, None)) if k == "theory" => {}
            _ => bad.push("schedule.lr".into()),
        }
        match sc.batch.parse::<Rule>().map(|r| (r.kind, r.value)) {
            Ok((k, Some(v))) if (k == "fixed" || k == "theory") && v >= 1.0 && v.fract() == 0.0 => {}
            _ => bad.push("schedule.batch".into()),
        }
        match sc.kappa.parse::<Rule>().map(|r| (r.kind, r.value)) {
            Ok((k, Some(v))) if k == "const" && (0.0..=1.0).contains(&v) => {}
            Ok((k, Some(v))) if k == "anneal" && v >= 0.0 => {}
            Ok((k, Some(v))) if k == "updates" && v >= 0.0 => {}
            _ => bad.push("schedule.kappa".into()),
        }
        match sc.clip.parse::<Rule>().map(|r| (r.kind, r.value)) {
            Ok((k, None)) if k == "none" => {}
            Ok((k, Some(v))) if (k == "const" || k == "theory") && v > 0.0 => {}
            _ => bad.push("schedule.clip".into()),
        }
        let uses_theory = sc.lr == "theory" || sc.batch.starts_with("theory") || sc.clip.starts_with("theory") || a.improvement == "tau0";
        if uses_theory && (self.policy.kind != PolicyKind::Tabular || contextual) {
            bad.push("schedule (theory rules need a tabular policy on a context-free game)".into());
        }
        let r = &self.run;
        if r.eval_every == 0 {
            bad.push("run.eval_every".into());
        }
        if r.eval_contexts == 0 {
            bad.push("run.eval_contexts".into());
        }
        if r.seeds.is_empty() {
            bad.push("run.seeds".into());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid keys: {}", bad.join(", "))))
        }
    }
}

const RPS_REFERENCE: [f64; 3] = [11.0 / 18.0, 1.0 / 3.0, 1.0 / 18.0];

fn rps_base(name: &str, algorithm: Algorithm, mode: ModeConfig, lr: &str) -> ExperimentConfig {
    ExperimentConfig {
        name: name.to_string(),
        game: GameConfig::Rps,
        spec: SpecConfig { beta: 0.01, beta_target: 0.0, reference: ReferenceConfig::Probs(RPS_REFERENCE.to_vec()) },
        policy: PolicyConfig { kind: PolicyKind::Tabular, hidden: vec![], init: PolicyInit::Reference },
        algorithm: AlgorithmConfig {
            name: algorithm,
            mode,
            optimizer: OptimizerKind::Sgd,
            eta: 1.0,
            inner_length: 100,
            loss_scale: 1.0,
            improvement: "none".into(),
        },
        schedule: ScheduleConfig { lr: lr.into(), batch: "fixed:16".into(), kappa: "updates:10".into(), clip: "none".into() },
        run: RunConfig { steps: 200_000, eval_every: 2000, eval_contexts: 1, seeds: vec![0, 1, 2], out: format!("runs/{name}") },
    }
}

/// IPO-style losses are multiplied by the total regularization, so every
/// update is `4·lr` times the self-play gradient estimate.
fn rps_ipo(name: &str, algorithm: Algorithm, mode: ModeConfig, lr: &str) -> ExperimentConfig {
    let mut c = rps_base(name, algorithm, mode, lr);
    if algorithm == Algorithm::NashProx {
        c.spec.beta_target = 0.1;
    }
    c.algorithm.loss_scale = c.spec.beta + c.spec.beta_target;
    c
}

/// Names accepted by [`preset`].
pub const PRESETS: [&str; 6] = [
    "rps-exact-spg",
    "rps-stochastic-spg",
    "rps-exact-nashprox",
    "rps-stochastic-nashprox",
    "rps-pp-spg",
    "lowrank-nashprox",
];

pub fn preset(name: &str) -> Option<ExperimentConfig> {
    Some(match name {
        "rps-exact-spg" => rps_ipo(name, Algorithm::OnlineIpo, ModeConfig::Exact, "inv_sqrt:1.0"),
        "rps-stochastic-spg" => rps_ipo(name, Algorithm::OnlineIpo, ModeConfig::Stochastic, "inv_sqrt:0.2"),
        "rps-exact-nashprox" => rps_ipo(name, Algorithm::NashProx, ModeConfig::Exact, "inv_sqrt:1.0"),
        "rps-stochastic-nashprox" => rps_ipo(name, Algorithm::NashProx, ModeConfig::Stochastic, "inv_sqrt:0.2"),
        "rps-pp-spg" => rps_base(name, Algorithm::PpSpg, ModeConfig::Exact, "inv_sqrt:1.0"),
        "lowrank-nashprox" => ExperimentConfig {
            name: name.to_string(),
            game: GameConfig::LowRank { actions: 100, rank: 2 },
            spec: SpecConfig { beta: 0.01, beta_target: 0.1, reference: ReferenceConfig::Named("uniform".into()) },
            policy: PolicyConfig { kind: PolicyKind::Mlp, hidden: vec![128, 128], init: PolicyInit::Reference },
            algorithm: AlgorithmConfig {
                name: Algorithm::NashProx,
                mode: ModeConfig::Stochastic,
                optimizer: OptimizerKind::Adam,
                eta: 1.0,
                inner_length: 1,
                loss_scale: 1.0,
                improvement: "none".into(),
            },
            schedule: ScheduleConfig {
                lr: "const:3e-4".into(),
                batch: "fixed:128".into(),
                kappa: "anneal:0.3".into(),
                clip: "none".into(),
            },
            run: RunConfig { steps: 2000, eval_every: 100, eval_contexts: 512, seeds: (0..25).collect(), out: format!("runs/{name}") },
        },
        _ => return None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_round_trip() {
        for name in PRESETS {
            let cfg = preset(name).unwrap();
            cfg.validate().unwrap();
            let back = ExperimentConfig::parse(&cfg.to_toml()).unwrap();
            assert_eq!(back, cfg, "{name}");
        }
        assert!(preset("nope").is_none());
    }

    #[test]
    fn validation_lists_offending_keys() {
        let mut cfg = preset("rps-exact-spg").unwrap();
        cfg.spec.beta = 0.0;
        cfg.schedule.lr = "warp:3".into();
        cfg.run.seeds.clear();
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("spec.beta") && msg.contains("schedule.lr") && msg.contains("run.seeds"), "{msg}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut text = preset("rps-exact-spg").unwrap().to_toml();
        text = text.replace("[run]", "[run]\ncolour = 3");
        assert!(matches!(ExperimentConfig::parse(&text), Err(Error::Config(_))));
    }

    #[test]
    fn rules_parse() {
        assert_eq!("inv_sqrt:0.2".parse::<Rule>().unwrap(), Rule { kind: "inv_sqrt".into(), value: Some(0.2) });
        assert_eq!("theory".parse::<Rule>().unwrap().value, None);
        assert!("const:x".parse::<Rule>().is_err());
    }

    #[test]
    fn game_file_round_trip() {
        let g: PreferenceGame = MatrixPreferenceGame::rock_paper_scissors().into();
        let text = toml::to_string(&GameFile::from_game(&g)).unwrap();
        let back: GameFile = toml::from_str(&text).unwrap();
        assert_eq!(back.build().unwrap(), g);
    }
}
