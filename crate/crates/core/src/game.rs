//! Preference games, contexts, regularization settings and the divergences
//! used to score policies against each other.
//!
//! A preference game assigns to every context `x` and ordered action pair
//! `(y, y')` the probability `P(y ≻ y' | x)` that `y` wins the comparison.
//! All games here satisfy `P(y ≻ y' | x) + P(y' ≻ y | x) = 1`.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{argument, Error, Result};
use crate::numeric::{half_range, sigmoid};
use crate::policy::Policy;

/// Tolerance used when validating that a vector lies on the simplex.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// Tolerance for `P + Pᵀ = 1` at construction.
pub const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ActionSpace {
    count: usize,
}

impl ActionSpace {
    pub fn new(count: usize) -> Result<Self> {
        if count < 2 {
            return argument(format!("action space needs at least 2 actions, got {count}"));
        }
        Ok(Self { count })
    }

    pub fn count(&self) -> usize {
        self.count
    }

    fn check(&self, y: usize) -> Result<()> {
        if y >= self.count {
            return argument(format!("action {y} out of range for {} actions", self.count));
        }
        Ok(())
    }
}

/// A context drawn from the game's context law.
#[derive(Clone, Debug, PartialEq)]
pub enum Context {
    /// The single context of a context-free game.
    Unit,
    /// An `r × r` real matrix stored row-major.
    Matrix(Vec<f64>),
}

impl Context {
    /// Flat feature vector fed to parametric policies.
    pub fn features(&self) -> &[f64] {
        match self {
            Context::Unit => &[],
            Context::Matrix(m) => m,
        }
    }
}

/// A list of contexts together with the seed of the stream that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextBatch {
    pub contexts: Vec<Context>,
    pub seed: Option<u64>,
}

impl ContextBatch {
    /// The batch holding only the unit context of a context-free game.
    pub fn singleton() -> Self {
        Self { contexts: vec![Context::Unit], seed: None }
    }

    pub fn new(contexts: Vec<Context>, seed: Option<u64>) -> Self {
        Self { contexts, seed }
    }

    pub fn len(&self) -> usize {
        self.contexts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.contexts.is_empty()
    }

    /// Contexts to average over; an empty batch stands for the unit context.
    pub fn effective(&self) -> &[Context] {
        if self.contexts.is_empty() {
            std::slice::from_ref(&UNIT)
        } else {
            &self.contexts
        }
    }
}

static UNIT: Context = Context::Unit;

/// Context-free game given by a `Y × Y` preference matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixPreferenceGame {
    actions: ActionSpace,
    matrix: Vec<f64>,
}

impl MatrixPreferenceGame {
    /// Validates entries in `[0, 1]`, the symmetry condition and the 1/2 diagonal.
    pub fn new(actions: usize, matrix: Vec<f64>) -> Result<Self> {
        let space = ActionSpace::new(actions)?;
        if matrix.len() != actions * actions {
            return argument(format!(
                "preference matrix has {} entries, expected {}",
                matrix.len(),
                actions * actions
            ));
        }
        for y in 0..actions {
            if matrix[y * actions + y] != 0.5 {
                return argument(format!("diagonal entry ({y},{y}) must be exactly 1/2"));
            }
            for z in 0..actions {
                let p = matrix[y * actions + z];
                if !(0.0..=1.0).contains(&p) {
                    return argument(format!("entry ({y},{z}) = {p} is not a probability"));
                }
                let q = matrix[z * actions + y];
                if (p + q - 1.0).abs() > SYMMETRY_TOL {
                    return argument(format!("entries ({y},{z}) and ({z},{y}) do not sum to 1"));
                }
            }
        }
        Ok(Self { actions: space, matrix })
    }

    /// Rock-Paper-Scissors: rock beats scissors, paper beats rock, scissors beat paper,
    /// with action order (0, 1, 2) and row 0 winning against column 1.
    pub fn rock_paper_scissors() -> Self {
        Self::new(3, vec![0.5, 1.0, 0.0, 0.0, 0.5, 1.0, 1.0, 0.0, 0.5])
            .expect("RPS matrix is valid")
    }

    /// Random game with upper-triangle entries uniform on `[0, 1]`.
    pub fn random<R: Rng + ?Sized>(actions: usize, rng: &mut R) -> Result<Self> {
        let mut matrix = vec![0.5; actions * actions];
        for y in 0..actions {
            for z in (y + 1)..actions {
                let p: f64 = rng.random();
                matrix[y * actions + z] = p;
                matrix[z * actions + y] = 1.0 - p;
            }
        }
        Self::new(actions, matrix)
    }

    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    pub fn actions(&self) -> usize {
        self.actions.count()
    }
}

/// Contextual game with `P(y ≻ y' | x) = σ(A[y][y'] − A[y'][y])`, `A = U Θₓ Vᵀ`.
#[derive(Clone, Debug, PartialEq)]
pub struct LowRankContextualGame {
    actions: ActionSpace,
    rank: usize,
    /// `Y × r`, row-major.
    u: Vec<f64>,
    /// `Y × r`, row-major.
    v: Vec<f64>,
}

impl LowRankContextualGame {
    pub fn new(actions: usize, rank: usize, u: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        let space = ActionSpace::new(actions)?;
        if rank == 0 {
            return argument("rank must be positive");
        }
        if u.len() != actions * rank || v.len() != actions * rank {
            return argument(format!(
                "U and V must both have {} entries (Y = {actions}, r = {rank})",
                actions * rank
            ));
        }
        if u.iter().chain(&v).any(|x| !x.is_finite()) {
            return Err(Error::Numeric("U or V has a non-finite entry".into()));
        }
        Ok(Self { actions: space, rank, u, v })
    }

    /// U and V with i.i.d. standard normal entries.
    pub fn random<R: Rng + ?Sized>(actions: usize, rank: usize, rng: &mut R) -> Result<Self> {
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.sample(StandardNormal)).collect() };
        let u = draw(actions * rank);
        let v = draw(actions * rank);
        Self::new(actions, rank, u, v)
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn actions(&self) -> usize {
        self.actions.count()
    }

    pub fn u(&self) -> &[f64] {
        &self.u
    }

    pub fn v(&self) -> &[f64] {
        &self.v
    }

    fn theta<'a>(&self, x: &'a Context) -> Result<&'a [f64]> {
        match x {
            Context::Matrix(m) if m.len() == self.rank * self.rank => Ok(m),
            _ => argument(format!("low-rank game expects an {0}x{0} context matrix", self.rank)),
        }
    }

    /// Rows of `U Θₓ`, `Y × r` row-major.
    fn u_theta(&self, theta: &[f64]) -> Vec<f64> {
        let r = self.rank;
        let mut out = vec![0.0; self.actions() * r];
        for y in 0..self.actions() {
            let urow = &self.u[y * r..(y + 1) * r];
            for j in 0..r {
                out[y * r + j] = (0..r).map(|i| urow[i] * theta[i * r + j]).sum();
            }
        }
        out
    }

    fn score(&self, ut: &[f64], y: usize, z: usize) -> f64 {
        let r = self.rank;
        ut[y * r..(y + 1) * r].iter().zip(&self.v[z * r..(z + 1) * r]).map(|(a, b)| a * b).sum()
    }

    fn pair_from_ut(&self, ut: &[f64], y: usize, z: usize) -> f64 {
        use std::cmp::Ordering::*;
        match y.cmp(&z) {
            Equal => 0.5,
            Less => sigmoid(self.score(ut, y, z) - self.score(ut, z, y)),
            Greater => 1.0 - sigmoid(self.score(ut, z, y) - self.score(ut, y, z)),
        }
    }
}

/// Either form of preference game.
#[derive(Clone, Debug, PartialEq)]
pub enum PreferenceGame {
    Matrix(MatrixPreferenceGame),
    LowRank(LowRankContextualGame),
}

impl From<MatrixPreferenceGame> for PreferenceGame {
    fn from(g: MatrixPreferenceGame) -> Self {
        PreferenceGame::Matrix(g)
    }
}

impl From<LowRankContextualGame> for PreferenceGame {
    fn from(g: LowRankContextualGame) -> Self {
        PreferenceGame::LowRank(g)
    }
}

impl PreferenceGame {
    pub fn num_actions(&self) -> usize {
        match self {
            PreferenceGame::Matrix(g) => g.actions(),
            PreferenceGame::LowRank(g) => g.actions(),
        }
    }

    pub fn is_context_free(&self) -> bool {
        matches!(self, PreferenceGame::Matrix(_))
    }

    /// Length of [`Context::features`] for contexts of this game.
    pub fn context_dim(&self) -> usize {
        match self {
            PreferenceGame::Matrix(_) => 0,
            PreferenceGame::LowRank(g) => g.rank * g.rank,
        }
    }

    fn check_context(&self, x: &Context) -> Result<()> {
        match (self, x) {
            (PreferenceGame::Matrix(_), Context::Unit) => Ok(()),
            (PreferenceGame::Matrix(_), _) => argument("matrix games only accept the unit context"),
            (PreferenceGame::LowRank(g), x) => g.theta(x).map(|_| ()),
        }
    }

    /// Draws one context from the game's context law.
    pub fn sample_context<R: Rng + ?Sized>(&self, rng: &mut R) -> Context {
        match self {
            PreferenceGame::Matrix(_) => Context::Unit,
            PreferenceGame::LowRank(g) => {
                Context::Matrix((0..g.rank * g.rank).map(|_| rng.sample(StandardNormal)).collect())
            }
        }
    }

    /// `n` contexts from the context law; the singleton batch for context-free games.
    pub fn sample_contexts<R: Rng + ?Sized>(&self, n: usize, rng: &mut R, seed: Option<u64>) -> ContextBatch {
        if self.is_context_free() {
            return ContextBatch { contexts: vec![Context::Unit], seed };
        }
        ContextBatch::new((0..n).map(|_| self.sample_context(rng)).collect(), seed)
    }

    /// `P(y ≻ y' | x)`.
    pub fn preference_prob(&self, x: &Context, y: usize, y_prime: usize) -> Result<f64> {
        match self {
            PreferenceGame::Matrix(g) => {
                self.check_context(x)?;
                g.actions.check(y)?;
                g.actions.check(y_prime)?;
                Ok(g.matrix[y * g.actions() + y_prime])
            }
            PreferenceGame::LowRank(g) => {
                let theta = g.theta(x)?;
                g.actions.check(y)?;
                g.actions.check(y_prime)?;
                let ut = g.u_theta(theta);
                Ok(g.pair_from_ut(&ut, y, y_prime))
            }
        }
    }

    /// The full `Y × Y` matrix `P_x`, row-major.
    pub fn preference_matrix(&self, x: &Context) -> Result<Vec<f64>> {
        match self {
            PreferenceGame::Matrix(g) => {
                self.check_context(x)?;
                Ok(g.matrix.clone())
            }
            PreferenceGame::LowRank(g) => {
                let theta = g.theta(x)?;
                let ut = g.u_theta(theta);
                let n = g.actions();
                let mut out = vec![0.5; n * n];
                for y in 0..n {
                    for z in (y + 1)..n {
                        let p = g.pair_from_ut(&ut, y, z);
                        out[y * n + z] = p;
                        out[z * n + y] = 1.0 - p;
                    }
                }
                Ok(out)
            }
        }
    }
}

/// `P(q ≻ y | x)` for every action `y`: the expected loss of `y` against `q`.
pub fn payoff_against(matrix: &[f64], q: &[f64]) -> Vec<f64> {
    let n = q.len();
    (0..n).map(|y| (0..n).map(|z| q[z] * matrix[z * n + y]).sum()).collect()
}

pub(crate) fn check_simplex(p: &[f64], n: usize, what: &str) -> Result<()> {
    if p.len() != n {
        return argument(format!("{what} has length {}, expected {n}", p.len()));
    }
    if p.iter().any(|&x| !(x >= 0.0)) {
        return argument(format!("{what} has a negative or NaN entry"));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > SIMPLEX_TOL {
        return argument(format!("{what} sums to {total}, not 1"));
    }
    Ok(())
}

/// `pᵀ P_x q`, the probability that a draw from `p` beats a draw from `q`.
pub fn policy_preference(game: &PreferenceGame, x: &Context, p: &[f64], q: &[f64]) -> Result<f64> {
    let n = game.num_actions();
    check_simplex(p, n, "p")?;
    check_simplex(q, n, "q")?;
    let m = game.preference_matrix(x)?;
    Ok(bilinear(&m, p, q))
}

/// `uᵀ M v` without simplex checks; used for signed difference vectors too.
pub fn bilinear(matrix: &[f64], u: &[f64], v: &[f64]) -> f64 {
    let n = u.len();
    let mut total = 0.0;
    for y in 0..n {
        if u[y] == 0.0 {
            continue;
        }
        let row = &matrix[y * n..(y + 1) * n];
        total += u[y] * row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
    }
    total
}

/// `Σ p log(p/q)` with `0 log 0 = 0`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return argument("KL arguments have different lengths");
    }
    let mut total = 0.0;
    for (y, (&a, &b)) in p.iter().zip(q).enumerate() {
        if a <= 0.0 {
            continue;
        }
        if b <= 0.0 {
            return Err(Error::Support(format!("q({y}) = 0 where p({y}) = {a}")));
        }
        total += a * (a.ln() - b.ln());
    }
    Ok(total.max(0.0))
}

/// KL divergence from log-probabilities, `Σ exp(lp) (lp − lq)`.
pub(crate) fn kl_from_logs(log_p: &[f64], log_q: &[f64]) -> Result<f64> {
    let mut total = 0.0;
    for (y, (&a, &b)) in log_p.iter().zip(log_q).enumerate() {
        let pa = a.exp();
        if pa == 0.0 {
            continue;
        }
        if b == f64::NEG_INFINITY {
            return Err(Error::Support(format!("zero probability at action {y} in the second argument")));
        }
        total += pa * (a - b);
    }
    Ok(total.max(0.0))
}

/// `inf_c ‖v + c·1‖_∞ = (max v − min v) / 2`.
pub fn span_seminorm(v: &[f64]) -> Result<f64> {
    if v.is_empty() {
        return argument("span seminorm of an empty vector");
    }
    Ok(half_range(v))
}

/// Regularization strengths, the reference policy and the optional proximal anchor.
#[derive(Clone, Debug)]
pub struct RegularizedSpec {
    pub beta: f64,
    pub beta_target: f64,
    pub reference: Policy,
    pub anchor: Option<Policy>,
}

impl RegularizedSpec {
    /// Single-anchor spec (`β_target = 0`).
    pub fn new(beta: f64, reference: Policy) -> Result<Self> {
        Self::with_anchor(beta, 0.0, reference, None)
    }

    pub fn with_anchor(beta: f64, beta_target: f64, reference: Policy, anchor: Option<Policy>) -> Result<Self> {
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(Error::Config(format!("beta must be positive, got {beta}")));
        }
        if !(beta_target >= 0.0) || !beta_target.is_finite() {
            return Err(Error::Config(format!("beta_target must be nonnegative, got {beta_target}")));
        }
        if (beta_target > 0.0) != anchor.is_some() {
            return Err(Error::Config("an anchor is required exactly when beta_target > 0".into()));
        }
        if let Some(a) = &anchor {
            if a.num_actions() != reference.num_actions() {
                return Err(Error::Config("anchor and reference have different action counts".into()));
            }
        }
        Ok(Self { beta, beta_target, reference, anchor })
    }

    /// Proximal spec with `β_target = β/η` anchored at `anchor`.
    pub fn proximal(beta: f64, eta: f64, reference: Policy, anchor: Policy) -> Result<Self> {
        if !(eta > 0.0) {
            return Err(Error::Config(format!("eta must be positive, got {eta}")));
        }
        Self::with_anchor(beta, beta / eta, reference, Some(anchor))
    }

    /// Total regularization `λ = β + β_target`.
    pub fn lambda(&self) -> f64 {
        self.beta + self.beta_target
    }

    /// The same spec with the proximal term removed.
    pub fn without_anchor(&self) -> Self {
        Self { beta: self.beta, beta_target: 0.0, reference: self.reference.clone(), anchor: None }
    }

    /// Log-probabilities of the reference policy at `x`; fails on a zero entry.
    pub fn reference_log_probs(&self, x: &Context) -> Result<Vec<f64>> {
        full_support(self.reference.log_probs(x)?, "reference")
    }

    pub fn anchor_log_probs(&self, x: &Context) -> Result<Option<Vec<f64>>> {
        match &self.anchor {
            Some(a) if self.beta_target > 0.0 => Ok(Some(full_support(a.log_probs(x)?, "anchor")?)),
            _ => Ok(None),
        }
    }

    pub fn reference_log_probs_batch(&self, xs: &[Context]) -> Result<Vec<Vec<f64>>> {
        self.reference.log_probs_batch(xs)?.into_iter().map(|l| full_support(l, "reference")).collect()
    }

    pub fn anchor_log_probs_batch(&self, xs: &[Context]) -> Result<Option<Vec<Vec<f64>>>> {
        match &self.anchor {
            Some(a) if self.beta_target > 0.0 => {
                Ok(Some(a.log_probs_batch(xs)?.into_iter().map(|l| full_support(l, "anchor")).collect::<Result<_>>()?))
            }
            _ => Ok(None),
        }
    }

    /// Unnormalized log of the effective anchor `π_ref^{β/λ} · anchor^{β_target/λ}`.
    ///
    /// Its normalizer `Z ≤ 1`; `β KL(p‖π_ref) + β_target KL(p‖anchor)` equals
    /// `λ Σ p log(p / π̃)` with this unnormalized `π̃`.
    pub fn effective_anchor_log(&self, x: &Context) -> Result<Vec<f64>> {
        let reference = self.reference_log_probs(x)?;
        let lambda = self.lambda();
        Ok(match self.anchor_log_probs(x)? {
            None => reference,
            Some(anchor) => reference
                .iter()
                .zip(&anchor)
                .map(|(r, a)| (self.beta * r + self.beta_target * a) / lambda)
                .collect(),
        })
    }

    /// `β KL(p‖π_ref) + β_target KL(p‖anchor)` at context `x`.
    pub fn penalty(&self, x: &Context, p: &[f64]) -> Result<f64> {
        let reference = self.reference.probs(x)?;
        let mut total = self.beta * kl_divergence(p, &reference)?;
        if let (Some(anchor), true) = (&self.anchor, self.beta_target > 0.0) {
            total += self.beta_target * kl_divergence(p, &anchor.probs(x)?)?;
        }
        Ok(total)
    }
}

fn full_support(log_probs: Vec<f64>, what: &str) -> Result<Vec<f64>> {
    if let Some(y) = log_probs.iter().position(|&v| v == f64::NEG_INFINITY) {
        return Err(Error::Support(format!("{what} policy has zero probability at action {y}")));
    }
    Ok(log_probs)
}

/// Batch average of `P(π≻π'|x) − β KL(π‖π_ref) + β KL(π'‖π_ref) − β_t KL(π‖anchor) + β_t KL(π'‖anchor)`.
pub fn regularized_preference(
    game: &PreferenceGame,
    spec: &RegularizedSpec,
    p_policy: &Policy,
    q_policy: &Policy,
    contexts: &ContextBatch,
) -> Result<f64> {
    let xs = contexts.effective();
    let mut total = 0.0;
    for x in xs {
        let p = p_policy.probs(x)?;
        let q = q_policy.probs(x)?;
        let m = game.preference_matrix(x)?;
        total += bilinear(&m, &p, &q) - spec.penalty(x, &p)? + spec.penalty(x, &q)?;
    }
    Ok(total / xs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::TabularSoftmaxPolicy;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rps() -> PreferenceGame {
        MatrixPreferenceGame::rock_paper_scissors().into()
    }

    #[test]
    fn rps_entries() {
        let g = rps();
        assert_eq!(g.preference_prob(&Context::Unit, 0, 1).unwrap(), 1.0);
        assert_eq!(g.preference_prob(&Context::Unit, 2, 2).unwrap(), 0.5);
        assert!(matches!(g.preference_prob(&Context::Unit, 0, 3), Err(Error::Argument(_))));
    }

    #[test]
    fn matrix_validation_rejects_asymmetry() {
        assert!(MatrixPreferenceGame::new(2, vec![0.5, 0.7, 0.4, 0.5]).is_err());
        assert!(MatrixPreferenceGame::new(2, vec![0.5, 1.2, -0.2, 0.5]).is_err());
        assert!(MatrixPreferenceGame::new(2, vec![0.4, 0.5, 0.5, 0.6]).is_err());
        assert!(MatrixPreferenceGame::new(1, vec![0.5]).is_err());
    }

    #[test]
    fn low_rank_zero_context_is_a_tie() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g: PreferenceGame = LowRankContextualGame::random(6, 2, &mut rng).unwrap().into();
        let x = Context::Matrix(vec![0.0; 4]);
        for y in 0..6 {
            for z in 0..6 {
                assert_eq!(g.preference_prob(&x, y, z).unwrap(), 0.5);
            }
        }
        assert!(g.preference_prob(&Context::Unit, 0, 1).is_err());
    }

    #[test]
    fn low_rank_matrix_matches_pairwise_entries() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g: PreferenceGame = LowRankContextualGame::random(5, 3, &mut rng).unwrap().into();
        let x = g.sample_context(&mut rng);
        let m = g.preference_matrix(&x).unwrap();
        for y in 0..5 {
            for z in 0..5 {
                assert_eq!(m[y * 5 + z], g.preference_prob(&x, y, z).unwrap());
                assert!((m[y * 5 + z] + m[z * 5 + y] - 1.0).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn policy_preference_examples() {
        let g = rps();
        let u = [1.0 / 3.0; 3];
        assert!((policy_preference(&g, &Context::Unit, &u, &u).unwrap() - 0.5).abs() < 1e-15);
        let d0 = [1.0, 0.0, 0.0];
        let d2 = [0.0, 0.0, 1.0];
        assert_eq!(policy_preference(&g, &Context::Unit, &d0, &d2).unwrap(), 0.0);
        assert!(policy_preference(&g, &Context::Unit, &[0.5, 0.6, -0.1], &u).is_err());
        assert!(policy_preference(&g, &Context::Unit, &[0.5, 0.6, 0.1], &u).is_err());
    }

    #[test]
    fn kl_examples() {
        let u = [1.0 / 3.0; 3];
        assert_eq!(kl_divergence(&u, &u).unwrap(), 0.0);
        assert!((kl_divergence(&[1.0, 0.0], &[0.5, 0.5]).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert!(matches!(kl_divergence(&[0.5, 0.5], &[1.0, 0.0]), Err(Error::Support(_))));
        // zero mass in p contributes nothing, even against a zero in q
        assert_eq!(kl_divergence(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn span_examples() {
        assert_eq!(span_seminorm(&[2.0, 2.0, 2.0]).unwrap(), 0.0);
        assert_eq!(span_seminorm(&[1.0, 3.0]).unwrap(), 1.0);
        assert_eq!(span_seminorm(&[0.0, 1.0, 5.0]).unwrap(), 2.5);
        assert!(span_seminorm(&[]).is_err());
    }

    #[test]
    fn spec_validation() {
        let r = Policy::from(TabularSoftmaxPolicy::uniform(3));
        assert!(RegularizedSpec::new(0.0, r.clone()).is_err());
        assert!(RegularizedSpec::with_anchor(0.1, 0.2, r.clone(), None).is_err());
        assert!(RegularizedSpec::with_anchor(0.1, 0.0, r.clone(), Some(r.clone())).is_err());
        assert!(RegularizedSpec::with_anchor(0.1, 0.2, r.clone(), Some(r.clone())).is_ok());
        let zero_ref = Policy::from(TabularSoftmaxPolicy::from_probs(&[0.5, 0.5, 0.0]));
        let spec = RegularizedSpec::new(0.1, zero_ref).unwrap();
        assert!(matches!(spec.reference_log_probs(&Context::Unit), Err(Error::Support(_))));
    }

    #[test]
    fn regularized_preference_examples() {
        let g = rps();
        let reference = Policy::from(TabularSoftmaxPolicy::from_probs(&[11.0 / 18.0, 1.0 / 3.0, 1.0 / 18.0]));
        let spec = RegularizedSpec::new(0.01, reference.clone()).unwrap();
        let uniform = Policy::from(TabularSoftmaxPolicy::uniform(3));
        let batch = ContextBatch::singleton();
        let same = regularized_preference(&g, &spec, &uniform, &uniform, &batch).unwrap();
        assert!((same - 0.5).abs() < 1e-15);

        let u = [1.0 / 3.0; 3];
        let r = reference.probs(&Context::Unit).unwrap();
        let expected = policy_preference(&g, &Context::Unit, &u, &r).unwrap() - 0.01 * kl_divergence(&u, &r).unwrap();
        let got = regularized_preference(&g, &spec, &uniform, &reference, &batch).unwrap();
        assert!((got - expected).abs() < 1e-14);
        // uniform vs reference in RPS: pᵀPq = 1/2 since P(u ≻ y) = 1/2 for every y
        assert!((expected - (0.5 - 0.01 * kl_divergence(&u, &r).unwrap())).abs() < 1e-14);
    }
}
