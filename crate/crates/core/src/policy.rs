//! Softmax policies over a finite action set: a context-free logit table and a
//! rectifier MLP over context features, plus the ratio-flooring improvement map.

use std::fmt::Write as _;

use rand::Rng;

use crate::error::{argument, Error, Result};
use crate::game::{check_simplex, Context};
use crate::numeric::{log_softmax, softmax};

/// Context-free softmax policy, `π(y) ∝ exp(logits[y])`.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularSoftmaxPolicy {
    logits: Vec<f64>,
}

impl TabularSoftmaxPolicy {
    pub fn new(logits: Vec<f64>) -> Result<Self> {
        if logits.len() < 2 {
            return argument("a policy needs at least 2 actions");
        }
        Ok(Self { logits })
    }

    pub fn uniform(actions: usize) -> Self {
        Self { logits: vec![0.0; actions] }
    }

    /// Logits equal to `log p`; zero entries become `-inf`.
    pub fn from_probs(p: &[f64]) -> Self {
        Self { logits: p.iter().map(|v| v.ln()).collect() }
    }

    pub fn from_log_probs(log_p: Vec<f64>) -> Self {
        Self { logits: log_p }
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn probs(&self) -> Vec<f64> {
        softmax(&self.logits)
    }

    pub fn log_probs(&self) -> Vec<f64> {
        log_softmax(&self.logits)
    }
}

/// Rectifier network mapping context features to action logits.
///
/// Parameters are flattened layer by layer; each layer stores its weight
/// matrix (`out × in`, row-major) followed by its bias vector.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpPolicy {
    dims: Vec<usize>,
    params: Vec<f64>,
}

fn param_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
}

impl MlpPolicy {
    /// All-zero network (uniform policy at every context).
    pub fn zeros(dims: Vec<usize>) -> Result<Self> {
        if dims.len() < 2 || dims.iter().any(|&d| d == 0) {
            return argument(format!("invalid layer dims {dims:?}"));
        }
        if *dims.last().unwrap() < 2 {
            return argument("output layer needs at least 2 actions");
        }
        let n = param_count(&dims);
        Ok(Self { dims, params: vec![0.0; n] })
    }

    /// Weights uniform in `[−a, a]`, `a = sqrt(6 / (fan_in + fan_out))`; zero biases.
    pub fn glorot<R: Rng + ?Sized>(dims: Vec<usize>, rng: &mut R) -> Result<Self> {
        let mut policy = Self::zeros(dims)?;
        let mut offset = 0;
        for w in policy.dims.clone().windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for p in &mut policy.params[offset..offset + fan_in * fan_out] {
                *p = rng.random_range(-a..=a);
            }
            offset += fan_in * fan_out + fan_out;
        }
        Ok(policy)
    }

    /// Glorot hidden layers with a zeroed output layer, so the policy starts uniform.
    pub fn glorot_uniform_output<R: Rng + ?Sized>(dims: Vec<usize>, rng: &mut R) -> Result<Self> {
        let mut policy = Self::glorot(dims, rng)?;
        let last = policy.dims.len() - 1;
        let n_last = policy.dims[last - 1] * policy.dims[last] + policy.dims[last];
        let total = policy.params.len();
        policy.params[total - n_last..].iter_mut().for_each(|p| *p = 0.0);
        Ok(policy)
    }

    pub fn from_params(dims: Vec<usize>, params: Vec<f64>) -> Result<Self> {
        let mut policy = Self::zeros(dims)?;
        if params.len() != policy.params.len() {
            return argument(format!(
                "expected {} parameters, got {}",
                policy.params.len(),
                params.len()
            ));
        }
        policy.params = params;
        Ok(policy)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    fn offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.dims.len() - 1);
        let mut offset = 0;
        for w in self.dims.windows(2) {
            offsets.push(offset);
            offset += w[0] * w[1] + w[1];
        }
        offsets
    }

    /// Forward pass over `n` stacked inputs (`n × dims[0]`, row-major), keeping
    /// every layer's pre-activations (`n × width`); the last entry holds the logits.
    fn forward(&self, inputs: &[f64], n: usize) -> Result<Vec<Vec<f64>>> {
        if inputs.len() != n * self.dims[0] {
            return argument(format!("MLP expects {} input features per row, got {} values for {n} rows", self.dims[0], inputs.len()));
        }
        let layers = self.dims.len() - 1;
        let mut pre: Vec<Vec<f64>> = Vec::with_capacity(layers);
        for (l, off) in self.offsets().into_iter().enumerate() {
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let w = &self.params[off..off + n_in * n_out];
            let b = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
            let relu;
            let act: &[f64] = if l == 0 {
                inputs
            } else {
                relu = pre[l - 1].iter().map(|&v| v.max(0.0)).collect::<Vec<_>>();
                &relu
            };
            let mut z: Vec<f64> = Vec::with_capacity(n * n_out);
            for _ in 0..n {
                z.extend_from_slice(b);
            }
            // z (n × out) += act (n × in) · wᵀ (in × out)
            unsafe {
                matrixmultiply::dgemm(
                    n, n_in, n_out, 1.0,
                    act.as_ptr(), n_in as isize, 1,
                    w.as_ptr(), 1, n_in as isize,
                    1.0, z.as_mut_ptr(), n_out as isize, 1,
                );
            }
            pre.push(z);
        }
        Ok(pre)
    }

    /// Adds `scale · Σ_rows (∂logits/∂θ)ᵀ dlogits` into `out`, `dlogits` being `n × actions`.
    fn backward(&self, inputs: &[f64], n: usize, pre: &[Vec<f64>], dlogits: &[f64], out: &mut [f64], scale: f64) {
        let offsets = self.offsets();
        let mut delta: Vec<f64> = dlogits.iter().map(|d| d * scale).collect();
        for l in (0..offsets.len()).rev() {
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let off = offsets[l];
            let relu;
            let act: &[f64] = if l == 0 {
                inputs
            } else {
                relu = pre[l - 1].iter().map(|&v| v.max(0.0)).collect::<Vec<_>>();
                &relu
            };
            // dW (out × in) += deltaᵀ (out × n) · act (n × in)
            unsafe {
                matrixmultiply::dgemm(
                    n_out, n, n_in, 1.0,
                    delta.as_ptr(), 1, n_out as isize,
                    act.as_ptr(), n_in as isize, 1,
                    1.0, out[off..].as_mut_ptr(), n_in as isize, 1,
                );
            }
            let db = &mut out[off + n_in * n_out..off + n_in * n_out + n_out];
            for row in delta.chunks_exact(n_out) {
                for (g, d) in db.iter_mut().zip(row) {
                    *g += d;
                }
            }
            if l > 0 {
                let w = &self.params[off..off + n_in * n_out];
                let mut next = vec![0.0; n * n_in];
                // next (n × in) = delta (n × out) · w (out × in)
                unsafe {
                    matrixmultiply::dgemm(
                        n, n_out, n_in, 1.0,
                        delta.as_ptr(), n_out as isize, 1,
                        w.as_ptr(), n_in as isize, 1,
                        0.0, next.as_mut_ptr(), n_in as isize, 1,
                    );
                }
                for (nx, &z) in next.iter_mut().zip(&pre[l - 1]) {
                    if z <= 0.0 {
                        *nx = 0.0;
                    }
                }
                delta = next;
            }
        }
    }
}

fn checked_log_softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(Error::Numeric("non-finite logits".into()));
    }
    Ok(log_softmax(logits))
}

fn stacked_features(xs: &[Context]) -> Vec<f64> {
    xs.iter().flat_map(|x| x.features().iter().copied()).collect()
}

/// Either policy family, addressed through one flattened parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub enum Policy {
    Tabular(TabularSoftmaxPolicy),
    Mlp(MlpPolicy),
}

impl From<TabularSoftmaxPolicy> for Policy {
    fn from(p: TabularSoftmaxPolicy) -> Self {
        Policy::Tabular(p)
    }
}

impl From<MlpPolicy> for Policy {
    fn from(p: MlpPolicy) -> Self {
        Policy::Mlp(p)
    }
}

impl Policy {
    pub fn num_actions(&self) -> usize {
        match self {
            Policy::Tabular(p) => p.logits.len(),
            Policy::Mlp(p) => *p.dims.last().unwrap(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.params().len()
    }

    pub fn params(&self) -> &[f64] {
        match self {
            Policy::Tabular(p) => &p.logits,
            Policy::Mlp(p) => &p.params,
        }
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        match self {
            Policy::Tabular(p) => &mut p.logits,
            Policy::Mlp(p) => &mut p.params,
        }
    }

    pub fn check_finite(&self) -> Result<()> {
        if let Some(i) = self.params().iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("parameter {i} is {}", self.params()[i])));
        }
        Ok(())
    }

    /// Raw logits at `x`. Tabular policies ignore the context.
    pub fn logits(&self, x: &Context) -> Result<Vec<f64>> {
        Ok(self.logits_batch(std::slice::from_ref(x))?.pop().unwrap())
    }

    /// Raw logits at each context, in one pass for MLPs.
    pub fn logits_batch(&self, xs: &[Context]) -> Result<Vec<Vec<f64>>> {
        match self {
            Policy::Tabular(p) => Ok(vec![p.logits.clone(); xs.len()]),
            Policy::Mlp(p) => {
                self.check_finite()?;
                if xs.is_empty() {
                    return Ok(Vec::new());
                }
                let y = self.num_actions();
                let z = p.forward(&stacked_features(xs), xs.len())?.pop().unwrap();
                Ok(z.chunks_exact(y).map(<[f64]>::to_vec).collect())
            }
        }
    }

    pub fn log_probs(&self, x: &Context) -> Result<Vec<f64>> {
        Ok(self.log_probs_batch(std::slice::from_ref(x))?.pop().unwrap())
    }

    pub fn log_probs_batch(&self, xs: &[Context]) -> Result<Vec<Vec<f64>>> {
        self.logits_batch(xs)?.iter().map(|l| checked_log_softmax(l)).collect()
    }

    pub fn probs(&self, x: &Context) -> Result<Vec<f64>> {
        Ok(self.log_probs(x)?.into_iter().map(f64::exp).collect())
    }

    /// Runs the forward pass at `x`, asks `f` for `∂/∂logits` given the log-probabilities,
    /// and adds `scale · Jᵀ dlogits` into `out`.
    pub fn accumulate_grad<F>(&self, x: &Context, out: &mut [f64], scale: f64, f: F) -> Result<()>
    where
        F: FnOnce(&[f64]) -> Result<Vec<f64>>,
    {
        let mut f = Some(f);
        self.accumulate_grad_batch(std::slice::from_ref(x), out, scale, |_, lp| (f.take().unwrap())(lp))
    }

    /// Batched [`Policy::accumulate_grad`]: `f(i, log π(·|x_i))` returns the logit
    /// gradient for context `i`, and `scale · Σ_i J_iᵀ dlogits_i` is added into `out`.
    pub fn accumulate_grad_batch<F>(&self, xs: &[Context], out: &mut [f64], scale: f64, mut f: F) -> Result<()>
    where
        F: FnMut(usize, &[f64]) -> Result<Vec<f64>>,
    {
        if out.len() != self.num_params() {
            return argument("gradient buffer has the wrong length");
        }
        let y = self.num_actions();
        match self {
            Policy::Tabular(p) => {
                let lp = checked_log_softmax(&p.logits)?;
                for i in 0..xs.len() {
                    let dl = f(i, &lp)?;
                    for (g, d) in out.iter_mut().zip(&dl) {
                        *g += scale * d;
                    }
                }
            }
            Policy::Mlp(p) => {
                self.check_finite()?;
                if xs.is_empty() {
                    return Ok(());
                }
                let inputs = stacked_features(xs);
                let pre = p.forward(&inputs, xs.len())?;
                let mut dl = Vec::with_capacity(xs.len() * y);
                for (i, logits) in pre.last().unwrap().chunks_exact(y).enumerate() {
                    let d = f(i, &checked_log_softmax(logits)?)?;
                    if d.len() != y {
                        return argument("logit gradient has the wrong length");
                    }
                    dl.extend_from_slice(&d);
                }
                p.backward(&inputs, xs.len(), &pre, &dl, out, scale);
            }
        }
        Ok(())
    }

    /// `∇_θ log π_θ(y | x)`.
    pub fn score(&self, x: &Context, y: usize) -> Result<Vec<f64>> {
        let n = self.num_actions();
        if y >= n {
            return argument(format!("action {y} out of range for {n} actions"));
        }
        let mut out = vec![0.0; self.num_params()];
        self.accumulate_grad(x, &mut out, 1.0, |lp| {
            Ok((0..n).map(|z| if z == y { 1.0 } else { 0.0 } - lp[z].exp()).collect())
        })?;
        Ok(out)
    }

    pub fn sample_action<R: Rng + ?Sized>(&self, x: &Context, rng: &mut R) -> Result<usize> {
        let p = self.probs(x)?;
        Ok(sample_index(&p, rng))
    }

    /// Text checkpoint: kind, layer dims, parameter count, then one parameter per line.
    pub fn to_checkpoint(&self) -> String {
        let mut s = String::new();
        match self {
            Policy::Tabular(p) => {
                writeln!(s, "kind tabular").unwrap();
                writeln!(s, "dims {}", p.logits.len()).unwrap();
            }
            Policy::Mlp(p) => {
                writeln!(s, "kind mlp").unwrap();
                let dims: Vec<String> = p.dims.iter().map(|d| d.to_string()).collect();
                writeln!(s, "dims {}", dims.join(" ")).unwrap();
            }
        }
        writeln!(s, "count {}", self.num_params()).unwrap();
        for v in self.params() {
            writeln!(s, "{v:.16e}").unwrap();
        }
        s
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let mut field = |key: &str| -> Result<String> {
            let line = lines.next().ok_or_else(|| Error::Parse(format!("missing `{key}` line")))?;
            line.strip_prefix(key)
                .map(|rest| rest.trim().to_string())
                .ok_or_else(|| Error::Parse(format!("expected `{key}`, got `{line}`")))
        };
        let kind = field("kind")?;
        let dims: Vec<usize> = field("dims")?
            .split_whitespace()
            .map(|d| d.parse().map_err(|_| Error::Parse(format!("bad dim `{d}`"))))
            .collect::<Result<_>>()?;
        let count: usize = field("count")?.parse().map_err(|_| Error::Parse("bad count".into()))?;
        let params: Vec<f64> = lines
            .map(|l| l.parse().map_err(|_| Error::Parse(format!("bad parameter `{l}`"))))
            .collect::<Result<_>>()?;
        if params.len() != count {
            return Err(Error::Parse(format!("expected {count} parameters, found {}", params.len())));
        }
        match kind.as_str() {
            "tabular" => {
                if dims.len() != 1 || dims[0] != count {
                    return Err(Error::Parse("tabular dims must equal the parameter count".into()));
                }
                Ok(TabularSoftmaxPolicy::new(params)?.into())
            }
            "mlp" => Ok(MlpPolicy::from_params(dims, params)?.into()),
            other => Err(Error::Parse(format!("unknown policy kind `{other}`"))),
        }
    }
}

/// Inverse-CDF draw from a probability vector.
pub fn sample_index<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &v) in p.iter().enumerate() {
        acc += v;
        if u < acc {
            return i;
        }
    }
    // rounding left a sliver above the cumulative sum; take the last supported action
    p.iter().rposition(|&v| v > 0.0).unwrap_or(p.len() - 1)
}

/// Floor reference `ν` and ratio floor `τ` for [`improve`].
#[derive(Clone, Debug, PartialEq)]
pub struct ImprovementConfig {
    pub floor_reference: Vec<f64>,
    pub tau: f64,
}

impl ImprovementConfig {
    pub fn new(floor_reference: Vec<f64>, tau: f64) -> Result<Self> {
        check_simplex(&floor_reference, floor_reference.len(), "floor reference")
            .map_err(|e| Error::Config(e.to_string()))?;
        if floor_reference.iter().any(|&v| v <= 0.0) {
            return Err(Error::Config("floor reference must have full support".into()));
        }
        if !(tau > 0.0 && tau <= 1.0) {
            return Err(Error::Config(format!("tau must lie in (0, 1], got {tau}")));
        }
        Ok(Self { floor_reference, tau })
    }
}

/// Raises every `π(y)` below `τ ν(y)` to `τ ν(y)`, taking the moved mass from the
/// max-ratio action (lowest index on ties). Leaves `π` unchanged when no ratio is low.
pub fn improve_probs(p: &[f64], cfg: &ImprovementConfig) -> Result<Vec<f64>> {
    let nu = &cfg.floor_reference;
    if p.len() != nu.len() {
        return argument("policy and floor reference have different action counts");
    }
    let tau = cfg.tau;
    let low = |y: usize| p[y] < tau * nu[y];
    if !(0..p.len()).any(low) {
        return Ok(p.to_vec());
    }
    let mut y_max = 0;
    for y in 1..p.len() {
        if p[y] / nu[y] > p[y_max] / nu[y_max] {
            y_max = y;
        }
    }
    let mut moved = 0.0;
    let mut out = p.to_vec();
    for y in 0..p.len() {
        if low(y) {
            out[y] = tau * nu[y];
            moved += out[y] - p[y];
        }
    }
    out[y_max] = p[y_max] - moved;
    if out[y_max] < tau * nu[y_max] {
        return Err(Error::Config(format!(
            "floor tau = {tau} is infeasible: the max-ratio action would fall below it"
        )));
    }
    Ok(out)
}

/// [`improve_probs`] in parameter space: the returned logits are `log π⁺`.
pub fn improve(policy: &TabularSoftmaxPolicy, cfg: &ImprovementConfig) -> Result<TabularSoftmaxPolicy> {
    let p = policy.probs();
    let q = improve_probs(&p, cfg)?;
    if q == p {
        return Ok(policy.clone());
    }
    Ok(TabularSoftmaxPolicy::from_probs(&q))
}

/// Largest floor for which flooring provably cannot increase exploitability:
/// `min{ exp(−1/λ − 2‖log anchor − log ν‖_span), (1 + 1/ν_min)⁻¹ }`.
pub fn tau0(nu: &[f64], anchor: &[f64], lambda: f64) -> Result<f64> {
    if nu.len() != anchor.len() || nu.is_empty() {
        return argument("tau0 arguments must be nonempty and of equal length");
    }
    if nu.iter().chain(anchor).any(|&v| !(v > 0.0)) {
        return Err(Error::Support("tau0 needs full-support distributions".into()));
    }
    if !(lambda > 0.0) {
        return Err(Error::Config("lambda must be positive".into()));
    }
    let diff: Vec<f64> = anchor.iter().zip(nu).map(|(a, n)| a.ln() - n.ln()).collect();
    let span = crate::numeric::half_range(&diff);
    let nu_min = nu.iter().copied().fold(f64::INFINITY, f64::min);
    Ok((-1.0 / lambda - 2.0 * span).exp().min(1.0 / (1.0 + 1.0 / nu_min)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn probs_examples() {
        let u = Policy::from(TabularSoftmaxPolicy::uniform(3));
        assert!(close(&u.probs(&Context::Unit).unwrap(), &[1.0 / 3.0; 3], 1e-15));
        let r = [11.0 / 18.0, 1.0 / 3.0, 1.0 / 18.0];
        let p = Policy::from(TabularSoftmaxPolicy::from_probs(&r));
        assert!(close(&p.probs(&Context::Unit).unwrap(), &r, 1e-15));
        let m = Policy::from(MlpPolicy::zeros(vec![4, 8, 8, 5]).unwrap());
        let x = Context::Matrix(vec![1.0, -2.0, 0.5, 3.0]);
        assert!(close(&m.probs(&x).unwrap(), &[0.2; 5], 1e-15));
    }

    #[test]
    fn nonfinite_parameters_are_rejected() {
        let p = Policy::from(TabularSoftmaxPolicy::new(vec![0.0, f64::NAN]).unwrap());
        assert!(matches!(p.probs(&Context::Unit), Err(Error::Numeric(_))));
        let mut m = Policy::from(MlpPolicy::zeros(vec![1, 2, 2]).unwrap());
        m.params_mut()[0] = f64::INFINITY;
        assert!(matches!(m.probs(&Context::Matrix(vec![1.0])), Err(Error::Numeric(_))));
    }

    #[test]
    fn tabular_score_example() {
        let u = Policy::from(TabularSoftmaxPolicy::uniform(3));
        let s = u.score(&Context::Unit, 0).unwrap();
        assert!(close(&s, &[2.0 / 3.0, -1.0 / 3.0, -1.0 / 3.0], 1e-15));
    }

    #[test]
    fn score_has_zero_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = Policy::from(MlpPolicy::glorot(vec![4, 16, 16, 6], &mut rng).unwrap());
        let x = Context::Matrix(vec![0.3, -1.2, 0.8, 2.0]);
        let p = m.probs(&x).unwrap();
        let mut mean = vec![0.0; m.num_params()];
        for y in 0..6 {
            for (a, b) in mean.iter_mut().zip(m.score(&x, y).unwrap()) {
                *a += p[y] * b;
            }
        }
        assert!(mean.iter().all(|v| v.abs() <= 1e-10));
    }

    #[test]
    fn mlp_score_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = Policy::from(MlpPolicy::glorot(vec![4, 7, 5, 3], &mut rng).unwrap());
        let x = Context::Matrix(vec![0.4, -0.7, 1.1, 0.2]);
        let s = m.score(&x, 1).unwrap();
        let h = 1e-5;
        for i in 0..m.num_params() {
            let mut a = m.clone();
            a.params_mut()[i] += h;
            let mut b = m.clone();
            b.params_mut()[i] -= h;
            let fd = (a.log_probs(&x).unwrap()[1] - b.log_probs(&x).unwrap()[1]) / (2.0 * h);
            assert!((fd - s[i]).abs() <= 1e-5 * fd.abs().max(1e-3), "param {i}: {fd} vs {}", s[i]);
        }
    }

    #[test]
    fn deterministic_policy_always_samples_its_action() {
        let p = Policy::from(TabularSoftmaxPolicy::new(vec![0.0, 1e6, 0.0]).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!((0..1000).all(|_| p.sample_action(&Context::Unit, &mut rng).unwrap() == 1));
    }

    #[test]
    fn uniform_sampling_frequencies() {
        let p = Policy::from(TabularSoftmaxPolicy::uniform(4));
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 100_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            counts[p.sample_action(&Context::Unit, &mut rng).unwrap()] += 1;
        }
        let sigma = (n as f64 * 0.25 * 0.75).sqrt();
        for c in counts {
            assert!((c as f64 - n as f64 * 0.25).abs() <= 4.0 * sigma);
        }
        let mut r1 = ChaCha8Rng::seed_from_u64(3);
        let mut r2 = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            assert_eq!(
                p.sample_action(&Context::Unit, &mut r1).unwrap(),
                p.sample_action(&Context::Unit, &mut r2).unwrap()
            );
        }
    }

    #[test]
    fn improve_examples() {
        let cfg = ImprovementConfig::new(vec![1.0 / 3.0; 3], 0.3).unwrap();
        let q = improve_probs(&[0.05, 0.15, 0.8], &cfg).unwrap();
        assert!(close(&q, &[0.10, 0.15, 0.75], 1e-15));
        let same = improve_probs(&[1.0 / 3.0; 3], &cfg).unwrap();
        assert_eq!(same, vec![1.0 / 3.0; 3]);
        assert!(ImprovementConfig::new(vec![0.5, 0.5], 0.0).is_err());
        assert!(ImprovementConfig::new(vec![0.5, 0.5], 1.5).is_err());
        let full = ImprovementConfig::new(vec![0.5, 0.5], 1.0).unwrap();
        assert!(close(&improve_probs(&[0.1, 0.9], &full).unwrap(), &[0.5, 0.5], 1e-15));
        let skewed = ImprovementConfig::new(vec![0.1, 0.1, 0.8], 1.0).unwrap();
        assert!(matches!(improve_probs(&[0.5, 0.5, 0.0], &skewed), Err(Error::Config(_))));
    }

    #[test]
    fn tau0_examples() {
        let u = [1.0 / 3.0; 3];
        assert!((tau0(&u, &u, 1.0).unwrap() - 0.25).abs() < 1e-15);
        assert!((tau0(&u, &u, 1e12).unwrap() - 0.25).abs() < 1e-12);
        let nu = [1e-4, 1.0 - 1e-4];
        let t = tau0(&nu, &nu, 1e12).unwrap();
        assert!((t - 1e-4 / (1.0 + 1e-4)).abs() < 1e-12);
    }

    #[test]
    fn checkpoint_round_trips_bit_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let m = Policy::from(MlpPolicy::glorot(vec![4, 6, 3], &mut rng).unwrap());
        let back = Policy::from_checkpoint(&m.to_checkpoint()).unwrap();
        assert_eq!(m, back);
        let t = Policy::from(TabularSoftmaxPolicy::new(vec![0.1, -1.0 / 3.0, 1e-300]).unwrap());
        assert_eq!(Policy::from_checkpoint(&t.to_checkpoint()).unwrap(), t);
        assert!(Policy::from_checkpoint("kind tabular\ndims 2\ncount 3\n0\n1\n").is_err());
    }

    fn simplex(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.01f64..1.0, n).prop_map(|v| {
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect()
        })
    }

    proptest! {
        #[test]
        fn improve_respects_floor_and_is_idempotent(p in simplex(5), nu in simplex(5), tau in 0.01f64..0.5) {
            let cfg = ImprovementConfig::new(nu.clone(), tau).unwrap();
            if let Ok(q) = improve_probs(&p, &cfg) {
                prop_assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                for y in 0..5 {
                    prop_assert!(q[y] >= tau * nu[y] * (1.0 - 1e-12));
                }
                let again = improve_probs(&q, &cfg).unwrap();
                prop_assert!(close(&again, &q, 1e-12));
            }
        }

        #[test]
        fn softmax_is_one_lipschitz(a in prop::collection::vec(-5.0f64..5.0, 4), b in prop::collection::vec(-5.0f64..5.0, 4)) {
            let pa = softmax(&a);
            let pb = softmax(&b);
            let l1: f64 = pa.iter().zip(&pb).map(|(x, y)| (x - y).abs()).sum();
            let l2: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            prop_assert!(l1 <= l2 + 1e-12);
        }
    }
}
