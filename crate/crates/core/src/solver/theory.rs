//! Constants of the tabular softmax parametrization used to set theory-mode
//! step sizes: Lipschitz constant `G`, smoothness `L` and uniform PL constant `m`.

use crate::error::{Error, Result};
use crate::numeric::half_range;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SoftmaxConstants {
    pub lipschitz: f64,
    pub smoothness: f64,
    pub pl: f64,
}

impl SoftmaxConstants {
    /// `anchor` is the (normalized) effective anchor `π̃`, `nu` the floor reference of
    /// the improvement operator and `lambda` the total regularization.
    pub fn new(lambda: f64, anchor: &[f64], nu: &[f64]) -> Result<Self> {
        if anchor.len() != nu.len() || anchor.is_empty() {
            return Err(Error::Argument("anchor and floor reference must match in length".into()));
        }
        if !(lambda > 0.0) || anchor.iter().chain(nu).any(|&v| !(v > 0.0)) {
            return Err(Error::Config("constants need lambda > 0 and full-support distributions".into()));
        }
        let y = anchor.len() as f64;
        let anchor_min = anchor.iter().copied().fold(f64::INFINITY, f64::min);
        let nu_min = nu.iter().copied().fold(f64::INFINITY, f64::min);
        let smoothness = 2.5 * (1.0 + lambda * (1.0 / anchor_min).ln()) + lambda * (4.0 + y.ln());
        let diff: Vec<f64> = anchor.iter().zip(nu).map(|(a, n)| a.ln() - n.ln()).collect();
        let c_nu = (-2.0 * half_range(&diff)).min((nu_min / (1.0 + nu_min)).ln()).exp() * nu_min;
        let pl = lambda * (-2.0 / lambda).exp() * c_nu * c_nu;
        Ok(Self { lipschitz: 1.0, smoothness, pl })
    }

    /// `κ = L / m`.
    pub fn condition(&self) -> f64 {
        self.smoothness / self.pl
    }

    /// Whether `λ m ≥ G²`, the stability condition of the deterministic rate.
    pub fn stable(&self, lambda: f64) -> bool {
        lambda * self.pl >= self.lipschitz * self.lipschitz
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_ten_actions_beta_four() {
        let u = vec![0.1; 10];
        let c = SoftmaxConstants::new(4.0, &u, &u).unwrap();
        let l = 2.5 * (1.0 + 4.0 * 10f64.ln()) + 4.0 * (4.0 + 10f64.ln());
        assert!((c.smoothness - l).abs() < 1e-12);
        let c_nu = 0.1 / 1.1 * 0.1;
        assert!((c.pl - 4.0 * (-0.5f64).exp() * c_nu * c_nu).abs() < 1e-15);
        assert!(c.condition() >= 1.0);
    }
}
