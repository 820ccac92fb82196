use crate::error::{Error, Result};

/// Adam state; moment buffers are sized on the first step.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Default for Adam {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, m: Vec::new(), v: Vec::new(), t: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Optimizer {
    Sgd,
    Adam(Adam),
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam(Adam::default())
    }

    /// Descends along `grad` with learning rate `lr`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) -> Result<()> {
        if params.len() != grad.len() {
            return Err(Error::Argument("parameter and gradient lengths differ".into()));
        }
        match self {
            Optimizer::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= lr * g;
                }
            }
            Optimizer::Adam(a) => {
                if a.m.len() != params.len() {
                    a.m = vec![0.0; params.len()];
                    a.v = vec![0.0; params.len()];
                    a.t = 0;
                }
                a.t += 1;
                let c1 = 1.0 - a.beta1.powi(a.t as i32);
                let c2 = 1.0 - a.beta2.powi(a.t as i32);
                for i in 0..params.len() {
                    a.m[i] = a.beta1 * a.m[i] + (1.0 - a.beta1) * grad[i];
                    a.v[i] = a.beta2 * a.v[i] + (1.0 - a.beta2) * grad[i] * grad[i];
                    params[i] -= lr * (a.m[i] / c1) / ((a.v[i] / c2).sqrt() + a.eps);
                }
            }
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Numeric("parameters became non-finite".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_step() {
        let mut p = vec![1.0, 2.0];
        Optimizer::Sgd.step(&mut p, &[0.5, -1.0], 0.1).unwrap();
        assert_eq!(p, vec![0.95, 2.1]);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = vec![0.0, 0.0];
        let mut opt = Optimizer::adam();
        opt.step(&mut p, &[3.0, -0.01], 1e-3).unwrap();
        assert!((p[0] + 1e-3).abs() < 1e-9 && (p[1] - 1e-3).abs() < 1e-6);
    }

    #[test]
    fn overflow_is_reported() {
        let mut p = vec![f64::MAX];
        assert!(matches!(Optimizer::Sgd.step(&mut p, &[-f64::MAX], 10.0), Err(Error::Numeric(_))));
    }
}
