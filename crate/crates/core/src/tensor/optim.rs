use super::ParamSet;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptRule {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptRule {
    pub fn adam() -> Self {
        OptRule::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Update rule plus learning rate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Optimizer {
    rule: OptRule,
    lr: f64,
}

impl Optimizer {
    pub fn new(rule: OptRule, lr: f64) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::invalid(format!("learning rate {lr} must be positive")));
        }
        Ok(Self { rule, lr })
    }

    pub fn sgd(lr: f64) -> Result<Self> {
        Self::new(OptRule::Sgd, lr)
    }

    pub fn adam(lr: f64) -> Result<Self> {
        Self::new(OptRule::adam(), lr)
    }

    pub fn rule(&self) -> OptRule {
        self.rule
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Apply one update from the accumulated gradients, then zero them.
    pub fn step(&self, params: &mut ParamSet) {
        params.steps += 1;
        let t = params.steps as i32;
        for (_, e) in params.iter_mut() {
            match self.rule {
                OptRule::Sgd => {
                    for (v, g) in e.value.data_mut().iter_mut().zip(e.grad.data()) {
                        *v -= self.lr * g;
                    }
                }
                OptRule::Adam { beta1, beta2, eps } => {
                    let c1 = 1.0 - beta1.powi(t);
                    let c2 = 1.0 - beta2.powi(t);
                    let value = e.value.data_mut();
                    let (m, v) = (e.m.data_mut(), e.v.data_mut());
                    for (i, g) in e.grad.data().iter().enumerate() {
                        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                        let mh = m[i] / c1;
                        let vh = v[i] / c2;
                        value[i] -= self.lr * mh / (vh.sqrt() + eps);
                    }
                }
            }
        }
        params.zero_grad();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn single(v: f64, g: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::scalar(v)).unwrap();
        p.entry_mut("w").unwrap().grad = Tensor::scalar(g);
        p
    }

    #[test]
    fn sgd_step() {
        let mut p = single(1.0, 2.0);
        Optimizer::sgd(0.1).unwrap().step(&mut p);
        assert!((p.value("w").unwrap().data()[0] - 0.8).abs() < 1e-15);
        assert_eq!(p.grad("w").unwrap().data(), &[0.0]);
    }

    #[test]
    fn sgd_zero_gradient_is_identity() {
        let mut p = single(0.37, 0.0);
        Optimizer::sgd(0.5).unwrap().step(&mut p);
        assert_eq!(p.value("w").unwrap().data(), &[0.37]);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = single(1.0, 1.0);
        Optimizer::adam(1e-3).unwrap().step(&mut p);
        let delta = p.value("w").unwrap().data()[0] - 1.0;
        assert!((delta + 1e-3 / (1.0 + 1e-8)).abs() < 1e-15, "{delta}");
    }

    #[test]
    fn non_positive_learning_rate_rejected() {
        assert!(Optimizer::sgd(0.0).is_err());
        assert!(Optimizer::adam(-1.0).is_err());
    }
}
