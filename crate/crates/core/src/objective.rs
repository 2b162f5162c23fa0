//! Losses and metrics.
//!
//! The training objective blends a task loss with a reconstruction
//! ("communication") loss, `(1−α)·L_task + α·L_comm`, where `L_comm` is the
//! mean squared error between the source and the demapper output. For RL the
//! blended reward is kept in the maximization convention:
//! `R̃ = (1−α)·R − α·L_comm`, the exact negation of the minimization-form
//! reward `−(1−α)·R + α·L_comm`.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaskLoss {
    CrossEntropy,
    NegatedReward,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveConfig {
    alpha: f64,
    pub task_loss: TaskLoss,
}

impl ObjectiveConfig {
    pub fn new(alpha: f64, task_loss: TaskLoss) -> Result<Self> {
        check_alpha(alpha)?;
        Ok(Self { alpha, task_loss })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(Error::invalid(format!("alpha {alpha} outside [0, 1]")))
    }
}

pub fn combined_loss(l_task: f64, l_comm: f64, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    Ok((1.0 - alpha) * l_task + alpha * l_comm)
}

/// Mean squared error between source and demapped signal.
pub fn comm_loss(x: &Tensor, w: &Tensor) -> Result<f64> {
    mse_slices(x.data(), w.data()).ok_or_else(|| Error::shape("comm_loss", format!("{:?} vs {:?}", x.shape(), w.shape())))
}

pub(crate) fn mse_slices(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.is_empty() {
        return None;
    }
    Some(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64)
}

/// Peak signal-to-noise ratio in dB.
pub fn psnr(x: &Tensor, x_hat: &Tensor, max_val: f64) -> Result<f64> {
    psnr_from_mse(comm_loss(x, x_hat)?, max_val)
}

pub fn psnr_from_mse(mse: f64, max_val: f64) -> Result<f64> {
    if mse == 0.0 {
        return Err(Error::InfinitePsnr);
    }
    Ok(10.0 * (max_val * max_val / mse).log10())
}

/// Blended reward in the maximization convention.
pub fn modified_reward(reward: f64, x: &Tensor, w: &Tensor, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    Ok(modified_reward_from_loss(reward, comm_loss(x, w)?, alpha))
}

pub(crate) fn modified_reward_from_loss(reward: f64, l_comm: f64, alpha: f64) -> f64 {
    (1.0 - alpha) * reward - alpha * l_comm
}

pub fn discounted_return(rewards: &[f64], gamma: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::invalid(format!("discount {gamma} outside [0, 1]")));
    }
    let mut total = 0.0;
    let mut k = 1.0;
    for r in rewards {
        total += k * r;
        k *= gamma;
    }
    Ok(total)
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Fraction of rows of `[N,C]` logits whose argmax equals the label.
pub fn accuracy(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if logits.shape().len() != 2 || logits.batch() != labels.len() {
        return Err(Error::shape("accuracy", format!("logits {:?} for {} labels", logits.shape(), labels.len())));
    }
    let hits = labels.iter().enumerate().filter(|(i, &y)| argmax(logits.row(*i)) == y).count();
    Ok(hits as f64 / labels.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(d: &[f64]) -> Tensor {
        Tensor::from_vec(d.to_vec())
    }

    #[test]
    fn combined_loss_limits() {
        assert_eq!(combined_loss(0.7, 3.0, 0.0).unwrap(), 0.7);
        assert_eq!(combined_loss(0.7, 3.0, 1.0).unwrap(), 3.0);
        assert!((combined_loss(1.0, 2.0, 0.1).unwrap() - 1.1).abs() < 1e-15);
        assert!(combined_loss(1.0, 2.0, 1.5).is_err());
    }

    #[test]
    fn comm_loss_examples() {
        assert_eq!(comm_loss(&v(&[0.2, 0.4]), &v(&[0.2, 0.4])).unwrap(), 0.0);
        assert_eq!(comm_loss(&v(&[0.0, 0.0]), &v(&[1.0, 1.0])).unwrap(), 1.0);
        assert!(comm_loss(&v(&[0.0]), &v(&[1.0, 1.0])).is_err());
    }

    #[test]
    fn psnr_examples() {
        assert_eq!(psnr_from_mse(255.0 * 255.0, 255.0).unwrap(), 0.0);
        assert!((psnr_from_mse(0.25, 1.0).unwrap() - 6.020599913279624).abs() < 1e-12);
        assert!(matches!(psnr(&v(&[1.0]), &v(&[1.0]), 1.0), Err(Error::InfinitePsnr)));
    }

    #[test]
    fn modified_reward_examples() {
        let x = v(&[0.0, 0.0]);
        let w_half = v(&[0.5f64.sqrt(), 0.5f64.sqrt()]);
        assert_eq!(modified_reward(1.0, &x, &w_half, 0.0).unwrap(), 1.0);
        let r = modified_reward(5.0, &x, &w_half, 1.0).unwrap();
        assert!((r + 0.5).abs() < 1e-15);
        let r = modified_reward(1.0, &x, &w_half, 0.1).unwrap();
        assert!((r - 0.85).abs() < 1e-15);
        assert!(modified_reward(1.0, &x, &x, -0.1).is_err());
    }

    #[test]
    fn discounted_return_examples() {
        assert_eq!(discounted_return(&[1.0, 1.0, 1.0], 1.0).unwrap(), 3.0);
        assert_eq!(discounted_return(&[5.0, 9.0, 9.0], 0.0).unwrap(), 5.0);
        assert!((discounted_return(&[1.0, 1.0], 0.99).unwrap() - 1.99).abs() < 1e-15);
    }

    #[test]
    fn accuracy_examples() {
        let logits = Tensor::new(vec![4, 2], vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(accuracy(&logits, &[0, 1, 0, 1]).unwrap(), 1.0);
        assert_eq!(accuracy(&logits, &[1, 0, 1, 0]).unwrap(), 0.0);
        assert_eq!(accuracy(&logits, &[0, 1, 0, 0]).unwrap(), 0.75);
        assert!(matches!(accuracy(&logits, &[]), Err(Error::EmptyBatch)));
        assert_eq!(argmax(&[0.5, 0.5, 0.1]), 0);
    }

    proptest! {
        #[test]
        fn combined_loss_is_between_and_monotone(a in 0.0..10.0f64, b in 0.0..10.0f64, alpha in 0.0..=1.0f64, d in 0.0..1.0f64) {
            let c = combined_loss(a, b, alpha).unwrap();
            prop_assert!(c >= a.min(b) - 1e-12 && c <= a.max(b) + 1e-12);
            prop_assert!(combined_loss(a + d, b, alpha).unwrap() >= c);
            prop_assert!(combined_loss(a, b + d, alpha).unwrap() >= c);
        }

        #[test]
        fn modified_reward_negates_minimization_form(r in -5.0..5.0f64, x in proptest::collection::vec(0.0..1.0f64, 4), w in proptest::collection::vec(0.0..1.0f64, 4), alpha in 0.0..=1.0f64) {
            let (xt, wt) = (Tensor::from_vec(x), Tensor::from_vec(w));
            let minimization = -(1.0 - alpha) * r + alpha * comm_loss(&xt, &wt).unwrap();
            prop_assert_eq!(modified_reward(r, &xt, &wt, alpha).unwrap(), -minimization);
        }

        #[test]
        fn psnr_decreases_with_mse(m in 1e-6..1e3f64, k in 1.0001..10.0f64) {
            prop_assert!(psnr_from_mse(m * k, 1.0).unwrap() < psnr_from_mse(m, 1.0).unwrap());
        }

        #[test]
        fn psnr_scale_invariant(x in proptest::collection::vec(0.0..1.0f64, 6), y in proptest::collection::vec(0.0..1.0f64, 6), k in 0.5..300.0f64) {
            let (a, b) = (Tensor::from_vec(x.clone()), Tensor::from_vec(y.clone()));
            prop_assume!(comm_loss(&a, &b).unwrap() > 1e-9);
            let ka = Tensor::from_vec(x.iter().map(|v| v * k).collect());
            let kb = Tensor::from_vec(y.iter().map(|v| v * k).collect());
            let p1 = psnr(&a, &b, 1.0).unwrap();
            let p2 = psnr(&ka, &kb, k).unwrap();
            prop_assert!((p1 - p2).abs() < 1e-9);
        }

        #[test]
        fn discounted_return_matches_loop(r in proptest::collection::vec(-3.0..3.0f64, 0..20), g in 0.0..=1.0f64) {
            let mut expect = 0.0;
            for (t, v) in r.iter().enumerate() {
                expect += g.powi(t as i32) * v;
            }
            prop_assert!((discounted_return(&r, g).unwrap() - expect).abs() < 1e-12);
        }
    }
}
