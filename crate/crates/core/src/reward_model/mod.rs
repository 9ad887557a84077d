//! Distributional reward learning from pairwise preferences.
//!
//! Rewards are modelled per timestep as Gaussians. The training objective
//! combines a Bradley-Terry cross-entropy on the reward means, the same
//! cross-entropy averaged over reparameterized reward samples, and a hinge
//! that keeps the predicted Gaussian entropy from collapsing.

mod loss;
mod net;
mod train;

pub use loss::{
    loss_and_grad, robust_ce_loss, total_loss, LossBreakdown, NoiseDraw, PairNoise, PreferencePair,
};
pub use net::{Activation, Dense, GaussianRewardSeq, Mlp, NetConfig, RewardNet, LOGVAR_MAX, LOGVAR_MIN};
pub use train::{predict_returns, predict_rewards, train, EpochLog};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LOG_FLOOR: f64 = 1e-12;

/// `ln(2πe)`
pub const LN_2PI_E: f64 = 2.837_877_066_409_345_3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RrlConfig {
    /// Weight of the sampled-reward cross-entropy.
    pub lambda: f64,
    /// Weight of the entropy hinge.
    pub alpha: f64,
    /// Entropy margin.
    pub eta: f64,
    /// Reward samples per segment.
    pub k_samples: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for RrlConfig {
    fn default() -> Self {
        RrlConfig {
            lambda: 0.1,
            alpha: 0.01,
            eta: 100.0,
            k_samples: 5,
            learning_rate: 1e-4,
            weight_decay: 1e-4,
            betas: (0.9, 0.99),
            batch_size: 256,
            epochs: 100,
            seed: 0,
        }
    }
}

impl RrlConfig {
    /// Plain Bradley-Terry training: no sampled term, no entropy hinge.
    pub fn scalar(&self) -> RrlConfig {
        RrlConfig {
            lambda: 0.0,
            alpha: 0.0,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_samples == 0 {
            return Err(Error::arg("k_samples must be at least 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::arg("learning_rate must be positive"));
        }
        if !(self.lambda >= 0.0 && self.alpha >= 0.0) || !self.eta.is_finite() {
            return Err(Error::arg("lambda and alpha must be nonnegative, eta finite"));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::arg("batch_size and epochs must be positive"));
        }
        let (b1, b2) = self.betas;
        if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) {
            return Err(Error::arg("optimizer betas must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Probability that the first segment is preferred, from reward-sum totals.
pub(crate) fn bt_from_sums(s0: f64, s1: f64) -> f64 {
    let m = s0.max(s1);
    let e0 = libm::exp(s0 - m);
    let e1 = libm::exp(s1 - m);
    e0 / (e0 + e1)
}

/// `P[x⁰ ≻ x¹] = exp Σr⁰ / (exp Σr⁰ + exp Σr¹)`, evaluated after subtracting
/// the larger sum.
pub fn bt_probability(rewards0: &[f64], rewards1: &[f64]) -> f64 {
    bt_from_sums(rewards0.iter().sum(), rewards1.iter().sum())
}

/// `-[(1 - z) ln p + z ln(1 - p)]`, logs floored at `1e-12`. `z = 0` means the
/// first segment is preferred.
pub fn ce_loss(p: f64, z: f64) -> f64 {
    -((1.0 - z) * libm::log(p.max(LOG_FLOOR)) + z * libm::log((1.0 - p).max(LOG_FLOOR)))
}

/// `β_t = r̂_t + σ_t ε_t`
pub fn reparameterize(means: &[f64], variances: &[f64], eps: &[f64]) -> alloc::vec::Vec<f64> {
    debug_assert!(means.len() == variances.len() && means.len() == eps.len());
    means
        .iter()
        .zip(variances)
        .zip(eps)
        .map(|((m, v), e)| m + libm::sqrt(*v) * e)
        .collect()
}

/// Differential entropy of `N(·, σ²)`: `½ ln(2πe σ²)`.
pub fn gaussian_entropy(variance: f64) -> f64 {
    0.5 * (LN_2PI_E + libm::log(variance))
}

/// Mean over all given variances of `max(0, η - h(σ²))`.
pub fn entropy_reg_loss(variances: &[f64], eta: f64) -> f64 {
    if variances.is_empty() {
        return 0.0;
    }
    variances
        .iter()
        .map(|&v| (eta - gaussian_entropy(v)).max(0.0))
        .sum::<f64>()
        / variances.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::{E, LN_2, PI};

    #[test]
    fn entropy_constant() {
        assert!((LN_2PI_E - libm::log(2.0 * PI * E)).abs() < 1e-15);
    }

    #[test]
    fn bradley_terry_values() {
        assert_eq!(bt_probability(&[1.0, 2.0], &[3.0, 0.0]), 0.5);
        assert!((bt_probability(&[libm::log(3.0)], &[0.0]) - 0.75).abs() < 1e-15);
        let p = bt_probability(&[1000.0], &[0.0]);
        assert!((p - 1.0).abs() < 1e-12 && p.is_finite());
        assert!(bt_probability(&[0.0], &[1000.0]).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_values() {
        for z in [0.0, 0.5, 1.0] {
            assert!((ce_loss(0.5, z) - LN_2).abs() < 1e-15);
        }
        assert!(ce_loss(1.0 - 1e-15, 0.0) < 1e-14);
        assert!((ce_loss(0.75, 0.0) - 0.287_682_072_451_780_9).abs() < 1e-15);
        assert!(ce_loss(1.0, 1.0).is_finite());
    }

    #[test]
    fn reparameterized_samples() {
        assert_eq!(reparameterize(&[1.0, -2.0], &[4.0, 9.0], &[0.0, 0.0]), vec![1.0, -2.0]);
        assert_eq!(reparameterize(&[1.0], &[4.0], &[0.5]), vec![2.0]);
        let floor = LOGVAR_MIN.exp();
        let b = reparameterize(&[3.0], &[floor], &[1.7]);
        assert!((b[0] - 3.0).abs() <= floor.sqrt() * 1.7 + 1e-15);
    }

    #[test]
    fn entropy_hinge() {
        let zero_entropy = 1.0 / (2.0 * PI * E);
        assert!((entropy_reg_loss(&[zero_entropy], 100.0) - 100.0).abs() < 1e-12);
        assert_eq!(entropy_reg_loss(&[1e6, 1e8], 2.0), 0.0);
        assert_eq!(entropy_reg_loss(&[zero_entropy * 1.01, 5.0], 0.0), 0.0);
    }

    #[test]
    fn default_config_values() {
        let c = RrlConfig::default();
        assert_eq!((c.lambda, c.alpha, c.eta, c.k_samples), (0.1, 0.01, 100.0, 5));
        assert_eq!(c.betas, (0.9, 0.99));
        assert!(c.validate().is_ok());
        assert!(RrlConfig { k_samples: 0, ..c.clone() }.validate().is_err());
        assert_eq!(c.scalar().lambda, 0.0);
    }
}
