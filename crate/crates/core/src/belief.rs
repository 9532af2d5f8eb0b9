//! Gaussian beliefs over latent utilities and their closed-form updates.
//!
//! The model is two-level: a group utility `θ_i ~ N(μ_i, σ_i²)`, dataset
//! utilities `θ_ij | θ_i ~ N(θ_i, σ̂_i²)` and observed rewards
//! `r ~ N(θ_ij, σ_r²)`. All posteriors are functions of pull counts and
//! reward sums only.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{DashError, Result};

pub mod oracle;

/// Variance floor applied before sampling.
pub const MIN_SAMPLING_VARIANCE: f64 = 1e-12;

/// A normal distribution over a latent utility.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianBelief {
    pub mean: f64,
    pub variance: f64,
}

impl GaussianBelief {
    pub fn new(mean: f64, variance: f64) -> Result<Self> {
        let belief = Self { mean, variance };
        belief.validate()?;
        Ok(belief)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.mean.is_finite() {
            return Err(DashError::InvalidParameter(format!(
                "belief mean must be finite, got {}",
                self.mean
            )));
        }
        check_variance("belief variance", self.variance)
    }

    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }
}

/// Observation noise of the reward model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardModel {
    pub sigma_r_sq: f64,
}

impl RewardModel {
    pub fn new(sigma_r_sq: f64) -> Result<Self> {
        check_variance("reward variance", sigma_r_sq)?;
        Ok(Self { sigma_r_sq })
    }
}

impl Default for RewardModel {
    fn default() -> Self {
        Self { sigma_r_sq: 1.0 }
    }
}

/// Sufficient statistics of every reward observed inside one group.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub pulls: u64,
    pub reward_sum: f64,
}

impl GroupStats {
    pub fn record(&mut self, reward: f64) {
        self.pulls += 1;
        self.reward_sum += reward;
    }

    /// Aggregated mean reward across all datasets of the group.
    pub fn mean_reward(&self) -> Option<f64> {
        (self.pulls > 0).then(|| self.reward_sum / self.pulls as f64)
    }

    pub fn validate(&self) -> Result<()> {
        validate_counts(self.pulls, self.reward_sum, "group")
    }
}

/// Sufficient statistics of the rewards observed for one dataset.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub pulls: u64,
    pub reward_sum: f64,
}

impl DatasetStats {
    pub fn record(&mut self, reward: f64) {
        self.pulls += 1;
        self.reward_sum += reward;
    }

    pub fn mean_reward(&self) -> Option<f64> {
        (self.pulls > 0).then(|| self.reward_sum / self.pulls as f64)
    }

    pub fn validate(&self) -> Result<()> {
        validate_counts(self.pulls, self.reward_sum, "dataset")
    }
}

fn validate_counts(pulls: u64, reward_sum: f64, level: &str) -> Result<()> {
    if !reward_sum.is_finite() {
        return Err(DashError::InvalidParameter(format!(
            "{level} reward sum must be finite"
        )));
    }
    if pulls == 0 && reward_sum != 0.0 {
        return Err(DashError::InvalidParameter(format!(
            "{level} has no pulls but a nonzero reward sum {reward_sum}"
        )));
    }
    Ok(())
}

fn check_variance(what: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(DashError::InvalidParameter(format!(
            "{what} must be finite and positive, got {v}"
        )))
    }
}

/// Posterior of a group utility given every reward observed in the group.
///
/// Integrating out the dataset level turns the pooled mean reward into a
/// noisy observation of `θ_i` with variance `σ̂² + σ_r²/n_i`; the result is
/// the precision-weighted combination of that observation with the prior.
/// With no pulls the prior is returned unchanged.
pub fn group_posterior(
    prior: GaussianBelief,
    dataset_prior_var: f64,
    reward: RewardModel,
    stats: GroupStats,
) -> Result<GaussianBelief> {
    prior.validate()?;
    check_variance("dataset prior variance", dataset_prior_var)?;
    check_variance("reward variance", reward.sigma_r_sq)?;
    stats.validate()?;

    let Some(mean_reward) = stats.mean_reward() else {
        return Ok(prior);
    };
    let obs_var = dataset_prior_var + reward.sigma_r_sq / stats.pulls as f64;
    let variance = 1.0 / (1.0 / prior.variance + 1.0 / obs_var);
    let mean = variance * (prior.mean / prior.variance + mean_reward / obs_var);
    Ok(GaussianBelief { mean, variance })
}

/// Posterior of a dataset utility, centred a priori on `group_mean`.
///
/// With no pulls this is the dataset prior `N(group_mean, σ̂²)`.
pub fn dataset_posterior(
    group_mean: f64,
    dataset_prior_var: f64,
    reward: RewardModel,
    stats: DatasetStats,
) -> Result<GaussianBelief> {
    if !group_mean.is_finite() {
        return Err(DashError::InvalidParameter(format!(
            "group mean must be finite, got {group_mean}"
        )));
    }
    check_variance("dataset prior variance", dataset_prior_var)?;
    check_variance("reward variance", reward.sigma_r_sq)?;
    stats.validate()?;

    if stats.pulls == 0 {
        return Ok(GaussianBelief {
            mean: group_mean,
            variance: dataset_prior_var,
        });
    }
    let n = stats.pulls as f64;
    let variance = 1.0 / (1.0 / dataset_prior_var + n / reward.sigma_r_sq);
    // reward_sum == s̄_ij · n_ij
    let mean = variance * (group_mean / dataset_prior_var + stats.reward_sum / reward.sigma_r_sq);
    Ok(GaussianBelief { mean, variance })
}

/// One Thompson draw from `belief`. The variance is floored at
/// [`MIN_SAMPLING_VARIANCE`].
pub fn sample<R: Rng + ?Sized>(belief: &GaussianBelief, rng: &mut R) -> f64 {
    let sd = belief.variance.max(MIN_SAMPLING_VARIANCE).sqrt();
    let z: f64 = rng.sample(StandardNormal);
    belief.mean + sd * z
}
