//! Brute-force reference computations for the closed-form posteriors.
//!
//! These take a different numerical route from [`super::group_posterior`]
//! and [`super::dataset_posterior`] and exist to cross-check them.

use rand::Rng;
use serde::Serialize;

use super::{
    dataset_posterior, group_posterior, DatasetStats, GaussianBelief, GroupStats, RewardModel,
};
use crate::error::{DashError, Result};
use crate::rng::seeded;

const GRID_POINTS: usize = 40_001;
const HALF_WIDTH_SDS: f64 = 12.0;
const MAX_BOUNDARY_MASS: f64 = 1e-9;

/// Posterior mean and variance of a group utility by 1-D quadrature.
///
/// Each observed dataset's latent utility is integrated out analytically
/// (its mean reward is `N(θ_i, σ̂² + σ_r²/n_ij)` given `θ_i`); the remaining
/// integral over `θ_i` is done with the trapezoid rule, first over a wide
/// window and then over ±12 posterior standard deviations.
pub fn numeric_group_posterior_oracle(
    prior: GaussianBelief,
    dataset_prior_var: f64,
    reward: RewardModel,
    per_dataset_stats: &[DatasetStats],
) -> Result<GaussianBelief> {
    prior.validate()?;
    if !(dataset_prior_var.is_finite() && dataset_prior_var > 0.0) {
        return Err(DashError::InvalidParameter(format!(
            "dataset prior variance must be positive, got {dataset_prior_var}"
        )));
    }
    RewardModel::new(reward.sigma_r_sq)?;
    for s in per_dataset_stats {
        s.validate()?;
    }

    // (observed mean, marginal variance) per observed dataset.
    let observations: Vec<(f64, f64)> = per_dataset_stats
        .iter()
        .filter(|s| s.pulls > 0)
        .map(|s| {
            let n = s.pulls as f64;
            (s.reward_sum / n, dataset_prior_var + reward.sigma_r_sq / n)
        })
        .collect();
    if observations.is_empty() {
        return Err(DashError::Oracle(
            "at least one dataset must have been pulled".into(),
        ));
    }

    let log_density = |theta: f64| {
        let mut acc = -(theta - prior.mean).powi(2) / (2.0 * prior.variance);
        for &(obs, var) in &observations {
            acc -= (obs - theta).powi(2) / (2.0 * var);
        }
        acc
    };

    // The posterior mean lies between the extreme centres and its standard
    // deviation is below the widest component, so this window is safe.
    let widest = observations
        .iter()
        .map(|&(_, v)| v)
        .fold(prior.variance, f64::max)
        .sqrt();
    let lo_centre = observations
        .iter()
        .map(|&(m, _)| m)
        .fold(prior.mean, f64::min);
    let hi_centre = observations
        .iter()
        .map(|&(m, _)| m)
        .fold(prior.mean, f64::max);
    let coarse = moments(
        &log_density,
        lo_centre - HALF_WIDTH_SDS * widest,
        hi_centre + HALF_WIDTH_SDS * widest,
    )?;

    let sd = coarse.variance.sqrt();
    moments(
        &log_density,
        coarse.mean - HALF_WIDTH_SDS * sd,
        coarse.mean + HALF_WIDTH_SDS * sd,
    )
}

fn moments(log_density: &dyn Fn(f64) -> f64, lo: f64, hi: f64) -> Result<GaussianBelief> {
    if !(lo.is_finite() && hi.is_finite() && hi > lo) {
        return Err(DashError::Oracle(format!("degenerate window [{lo}, {hi}]")));
    }
    let h = (hi - lo) / (GRID_POINTS - 1) as f64;
    let grid: Vec<f64> = (0..GRID_POINTS).map(|k| lo + h * k as f64).collect();
    let logs: Vec<f64> = grid.iter().map(|&t| log_density(t)).collect();
    let peak = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logs.iter().map(|&l| (l - peak).exp()).collect();

    let trapz = |f: &dyn Fn(usize) -> f64| {
        let inner: f64 = (1..GRID_POINTS - 1).map(f).sum();
        h * (inner + 0.5 * (f(0) + f(GRID_POINTS - 1)))
    };

    let z = trapz(&|k| weights[k]);
    let mean = trapz(&|k| grid[k] * weights[k]) / z;
    let variance = trapz(&|k| (grid[k] - mean).powi(2) * weights[k]) / z;

    let edge = GRID_POINTS / 40;
    let edge_mass: f64 = (0..edge)
        .chain(GRID_POINTS - edge..GRID_POINTS)
        .map(|k| weights[k] * h)
        .sum::<f64>()
        / z;
    if edge_mass.is_nan() || edge_mass > MAX_BOUNDARY_MASS {
        return Err(DashError::Oracle(format!(
            "quadrature did not converge: boundary mass {edge_mass:e}"
        )));
    }
    if !(variance.is_finite() && variance > 0.0 && mean.is_finite()) {
        return Err(DashError::Oracle(
            "quadrature produced non-finite moments".into(),
        ));
    }
    Ok(GaussianBelief { mean, variance })
}

/// Dataset posterior by updating `N(group_mean, σ̂²)` one reward at a time.
pub fn sequential_dataset_posterior_oracle(
    group_mean: f64,
    dataset_prior_var: f64,
    reward: RewardModel,
    rewards: &[f64],
) -> Result<GaussianBelief> {
    let mut belief = GaussianBelief::new(group_mean, dataset_prior_var)?;
    RewardModel::new(reward.sigma_r_sq)?;
    for &r in rewards {
        let precision = 1.0 / belief.variance + 1.0 / reward.sigma_r_sq;
        let variance = 1.0 / precision;
        belief = GaussianBelief {
            mean: variance * (belief.mean / belief.variance + r / reward.sigma_r_sq),
            variance,
        };
    }
    Ok(belief)
}

/// Largest disagreements found by [`oracle_equivalence`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleCheckReport {
    pub trials: usize,
    pub max_group_mean_dev: f64,
    pub max_group_var_dev: f64,
    pub max_dataset_mean_dev: f64,
    pub max_dataset_var_dev: f64,
}

impl OracleCheckReport {
    pub fn max_deviation(&self) -> f64 {
        self.max_group_mean_dev
            .max(self.max_group_var_dev)
            .max(self.max_dataset_mean_dev)
            .max(self.max_dataset_var_dev)
    }
}

/// Compares the closed-form posteriors with both oracles on randomized
/// configurations: variances in [0.1, 5], prior mean in [-1, 1], between 1
/// and 50 binary rewards on one dataset of the group, plus up to three
/// unobserved sibling datasets.
pub fn oracle_equivalence(trials: usize, seed: u64) -> Result<OracleCheckReport> {
    let mut rng = seeded(seed);
    let mut report = OracleCheckReport {
        trials,
        max_group_mean_dev: 0.0,
        max_group_var_dev: 0.0,
        max_dataset_mean_dev: 0.0,
        max_dataset_var_dev: 0.0,
    };
    for _ in 0..trials {
        let prior = GaussianBelief::new(rng.random_range(-1.0..=1.0), rng.random_range(0.1..=5.0))?;
        let ds_var = rng.random_range(0.1..=5.0);
        let reward = RewardModel::new(rng.random_range(0.1..=5.0))?;
        let pulls: u64 = rng.random_range(1..=50);
        let rewards: Vec<f64> = (0..pulls)
            .map(|_| if rng.random::<bool>() { 1.0 } else { 0.0 })
            .collect();
        let sum: f64 = rewards.iter().sum();
        let siblings = rng.random_range(0..=3usize);

        let mut per_dataset = vec![DatasetStats::default(); siblings + 1];
        let observed = rng.random_range(0..per_dataset.len());
        per_dataset[observed] = DatasetStats {
            pulls,
            reward_sum: sum,
        };

        let closed = group_posterior(
            prior,
            ds_var,
            reward,
            GroupStats {
                pulls,
                reward_sum: sum,
            },
        )?;
        let numeric = numeric_group_posterior_oracle(prior, ds_var, reward, &per_dataset)?;
        report.max_group_mean_dev = report
            .max_group_mean_dev
            .max((closed.mean - numeric.mean).abs());
        report.max_group_var_dev = report
            .max_group_var_dev
            .max((closed.variance - numeric.variance).abs());

        let ds_closed = dataset_posterior(closed.mean, ds_var, reward, per_dataset[observed])?;
        let ds_seq = sequential_dataset_posterior_oracle(closed.mean, ds_var, reward, &rewards)?;
        report.max_dataset_mean_dev = report
            .max_dataset_mean_dev
            .max((ds_closed.mean - ds_seq.mean).abs());
        report.max_dataset_var_dev = report
            .max_dataset_var_dev
            .max((ds_closed.variance - ds_seq.variance).abs());
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_worked_example() {
        let prior = GaussianBelief::new(0.0, 2.0).unwrap();
        let stats = [DatasetStats {
            pulls: 4,
            reward_sum: 3.0,
        }];
        let post =
            numeric_group_posterior_oracle(prior, 2.0, RewardModel::default(), &stats).unwrap();
        assert!((post.mean - 6.0 / 17.0).abs() < 1e-6);
        assert!((post.variance - 18.0 / 17.0).abs() < 1e-6);
    }

    #[test]
    fn unpulled_siblings_do_not_change_result() {
        let prior = GaussianBelief::new(0.2, 1.5).unwrap();
        let one = [DatasetStats {
            pulls: 7,
            reward_sum: 5.0,
        }];
        let with_siblings = [DatasetStats::default(), one[0], DatasetStats::default()];
        let a = numeric_group_posterior_oracle(prior, 0.8, RewardModel::default(), &one).unwrap();
        let b = numeric_group_posterior_oracle(prior, 0.8, RewardModel::default(), &with_siblings)
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mirrored_rewards_give_mirrored_means() {
        let prior = GaussianBelief::new(0.0, 3.0).unwrap();
        let zero = numeric_group_posterior_oracle(
            prior,
            2.0,
            RewardModel::default(),
            &[DatasetStats {
                pulls: 1,
                reward_sum: 0.0,
            }],
        )
        .unwrap();
        assert!(zero.mean.abs() < 1e-12);
        for r in [0.3, 1.0, 2.5] {
            let plus = numeric_group_posterior_oracle(
                prior,
                2.0,
                RewardModel::default(),
                &[DatasetStats {
                    pulls: 1,
                    reward_sum: r,
                }],
            )
            .unwrap();
            let minus = numeric_group_posterior_oracle(
                prior,
                2.0,
                RewardModel::default(),
                &[DatasetStats {
                    pulls: 1,
                    reward_sum: -r,
                }],
            )
            .unwrap();
            assert!((plus.mean + minus.mean).abs() < 1e-12);
            assert!((plus.variance - minus.variance).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_groups_without_observations() {
        let prior = GaussianBelief::new(0.0, 2.0).unwrap();
        let err = numeric_group_posterior_oracle(
            prior,
            2.0,
            RewardModel::default(),
            &[DatasetStats::default(); 3],
        )
        .unwrap_err();
        assert!(matches!(err, DashError::Oracle(_)));
        assert!(numeric_group_posterior_oracle(prior, 2.0, RewardModel::default(), &[]).is_err());
    }

    #[test]
    fn pooled_form_differs_from_exact_marginal_when_rewards_span_datasets() {
        // The pooled closed form treats all group rewards as coming from one
        // dataset-level latent. With rewards spread over distinct datasets the
        // exact marginal weights each dataset separately.
        let prior = GaussianBelief::new(0.0, 2.0).unwrap();
        let spread = [
            DatasetStats {
                pulls: 5,
                reward_sum: 5.0,
            },
            DatasetStats {
                pulls: 5,
                reward_sum: 0.0,
            },
        ];
        let exact =
            numeric_group_posterior_oracle(prior, 2.0, RewardModel::default(), &spread).unwrap();
        let pooled = group_posterior(
            prior,
            2.0,
            RewardModel::default(),
            GroupStats {
                pulls: 10,
                reward_sum: 5.0,
            },
        )
        .unwrap();
        assert!(exact.variance < pooled.variance);
    }

    #[test]
    fn randomized_equivalence_holds() {
        let report = oracle_equivalence(100, 11).unwrap();
        assert!(report.max_deviation() < 1e-6, "{report:?}");
    }

    #[test]
    fn sequential_oracle_with_no_rewards_is_prior() {
        let b = sequential_dataset_posterior_oracle(0.5, 2.0, RewardModel::default(), &[]).unwrap();
        assert_eq!(
            b,
            GaussianBelief {
                mean: 0.5,
                variance: 2.0
            }
        );
    }
}
