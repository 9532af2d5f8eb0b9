//! Ground-truth reward sources and pool descriptions.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{DashError, Result};
use crate::policy::ArmId;
use crate::rng::SeededRng;

mod builtin;
pub mod kmeans;

pub use builtin::{builtin_scenario, ScenarioTag};
pub use kmeans::{kmeans_representatives, FeaturePool, KMeansOptions, KMeansResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardKind {
    /// 0/1 reward with success probability equal to the dataset utility.
    Bernoulli,
    /// `N(utility, σ_r²)` reward.
    Gaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub name: String,
    /// True expected reward.
    pub utility: f64,
    /// Number of representative points; bounds how often the dataset can be probed.
    pub n_points: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub name: String,
    pub datasets: Vec<DatasetSpec>,
}

/// A grouped pool with known utilities.
///
/// `percentile` and `default_budget` are optional extensions of the file
/// schema; they are omitted from the JSON when unset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub reward_kind: RewardKind,
    #[serde(default)]
    pub stop_on_first_exhaustion: bool,
    #[serde(default)]
    pub seed: u64,
    pub groups: Vec<GroupSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub percentile: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default_budget: Option<usize>,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| {
            Err(DashError::Validation(format!(
                "scenario `{}`: {msg}",
                self.name
            )))
        };
        if self.groups.is_empty() {
            return fail("at least one group is required".into());
        }
        let mut group_names = HashSet::new();
        let mut dataset_names = HashSet::new();
        for group in &self.groups {
            if !group_names.insert(group.name.as_str()) {
                return fail(format!("duplicate group name `{}`", group.name));
            }
            if group.datasets.is_empty() {
                return fail(format!("group `{}` has no datasets", group.name));
            }
            for ds in &group.datasets {
                if !dataset_names.insert(ds.name.as_str()) {
                    return fail(format!("duplicate dataset name `{}`", ds.name));
                }
                if !ds.utility.is_finite() {
                    return fail(format!("dataset `{}` has a non-finite utility", ds.name));
                }
                if self.reward_kind == RewardKind::Bernoulli && !(0.0..=1.0).contains(&ds.utility) {
                    return fail(format!(
                        "dataset `{}` utility {} is outside [0, 1]",
                        ds.name, ds.utility
                    ));
                }
                if ds.n_points == 0 {
                    return fail(format!("dataset `{}` needs at least one point", ds.name));
                }
            }
        }
        if let Some(x) = self.percentile {
            if !(x > 0.0 && x < 100.0) {
                return fail(format!("percentile {x} must lie in (0, 100)"));
            }
        }
        if self.default_budget == Some(0) {
            return fail("default_budget must be at least 1".into());
        }
        Ok(())
    }

    pub fn num_datasets(&self) -> usize {
        self.groups.iter().map(|g| g.datasets.len()).sum()
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        self.groups.iter().map(|g| g.datasets.len()).collect()
    }

    /// Total number of steps before every representative point is used.
    pub fn total_points(&self) -> u64 {
        self.groups
            .iter()
            .flat_map(|g| &g.datasets)
            .map(|d| u64::from(d.n_points))
            .sum()
    }

    pub fn dataset(&self, arm: ArmId) -> Option<&DatasetSpec> {
        self.groups.get(arm.group)?.datasets.get(arm.dataset)
    }

    pub fn arms(&self) -> impl Iterator<Item = (ArmId, &DatasetSpec)> + '_ {
        self.groups.iter().enumerate().flat_map(|(g, group)| {
            group
                .datasets
                .iter()
                .enumerate()
                .map(move |(d, ds)| (ArmId::new(g, d), ds))
        })
    }

    pub fn best_utility(&self) -> f64 {
        self.arms()
            .map(|(_, d)| d.utility)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Arms whose utility equals the best utility.
    pub fn optimal_arms(&self) -> Vec<ArmId> {
        let best = self.best_utility();
        self.arms()
            .filter(|(_, d)| d.utility == best)
            .map(|(a, _)| a)
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).map_err(|e| DashError::io("reading scenario", path, e))?;
        let scenario = Self::from_json(&text).map_err(|source| DashError::Json {
            path: path.to_path_buf(),
            source,
        })?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json() + "\n")
            .map_err(|e| DashError::io("writing scenario", path, e))
    }
}

/// One reward for a pull of `spec`.
pub fn draw_reward(
    spec: &DatasetSpec,
    kind: RewardKind,
    sigma_r_sq: f64,
    rng: &mut SeededRng,
) -> f64 {
    match kind {
        RewardKind::Bernoulli => {
            if rng.random::<f64>() < spec.utility {
                1.0
            } else {
                0.0
            }
        }
        RewardKind::Gaussian => {
            let z: f64 = rng.sample(StandardNormal);
            spec.utility + sigma_r_sq.sqrt() * z
        }
    }
}

/// Anything that can answer a pull with a reward and knows the true means.
pub trait RewardSource {
    fn draw(&mut self, arm: ArmId) -> f64;
    /// True expected reward of `arm`.
    fn expected(&self, arm: ArmId) -> f64;
    /// Largest expected reward in the pool.
    fn best_expected(&self) -> f64;
}

/// Reward source backed by a [`Scenario`].
#[derive(Debug, Clone)]
pub struct ScenarioEnv<'a> {
    scenario: &'a Scenario,
    sigma_r_sq: f64,
    best: f64,
    rng: SeededRng,
}

impl<'a> ScenarioEnv<'a> {
    pub fn new(scenario: &'a Scenario, sigma_r_sq: f64, rng: SeededRng) -> Self {
        Self {
            scenario,
            sigma_r_sq,
            best: scenario.best_utility(),
            rng,
        }
    }
}

impl RewardSource for ScenarioEnv<'_> {
    fn draw(&mut self, arm: ArmId) -> f64 {
        let spec = self.scenario.dataset(arm).expect("arm within scenario");
        draw_reward(
            spec,
            self.scenario.reward_kind,
            self.sigma_r_sq,
            &mut self.rng,
        )
    }

    fn expected(&self, arm: ArmId) -> f64 {
        self.scenario
            .dataset(arm)
            .expect("arm within scenario")
            .utility
    }

    fn best_expected(&self) -> f64 {
        self.best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::*;

    fn spec(utility: f64) -> DatasetSpec {
        DatasetSpec {
            name: "d".into(),
            utility,
            n_points: 1,
        }
    }

    #[test]
    fn degenerate_bernoulli_rewards() {
        let mut rng = seeded(5);
        for _ in 0..1000 {
            assert_eq!(
                draw_reward(&spec(1.0), RewardKind::Bernoulli, 1.0, &mut rng),
                1.0
            );
            assert_eq!(
                draw_reward(&spec(0.0), RewardKind::Bernoulli, 1.0, &mut rng),
                0.0
            );
        }
    }

    #[test]
    fn bernoulli_empirical_mean() {
        // 0.527: MNIST local accuracy used as a utility.
        let mut rng = seeded(77);
        let n = 100_000;
        let total: f64 = (0..n)
            .map(|_| draw_reward(&spec(0.527), RewardKind::Bernoulli, 1.0, &mut rng))
            .sum();
        let mean = total / n as f64;
        assert!((mean - 0.527).abs() < 0.01, "mean {mean}");
        // 3/√N envelope on the Bernoulli standard deviation.
        assert!((mean - 0.527).abs() < 3.0 * (0.527f64 * 0.473).sqrt() / (n as f64).sqrt());
    }

    #[test]
    fn gaussian_rewards_have_model_noise() {
        let mut rng = seeded(8);
        let n = 100_000;
        let xs: Vec<f64> = (0..n)
            .map(|_| draw_reward(&spec(0.4), RewardKind::Gaussian, 0.25, &mut rng))
            .collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        assert!((mean - 0.4).abs() < 3.0 * 0.5 / (n as f64).sqrt());
        assert!((var - 0.25).abs() < 0.01);
    }

    #[test]
    fn validation_catches_malformed_pools() {
        let mut s = builtin_scenario(ScenarioTag::Digit5Perfect);
        s.validate().unwrap();
        s.groups[0].datasets[0].utility = 1.5;
        assert!(s.validate().is_err());
        s.reward_kind = RewardKind::Gaussian;
        s.validate().unwrap();
        s.groups[1].name = s.groups[0].name.clone();
        assert!(s.validate().is_err());

        let mut s = builtin_scenario(ScenarioTag::Digit5Perfect);
        s.groups[2].datasets.clear();
        assert!(s.validate().is_err());
        let mut s = builtin_scenario(ScenarioTag::Digit5Perfect);
        s.groups[0].datasets[1].n_points = 0;
        assert!(s.validate().is_err());
        let mut s = builtin_scenario(ScenarioTag::Digit5Perfect);
        s.groups.clear();
        assert!(s.validate().is_err());
        let mut s = builtin_scenario(ScenarioTag::Digit5Perfect);
        s.percentile = Some(100.0);
        assert!(s.validate().is_err());
    }

    #[test]
    fn optional_fields_are_omitted_and_defaulted() {
        let json = r#"{"name":"tiny","reward_kind":"bernoulli","groups":[{"name":"g","datasets":[{"name":"a","utility":0.5,"n_points":2}]}]}"#;
        let s = Scenario::from_json(json).unwrap();
        assert!(!s.stop_on_first_exhaustion);
        assert_eq!(s.seed, 0);
        assert_eq!(s.percentile, None);
        assert!(!s.to_json().contains("percentile"));
        assert_eq!(s.total_points(), 2);
    }

    fn arb_scenario() -> impl Strategy<Value = Scenario> {
        let dataset = (0.0f64..=1.0, 1u32..100);
        let group = proptest::collection::vec(dataset, 1..5);
        (
            proptest::collection::vec(group, 1..5),
            any::<bool>(),
            any::<u64>(),
            proptest::option::of(1.0f64..99.0),
            proptest::option::of(1usize..5000),
        )
            .prop_map(
                |(groups, stop, seed, percentile, default_budget)| Scenario {
                    name: "arb".into(),
                    reward_kind: RewardKind::Bernoulli,
                    stop_on_first_exhaustion: stop,
                    seed,
                    groups: groups
                        .into_iter()
                        .enumerate()
                        .map(|(g, ds)| GroupSpec {
                            name: format!("g{g}"),
                            datasets: ds
                                .into_iter()
                                .enumerate()
                                .map(|(d, (utility, n_points))| DatasetSpec {
                                    name: format!("g{g}d{d}"),
                                    utility,
                                    n_points,
                                })
                                .collect(),
                        })
                        .collect(),
                    percentile,
                    default_budget,
                },
            )
    }

    proptest! {
        #[test]
        fn scenario_json_round_trips(s in arb_scenario()) {
            s.validate().unwrap();
            let back = Scenario::from_json(&s.to_json()).unwrap();
            prop_assert_eq!(back, s);
        }
    }
}
