//! Built-in pools shaped after the Digit-Five and DomainNet benchmarks.
//!
//! Utilities are simulated from the perspective of one target local model:
//! datasets from the target's own domain are useful, others are not. The
//! numbers are configuration, not measurements:
//!
//! | domain  | utilities          |
//! |---------|--------------------|
//! | mnist   | 0.90 0.90 0.90     |
//! | mnist_m | 0.45 0.44 0.46     |
//! | usps    | 0.55 0.54 0.53     |
//! | svhn    | 0.35 0.36 0.34     |
//! | syn     | 0.40 0.41 0.39     |
//!
//! `no_relevant` sets every utility to 0.1.

use std::fmt;
use std::str::FromStr;

use super::{DatasetSpec, GroupSpec, RewardKind, Scenario};
use crate::error::DashError;

/// Points per dataset: 10 clusters × 5 near-centroid points.
const DIGIT5_POINTS: u32 = 50;
/// Points per dataset: 15 clusters × 5 near-centroid points.
const DOMAINNET_POINTS: u32 = 75;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScenarioTag {
    Digit5Perfect,
    Digit5Mixed,
    Digit5Cross,
    Digit5Scaled51,
    NoRelevant,
    Budget15,
    DomainnetPerfect,
}

impl ScenarioTag {
    pub const ALL: [ScenarioTag; 7] = [
        ScenarioTag::Digit5Perfect,
        ScenarioTag::Digit5Mixed,
        ScenarioTag::Digit5Cross,
        ScenarioTag::Digit5Scaled51,
        ScenarioTag::NoRelevant,
        ScenarioTag::Budget15,
        ScenarioTag::DomainnetPerfect,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioTag::Digit5Perfect => "digit5_perfect",
            ScenarioTag::Digit5Mixed => "digit5_mixed",
            ScenarioTag::Digit5Cross => "digit5_cross",
            ScenarioTag::Digit5Scaled51 => "digit5_scaled51",
            ScenarioTag::NoRelevant => "no_relevant",
            ScenarioTag::Budget15 => "budget15",
            ScenarioTag::DomainnetPerfect => "domainnet_perfect",
        }
    }
}

impl fmt::Display for ScenarioTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioTag {
    type Err = DashError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| DashError::UnknownScenario(s.to_string()))
    }
}

const DIGIT5_DOMAINS: [(&str, &str, [f64; 3]); 5] = [
    ("mnist", "mn", [0.90, 0.90, 0.90]),
    ("mnist_m", "mm", [0.45, 0.44, 0.46]),
    ("usps", "us", [0.55, 0.54, 0.53]),
    ("svhn", "sv", [0.35, 0.36, 0.34]),
    ("syn", "sy", [0.40, 0.41, 0.39]),
];

fn digit5_utility(name: &str) -> f64 {
    let (prefix, idx) = name.split_at(2);
    let idx: usize = idx.parse().expect("subset index");
    DIGIT5_DOMAINS
        .iter()
        .find(|(_, p, _)| *p == prefix)
        .map(|(_, _, u)| u[idx])
        .expect("known domain prefix")
}

fn grouped(
    layout: &[(&str, [&str; 3])],
    points: u32,
    utility: impl Fn(&str) -> f64,
) -> Vec<GroupSpec> {
    layout
        .iter()
        .map(|(group, members)| GroupSpec {
            name: group.to_string(),
            datasets: members
                .iter()
                .map(|m| DatasetSpec {
                    name: m.to_string(),
                    utility: utility(m),
                    n_points: points,
                })
                .collect(),
        })
        .collect()
}

const PERFECT: [(&str, [&str; 3]); 5] = [
    ("mnist", ["mn0", "mn1", "mn2"]),
    ("mnist_m", ["mm0", "mm1", "mm2"]),
    ("usps", ["us0", "us1", "us2"]),
    ("svhn", ["sv0", "sv1", "sv2"]),
    ("syn", ["sy0", "sy1", "sy2"]),
];

const MIXED: [(&str, [&str; 3]); 5] = [
    ("mixed0", ["mn1", "mn2", "mm0"]),
    ("mixed1", ["mm1", "mm2", "us0"]),
    ("mixed2", ["us1", "us2", "sv0"]),
    ("mixed3", ["sv1", "sv2", "sy0"]),
    ("mixed4", ["sy1", "sy2", "mn0"]),
];

const CROSS: [(&str, [&str; 3]); 5] = [
    ("cross0", ["mn0", "sv0", "mm0"]),
    ("cross1", ["sv1", "mm1", "us0"]),
    ("cross2", ["mm2", "us1", "sy0"]),
    ("cross3", ["us2", "sy1", "mn1"]),
    ("cross4", ["sy2", "mn2", "sv2"]),
];

fn scenario(name: &str, groups: Vec<GroupSpec>) -> Scenario {
    Scenario {
        name: name.to_string(),
        reward_kind: RewardKind::Bernoulli,
        stop_on_first_exhaustion: false,
        seed: 0,
        groups,
        percentile: None,
        default_budget: None,
    }
}

fn scaled51() -> Vec<GroupSpec> {
    // Group sizes in domain order mnist, svhn, usps, mnist_m, syn.
    const SIZES: [(&str, &str, usize, f64); 5] = [
        ("mnist", "mn", 10, 0.90),
        ("svhn", "sv", 12, 0.35),
        ("usps", "us", 11, 0.54),
        ("mnist_m", "mm", 9, 0.45),
        ("syn", "sy", 9, 0.40),
    ];
    SIZES
        .iter()
        .map(|&(group, prefix, size, base)| GroupSpec {
            name: group.to_string(),
            datasets: (0..size)
                .map(|j| {
                    let utility = if prefix == "mn" {
                        base
                    } else {
                        // Spread ±0.01 around the domain level.
                        base + 0.01 * ((j % 3) as f64 - 1.0)
                    };
                    DatasetSpec {
                        name: format!("{prefix}{j}"),
                        utility,
                        n_points: DIGIT5_POINTS,
                    }
                })
                .collect(),
        })
        .collect()
}

fn domainnet() -> Vec<GroupSpec> {
    // Target: REAL. Clipart and painting transfer partially.
    const DOMAINS: [(&str, &str, f64); 5] = [
        ("clipart", "cp", 0.70),
        ("quickdraw", "qd", 0.30),
        ("real", "rl", 0.80),
        ("sketch", "sk", 0.50),
        ("painting", "pt", 0.60),
    ];
    DOMAINS
        .iter()
        .map(|&(group, prefix, utility)| GroupSpec {
            name: group.to_string(),
            datasets: (0..3)
                .map(|j| DatasetSpec {
                    name: format!("{prefix}{j}"),
                    utility,
                    n_points: DOMAINNET_POINTS,
                })
                .collect(),
        })
        .collect()
}

/// Builds one of the predefined pools.
pub fn builtin_scenario(tag: ScenarioTag) -> Scenario {
    let name = tag.as_str();
    match tag {
        ScenarioTag::Digit5Perfect => {
            scenario(name, grouped(&PERFECT, DIGIT5_POINTS, digit5_utility))
        }
        ScenarioTag::Digit5Mixed => Scenario {
            percentile: Some(60.0),
            ..scenario(name, grouped(&MIXED, DIGIT5_POINTS, digit5_utility))
        },
        ScenarioTag::Digit5Cross => Scenario {
            percentile: Some(60.0),
            ..scenario(name, grouped(&CROSS, DIGIT5_POINTS, digit5_utility))
        },
        ScenarioTag::Digit5Scaled51 => scenario(name, scaled51()),
        ScenarioTag::NoRelevant => Scenario {
            default_budget: Some(600),
            ..scenario(name, grouped(&PERFECT, DIGIT5_POINTS, |_| 0.1))
        },
        ScenarioTag::Budget15 => Scenario {
            default_budget: Some(15),
            ..scenario(name, grouped(&PERFECT, 1, digit5_utility))
        },
        ScenarioTag::DomainnetPerfect => scenario(name, domainnet()),
    }
}
