//! Hierarchical and flat Thompson selection over a grouped pool.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::belief::{
    dataset_posterior, group_posterior, sample, DatasetStats, GaussianBelief, GroupStats,
    RewardModel,
};
use crate::environment::{RewardSource, Scenario, ScenarioEnv};
use crate::error::{DashError, Result};
use crate::rng::{mix_seed, seeded, PolicyRng};

/// Salt mixed into the run seed for the policy's sampling streams.
pub const POLICY_SEED_SALT: u64 = 1;
/// Salt mixed into the run seed for the reward stream.
pub const ENV_SEED_SALT: u64 = 2;

/// A dataset, addressed by its group and its position inside the group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ArmId {
    pub group: usize,
    pub dataset: usize,
}

impl ArmId {
    pub fn new(group: usize, dataset: usize) -> Self {
        Self { group, dataset }
    }
}

impl fmt::Display for ArmId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.group, self.dataset)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    #[serde(alias = "hier")]
    Hierarchical,
    Flat,
}

impl PolicyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::Hierarchical => "hierarchical",
            PolicyKind::Flat => "flat",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyKind {
    type Err = DashError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hier" | "hierarchical" => Ok(PolicyKind::Hierarchical),
            "flat" => Ok(PolicyKind::Flat),
            other => Err(DashError::Validation(format!("unknown policy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    Percentile,
    TopK,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub prior_mean: f64,
    pub prior_group_var: f64,
    pub prior_dataset_var: f64,
    pub sigma_r_sq: f64,
    pub percentile_x: f64,
    pub selection_mode: SelectionMode,
    pub top_k: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            prior_mean: 0.0,
            prior_group_var: 2.0,
            prior_dataset_var: 2.0,
            sigma_r_sq: 1.0,
            percentile_x: 80.0,
            selection_mode: SelectionMode::Percentile,
            top_k: 3,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        GaussianBelief::new(self.prior_mean, self.prior_group_var)?;
        GaussianBelief::new(self.prior_mean, self.prior_dataset_var)?;
        RewardModel::new(self.sigma_r_sq)?;
        if !(self.percentile_x > 0.0 && self.percentile_x < 100.0) {
            return Err(DashError::InvalidParameter(format!(
                "percentile {} must lie in (0, 100)",
                self.percentile_x
            )));
        }
        if self.top_k == 0 {
            return Err(DashError::InvalidParameter(
                "top_k must be at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn group_prior(&self) -> GaussianBelief {
        GaussianBelief {
            mean: self.prior_mean,
            variance: self.prior_group_var,
        }
    }

    pub fn reward_model(&self) -> RewardModel {
        RewardModel {
            sigma_r_sq: self.sigma_r_sq,
        }
    }
}

/// One row of the selection trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// 1-based step index.
    pub t: usize,
    pub group: usize,
    pub dataset: usize,
    pub reward: f64,
    pub inst_regret: f64,
    pub cum_regret: f64,
    /// Gaussian draws made to pick this arm.
    pub draws: u64,
}

impl StepRecord {
    pub fn arm(&self) -> ArmId {
        ArmId::new(self.group, self.dataset)
    }
}

#[derive(Debug, Clone)]
struct GroupState {
    stats: GroupStats,
    belief: GaussianBelief,
    active: usize,
}

#[derive(Debug, Clone)]
struct DatasetState {
    stats: DatasetStats,
    remaining: u32,
}

/// Mutable state of one selection run.
#[derive(Debug, Clone)]
pub struct SelectorState {
    kind: PolicyKind,
    config: PolicyConfig,
    groups: Vec<GroupState>,
    datasets: Vec<Vec<DatasetState>>,
    active_datasets: usize,
    t: usize,
    draws: u64,
    cum_regret: f64,
    first_exhaustion: Option<usize>,
    trace: Vec<StepRecord>,
}

impl SelectorState {
    /// Fresh state for a pool whose datasets hold `points[g][d]` representative points.
    pub fn from_shape(config: PolicyConfig, points: &[Vec<u32>], kind: PolicyKind) -> Result<Self> {
        config.validate()?;
        if points.is_empty() || points.iter().any(Vec::is_empty) {
            return Err(DashError::Validation(
                "every group needs at least one dataset".into(),
            ));
        }
        let prior = config.group_prior();
        let groups = points
            .iter()
            .map(|g| GroupState {
                stats: GroupStats::default(),
                belief: prior,
                active: g.iter().filter(|&&p| p > 0).count(),
            })
            .collect();
        let datasets: Vec<Vec<DatasetState>> = points
            .iter()
            .map(|g| {
                g.iter()
                    .map(|&remaining| DatasetState {
                        stats: DatasetStats::default(),
                        remaining,
                    })
                    .collect()
            })
            .collect();
        let active_datasets = points.iter().flatten().filter(|&&p| p > 0).count();
        Ok(Self {
            kind,
            config,
            groups,
            datasets,
            active_datasets,
            t: 0,
            draws: 0,
            cum_regret: 0.0,
            first_exhaustion: None,
            trace: Vec::new(),
        })
    }

    pub fn new(config: PolicyConfig, scenario: &Scenario, kind: PolicyKind) -> Result<Self> {
        scenario.validate()?;
        let points: Vec<Vec<u32>> = scenario
            .groups
            .iter()
            .map(|g| g.datasets.iter().map(|d| d.n_points).collect())
            .collect();
        Self::from_shape(config, &points, kind)
    }

    pub fn kind(&self) -> PolicyKind {
        self.kind
    }

    pub fn config(&self) -> &PolicyConfig {
        &self.config
    }

    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn group_len(&self, group: usize) -> usize {
        self.datasets[group].len()
    }

    pub fn arms(&self) -> impl Iterator<Item = ArmId> + '_ {
        self.datasets
            .iter()
            .enumerate()
            .flat_map(|(g, ds)| (0..ds.len()).map(move |d| ArmId::new(g, d)))
    }

    /// Steps taken so far.
    pub fn steps(&self) -> usize {
        self.t
    }

    /// Total Gaussian draws made so far.
    pub fn sample_draws(&self) -> u64 {
        self.draws
    }

    pub fn cumulative_regret(&self) -> f64 {
        self.cum_regret
    }

    /// Step at which some dataset first ran out of points.
    pub fn first_exhaustion(&self) -> Option<usize> {
        self.first_exhaustion
    }

    pub fn trace(&self) -> &[StepRecord] {
        &self.trace
    }

    pub fn active_datasets(&self) -> usize {
        self.active_datasets
    }

    pub fn active_groups(&self) -> usize {
        self.groups.iter().filter(|g| g.active > 0).count()
    }

    pub fn active_in_group(&self, group: usize) -> usize {
        self.groups[group].active
    }

    pub fn remaining_points(&self, arm: ArmId) -> u32 {
        self.datasets[arm.group][arm.dataset].remaining
    }

    pub fn is_exhausted(&self, arm: ArmId) -> bool {
        self.remaining_points(arm) == 0
    }

    pub fn group_stats(&self, group: usize) -> GroupStats {
        self.groups[group].stats
    }

    pub fn dataset_stats(&self, arm: ArmId) -> DatasetStats {
        self.datasets[arm.group][arm.dataset].stats
    }

    /// Current posterior of a group utility.
    pub fn group_belief(&self, group: usize) -> GaussianBelief {
        self.groups[group].belief
    }

    /// Current posterior of a dataset utility.
    ///
    /// Hierarchical: centred a priori on the current group posterior mean.
    /// Flat: centred on the shared prior mean.
    pub fn dataset_belief(&self, arm: ArmId) -> GaussianBelief {
        let centre = match self.kind {
            PolicyKind::Hierarchical => self.groups[arm.group].belief.mean,
            PolicyKind::Flat => self.config.prior_mean,
        };
        dataset_posterior(
            centre,
            self.config.prior_dataset_var,
            self.config.reward_model(),
            self.dataset_stats(arm),
        )
        .expect("validated configuration")
    }

    /// Records an externally obtained reward for `arm` and refreshes its
    /// group posterior. Does not consume a representative point.
    pub fn observe(&mut self, arm: ArmId, reward: f64) {
        self.datasets[arm.group][arm.dataset].stats.record(reward);
        let group = &mut self.groups[arm.group];
        group.stats.record(reward);
        group.belief = group_posterior(
            self.config.group_prior(),
            self.config.prior_dataset_var,
            self.config.reward_model(),
            group.stats,
        )
        .expect("validated configuration");
    }

    fn apply<E: RewardSource + ?Sized>(
        &mut self,
        arm: ArmId,
        env: &mut E,
        draws: u64,
    ) -> StepRecord {
        self.t += 1;
        self.draws += draws;
        let reward = env.draw(arm);
        self.observe(arm, reward);

        let ds = &mut self.datasets[arm.group][arm.dataset];
        ds.remaining -= 1;
        if ds.remaining == 0 {
            self.groups[arm.group].active -= 1;
            self.active_datasets -= 1;
            self.first_exhaustion.get_or_insert(self.t);
        }

        let inst_regret = env.best_expected() - env.expected(arm);
        self.cum_regret += inst_regret;
        let record = StepRecord {
            t: self.t,
            group: arm.group,
            dataset: arm.dataset,
            reward,
            inst_regret,
            cum_regret: self.cum_regret,
            draws,
        };
        self.trace.push(record);
        record
    }

    /// Advances one step with the policy this state was built for.
    pub fn step<E: RewardSource + ?Sized>(
        &mut self,
        env: &mut E,
        rng: &mut PolicyRng,
    ) -> Result<StepRecord> {
        match self.kind {
            PolicyKind::Hierarchical => step_hierarchical(self, env, rng),
            PolicyKind::Flat => step_flat(self, env, rng),
        }
    }
}

/// Index of the largest value; ties go to the earliest candidate.
fn argmax<T: Copy>(candidates: impl Iterator<Item = (T, f64)>) -> Option<T> {
    let mut best: Option<(T, f64)> = None;
    for (id, v) in candidates {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((id, v));
        }
    }
    best.map(|(id, _)| id)
}

/// One hierarchical step: Thompson draw per active group, then per active
/// dataset of the winning group; the chosen dataset is pulled and both
/// posteriors are refreshed.
pub fn step_hierarchical<E: RewardSource + ?Sized>(
    state: &mut SelectorState,
    env: &mut E,
    rng: &mut PolicyRng,
) -> Result<StepRecord> {
    if state.kind != PolicyKind::Hierarchical {
        return Err(DashError::InvalidParameter(
            "hierarchical step on a flat selector".into(),
        ));
    }
    if state.active_datasets == 0 {
        return Err(DashError::ExhaustedPool);
    }
    let mut draws = 0;

    let group = argmax(
        state
            .groups
            .iter()
            .enumerate()
            .filter(|(_, g)| g.active > 0)
            .map(|(i, g)| {
                draws += 1;
                (i, sample(&g.belief, &mut rng.group))
            }),
    )
    .expect("an active group exists");

    let active: Vec<usize> = (0..state.datasets[group].len())
        .filter(|&d| state.datasets[group][d].remaining > 0)
        .collect();
    let dataset = argmax(active.into_iter().map(|d| {
        draws += 1;
        let belief = state.dataset_belief(ArmId::new(group, d));
        (d, sample(&belief, &mut rng.dataset))
    }))
    .expect("chosen group has an active dataset");

    Ok(state.apply(ArmId::new(group, dataset), env, draws))
}

/// One flat step: a Thompson draw for every active dataset in the pool.
pub fn step_flat<E: RewardSource + ?Sized>(
    state: &mut SelectorState,
    env: &mut E,
    rng: &mut PolicyRng,
) -> Result<StepRecord> {
    if state.kind != PolicyKind::Flat {
        return Err(DashError::InvalidParameter(
            "flat step on a hierarchical selector".into(),
        ));
    }
    if state.active_datasets == 0 {
        return Err(DashError::ExhaustedPool);
    }
    let active: Vec<ArmId> = state.arms().filter(|&a| !state.is_exhausted(a)).collect();
    let draws = active.len() as u64;
    let arm = argmax(active.into_iter().map(|a| {
        let belief = state.dataset_belief(a);
        (a, sample(&belief, &mut rng.dataset))
    }))
    .expect("an active dataset exists");
    Ok(state.apply(arm, env, draws))
}

/// Empirical `x`-th percentile by linear interpolation between order
/// statistics at rank `(N - 1)·x/100`.
pub fn percentile_threshold(values: &[f64], x: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(DashError::Validation(
            "cannot take a percentile of nothing".into(),
        ));
    }
    if !(x > 0.0 && x < 100.0) {
        return Err(DashError::InvalidParameter(format!(
            "percentile {x} outside (0, 100)"
        )));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let h = (sorted.len() - 1) as f64 * x / 100.0;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Ok(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

fn top_k(values: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order.truncate(k);
    order.sort_unstable();
    order
}

/// Indices retained by the terminal selection rule, in ascending order.
///
/// Percentile mode keeps means strictly above the `percentile_x` threshold;
/// top-k mode keeps the `top_k` largest (ties → lowest index).
pub fn select_final(posterior_means: &[f64], config: &PolicyConfig) -> Result<Vec<usize>> {
    if posterior_means.is_empty() {
        return Err(DashError::Validation(
            "no posterior means to select from".into(),
        ));
    }
    Ok(match config.selection_mode {
        SelectionMode::Percentile => {
            let threshold = percentile_threshold(posterior_means, config.percentile_x)?;
            (0..posterior_means.len())
                .filter(|&i| posterior_means[i] > threshold)
                .collect()
        }
        SelectionMode::TopK => top_k(posterior_means, config.top_k),
    })
}

/// Terminal group and dataset selection for the current posteriors.
///
/// Hierarchical: groups are filtered first; datasets of the selected groups
/// are kept if they pass the dataset-level rule, where the percentile
/// threshold is taken over every dataset mean in the pool. Flat: the rule is
/// applied to all datasets and a group counts as selected when any of its
/// datasets is.
pub fn terminal_selection(state: &SelectorState) -> Result<(Vec<usize>, Vec<ArmId>)> {
    let config = state.config();
    let arms: Vec<ArmId> = state.arms().collect();
    let means: Vec<f64> = arms.iter().map(|&a| state.dataset_belief(a).mean).collect();

    match state.kind() {
        PolicyKind::Flat => {
            let chosen: Vec<ArmId> = select_final(&means, config)?
                .into_iter()
                .map(|i| arms[i])
                .collect();
            let mut groups: Vec<usize> = chosen.iter().map(|a| a.group).collect();
            groups.dedup();
            Ok((groups, chosen))
        }
        PolicyKind::Hierarchical => {
            let group_means: Vec<f64> = (0..state.num_groups())
                .map(|g| state.group_belief(g).mean)
                .collect();
            let groups = select_final(&group_means, config)?;
            let in_selected: Vec<usize> = (0..arms.len())
                .filter(|&i| groups.binary_search(&arms[i].group).is_ok())
                .collect();
            let chosen = match config.selection_mode {
                SelectionMode::Percentile => {
                    let threshold = percentile_threshold(&means, config.percentile_x)?;
                    in_selected
                        .into_iter()
                        .filter(|&i| means[i] > threshold)
                        .map(|i| arms[i])
                        .collect()
                }
                SelectionMode::TopK => {
                    let sub: Vec<f64> = in_selected.iter().map(|&i| means[i]).collect();
                    top_k(&sub, config.top_k)
                        .into_iter()
                        .map(|j| arms[in_selected[j]])
                        .collect()
                }
            };
            Ok((groups, chosen))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    BudgetReached,
    PoolExhausted,
    FirstExhaustion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupPosterior {
    pub name: String,
    pub mean: f64,
    pub variance: f64,
    pub pulls: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetPosterior {
    pub group: usize,
    pub dataset: usize,
    pub name: String,
    pub mean: f64,
    pub variance: f64,
    pub pulls: u64,
    pub reward_sum: f64,
    pub remaining_points: u32,
}

/// Outcome of one run. `groups` is empty for the flat policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub scenario: String,
    pub policy: PolicyKind,
    pub budget: usize,
    pub seed: u64,
    pub steps: usize,
    pub stop_reason: StopReason,
    pub first_exhaustion_step: Option<usize>,
    pub total_draws: u64,
    pub max_draws_per_step: u64,
    pub cumulative_regret: f64,
    pub groups: Vec<GroupPosterior>,
    pub datasets: Vec<DatasetPosterior>,
    pub selected_groups: Vec<usize>,
    pub selected_datasets: Vec<ArmId>,
    #[serde(skip)]
    pub trace: Vec<StepRecord>,
}

impl RunSummary {
    pub fn dataset_means(&self) -> Vec<f64> {
        self.datasets.iter().map(|d| d.mean).collect()
    }
}

/// Runs one policy on `scenario` for at most `budget` steps.
pub fn run(
    config: &PolicyConfig,
    scenario: &Scenario,
    budget: usize,
    seed: u64,
    kind: PolicyKind,
) -> Result<RunSummary> {
    run_observed(config, scenario, budget, seed, kind, |_, _| {})
}

/// [`run`], calling `observer` after every step.
pub fn run_observed<F>(
    config: &PolicyConfig,
    scenario: &Scenario,
    budget: usize,
    seed: u64,
    kind: PolicyKind,
    mut observer: F,
) -> Result<RunSummary>
where
    F: FnMut(&SelectorState, &StepRecord),
{
    if budget == 0 {
        return Err(DashError::Validation("budget must be at least 1".into()));
    }
    let mut state = SelectorState::new(*config, scenario, kind)?;
    let mut rng = PolicyRng::new(mix_seed(seed, POLICY_SEED_SALT));
    let mut env = ScenarioEnv::new(
        scenario,
        config.sigma_r_sq,
        seeded(mix_seed(seed, ENV_SEED_SALT)),
    );

    let stop_reason = loop {
        if state.steps() >= budget {
            break StopReason::BudgetReached;
        }
        if state.active_datasets() == 0 {
            break StopReason::PoolExhausted;
        }
        let record = state.step(&mut env, &mut rng)?;
        observer(&state, &record);
        if scenario.stop_on_first_exhaustion && state.first_exhaustion().is_some() {
            break StopReason::FirstExhaustion;
        }
    };

    let (selected_groups, selected_datasets) = terminal_selection(&state)?;
    let groups = match kind {
        PolicyKind::Hierarchical => scenario
            .groups
            .iter()
            .enumerate()
            .map(|(g, spec)| {
                let b = state.group_belief(g);
                GroupPosterior {
                    name: spec.name.clone(),
                    mean: b.mean,
                    variance: b.variance,
                    pulls: state.group_stats(g).pulls,
                }
            })
            .collect(),
        PolicyKind::Flat => Vec::new(),
    };
    let datasets = scenario
        .arms()
        .map(|(arm, spec)| {
            let b = state.dataset_belief(arm);
            let stats = state.dataset_stats(arm);
            DatasetPosterior {
                group: arm.group,
                dataset: arm.dataset,
                name: spec.name.clone(),
                mean: b.mean,
                variance: b.variance,
                pulls: stats.pulls,
                reward_sum: stats.reward_sum,
                remaining_points: state.remaining_points(arm),
            }
        })
        .collect();

    Ok(RunSummary {
        scenario: scenario.name.clone(),
        policy: kind,
        budget,
        seed,
        steps: state.steps(),
        stop_reason,
        first_exhaustion_step: state.first_exhaustion(),
        total_draws: state.sample_draws(),
        max_draws_per_step: state.trace().iter().map(|r| r.draws).max().unwrap_or(0),
        cumulative_regret: state.cumulative_regret(),
        groups,
        datasets,
        selected_groups,
        selected_datasets,
        trace: state.trace().to_vec(),
    })
}
