//! Regret, identification and cost accounting over selection traces.

use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::environment::Scenario;
use crate::error::{DashError, Result};
use crate::policy::{
    run_observed, terminal_selection, ArmId, PolicyConfig, PolicyKind, RunSummary, StepRecord,
};

/// Default first step of the logarithmic regret fit.
pub const LOG_FIT_START: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretTrace {
    pub theta_star: f64,
    /// `θ* − θ_ij` per dataset, indexed `[group][dataset]`.
    pub gaps: Vec<Vec<f64>>,
    pub instantaneous: Vec<f64>,
    pub cumulative: Vec<f64>,
}

impl RegretTrace {
    pub fn max_gap(&self) -> f64 {
        self.gaps.iter().flatten().copied().fold(0.0, f64::max)
    }

    pub fn total(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }
}

/// Recomputes regret from the true utilities of the arms in `trace`.
pub fn cumulative_regret(trace: &[StepRecord], scenario: &Scenario) -> Result<RegretTrace> {
    let theta_star = scenario.best_utility();
    let gaps: Vec<Vec<f64>> = scenario
        .groups
        .iter()
        .map(|g| g.datasets.iter().map(|d| theta_star - d.utility).collect())
        .collect();
    let mut instantaneous = Vec::with_capacity(trace.len());
    let mut cumulative = Vec::with_capacity(trace.len());
    let mut total = 0.0;
    for rec in trace {
        let gap = gaps
            .get(rec.group)
            .and_then(|g| g.get(rec.dataset))
            .copied()
            .ok_or_else(|| {
                DashError::Validation(format!(
                    "step {} references unknown arm {}",
                    rec.t,
                    rec.arm()
                ))
            })?;
        total += gap;
        instantaneous.push(gap);
        cumulative.push(total);
    }
    Ok(RegretTrace {
        theta_star,
        gaps,
        instantaneous,
        cumulative,
    })
}

/// Least-squares fit of `R_t ≈ a + b·ln t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogFit {
    pub intercept: f64,
    pub slope: f64,
    pub r_squared: f64,
}

/// Fits `cumulative[t-1]` against `ln t` for `t` in `start..=end` (1-based).
pub fn log_fit(cumulative: &[f64], start: usize, end: usize) -> Result<LogFit> {
    if start == 0 || end > cumulative.len() || end < start + 2 {
        return Err(DashError::InvalidParameter(format!(
            "log fit window {start}..={end} is invalid for a trace of {} steps",
            cumulative.len()
        )));
    }
    let xs: Vec<f64> = (start..=end).map(|t| (t as f64).ln()).collect();
    let ys = &cumulative[start - 1..end];
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 {
        1.0
    } else {
        sxy * sxy / (sxx * syy)
    };
    Ok(LogFit {
        intercept,
        slope,
        r_squared,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentificationReport {
    pub optimal: Vec<ArmId>,
    pub selected: Vec<ArmId>,
    pub all_optimal_selected: bool,
    /// Fraction of selected datasets that are optimal; 0 for an empty selection.
    pub precision: f64,
    /// Fraction of optimal datasets that were selected.
    pub recall: f64,
    /// Mean true utility of the selected datasets.
    pub selected_mean_utility: Option<f64>,
    pub max_posterior_mean: f64,
    pub steps: usize,
    pub total_draws: u64,
}

pub fn identification_report(summary: &RunSummary, scenario: &Scenario) -> IdentificationReport {
    let optimal = scenario.optimal_arms();
    let selected = summary.selected_datasets.clone();
    let hits = selected.iter().filter(|a| optimal.contains(a)).count();
    let precision = if selected.is_empty() {
        0.0
    } else {
        hits as f64 / selected.len() as f64
    };
    let recall = if optimal.is_empty() {
        1.0
    } else {
        hits as f64 / optimal.len() as f64
    };
    let selected_mean_utility = (!selected.is_empty()).then(|| {
        selected
            .iter()
            .filter_map(|&a| scenario.dataset(a))
            .map(|d| d.utility)
            .sum::<f64>()
            / selected.len() as f64
    });
    let max_posterior_mean = summary
        .groups
        .iter()
        .map(|g| g.mean)
        .chain(summary.datasets.iter().map(|d| d.mean))
        .fold(f64::NEG_INFINITY, f64::max);
    IdentificationReport {
        all_optimal_selected: hits == optimal.len(),
        optimal,
        selected,
        precision,
        recall,
        selected_mean_utility,
        max_posterior_mean,
        steps: summary.steps,
        total_draws: summary.total_draws,
    }
}

/// Runs a policy and finds the earliest step from which the terminal
/// selection rule, applied to the current posteriors, contains every
/// optimal dataset through the end of the run. `None` if that never holds.
pub fn run_with_identification(
    config: &PolicyConfig,
    scenario: &Scenario,
    budget: usize,
    seed: u64,
    kind: PolicyKind,
) -> Result<(RunSummary, Option<usize>)> {
    let optimal = scenario.optimal_arms();
    let mut last_miss = 0usize;
    let mut selection_error = None;
    let summary =
        run_observed(
            config,
            scenario,
            budget,
            seed,
            kind,
            |state, rec| match terminal_selection(state) {
                Ok((_, chosen)) => {
                    if !optimal.iter().all(|a| chosen.contains(a)) {
                        last_miss = rec.t;
                    }
                }
                Err(e) => {
                    selection_error.get_or_insert(e);
                }
            },
        )?;
    if let Some(e) = selection_error {
        return Err(e);
    }
    let identified = (last_miss < summary.steps).then_some(last_miss + 1);
    Ok((summary, identified))
}

/// One-sided sign test: probability of at least `wins` successes out of
/// `wins + losses` fair coin flips.
pub fn sign_test_p_value(wins: usize, losses: usize) -> f64 {
    let n = wins + losses;
    if n == 0 {
        return 1.0;
    }
    // log C(n, k) accumulated incrementally.
    let ln_half_n = n as f64 * 0.5f64.ln();
    let mut ln_choose = 0.0;
    let mut tail = 0.0;
    for k in 0..=n {
        if k > 0 {
            ln_choose += ((n - k + 1) as f64).ln() - (k as f64).ln();
        }
        if k >= wins {
            tail += (ln_choose + ln_half_n).exp();
        }
    }
    tail.min(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation; 0 when `n < 2`.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self {
                n,
                mean: 0.0,
                std: 0.0,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Self { n, mean, std }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TraceRow {
    t: usize,
    group: usize,
    dataset: usize,
    reward: f64,
    inst_regret: f64,
    cum_regret: f64,
    draws_this_step: u64,
}

/// Writes the per-step CSV
/// (`t,group,dataset,reward,inst_regret,cum_regret,draws_this_step`).
pub fn write_trace_csv(path: &Path, trace: &[StepRecord]) -> Result<()> {
    let csv_err = |source| DashError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let file = File::create(path).map_err(|e| DashError::io("writing trace", path, e))?;
    let mut w = csv::Writer::from_writer(file);
    for r in trace {
        w.serialize(TraceRow {
            t: r.t,
            group: r.group,
            dataset: r.dataset,
            reward: r.reward,
            inst_regret: r.inst_regret,
            cum_regret: r.cum_regret,
            draws_this_step: r.draws,
        })
        .map_err(csv_err)?;
    }
    w.flush()
        .map_err(|e| DashError::io("writing trace", path, e))
}

pub fn read_trace_csv(path: &Path) -> Result<Vec<StepRecord>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|source| DashError::Csv {
        path: path.to_path_buf(),
        source,
    })?;
    rdr.deserialize::<TraceRow>()
        .map(|row| {
            let r = row.map_err(|source| DashError::Csv {
                path: path.to_path_buf(),
                source,
            })?;
            Ok(StepRecord {
                t: r.t,
                group: r.group,
                dataset: r.dataset,
                reward: r.reward,
                inst_regret: r.inst_regret,
                cum_regret: r.cum_regret,
                draws: r.draws_this_step,
            })
        })
        .collect()
}
