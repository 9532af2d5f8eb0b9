//! Seeded multi-run experiments and their on-disk artifacts.
//!
//! Layout under `output_dir`:
//!
//! ```text
//! <scenario>/manifest.json
//! <scenario>/aggregate.json
//! <scenario>/<policy>/seed<k>.csv         one budget in the plan
//! <scenario>/<policy>/seed<k>.json
//! <scenario>/<policy>/budget<N>/seed<k>.*  several budgets in the plan
//! ```
//!
//! Manifest paths are relative to the manifest's directory. Each cell runs
//! with its plan seed unchanged, so a cell's output depends only on its own
//! (scenario, config, policy, budget, seed) and never on its neighbours.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::environment::{builtin_scenario, Scenario, ScenarioTag};
use crate::error::{DashError, Result};
use crate::metrics::{
    identification_report, run_with_identification, write_trace_csv, IdentificationReport, MeanStd,
};
use crate::policy::{PolicyConfig, PolicyKind, RunSummary};

/// Environment variable capping the number of cells run in parallel.
pub const WORKERS_ENV: &str = "DASH_WORKERS";

/// A scenario given by built-in tag, file path, or inline object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScenarioRef {
    Inline(Box<Scenario>),
    Named(String),
}

impl ScenarioRef {
    /// Resolves a name: an existing file wins, otherwise a built-in tag.
    pub fn resolve(&self) -> Result<Scenario> {
        match self {
            ScenarioRef::Inline(s) => {
                s.validate()?;
                Ok((**s).clone())
            }
            ScenarioRef::Named(name) => resolve_scenario(name),
        }
    }
}

pub fn resolve_scenario(name: &str) -> Result<Scenario> {
    let path = Path::new(name);
    if path.is_file() {
        return Scenario::load(path);
    }
    match name.parse::<ScenarioTag>() {
        Ok(tag) => Ok(builtin_scenario(tag)),
        Err(_) => Err(DashError::Validation(format!(
            "scenario `{name}` is neither a readable file nor a built-in tag"
        ))),
    }
}

/// Plan file contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanFile {
    pub scenario: ScenarioRef,
    pub policies: Vec<PolicyKind>,
    pub budgets: Vec<usize>,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub config: Option<PolicyConfig>,
    #[serde(default)]
    pub percentile: Option<f64>,
    #[serde(default)]
    pub workers: Option<usize>,
}

impl PlanFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| DashError::io("reading plan", path, e))?;
        serde_json::from_str(&text).map_err(|source| DashError::Json {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn into_plan(self) -> Result<ExperimentPlan> {
        let scenario = self.scenario.resolve()?;
        let mut config = self.config.unwrap_or_default();
        if let Some(x) = self.percentile.or(scenario.percentile) {
            config.percentile_x = x;
        }
        let plan = ExperimentPlan {
            scenario,
            config,
            policies: self.policies,
            budgets: self.budgets,
            seeds: self.seeds,
            output_dir: self.output_dir,
            workers: self.workers,
        };
        plan.validate()?;
        Ok(plan)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPlan {
    pub scenario: Scenario,
    pub config: PolicyConfig,
    pub policies: Vec<PolicyKind>,
    pub budgets: Vec<usize>,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellKey {
    pub policy: PolicyKind,
    pub budget: usize,
    pub seed: u64,
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.config.validate()?;
        if self.policies.is_empty() || self.budgets.is_empty() || self.seeds.is_empty() {
            return Err(DashError::Validation(
                "plan needs at least one policy, budget and seed".into(),
            ));
        }
        let unique = |n: usize, set: usize, what: &str| {
            if n == set {
                Ok(())
            } else {
                Err(DashError::Validation(format!("plan lists a {what} twice")))
            }
        };
        unique(
            self.seeds.len(),
            self.seeds.iter().collect::<HashSet<_>>().len(),
            "seed",
        )?;
        unique(
            self.policies.len(),
            self.policies.iter().collect::<HashSet<_>>().len(),
            "policy",
        )?;
        unique(
            self.budgets.len(),
            self.budgets.iter().collect::<HashSet<_>>().len(),
            "budget",
        )?;
        if self.budgets.contains(&0) {
            return Err(DashError::Validation("budgets must be at least 1".into()));
        }
        Ok(())
    }

    /// Cells in policy-major, then budget, then seed order.
    pub fn cells(&self) -> Vec<CellKey> {
        let mut cells = Vec::new();
        for &policy in &self.policies {
            for &budget in &self.budgets {
                for &seed in &self.seeds {
                    cells.push(CellKey {
                        policy,
                        budget,
                        seed,
                    });
                }
            }
        }
        cells
    }

    pub fn scenario_dir(&self) -> PathBuf {
        self.output_dir.join(&self.scenario.name)
    }

    /// Path of a cell's artifacts relative to the scenario directory, without extension.
    pub fn cell_stem(&self, cell: &CellKey) -> PathBuf {
        let mut p = PathBuf::from(cell.policy.as_str());
        if self.budgets.len() > 1 {
            p.push(format!("budget{}", cell.budget));
        }
        p.push(format!("seed{}", cell.seed));
        p
    }
}

/// Per-cell JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub config_hash: String,
    pub config: PolicyConfig,
    pub summary: RunSummary,
    pub identification: IdentificationReport,
    /// Earliest step from which the selection kept every optimal dataset.
    pub identified_at: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestCell {
    pub policy: PolicyKind,
    pub budget: usize,
    pub seed: u64,
    pub config_hash: String,
    pub trace: PathBuf,
    pub summary: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub scenario: String,
    pub scenario_hash: String,
    pub config: PolicyConfig,
    pub cells: Vec<ManifestCell>,
    pub aggregate: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub policy: PolicyKind,
    pub budget: usize,
    pub runs: usize,
    pub steps: MeanStd,
    pub cumulative_regret: MeanStd,
    /// Over runs in which some dataset ran out of points.
    pub first_exhaustion_step: MeanStd,
    /// Over runs that identified every optimal dataset.
    pub identified_at: MeanStd,
    pub identified_rate: f64,
    pub draws_per_step: MeanStd,
    pub recall: MeanStd,
    pub precision: MeanStd,
    /// Over runs that selected anything.
    pub selected_mean_utility: MeanStd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub scenario: String,
    pub rows: Vec<AggregateRow>,
}

/// Mean ± standard deviation across seeds, one row per (policy, budget).
pub fn aggregate(scenario: &str, reports: &[CellReport]) -> Aggregate {
    let mut by_cell: BTreeMap<(usize, PolicyKind), Vec<&CellReport>> = BTreeMap::new();
    let mut order = Vec::new();
    for r in reports {
        let key = (r.summary.budget, r.summary.policy);
        if !by_cell.contains_key(&key) {
            order.push(key);
        }
        by_cell.entry(key).or_default().push(r);
    }
    let rows = order
        .into_iter()
        .map(|key| {
            let rs = &by_cell[&key];
            let collect = |f: &dyn Fn(&CellReport) -> Option<f64>| -> MeanStd {
                MeanStd::of(&rs.iter().filter_map(|r| f(r)).collect::<Vec<_>>())
            };
            let identified = rs.iter().filter(|r| r.identified_at.is_some()).count();
            AggregateRow {
                policy: key.1,
                budget: key.0,
                runs: rs.len(),
                steps: collect(&|r| Some(r.summary.steps as f64)),
                cumulative_regret: collect(&|r| Some(r.summary.cumulative_regret)),
                first_exhaustion_step: collect(&|r| {
                    r.summary.first_exhaustion_step.map(|s| s as f64)
                }),
                identified_at: collect(&|r| r.identified_at.map(|s| s as f64)),
                identified_rate: identified as f64 / rs.len() as f64,
                draws_per_step: collect(&|r| {
                    (r.summary.steps > 0)
                        .then(|| r.summary.total_draws as f64 / r.summary.steps as f64)
                }),
                recall: collect(&|r| Some(r.identification.recall)),
                precision: collect(&|r| Some(r.identification.precision)),
                selected_mean_utility: collect(&|r| r.identification.selected_mean_utility),
            }
        })
        .collect();
    Aggregate {
        scenario: scenario.to_string(),
        rows,
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash identifying everything that determines a cell's output.
pub fn config_hash(scenario: &Scenario, config: &PolicyConfig, cell: &CellKey) -> String {
    #[derive(Serialize)]
    struct Key<'a> {
        scenario: &'a Scenario,
        config: &'a PolicyConfig,
        cell: &'a CellKey,
    }
    let json = serde_json::to_vec(&Key {
        scenario,
        config,
        cell,
    })
    .expect("hash key serializes");
    sha256_hex(&json)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("artifact serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| DashError::io("writing", path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| DashError::io("reading", path, e))?;
    serde_json::from_str(&text).map_err(|source| DashError::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| DashError::io("creating directory", path, e))
}

/// Runs one cell and writes its trace and summary.
pub fn run_cell(plan: &ExperimentPlan, cell: &CellKey) -> Result<(ManifestCell, CellReport)> {
    let with_cell = |e: DashError| {
        DashError::Validation(format!(
            "cell {}/budget {}/seed {}: {e}",
            cell.policy, cell.budget, cell.seed
        ))
    };
    let scenario = &plan.scenario;
    let (summary, identified_at) =
        run_with_identification(&plan.config, scenario, cell.budget, cell.seed, cell.policy)
            .map_err(with_cell)?;
    let report = CellReport {
        config_hash: config_hash(scenario, &plan.config, cell),
        config: plan.config,
        identification: identification_report(&summary, scenario),
        identified_at,
        summary,
    };

    let stem = plan.cell_stem(cell);
    let dir = plan.scenario_dir();
    let trace_rel = stem.with_extension("csv");
    let summary_rel = stem.with_extension("json");
    let trace_abs = dir.join(&trace_rel);
    create_dir(trace_abs.parent().expect("cell path has a parent")).map_err(with_cell)?;
    write_trace_csv(&trace_abs, &report.summary.trace).map_err(with_cell)?;
    write_json(&dir.join(&summary_rel), &report).map_err(with_cell)?;

    Ok((
        ManifestCell {
            policy: cell.policy,
            budget: cell.budget,
            seed: cell.seed,
            config_hash: report.config_hash.clone(),
            trace: trace_rel,
            summary: summary_rel,
        },
        report,
    ))
}

fn worker_count(plan: &ExperimentPlan) -> usize {
    let from_env = std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok());
    let available = std::thread::available_parallelism().map_or(1, |n| n.get());
    let requested = plan.workers.unwrap_or(available);
    from_env.map_or(requested, |cap| requested.min(cap)).max(1)
}

/// Outcome of [`execute`].
#[derive(Debug, Clone)]
pub struct Execution {
    pub manifest: Manifest,
    pub manifest_path: PathBuf,
    pub aggregate: Aggregate,
    pub aggregate_path: PathBuf,
}

/// Runs every (policy × budget × seed) cell and writes traces, summaries,
/// the aggregate and the manifest. The first failing cell aborts the plan.
pub fn execute(plan: &ExperimentPlan) -> Result<Execution> {
    plan.validate()?;
    let dir = plan.scenario_dir();
    create_dir(&dir)?;

    let cells = plan.cells();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count(plan))
        .build()
        .map_err(|e| DashError::Validation(format!("cannot start worker pool: {e}")))?;
    let results: Vec<(ManifestCell, CellReport)> = pool.install(|| {
        cells
            .par_iter()
            .map(|c| run_cell(plan, c))
            .collect::<Result<_>>()
    })?;

    let reports: Vec<CellReport> = results.iter().map(|(_, r)| r.clone()).collect();
    let aggregate = aggregate(&plan.scenario.name, &reports);
    let aggregate_rel = PathBuf::from("aggregate.json");
    let aggregate_path = dir.join(&aggregate_rel);
    write_json(&aggregate_path, &aggregate)?;

    let manifest = Manifest {
        scenario: plan.scenario.name.clone(),
        scenario_hash: sha256_hex(plan.scenario.to_json().as_bytes()),
        config: plan.config,
        cells: results.into_iter().map(|(m, _)| m).collect(),
        aggregate: aggregate_rel,
    };
    let manifest_path = dir.join("manifest.json");
    write_json(&manifest_path, &manifest)?;

    Ok(Execution {
        manifest,
        manifest_path,
        aggregate,
        aggregate_path,
    })
}

/// Re-reads every cell summary listed in a manifest and recomputes the aggregate.
pub fn reaggregate(manifest_path: &Path) -> Result<(Manifest, Aggregate)> {
    let manifest: Manifest = read_json(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let reports = manifest
        .cells
        .iter()
        .map(|c| read_json::<CellReport>(&base.join(&c.summary)))
        .collect::<Result<Vec<_>>>()?;
    let agg = aggregate(&manifest.scenario, &reports);
    Ok((manifest, agg))
}

/// Manifests in `dir` itself or its immediate subdirectories, sorted.
pub fn find_manifests(dir: &Path) -> Result<Vec<PathBuf>> {
    let direct = dir.join("manifest.json");
    if direct.is_file() {
        return Ok(vec![direct]);
    }
    let entries = fs::read_dir(dir).map_err(|e| DashError::io("listing", dir, e))?;
    let mut found: Vec<PathBuf> = entries
        .filter_map(|e| e.ok())
        .map(|e| e.path().join("manifest.json"))
        .filter(|p| p.is_file())
        .collect();
    found.sort();
    if found.is_empty() {
        return Err(DashError::Validation(format!(
            "no manifest.json under {}",
            dir.display()
        )));
    }
    Ok(found)
}
