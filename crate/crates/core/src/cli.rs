//! The `dash` command line.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::belief::oracle::oracle_equivalence;
use crate::environment::{kmeans_representatives, FeaturePool, KMeansOptions};
use crate::error::{DashError, Result};
use crate::harness::{self, Aggregate, ExperimentPlan, PlanFile};
use crate::policy::{PolicyConfig, PolicyKind};
use crate::rng::seeded;

/// Largest tolerated closed-form vs oracle disagreement.
pub const ORACLE_TOLERANCE: f64 = 1e-6;
pub const DEFAULT_PERCENTILE: f64 = 80.0;

#[derive(Debug, Parser)]
#[command(
    name = "dash",
    version,
    about = "Hierarchical Thompson-sampling dataset selection"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one policy on one scenario with one seed.
    Run(RunArgs),
    /// Run both policies over several seeds and print a comparison table.
    Compare(CompareArgs),
    /// Execute an experiment plan file.
    Sweep {
        #[arg(long)]
        plan: PathBuf,
    },
    /// Check the closed-form posteriors against the numerical oracles.
    OracleCheck {
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Pick near-centroid representatives from a feature CSV.
    Kmeans(KmeansArgs),
    /// Summarize a results directory.
    Report {
        #[arg(long)]
        dir: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PolicyArg {
    #[value(alias = "hierarchical")]
    Hier,
    Flat,
}

impl From<PolicyArg> for PolicyKind {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Hier => PolicyKind::Hierarchical,
            PolicyArg::Flat => PolicyKind::Flat,
        }
    }
}

#[derive(Debug, Args)]
struct ScenarioArgs {
    /// Scenario JSON file or built-in tag.
    #[arg(long)]
    scenario: String,
    /// Step budget; defaults to the scenario's budget or the whole pool.
    #[arg(long)]
    budget: Option<usize>,
    /// Base seed; defaults to the scenario's seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Terminal-selection percentile (default: scenario setting, else 80).
    #[arg(long)]
    percentile: Option<f64>,
    /// Reward observation variance assumed by the posteriors.
    #[arg(long)]
    sigma_r_sq: Option<f64>,
    /// Stop as soon as one dataset runs out of representative points.
    #[arg(long)]
    stop_on_first_exhaustion: bool,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    common: ScenarioArgs,
    #[arg(long, value_enum)]
    policy: PolicyArg,
}

#[derive(Debug, Args)]
struct CompareArgs {
    #[command(flatten)]
    common: ScenarioArgs,
    /// Number of seeds, counting up from the base seed.
    #[arg(long)]
    seeds: usize,
}

#[derive(Debug, Args)]
struct KmeansArgs {
    #[arg(long)]
    csv: PathBuf,
    #[arg(long)]
    k: usize,
    #[arg(long)]
    per_cluster: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
}

fn build_plan(
    common: &ScenarioArgs,
    policies: Vec<PolicyKind>,
    n_seeds: usize,
) -> Result<ExperimentPlan> {
    let mut scenario = harness::resolve_scenario(&common.scenario)?;
    if common.stop_on_first_exhaustion {
        scenario.stop_on_first_exhaustion = true;
    }
    let mut config = PolicyConfig {
        percentile_x: common
            .percentile
            .or(scenario.percentile)
            .unwrap_or(DEFAULT_PERCENTILE),
        ..PolicyConfig::default()
    };
    if let Some(v) = common.sigma_r_sq {
        config.sigma_r_sq = v;
    }
    let budget = match common.budget {
        Some(b) => b,
        None => scenario
            .default_budget
            .unwrap_or_else(|| scenario.total_points() as usize),
    };
    let base = common.seed.unwrap_or(scenario.seed);
    if n_seeds == 0 {
        return Err(DashError::Validation("--seeds must be at least 1".into()));
    }
    let seeds = (0..n_seeds as u64).map(|i| base.wrapping_add(i)).collect();
    let plan = ExperimentPlan {
        scenario,
        config,
        policies,
        budgets: vec![budget],
        seeds,
        output_dir: common.out.clone(),
        workers: None,
    };
    plan.validate()?;
    Ok(plan)
}

fn fmt_stat(
    m: &harness::AggregateRow,
    f: fn(&harness::AggregateRow) -> crate::metrics::MeanStd,
) -> String {
    let s = f(m);
    if s.n == 0 {
        "-".into()
    } else {
        format!("{:.3}±{:.3}", s.mean, s.std)
    }
}

/// Console table for an aggregate file.
pub fn format_table(agg: &Aggregate) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "scenario: {}", agg.scenario);
    let _ = writeln!(
        out,
        "{:<13} {:>7} {:>5} {:>17} {:>17} {:>17} {:>9} {:>13} {:>13} {:>13} {:>13}",
        "policy",
        "budget",
        "runs",
        "steps",
        "first_exhaust",
        "identified_at",
        "ident%",
        "recall",
        "precision",
        "sel_utility",
        "draws/step"
    );
    for r in &agg.rows {
        let _ = writeln!(
            out,
            "{:<13} {:>7} {:>5} {:>17} {:>17} {:>17} {:>9.1} {:>13} {:>13} {:>13} {:>13}",
            r.policy.as_str(),
            r.budget,
            r.runs,
            fmt_stat(r, |r| r.steps),
            fmt_stat(r, |r| r.first_exhaustion_step),
            fmt_stat(r, |r| r.identified_at),
            100.0 * r.identified_rate,
            fmt_stat(r, |r| r.recall),
            fmt_stat(r, |r| r.precision),
            fmt_stat(r, |r| r.selected_mean_utility),
            fmt_stat(r, |r| r.draws_per_step),
        );
    }
    out
}

fn execute_and_print(plan: &ExperimentPlan) -> Result<()> {
    let exec = harness::execute(plan)?;
    // Print from what was written, not from memory.
    let agg: Aggregate = harness::read_json(&exec.aggregate_path)?;
    print!("{}", format_table(&agg));
    println!("manifest: {}", exec.manifest_path.display());
    Ok(())
}

#[derive(Serialize)]
struct ClusterOut {
    cluster: usize,
    size: usize,
    centroid: Vec<f64>,
    representatives: Vec<usize>,
    labels: Vec<i64>,
}

#[derive(Serialize)]
struct KmeansOut {
    k: usize,
    points_per_cluster: usize,
    iterations: usize,
    reseeds: usize,
    objective: Vec<f64>,
    clusters: Vec<ClusterOut>,
}

fn kmeans_cmd(args: &KmeansArgs) -> Result<()> {
    let pool = FeaturePool::from_csv(&args.csv, args.k, args.per_cluster)?;
    let opts = KMeansOptions {
        max_iters: args.max_iters,
        tol: args.tol,
    };
    let res = kmeans_representatives(&pool, opts, &mut seeded(args.seed))?;
    let clusters = res
        .representatives
        .iter()
        .enumerate()
        .map(|(c, reps)| ClusterOut {
            cluster: c,
            size: res.assignments.iter().filter(|&&a| a == c).count(),
            centroid: res.centroids[c].clone(),
            representatives: reps.clone(),
            labels: reps.iter().map(|&i| pool.labels[i]).collect(),
        })
        .collect();
    let out = KmeansOut {
        k: args.k,
        points_per_cluster: args.per_cluster,
        iterations: res.iterations,
        reseeds: res.reseeds,
        objective: res.objective_history,
        clusters,
    };
    let text = serde_json::to_string_pretty(&out).expect("kmeans output serializes") + "\n";
    std::fs::write(&args.out, text).map_err(|e| DashError::io("writing", &args.out, e))?;
    let total: usize = res.representatives.iter().map(Vec::len).sum();
    println!(
        "{total} representatives in {} clusters -> {}",
        args.k,
        args.out.display()
    );
    Ok(())
}

fn report_cmd(dir: &Path) -> Result<()> {
    let mut aggregates = Vec::new();
    for manifest in harness::find_manifests(dir)? {
        let (_, agg) = harness::reaggregate(&manifest)?;
        aggregates.push(agg);
    }
    let path = dir.join("report.json");
    let text = serde_json::to_string_pretty(&aggregates).expect("report serializes") + "\n";
    std::fs::write(&path, text).map_err(|e| DashError::io("writing", &path, e))?;
    let written: Vec<Aggregate> = harness::read_json(&path)?;
    for agg in &written {
        print!("{}", format_table(agg));
    }
    println!("report: {}", path.display());
    Ok(())
}

fn dispatch(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Run(args) => {
            let plan = build_plan(&args.common, vec![args.policy.into()], 1)?;
            execute_and_print(&plan)?;
        }
        Command::Compare(args) => {
            let plan = build_plan(
                &args.common,
                vec![PolicyKind::Hierarchical, PolicyKind::Flat],
                args.seeds,
            )?;
            execute_and_print(&plan)?;
        }
        Command::Sweep { plan } => {
            let plan = PlanFile::load(&plan)?.into_plan()?;
            execute_and_print(&plan)?;
        }
        Command::OracleCheck { trials, seed } => {
            let r = oracle_equivalence(trials, seed)?;
            println!("trials: {}", r.trials);
            println!("group mean    max |dev| = {:.3e}", r.max_group_mean_dev);
            println!("group var     max |dev| = {:.3e}", r.max_group_var_dev);
            println!("dataset mean  max |dev| = {:.3e}", r.max_dataset_mean_dev);
            println!("dataset var   max |dev| = {:.3e}", r.max_dataset_var_dev);
            if r.max_deviation() > ORACLE_TOLERANCE {
                eprintln!("FAIL: deviation exceeds {ORACLE_TOLERANCE:e}");
                return Ok(1);
            }
            println!("PASS");
        }
        Command::Kmeans(args) => kmeans_cmd(&args)?,
        Command::Report { dir } => report_cmd(&dir)?,
    }
    Ok(0)
}

/// Parses `args` (including the program name) and runs the command.
///
/// Exit codes: 0 success, 1 runtime failure, 2 usage error.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
