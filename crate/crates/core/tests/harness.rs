use std::fs;

use dash_core::environment::{builtin_scenario, ScenarioTag};
use dash_core::harness::{execute, reaggregate, ExperimentPlan};
use dash_core::policy::{PolicyConfig, PolicyKind};

fn plan(
    tag: ScenarioTag,
    budgets: Vec<usize>,
    seeds: u64,
    dir: &std::path::Path,
) -> ExperimentPlan {
    let scenario = builtin_scenario(tag);
    let config = PolicyConfig {
        percentile_x: scenario.percentile.unwrap_or(80.0),
        ..PolicyConfig::default()
    };
    ExperimentPlan {
        scenario,
        config,
        policies: vec![PolicyKind::Hierarchical, PolicyKind::Flat],
        budgets,
        seeds: (0..seeds).collect(),
        output_dir: dir.to_path_buf(),
        workers: Some(2),
    }
}

#[test]
fn identical_plans_give_identical_traces() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ea = execute(&plan(ScenarioTag::Digit5Mixed, vec![100], 3, a.path())).unwrap();
    let eb = execute(&plan(ScenarioTag::Digit5Mixed, vec![100], 3, b.path())).unwrap();
    assert_eq!(ea.manifest.cells.len(), 6);
    for (ca, cb) in ea.manifest.cells.iter().zip(&eb.manifest.cells) {
        let ta = fs::read(ea.manifest_path.parent().unwrap().join(&ca.trace)).unwrap();
        let tb = fs::read(eb.manifest_path.parent().unwrap().join(&cb.trace)).unwrap();
        assert_eq!(ta, tb);
    }
    assert_eq!(
        fs::read(&ea.aggregate_path).unwrap(),
        fs::read(&eb.aggregate_path).unwrap()
    );
}

#[test]
fn adding_seeds_leaves_existing_cells_alone() {
    let small = tempfile::tempdir().unwrap();
    let large = tempfile::tempdir().unwrap();
    let es = execute(&plan(ScenarioTag::Budget15, vec![15], 2, small.path())).unwrap();
    let el = execute(&plan(ScenarioTag::Budget15, vec![15], 4, large.path())).unwrap();
    for cell in &es.manifest.cells {
        let a = fs::read(es.manifest_path.parent().unwrap().join(&cell.trace)).unwrap();
        let b = fs::read(el.manifest_path.parent().unwrap().join(&cell.trace)).unwrap();
        assert_eq!(a, b, "{:?}", cell.trace);
    }
}

#[test]
fn aggregate_recomputes_from_written_files() {
    let dir = tempfile::tempdir().unwrap();
    let exec = execute(&plan(
        ScenarioTag::Digit5Cross,
        vec![50, 120],
        3,
        dir.path(),
    ))
    .unwrap();
    assert_eq!(exec.aggregate.rows.len(), 4);
    let (_, again) = reaggregate(&exec.manifest_path).unwrap();
    assert_eq!(again, exec.aggregate);
}

// Flat sampling settles on the three relevant datasets and drains one of them
// early. Hierarchical group draws stay diffuse (group variance is floored) and
// spread pulls across groups, so its first exhaustion comes later.
#[test]
fn flat_exhausts_a_dataset_before_hierarchical() {
    let dir = tempfile::tempdir().unwrap();
    let exec = execute(&plan(ScenarioTag::Digit5Perfect, vec![750], 5, dir.path())).unwrap();
    let row = |k: PolicyKind| exec.aggregate.rows.iter().find(|r| r.policy == k).unwrap();
    let hier = row(PolicyKind::Hierarchical);
    let flat = row(PolicyKind::Flat);
    assert_eq!(hier.first_exhaustion_step.n, 5);
    assert_eq!(flat.first_exhaustion_step.n, 5);
    assert!(
        flat.first_exhaustion_step.mean < hier.first_exhaustion_step.mean,
        "hierarchical {} vs flat {}",
        hier.first_exhaustion_step.mean,
        flat.first_exhaustion_step.mean
    );
}
