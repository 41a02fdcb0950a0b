//! Browser bindings for three interactive views: an allocation explorer,
//! a cost-strategy sweep and validation target selection.
//!
//! Each operation is a plain function returning JSON so it can be tested
//! natively; the `#[wasm_bindgen]` wrappers only convert errors.

use std::collections::BTreeSet;

use hcclean_core::allocation::{assign_tasks, brute_force_assignment, AssignmentProblem, Candidate};
use hcclean_core::expertise::TaskHistory;
use hcclean_core::fixtures;
use hcclean_core::model::{Budget, CellRef, TaskKind};
use hcclean_core::provenance::{ValidationMode, ValidationStrategy};
use hcclean_core::session::{AuditEvent, Session};
use hcclean_core::sim::{compare_strategies, simulate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

fn err(e: impl ToString) -> String {
    e.to_string()
}

#[derive(Serialize)]
struct Solution {
    chosen: Vec<String>,
    cost: f64,
    assignment: Vec<(String, Vec<CellRef>)>,
}

#[derive(Serialize)]
struct AllocationView {
    problem: AssignmentProblem,
    greedy: Result<Solution, String>,
    oracle: Result<Solution, String>,
}

/// Random cover instance with `humans` candidates over `cells` cells. A
/// `max_humans` of 0 means no budget.
pub fn allocation_json(
    seed: u64,
    humans: usize,
    cells: usize,
    density: f64,
    max_humans: u32,
) -> Result<String, String> {
    if humans == 0 || humans > 12 || cells == 0 || cells > 40 {
        return Err("use 1-12 humans and 1-40 cells".into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let all: Vec<CellRef> = (1..=cells as u64).map(|r| CellRef::new("T", r, "A")).collect();
    let pool = (0..humans)
        .map(|h| Candidate {
            id: format!("H{}", h + 1),
            cost: rng.gen_range(1..=6) as f64,
            coverable: all
                .iter()
                .filter(|_| rng.gen_bool(density.clamp(0.0, 1.0)))
                .cloned()
                .collect(),
        })
        .collect();
    let problem = AssignmentProblem {
        cells: all,
        pool,
        task: TaskKind::Repair,
        budget: (max_humans > 0).then_some(Budget::MaxHumans(max_humans)),
        prior: Default::default(),
    };
    let history = TaskHistory::new();
    let solve = |r: hcclean_core::Result<hcclean_core::allocation::Assignment>| {
        r.map(|a| Solution {
            chosen: a.chosen().iter().map(|s| s.to_string()).collect(),
            cost: a.total_cost,
            assignment: a.humans.into_iter().collect(),
        })
        .map_err(err)
    };
    let view = AllocationView {
        greedy: solve(assign_tasks(&problem, &history)),
        oracle: solve(brute_force_assignment(&problem, &history)),
        problem,
    };
    serde_json::to_string(&view).map_err(err)
}

#[derive(Serialize)]
struct SweepPoint {
    agent_error: f64,
    quantitative: Option<f64>,
    qualitative: Option<f64>,
    quantitative_tasks: usize,
    qualitative_tasks: usize,
}

/// Overlap accuracy of both cost strategies as the automatic repairer's
/// error rate grows from 0 to `max_agent_error`.
pub fn sweep_json(
    rows: usize,
    human_error: f64,
    max_agent_error: f64,
    steps: usize,
    seed: u64,
) -> Result<String, String> {
    if rows == 0 || rows > 400 || !(2..=21).contains(&steps) {
        return Err("use 1-400 rows and 2-21 steps".into());
    }
    let mut points = Vec::with_capacity(steps);
    for i in 0..steps {
        let agent_error = max_agent_error * i as f64 / (steps - 1) as f64;
        let cfg = fixtures::strategy_comparison(rows, human_error, agent_error, true, seed);
        let cmp = compare_strategies(&cfg).map_err(err)?;
        points.push(SweepPoint {
            agent_error,
            quantitative: cmp.quantitative.overlap_accuracy,
            qualitative: cmp.qualitative.overlap_accuracy,
            quantitative_tasks: cmp.quantitative.total_tasks,
            qualitative_tasks: cmp.qualitative.total_tasks,
        });
    }
    serde_json::to_string(&points).map_err(err)
}

#[derive(Serialize)]
struct TargetRow {
    cell: CellRef,
    factors: Vec<String>,
    selected: bool,
}

#[derive(Serialize)]
struct TargetView {
    candidates: Vec<TargetRow>,
    factors: Vec<hcclean_core::provenance::FactorRow>,
}

/// Runs the two-rule branches example with the given validation settings
/// for the second job and shows which repaired cells the validator sees.
pub fn targets_json(mode: &str, budget: usize, suspects: &str) -> Result<String, String> {
    let mode = match mode {
        "aggregate-coverage" => ValidationMode::AggregateCoverage,
        "isolate-factors" => ValidationMode::IsolateFactors,
        other => return Err(format!("unknown mode `{other}`")),
    };
    let mut strategy = ValidationStrategy::new(mode, budget).map_err(err)?;
    strategy.suspects = suspects
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect();
    let mut cfg = fixtures::scenario2();
    let job = cfg.jobs.last_mut().ok_or("fixture has no jobs")?;
    job.validation = Some(strategy);
    let job_id = job.id.clone();
    let (_, session) = simulate(&cfg).map_err(err)?;

    let cut = session
        .audit()
        .iter()
        .position(|r| matches!(&r.event, AuditEvent::ValidationStarted { job, .. } if *job == job_id))
        .ok_or("validation never started")?;
    let before = Session::replay(
        session.base().clone(),
        session.registry().clone(),
        &session.audit()[..=cut],
    )
    .map_err(err)?;
    let state = before.job(&job_id).map_err(err)?;
    let selected: BTreeSet<&CellRef> = state.targets.iter().collect();
    let mut cells: Vec<CellRef> = state.repaired.iter().cloned().collect();
    before.db().sort_cells(&mut cells);
    let candidates = cells
        .into_iter()
        .map(|cell| TargetRow {
            factors: before
                .ledger()
                .latest(&cell)
                .map(|e| e.factors.iter().cloned().collect())
                .unwrap_or_default(),
            selected: selected.contains(&cell),
            cell,
        })
        .collect();
    let view = TargetView {
        candidates,
        factors: session.ledger().factor_rows(),
    };
    serde_json::to_string(&view).map_err(err)
}

#[wasm_bindgen]
pub fn explore_allocation(
    seed: u64,
    humans: usize,
    cells: usize,
    density: f64,
    max_humans: u32,
) -> Result<String, JsValue> {
    allocation_json(seed, humans, cells, density, max_humans).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn strategy_sweep(
    rows: usize,
    human_error: f64,
    max_agent_error: f64,
    steps: usize,
    seed: u64,
) -> Result<String, JsValue> {
    sweep_json(rows, human_error, max_agent_error, steps, seed).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn validation_targets(mode: &str, budget: usize, suspects: &str) -> Result<String, JsValue> {
    targets_json(mode, budget, suspects).map_err(|e| JsValue::from_str(&e))
}
