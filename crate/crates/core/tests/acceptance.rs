//! Acceptance runner: one line per criterion, non-zero exit on any failure.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use hcclean_core::agents::{detect_fd_violations, repair_fd_violations};
use hcclean_core::allocation::{assign_tasks, brute_force_assignment, AssignmentProblem};
use hcclean_core::expertise::{expertise_score, HumanRole, Outcome, TaskHistory};
use hcclean_core::gateway::expertise_report;
use hcclean_core::model::{resolve_selector, Budget, CellRef, CellSelector, Participant, TaskKind};
use hcclean_core::orchestrator::CostStrategy;
use hcclean_core::provenance::{render_factor_report, Quality, ValidationMode, ValidationStrategy};
use hcclean_core::session::{AuditEvent, Session};
use hcclean_core::sim::{compare_strategies, simulate, ScriptedHumanSpec, SimulationConfig};
use hcclean_core::{fixtures, Engine};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn run(log: &mut Vec<bool>, id: usize, name: &str, limit: Duration, f: impl FnOnce() -> Check) {
    let start = Instant::now();
    let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()));
    let took = start.elapsed();
    let (ok, detail) = match result {
        Ok(d) if took <= limit => (true, d),
        Ok(d) => (false, format!("{d}; over time limit")),
        Err(e) => (false, e),
    };
    println!(
        "{} [{id}] {name:<34} {:>8.3}s / {:>3}s  {detail}",
        if ok { "PASS" } else { "FAIL" },
        took.as_secs_f64(),
        limit.as_secs()
    );
    log.push(ok);
}

fn expertise_ratio() -> Check {
    let mut h = TaskHistory::new();
    let cells: Vec<CellRef> = (1..=4).map(|r| CellRef::new("Employees", r, "Sal")).collect();
    for (i, c) in cells.iter().enumerate() {
        let o = if i % 2 == 0 {
            Outcome::Correct
        } else {
            Outcome::Incorrect
        };
        h.record_outcome("Bob", c, TaskKind::Repair, o);
    }
    let e = expertise_score(&h, "Bob", &cells, TaskKind::Repair).map_err(|e| e.to_string())?;
    ensure(e == 0.5, format!("got {e}"))?;
    let undefined = expertise_score(&h, "Bob", &cells, TaskKind::Validate);
    ensure(undefined.is_err(), "expertise without history must be undefined")?;
    Ok(format!("2/4 -> {e}"))
}

fn nested_coverage() -> Check {
    let cfg = fixtures::example3();
    let world = cfg.build().map_err(|e| e.to_string())?;
    let cells = resolve_selector(&CellSelector::column("Employees", "Sal"), &world.dirty).unwrap();
    let p = AssignmentProblem::from_profiles(
        cells,
        world.registry.humans.values(),
        &world.dirty,
        TaskKind::Validate,
        Some(Budget::MaxHumans(1)),
    )
    .unwrap();
    let h = TaskHistory::new();
    let g = assign_tasks(&p, &h).map_err(|e| e.to_string())?;
    let o = brute_force_assignment(&p, &h).map_err(|e| e.to_string())?;
    ensure(g.chosen() == ["Alice"], format!("greedy chose {:?}", g.chosen()))?;
    ensure(o.chosen() == ["Alice"], format!("oracle chose {:?}", o.chosen()))?;
    let (_, s) = simulate(&cfg).map_err(|e| e.to_string())?;
    let assignees: Vec<&str> = s.tasks().map(|t| t.task.assignee.as_str()).collect();
    ensure(assignees == ["Alice"], format!("engine assigned {assignees:?}"))?;
    Ok("greedy = oracle = engine = {Alice}".into())
}

fn greedy_vs_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let h = TaskHistory::new();
    let (mut feasible, mut drawn, mut worst) = (0, 0, 1.0f64);
    while feasible < 500 {
        drawn += 1;
        ensure(drawn <= 10_000, "generator produced too few feasible instances")?;
        let p = common::random_problem(&mut rng, 8, 12);
        let Some(best) = common::min_cost_cover(&p) else {
            ensure(
                assign_tasks(&p, &h).is_err(),
                format!("instance {drawn}: greedy covered an infeasible instance"),
            )?;
            continue;
        };
        feasible += 1;
        let g =
            assign_tasks(&p, &h).map_err(|e| format!("instance {drawn}: greedy failed on a feasible instance: {e}"))?;
        brute_force_assignment(&p, &h).map_err(|e| format!("instance {drawn}: oracle: {e}"))?;
        let ratio = g.total_cost / best;
        worst = worst.max(ratio);
        ensure(
            ratio <= 1.4 + 1e-9,
            format!("instance {drawn}: greedy cost {} vs optimum {best}", g.total_cost),
        )?;
    }
    Ok(format!(
        "{feasible} feasible of {drawn} drawn, worst cost ratio {worst:.3}"
    ))
}

fn overlap_cells() -> Vec<CellRef> {
    ["Zip", "City"]
        .iter()
        .flat_map(|a| [2, 3].map(|r| CellRef::new("Branches", r, *a)))
        .collect()
}

fn with_strategy(mut cfg: SimulationConfig, s: CostStrategy) -> SimulationConfig {
    cfg.strategy = Some(s);
    cfg
}

fn quantitative_scenario() -> Check {
    let cfg = with_strategy(fixtures::scenario1(), CostStrategy::Quantitative);
    let (_, s) = simulate(&cfg).map_err(|e| e.to_string())?;
    let bob: Vec<Vec<CellRef>> = s
        .tasks()
        .filter(|t| t.task.assignee == "Bob" && t.task.kind == TaskKind::Repair)
        .map(|t| t.task.cells.iter().map(|c| c.cell.clone()).collect())
        .collect();
    ensure(
        bob == vec![vec![CellRef::new("Employees", 2, "Sal")]],
        format!("Bob's repair tasks: {bob:?}"),
    )?;
    let humans: BTreeSet<&String> = s.registry().humans.keys().collect();
    let overlap = overlap_cells();
    let touched = s.audit().iter().filter(|r| match &r.event {
        AuditEvent::Repaired { cell, producer, .. } => humans.contains(producer) && overlap.contains(cell),
        _ => false,
    });
    ensure(touched.count() == 0, "a human repaired an overlap cell")?;
    Ok("Bob: 1 task {Employees/r2/Sal}; no human repair on 4 overlap cells".into())
}

fn qualitative_scenario() -> Check {
    let cfg = with_strategy(fixtures::scenario1(), CostStrategy::Qualitative);
    let (_, s) = simulate(&cfg).map_err(|e| e.to_string())?;
    for cell in overlap_cells() {
        let last = s
            .repairs()
            .iter()
            .rev()
            .find(|r| r.event.cell == cell)
            .ok_or(format!("{cell} never repaired"))?;
        ensure(
            last.event.producer == "Bob",
            format!("{cell} last repaired by {}", last.event.producer),
        )?;
    }
    let cmp =
        compare_strategies(&fixtures::strategy_comparison(240, 0.05, 0.30, true, 42)).map_err(|e| e.to_string())?;
    let n = cmp.qualitative.overlap_cells;
    ensure(n >= 200, format!("only {n} overlap cells"))?;
    let (q, p) = (
        cmp.qualitative.overlap_accuracy.unwrap_or(0.0),
        cmp.quantitative.overlap_accuracy.unwrap_or(0.0),
    );
    ensure(q > p, format!("qualitative {q:.4} vs quantitative {p:.4}"))?;
    Ok(format!(
        "Bob last on overlap; {n} overlap cells: qualitative {q:.4} > quantitative {p:.4}"
    ))
}

fn fd_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let shapes: [(&[&str], &[&str]); 3] = [(&["A"], &["B"]), (&["A", "B"], &["C"]), (&["C"], &["A", "B"])];
    let mut flagged = 0;
    for i in 0..500 {
        let n = rng.gen_range(0..=50);
        let domain = rng.gen_range(1..=4u8);
        let rows: Vec<Vec<u8>> = (0..n)
            .map(|_| (0..3).map(|_| rng.gen_range(0..domain)).collect())
            .collect();
        let (lhs, rhs) = shapes[i % shapes.len()];
        let mut rel = common::relation(&rows);
        let rule = common::rule(lhs, rhs);
        let scope: BTreeSet<CellRef> = rel.cells().collect();
        let report = detect_fd_violations(&rel, &rule, &scope).map_err(|e| e.to_string())?;
        let got: BTreeSet<CellRef> = report.suspects.iter().cloned().collect();
        ensure(
            got == common::all_pairs_violations(&rel, &rule),
            format!("instance {i}: detector differs from oracle"),
        )?;
        flagged += got.len();
        let proposal = repair_fd_violations(&rel, &rule, &report).map_err(|e| e.to_string())?;
        for u in proposal.updates {
            let r = rel.row_index(u.cell.row).unwrap();
            let a = rel.attribute_index(&u.cell.attribute).unwrap();
            rel.rows[r][a] = u.value;
        }
        let after = detect_fd_violations(&rel, &rule, &scope).map_err(|e| e.to_string())?;
        ensure(
            after.suspects.is_empty(),
            format!("instance {i}: {} suspects after repair", after.suspects.len()),
        )?;
    }
    Ok(format!(
        "500 instances, {flagged} flagged cells, all clean after repair"
    ))
}

fn factor_isolation() -> Check {
    let cfg = fixtures::scenario2();
    let (_, s) = simulate(&cfg).map_err(|e| e.to_string())?;
    // state just before job5's validator sees its cells
    let cut = s
        .audit()
        .iter()
        .position(|r| matches!(&r.event, AuditEvent::ValidationStarted { job, .. } if job == "job5"))
        .ok_or("job5 never reached validation")?;
    let before =
        Session::replay(s.base().clone(), s.registry().clone(), &s.audit()[..=cut]).map_err(|e| e.to_string())?;
    let targets = &before.job("job5").map_err(|e| e.to_string())?.targets;
    ensure(!targets.is_empty(), "no targets selected")?;
    for t in targets {
        let f: Vec<&str> = before
            .ledger()
            .latest(t)
            .ok_or(format!("{t} has no entry"))?
            .factors
            .iter()
            .map(String::as_str)
            .collect();
        ensure(f == ["R1", "phi2"], format!("{t} carries {f:?}"))?;
    }
    let (q1, q2) = (s.ledger().quality("phi1"), s.ledger().quality("phi2"));
    match (q1, q2) {
        (Quality::Score(a), Quality::Score(b)) if b < a => Ok(format!(
            "{} cells with {{phi2, R1}}; phi2 {b} < phi1 {a}",
            targets.len()
        )),
        _ => Err(format!("phi1 {q1}, phi2 {q2}")),
    }
}

/// Branches with an automatic repairer, curators and two validators of
/// random reliability.
fn validation_world(rng: &mut ChaCha8Rng) -> SimulationConfig {
    let seed = rng.gen();
    let mut cfg = fixtures::strategy_comparison(
        rng.gen_range(8..30),
        rng.gen_range(0.0..0.4),
        rng.gen_range(0.0..0.5),
        true,
        seed,
    );
    let all = CellSelector::parse_terms(&["Branches[*]=*"]).unwrap();
    for id in ["Val1", "Val2"] {
        cfg.humans.push(ScriptedHumanSpec {
            id: id.into(),
            role: HumanRole::DataValidator,
            data: all.clone(),
            cost: 1.0,
            error_rate: rng.gen_range(0.0..0.5),
            coverage: None,
            seed: Some(rng.gen()),
        });
    }
    let job = &mut cfg.jobs[0];
    job.validators = if rng.gen_bool(0.5) {
        vec![Participant::agent("Val1"), Participant::agent("Val2")]
    } else {
        vec![Participant::Pool]
    };
    if rng.gen_bool(0.7) {
        let mode = if rng.gen_bool(0.5) {
            ValidationMode::AggregateCoverage
        } else {
            ValidationMode::IsolateFactors
        };
        job.validation = Some(ValidationStrategy::new(mode, rng.gen_range(1..20)).unwrap());
    }
    cfg.strategy = Some(if rng.gen_bool(0.5) {
        CostStrategy::Quantitative
    } else {
        CostStrategy::Qualitative
    });
    cfg
}

fn counters_match_audit() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut sessions: Vec<Session> = Vec::new();
    for name in fixtures::FIXTURES {
        sessions.push(
            simulate(&fixtures::by_name(name).unwrap())
                .map_err(|e| e.to_string())?
                .1,
        );
    }
    for _ in 0..40 {
        sessions.push(simulate(&validation_world(&mut rng)).map_err(|e| e.to_string())?.1);
    }
    let mut judged = 0;
    for (i, s) in sessions.iter().enumerate() {
        let recount = common::recount_factor_stats(s.audit());
        let rows = s.ledger().factor_rows();
        let live: BTreeMap<String, (u64, u64)> = rows
            .iter()
            .filter(|r| r.validated > 0)
            .map(|r| (r.factor.clone(), (r.correct, r.validated)))
            .collect();
        ensure(
            live == recount,
            format!("session {i}: ledger {live:?} vs recount {recount:?}"),
        )?;
        for r in &rows {
            ensure(
                r.correct <= r.validated,
                format!("session {i}: {} has {} > {}", r.factor, r.correct, r.validated),
            )?;
            let expect = (r.validated > 0).then(|| r.correct as f64 / r.validated as f64);
            ensure(r.quality == expect, format!("session {i}: quality of {}", r.factor))?;
        }
        judged += recount.values().map(|v| v.1).sum::<u64>();
    }
    ensure(judged > 0, "no validations happened")?;
    Ok(format!(
        "{} sessions, {judged} factor judgements recounted",
        sessions.len()
    ))
}

fn fingerprint(s: &Session) -> Result<(String, String, String), String> {
    let relations = serde_json::to_string(s.db()).map_err(|e| e.to_string())?;
    let engine = Engine::new(s.clone());
    let mut expertise = String::new();
    for h in s.registry().humans.keys() {
        let r = expertise_report(&engine, h).map_err(|e| e.to_string())?;
        expertise.push_str(&serde_json::to_string(&r).map_err(|e| e.to_string())?);
    }
    Ok((relations, expertise, render_factor_report(&s.ledger().factor_rows())))
}

fn determinism() -> Check {
    for name in fixtures::FIXTURES {
        let (_, s) = simulate(&fixtures::by_name(name).unwrap()).map_err(|e| e.to_string())?;
        let live = fingerprint(&s)?;
        let restored = Session::restore(&s.snapshot().map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        ensure(fingerprint(&restored)? == live, format!("{name}: snapshot differs"))?;
        let replayed = Session::replay(s.base().clone(), s.registry().clone(), s.audit()).map_err(|e| e.to_string())?;
        ensure(fingerprint(&replayed)? == live, format!("{name}: replay differs"))?;
        let (_, again) = simulate(&fixtures::by_name(name).unwrap()).map_err(|e| e.to_string())?;
        ensure(fingerprint(&again)? == live, format!("{name}: rerun differs"))?;
    }
    Ok(format!(
        "{} fixtures identical after snapshot, replay and rerun",
        fixtures::FIXTURES.len()
    ))
}

fn main() {
    let secs = Duration::from_secs;
    let mut log = Vec::new();
    run(&mut log, 1, "expertise ratio", secs(1), expertise_ratio);
    run(&mut log, 2, "nested validator coverage", secs(1), nested_coverage);
    run(&mut log, 3, "greedy allocation vs oracle", secs(60), greedy_vs_oracle);
    run(
        &mut log,
        4,
        "quantitative overlap removal",
        secs(5),
        quantitative_scenario,
    );
    run(&mut log, 5, "qualitative last word", secs(30), qualitative_scenario);
    run(&mut log, 6, "fd detection oracle", secs(30), fd_oracle);
    run(&mut log, 7, "factor isolation", secs(5), factor_isolation);
    run(&mut log, 8, "factor counters vs audit", secs(10), counters_match_audit);
    run(&mut log, 9, "snapshot and replay determinism", secs(10), determinism);
    let failed = log.iter().filter(|ok| !**ok).count();
    println!("acceptance: {} passed, {failed} failed", log.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
