use hcclean_core::fixtures;
use hcclean_core::model::{CellRef, TaskKind};
use hcclean_core::orchestrator::CostStrategy;
use hcclean_core::provenance::Quality;
use hcclean_core::session::{AuditEvent, JobStatus, Session};
use hcclean_core::sim::{compare_strategies, simulate};

fn overlap() -> Vec<CellRef> {
    ["Zip", "City"]
        .iter()
        .flat_map(|a| [2, 3].map(|r| CellRef::new("Branches", r, *a)))
        .collect()
}

fn repair_tasks(s: &Session, human: &str) -> Vec<Vec<CellRef>> {
    s.tasks()
        .filter(|t| t.task.assignee == human && t.task.kind == TaskKind::Repair)
        .map(|t| t.task.cells.iter().map(|c| c.cell.clone()).collect())
        .collect()
}

fn human_repaired(s: &Session, human: &str) -> Vec<CellRef> {
    s.repairs()
        .iter()
        .filter(|r| r.event.producer == human)
        .map(|r| r.event.cell.clone())
        .collect()
}

#[test]
fn scenario1_quantitative_asks_bob_only_about_salary() {
    let mut cfg = fixtures::scenario1();
    cfg.strategy = Some(CostStrategy::Quantitative);
    let (report, s) = simulate(&cfg).unwrap();
    assert_eq!(repair_tasks(&s, "Bob"), vec![vec![CellRef::new("Employees", 2, "Sal")]]);
    let bob = human_repaired(&s, "Bob");
    assert!(overlap().iter().all(|c| !bob.contains(c)));
    assert_eq!(s.db().get(&CellRef::new("Branches", 3, "City")), Some("Indianapolis"));
    assert_eq!(s.db().get(&CellRef::new("Branches", 5, "City")), Some("Lafayette"));
    assert_eq!(s.db().get(&CellRef::new("Employees", 2, "Sal")), Some("65000"));
    assert_eq!(report.recall, Some(1.0));
    assert_eq!(s.job("job2").unwrap().status, JobStatus::Completed);
}

#[test]
fn scenario1_qualitative_gives_bob_the_last_word() {
    let mut cfg = fixtures::scenario1();
    cfg.strategy = Some(CostStrategy::Qualitative);
    let (_, s) = simulate(&cfg).unwrap();
    for cell in overlap() {
        let last = s.repairs().iter().rev().find(|r| r.event.cell == cell).unwrap();
        assert_eq!(last.event.producer, "Bob", "{cell}");
    }
    let asked: Vec<CellRef> = repair_tasks(&s, "Bob").concat();
    assert_eq!(asked.len(), 5);
    // R1 touched every overlap cell before Bob did
    for cell in overlap() {
        let seqs: Vec<(u64, &str)> = s
            .repairs()
            .iter()
            .filter(|r| r.event.cell == cell)
            .map(|r| (r.event.sequence, r.event.producer.as_str()))
            .collect();
        assert_eq!(seqs.first().unwrap().1, "R1");
        assert!(seqs.windows(2).all(|w| w[0].0 < w[1].0));
    }
}

#[test]
fn scenario2_isolates_the_wrong_rule() {
    let (report, s) = simulate(&fixtures::scenario2()).unwrap();
    let q = |f: &str| s.ledger().quality(f);
    assert_eq!(q("phi1"), Quality::Score(1.0));
    assert_eq!(q("phi2"), Quality::Score(0.5));
    assert_eq!(s.db().get(&CellRef::new("Branches", 1, "Zip")), Some("47904"));
    let targets = &s.job("job5").unwrap().targets;
    assert_eq!(
        targets,
        &vec![CellRef::new("Branches", 1, "Zip"), CellRef::new("Branches", 1, "City")]
    );
    for t in targets {
        let f: Vec<&str> = s
            .ledger()
            .latest(t)
            .unwrap()
            .factors
            .iter()
            .map(String::as_str)
            .collect();
        assert_eq!(f, ["Jen", "R1", "phi2"]);
    }
    let tested: Vec<&str> = report
        .factors
        .iter()
        .filter(|r| r.quality.is_some())
        .map(|r| r.factor.as_str())
        .collect();
    assert_eq!(tested.first(), Some(&"phi2"));
    let worst = report.factors.iter().filter_map(|r| r.rank).max();
    assert_eq!(report.factors.iter().find(|r| r.factor == "phi2").unwrap().rank, worst);
}

#[test]
fn example3_validation_goes_to_alice() {
    let (report, s) = simulate(&fixtures::example3()).unwrap();
    let assignees: Vec<&str> = s.tasks().map(|t| t.task.assignee.as_str()).collect();
    assert_eq!(assignees, ["Alice"]);
    assert_eq!(report.total_cost, 1.0);
    assert_eq!(s.tasks().next().unwrap().task.cells.len(), 5);
}

#[test]
fn direct_repair_job_comparison() {
    let cmp = compare_strategies(&fixtures::strategy_comparison(240, 0.05, 0.30, true, 42)).unwrap();
    assert_eq!(cmp.quantitative.total_tasks, 1);
    assert_eq!(cmp.qualitative.total_tasks, 3);
    assert_eq!(cmp.quantitative.overlap_cells, 480);
    assert!(cmp.overlap_accuracy_delta > 0.0, "{cmp:?}");
}

#[test]
fn strategy_suitability_flips_with_agent_quality() {
    let cmp = compare_strategies(&fixtures::strategy_comparison(60, 0.5, 0.0, true, 5)).unwrap();
    assert!(cmp.quantitative.overlap_accuracy >= cmp.qualitative.overlap_accuracy);
}

#[test]
fn no_overlap_means_no_delta() {
    let cmp = compare_strategies(&fixtures::strategy_comparison(40, 0.05, 0.30, false, 9)).unwrap();
    assert_eq!(cmp.task_delta, 0);
    assert_eq!(cmp.cost_delta, 0.0);
    assert_eq!(cmp.overlap_accuracy_delta, 0.0);
}

#[test]
fn identical_configs_give_identical_reports() {
    for name in fixtures::FIXTURES {
        let cfg = fixtures::by_name(name).unwrap();
        let a = simulate(&cfg).unwrap().0.to_json().unwrap();
        let b = simulate(&cfg).unwrap().0.to_json().unwrap();
        assert_eq!(a, b, "{name}");
    }
}

#[test]
fn audit_replay_matches_live_state() {
    for name in fixtures::FIXTURES {
        let (_, s) = simulate(&fixtures::by_name(name).unwrap()).unwrap();
        let replayed = Session::replay(s.base().clone(), s.registry().clone(), s.audit()).unwrap();
        assert_eq!(replayed.canonical().unwrap(), s.canonical().unwrap(), "{name}");
        assert!(s
            .audit()
            .iter()
            .any(|r| matches!(r.event, AuditEvent::JobCompleted { .. })));
    }
}
