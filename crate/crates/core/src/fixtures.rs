//! The running example (branches and employees) and the simulation setups
//! built on it.

use crate::agents::CellUpdate;
use crate::expertise::HumanRole;
use crate::model::{AgentDescriptor, Budget, CellRef, CellSelector, CleaningJob, Participant};
use crate::provenance::{ValidationMode, ValidationStrategy};
use crate::sim::{
    ErrorInjectionSpec, ErrorKind, RelationSpec, ScriptedHumanSpec, SimulatedAgentSpec, SimulationConfig,
};

pub const FIXTURES: &[&str] = &["scenario1", "scenario2", "example3", "strategies"];

fn rel(name: &str, attrs: &[&str], rows: &[&[&str]]) -> RelationSpec {
    RelationSpec {
        name: name.into(),
        attributes: attrs.iter().map(|s| s.to_string()).collect(),
        rows: rows.iter().map(|r| r.iter().map(|s| s.to_string()).collect()).collect(),
    }
}

pub fn branches() -> RelationSpec {
    rel(
        "Branches",
        &["BID", "Zip", "City"],
        &[
            &["B1", "47906", "Lafayette"],
            &["B2", "46201", "Indianapolis"],
            &["B3", "46201", "Indianapolis"],
            &["B4", "47904", "Lafayette"],
            &["B5", "47904", "Lafayette"],
        ],
    )
}

pub fn employees() -> RelationSpec {
    rel(
        "Employees",
        &["EID", "Name", "Sal", "BID"],
        &[
            &["E1", "Ann", "70000", "B1"],
            &["E2", "Ben", "65000", "B2"],
            &["E3", "Cid", "72000", "B3"],
            &["E4", "Dee", "68000", "B4"],
            &["E5", "Eve", "71000", "B5"],
        ],
    )
}

fn corrupt(rel: &str, row: u64, attr: &str, value: &str) -> CellUpdate {
    CellUpdate {
        cell: CellRef::new(rel, row, attr),
        value: value.into(),
    }
}

/// The two misspelled cities of the dirty branches table.
pub fn branch_typos() -> Vec<CellUpdate> {
    vec![
        corrupt("Branches", 3, "City", "Indianapols"),
        corrupt("Branches", 5, "City", "Lafyette"),
    ]
}

fn human(id: &str, role: HumanRole, data: CellSelector) -> ScriptedHumanSpec {
    ScriptedHumanSpec {
        id: id.into(),
        role,
        data,
        cost: 1.0,
        error_rate: 0.0,
        coverage: None,
        seed: None,
    }
}

fn sel(terms: &[&str]) -> CellSelector {
    CellSelector::parse_terms(terms).expect("fixture selector")
}

pub const PHI1: &str = "phi1: Branches: Zip -> City";
pub const PHI2: &str = "phi2: Branches: City -> Zip";

/// Alice reports errors on every cell, phi1 is checked automatically, and
/// repairs come from R1 (zip and city only) and Bob.
pub fn scenario1() -> SimulationConfig {
    let mut job = CleaningJob::new(
        "job2",
        sel(&["Branches[Zip]=*", "Branches[City]=*", "Employees[Sal]=*"]),
    );
    job.detectors = vec!["Alice".into(), "phi1".into()];
    job.repairers = vec![Participant::agent("R1"), Participant::agent("Bob")];
    SimulationConfig {
        name: "scenario1".into(),
        seed: 1,
        relations: vec![branches(), employees()],
        corruptions: [branch_typos(), vec![corrupt("Employees", 2, "Sal", "6500")]].concat(),
        injection: vec![],
        rules: vec![PHI1.into()],
        agents: vec![AgentDescriptor::fd_repairer(
            "R1",
            Some(sel(&["Branches[Zip]=*", "Branches[City]=*"])),
        )],
        simulated: vec![],
        humans: vec![
            human("Alice", HumanRole::DataUser, CellSelector::all()),
            human(
                "Bob",
                HumanRole::DataCurator,
                sel(&[
                    "Branches/r2/City",
                    "Branches/r3/City",
                    "Branches/r2/Zip",
                    "Branches/r3/Zip",
                    "Employees/r2/Sal",
                ]),
            ),
        ],
        jobs: vec![job],
        strategy: None,
        budget: None,
    }
}

/// A correct rule (phi1) and a wrong one (phi2). Jen validates two cells
/// after each job, choosing cells with the smallest factor sets.
pub fn scenario2() -> SimulationConfig {
    let validation = ValidationStrategy {
        mode: ValidationMode::IsolateFactors,
        cell_budget: 2,
        suspects: Vec::new(),
    };
    let mk = |id: &str, detectors: &[&str]| {
        let mut job = CleaningJob::new(id, sel(&["Branches[*]=*"]));
        job.detectors = detectors.iter().map(|s| s.to_string()).collect();
        job.repairers = vec![Participant::agent("R1")];
        job.validators = vec![Participant::agent("Jen")];
        job.validation = Some(validation.clone());
        job
    };
    SimulationConfig {
        name: "scenario2".into(),
        seed: 2,
        relations: vec![branches()],
        corruptions: branch_typos(),
        injection: vec![],
        rules: vec![PHI1.into(), PHI2.into()],
        agents: vec![AgentDescriptor::fd_repairer("R1", None)],
        simulated: vec![],
        humans: vec![human("Jen", HumanRole::DataValidator, sel(&["Branches[*]=*"]))],
        jobs: vec![mk("job2", &["phi1"]), mk("job5", &["phi1", "phi2"])],
        strategy: None,
        budget: None,
    }
}

/// Three validators with nested salary coverage and a one-human budget.
pub fn example3() -> SimulationConfig {
    let sal = |rows: &[u64]| CellSelector::cells(rows.iter().map(|&r| CellRef::new("Employees", r, "Sal")));
    let mut job = CleaningJob::new("job4", sel(&["Employees[Sal]=*"]));
    job.validators = vec![Participant::Pool];
    job.budget = Some(Budget::MaxHumans(1));
    SimulationConfig {
        name: "example3".into(),
        seed: 3,
        relations: vec![employees()],
        corruptions: vec![],
        injection: vec![],
        rules: vec![],
        agents: vec![],
        simulated: vec![],
        humans: vec![
            human("Alice", HumanRole::DataValidator, sal(&[1, 2, 3, 4, 5])),
            human("Bob", HumanRole::DataValidator, sal(&[3, 4])),
            human("Sam", HumanRole::DataValidator, sal(&[5])),
        ],
        jobs: vec![job],
        strategy: None,
        budget: None,
    }
}

/// Direct repair of zip, city and salary over `rows` branches. The
/// automatic agent A1 repairs zip and city; with `overlap`, Bob and Dan
/// also cover city and zip, while Carol always covers salary.
pub fn strategy_comparison(
    rows: usize,
    human_error: f64,
    agent_error: f64,
    overlap: bool,
    seed: u64,
) -> SimulationConfig {
    let places = [
        ("47906", "Lafayette"),
        ("46201", "Indianapolis"),
        ("47904", "WestLafayette"),
        ("46802", "FortWayne"),
        ("47401", "Bloomington"),
    ];
    let data: Vec<Vec<String>> = (0..rows)
        .map(|i| {
            let (z, c) = places[i % places.len()];
            vec![
                format!("B{}", i + 1),
                z.into(),
                c.into(),
                format!("{}", 50_000 + (i * 137) % 40_000),
            ]
        })
        .collect();
    let mut job = CleaningJob::new(
        "repair",
        sel(&["Branches[Zip]=*", "Branches[City]=*", "Branches[Sal]=*"]),
    );
    job.repairers = vec![
        Participant::agent("A1"),
        Participant::agent("Bob"),
        Participant::agent("Carol"),
        Participant::agent("Dan"),
    ];
    let mut humans = vec![human("Carol", HumanRole::DataCurator, sel(&["Branches[Sal]=*"]))];
    if overlap {
        humans.push(human("Bob", HumanRole::DataCurator, sel(&["Branches[City]=*"])));
        humans.push(human("Dan", HumanRole::DataCurator, sel(&["Branches[Zip]=*"])));
    } else {
        job.repairers
            .retain(|r| *r != Participant::agent("Bob") && *r != Participant::agent("Dan"));
    }
    for h in &mut humans {
        h.error_rate = human_error;
        h.seed = Some(seed.wrapping_add(17));
    }
    SimulationConfig {
        name: "strategies".into(),
        seed,
        relations: vec![RelationSpec {
            name: "Branches".into(),
            attributes: vec!["BID".into(), "Zip".into(), "City".into(), "Sal".into()],
            rows: data,
        }],
        corruptions: vec![],
        injection: vec![ErrorInjectionSpec {
            relation: "Branches".into(),
            attributes: vec!["Zip".into(), "City".into(), "Sal".into()],
            kinds: vec![ErrorKind::Substitution, ErrorKind::FdSwap],
            rate: 0.2,
            seed,
        }],
        rules: vec![],
        agents: vec![],
        simulated: vec![SimulatedAgentSpec {
            id: "A1".into(),
            error_rate: agent_error,
            scope: Some(sel(&["Branches[Zip]=*", "Branches[City]=*"])),
            seed: seed.wrapping_add(31),
        }],
        humans,
        jobs: vec![job],
        strategy: None,
        budget: None,
    }
}

pub fn by_name(name: &str) -> Option<SimulationConfig> {
    match name {
        "scenario1" => Some(scenario1()),
        "scenario2" => Some(scenario2()),
        "example3" => Some(example3()),
        "strategies" => Some(strategy_comparison(240, 0.05, 0.30, true, 42)),
        _ => None,
    }
}
