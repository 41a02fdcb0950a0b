//! Independent oracles shared by the integration targets.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use hcclean_core::agents::FdRule;
use hcclean_core::allocation::{AssignmentProblem, Candidate};
use hcclean_core::model::{Budget, CellRef, RelationInstance, TaskKind};
use hcclean_core::session::{AuditEvent, AuditRecord};
use rand::Rng;

pub fn relation(rows: &[Vec<u8>]) -> RelationInstance {
    let attrs = ["A", "B", "C"].map(String::from).to_vec();
    let rows = rows
        .iter()
        .map(|r| r.iter().map(|v| format!("v{v}")).collect())
        .collect();
    RelationInstance::new("T", attrs, rows).unwrap()
}

pub fn rule(lhs: &[&str], rhs: &[&str]) -> FdRule {
    FdRule {
        id: "fd".into(),
        relation: "T".into(),
        lhs: lhs.iter().map(|s| s.to_string()).collect(),
        rhs: rhs.iter().map(|s| s.to_string()).collect(),
    }
}

/// Compares every pair of tuples directly.
pub fn all_pairs_violations(rel: &RelationInstance, rule: &FdRule) -> BTreeSet<CellRef> {
    let idx = |a: &String| rel.attribute_index(a).unwrap();
    let lhs: Vec<usize> = rule.lhs.iter().map(idx).collect();
    let rhs: Vec<usize> = rule.rhs.iter().map(idx).collect();
    let mut out = BTreeSet::new();
    for i in 0..rel.len() {
        for j in 0..rel.len() {
            if i == j {
                continue;
            }
            let same = |cols: &[usize]| cols.iter().all(|&a| rel.rows[i][a] == rel.rows[j][a]);
            if same(&lhs) && !same(&rhs) {
                for &a in lhs.iter().chain(&rhs) {
                    out.insert(rel.cell(i, a));
                }
            }
        }
    }
    out
}

/// Random cover instance: every human has a random subset of the cells and
/// a cost in [0.5, 5].
pub fn random_problem<R: Rng>(rng: &mut R, max_humans: usize, max_cells: usize) -> AssignmentProblem {
    let n_cells = rng.gen_range(1..=max_cells);
    let n_humans = rng.gen_range(1..=max_humans);
    let cells: Vec<CellRef> = (1..=n_cells as u64).map(|r| CellRef::new("T", r, "A")).collect();
    let density = rng.gen_range(0.2..0.8);
    let pool = (0..n_humans)
        .map(|h| Candidate {
            id: format!("h{h}"),
            cost: (rng.gen_range(1..=10) as f64) / 2.0,
            coverable: cells.iter().filter(|_| rng.gen_bool(density)).cloned().collect(),
        })
        .collect();
    let budget = match rng.gen_range(0..3) {
        0 => None,
        1 => Some(Budget::MaxHumans(rng.gen_range(1..=n_humans as u32))),
        _ => Some(Budget::MaxTotalCost(rng.gen_range(2..=20) as f64 / 2.0)),
    };
    AssignmentProblem {
        cells,
        pool,
        task: TaskKind::Repair,
        budget,
        prior: Default::default(),
    }
}

/// Minimum-cost budget-feasible full cover by enumeration, if any.
pub fn min_cost_cover(p: &AssignmentProblem) -> Option<f64> {
    let m = p.pool.len();
    let mut best: Option<f64> = None;
    for mask in 0u32..(1 << m) {
        let members: Vec<&Candidate> = (0..m).filter(|h| mask & (1 << h) != 0).map(|h| &p.pool[h]).collect();
        let cost: f64 = members.iter().map(|c| c.cost).sum();
        let ok_budget = match p.budget {
            None => true,
            Some(Budget::MaxHumans(k)) => members.len() <= k as usize,
            Some(Budget::MaxTotalCost(b)) => cost <= b + 1e-9,
        };
        let covers = p.cells.iter().all(|c| members.iter().any(|m| m.coverable.contains(c)));
        if ok_budget && covers && best.is_none_or(|b| cost < b) {
            best = Some(cost);
        }
    }
    best
}

/// Per-factor (correct, validated) counts rebuilt from the audit log alone.
pub fn recount_factor_stats(audit: &[AuditRecord]) -> BTreeMap<String, (u64, u64)> {
    // (cell, generation) -> factors; validators tracked separately so they
    // are not carried into the next generation.
    let mut factors: BTreeMap<(CellRef, u64), BTreeSet<String>> = BTreeMap::new();
    let mut validators: BTreeMap<(CellRef, u64), BTreeSet<String>> = BTreeMap::new();
    let mut latest: BTreeMap<CellRef, u64> = BTreeMap::new();
    let mut stats: BTreeMap<String, (u64, u64)> = BTreeMap::new();
    for rec in audit {
        match &rec.event {
            AuditEvent::Repaired {
                cell,
                producer,
                detectors,
                resources,
                ..
            } => {
                let mut set: BTreeSet<String> = latest
                    .get(cell)
                    .map(|g| factors[&(cell.clone(), *g)].clone())
                    .unwrap_or_default();
                set.extend(detectors.iter().cloned());
                set.insert(producer.clone());
                set.extend(resources.iter().cloned());
                factors.insert((cell.clone(), rec.seq), set);
                latest.insert(cell.clone(), rec.seq);
            }
            AuditEvent::Validated {
                validator,
                cell,
                generation: Some(g),
                verdict,
                ..
            } => {
                let key = (cell.clone(), *g);
                let earlier = validators.get(&key).cloned().unwrap_or_default();
                let judged: BTreeSet<String> = factors[&key]
                    .iter()
                    .chain(&earlier)
                    .filter(|f| *f != validator)
                    .cloned()
                    .collect();
                for f in judged {
                    let s = stats.entry(f).or_default();
                    s.1 += 1;
                    s.0 += u64::from(verdict.is_accurate());
                }
                validators.entry(key).or_default().insert(validator.clone());
            }
            _ => {}
        }
    }
    stats
}
