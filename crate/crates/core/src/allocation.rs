//! Assignment of task cells to humans under coverage, expertise and budget
//! constraints, plus routing of human-to-human interactions.
//!
//! The solver is a greedy budgeted weighted set cover: each round picks the
//! human with the best `covered-cells × expertise / cost` ratio among those
//! whose pick still leaves a budget-feasible completion. The exhaustive
//! [`brute_force_assignment`] is kept alongside as an oracle for small pools.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expertise::{smoothed_expertise, HumanProfile, HumanRole, Prior, TaskHistory};
use crate::model::{resolve_selector, Budget, CellRef, Database, TaskKind};

/// Largest pool [`brute_force_assignment`] will enumerate.
pub const ORACLE_POOL_LIMIT: usize = 12;

const EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: String,
    pub cost: f64,
    pub coverable: BTreeSet<CellRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentProblem {
    pub cells: Vec<CellRef>,
    pub pool: Vec<Candidate>,
    pub task: TaskKind,
    #[serde(default)]
    pub budget: Option<Budget>,
    #[serde(default)]
    pub prior: Prior,
}

impl AssignmentProblem {
    /// Builds a problem from human profiles, resolving each profile's data
    /// selector against `db`.
    pub fn from_profiles<'a, I>(
        cells: Vec<CellRef>,
        profiles: I,
        db: &Database,
        task: TaskKind,
        budget: Option<Budget>,
    ) -> Result<Self>
    where
        I: IntoIterator<Item = &'a HumanProfile>,
    {
        let wanted: BTreeSet<&CellRef> = cells.iter().collect();
        let mut pool = Vec::new();
        for p in profiles {
            let coverable = resolve_selector(&p.data, db)?
                .into_iter()
                .filter(|c| wanted.contains(c))
                .collect();
            pool.push(Candidate {
                id: p.id.clone(),
                cost: p.cost,
                coverable,
            });
        }
        Ok(AssignmentProblem {
            cells,
            pool,
            task,
            budget,
            prior: Prior::default(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub humans: BTreeMap<String, Vec<CellRef>>,
    pub total_cost: f64,
    /// Lowest smoothed expertise of a chosen human on their assigned cells.
    pub min_expertise: Option<f64>,
    /// Sum over cells of the assignee's smoothed expertise on that cell.
    pub total_expertise: f64,
}

impl Assignment {
    pub fn empty() -> Self {
        Assignment {
            humans: BTreeMap::new(),
            total_cost: 0.0,
            min_expertise: None,
            total_expertise: 0.0,
        }
    }

    pub fn chosen(&self) -> Vec<&str> {
        self.humans.keys().map(String::as_str).collect()
    }
}

/// Index-based view of a problem shared by both solvers.
struct Instance<'a> {
    problem: &'a AssignmentProblem,
    history: &'a TaskHistory,
    /// cell indices each candidate covers, ascending
    cover: Vec<Vec<usize>>,
    /// per (candidate, cell) smoothed expertise
    cell_expertise: Vec<Vec<f64>>,
}

impl<'a> Instance<'a> {
    fn new(problem: &'a AssignmentProblem, history: &'a TaskHistory) -> Result<Self> {
        for c in &problem.pool {
            if !c.cost.is_finite() || c.cost < 0.0 {
                return Err(Error::Config(format!("cost of `{}` must be non-negative", c.id)));
            }
        }
        if let Some(b) = &problem.budget {
            b.check()?;
        }
        let index: BTreeMap<&CellRef, usize> = problem.cells.iter().enumerate().map(|(i, c)| (c, i)).collect();
        let cover: Vec<Vec<usize>> = problem
            .pool
            .iter()
            .map(|cand| {
                let mut v: Vec<usize> = cand.coverable.iter().filter_map(|c| index.get(c).copied()).collect();
                v.sort_unstable();
                v
            })
            .collect();
        let cell_expertise = problem
            .pool
            .iter()
            .zip(&cover)
            .map(|(cand, cov)| {
                let mut row = vec![0.0; problem.cells.len()];
                for &i in cov {
                    row[i] = smoothed_expertise(history, &cand.id, &problem.cells[i..=i], problem.task, problem.prior);
                }
                row
            })
            .collect();
        let inst = Instance {
            problem,
            history,
            cover,
            cell_expertise,
        };
        let orphans: Vec<CellRef> = (0..problem.cells.len())
            .filter(|&i| !inst.cover.iter().any(|c| c.binary_search(&i).is_ok()))
            .map(|i| problem.cells[i].clone())
            .collect();
        if !orphans.is_empty() {
            return Err(Error::Infeasible { uncovered: orphans });
        }
        Ok(inst)
    }

    fn affordable(&self, count: usize, spent: f64, extra: f64) -> bool {
        match self.problem.budget {
            None => true,
            Some(Budget::MaxHumans(k)) => count < k as usize,
            Some(Budget::MaxTotalCost(b)) => spent + extra <= b + EPS,
        }
    }

    fn covers(&self, h: usize, cell: usize) -> bool {
        self.cover[h].binary_search(&cell).is_ok()
    }

    /// Exact check that `uncovered` can still be covered within budget.
    fn completable(&self, uncovered: &BTreeSet<usize>, used: &mut Vec<bool>, count: usize, spent: f64) -> bool {
        let Some(&first) = uncovered.iter().next() else {
            return true;
        };
        if self.problem.budget.is_none() {
            return true;
        }
        for h in 0..self.problem.pool.len() {
            let cost = self.problem.pool[h].cost;
            if used[h] || !self.covers(h, first) || !self.affordable(count, spent, cost) {
                continue;
            }
            let rest: BTreeSet<usize> = uncovered.iter().copied().filter(|&i| !self.covers(h, i)).collect();
            used[h] = true;
            let ok = self.completable(&rest, used, count + 1, spent + cost);
            used[h] = false;
            if ok {
                return true;
            }
        }
        false
    }

    /// Gives each cell to the chosen human with the highest expertise on it.
    fn finish(&self, chosen: &[usize]) -> Assignment {
        let mut per_human: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        let mut total_expertise = 0.0;
        for i in 0..self.problem.cells.len() {
            let best = chosen
                .iter()
                .copied()
                .filter(|&h| self.covers(h, i))
                .max_by(|&a, &b| {
                    cmp_f64(self.cell_expertise[a][i], self.cell_expertise[b][i])
                        .then_with(|| self.problem.pool[b].id.cmp(&self.problem.pool[a].id))
                })
                .expect("chosen set covers every cell");
            total_expertise += self.cell_expertise[best][i];
            per_human.entry(best).or_default().push(i);
        }
        let mut humans = BTreeMap::new();
        let mut min_expertise: Option<f64> = None;
        for (h, idx) in per_human {
            let cells: Vec<CellRef> = idx.iter().map(|&i| self.problem.cells[i].clone()).collect();
            let cand = &self.problem.pool[h];
            let e = smoothed_expertise(self.history, &cand.id, &cells, self.problem.task, self.problem.prior);
            min_expertise = Some(min_expertise.map_or(e, |m| m.min(e)));
            humans.insert(cand.id.clone(), cells);
        }
        let total_cost = humans
            .keys()
            .map(|id| self.problem.pool.iter().find(|c| &c.id == id).unwrap().cost)
            .sum();
        Assignment {
            humans,
            total_cost,
            min_expertise,
            total_expertise,
        }
    }
}

fn cmp_f64(a: f64, b: f64) -> Ordering {
    let scale = a.abs().max(b.abs()).max(1.0);
    if (a - b).abs() <= EPS * scale {
        Ordering::Equal
    } else {
        a.partial_cmp(&b).unwrap_or(Ordering::Equal)
    }
}

/// Pools up to this size get one extra greedy pass per forced first pick.
const RESTART_LIMIT: usize = 64;

/// Greedy assignment. Always returns a full cover within budget when one
/// exists.
pub fn assign_tasks(problem: &AssignmentProblem, history: &TaskHistory) -> Result<Assignment> {
    if problem.pool.is_empty() && !problem.cells.is_empty() {
        return Err(Error::Infeasible {
            uncovered: problem.cells.clone(),
        });
    }
    let inst = Instance::new(problem, history)?;
    let mut best = match greedy_pass(&inst, None) {
        Ok(chosen) => inst.finish(&chosen),
        Err(uncovered) => {
            return Err(Error::Infeasible {
                uncovered: uncovered.iter().map(|&i| problem.cells[i].clone()).collect(),
            })
        }
    };
    if problem.pool.len() <= RESTART_LIMIT {
        for h in 0..problem.pool.len() {
            if let Ok(chosen) = greedy_pass(&inst, Some(h)) {
                let candidate = inst.finish(&chosen);
                if better_assignment(&candidate, &best) {
                    best = candidate;
                }
            }
        }
    }
    Ok(best)
}

/// Same preference as the oracle: more expertise, then lower cost, then
/// the smaller id list.
fn better_assignment(a: &Assignment, b: &Assignment) -> bool {
    cmp_f64(a.total_expertise, b.total_expertise)
        .then_with(|| cmp_f64(b.total_cost, a.total_cost))
        .then_with(|| b.chosen().cmp(&a.chosen()))
        == Ordering::Greater
}

/// One greedy run, optionally forcing the first pick. Returns the chosen
/// indices, or the cells left uncovered.
fn greedy_pass(inst: &Instance, first: Option<usize>) -> std::result::Result<Vec<usize>, BTreeSet<usize>> {
    let problem = inst.problem;
    let history = inst.history;
    let mut uncovered: BTreeSet<usize> = (0..problem.cells.len()).collect();
    let mut used = vec![false; problem.pool.len()];
    let mut chosen: Vec<usize> = Vec::new();
    let mut spent = 0.0;

    if let Some(h) = first {
        let cost = problem.pool[h].cost;
        let rest: BTreeSet<usize> = uncovered.iter().copied().filter(|&i| !inst.covers(h, i)).collect();
        if inst.cover[h].is_empty() || !inst.affordable(0, 0.0, cost) {
            return Err(uncovered);
        }
        used[h] = true;
        if !inst.completable(&rest, &mut used, 1, cost) {
            return Err(uncovered);
        }
        spent = cost;
        uncovered = rest;
        chosen.push(h);
    }

    while !uncovered.is_empty() {
        // (free, score, index)
        let mut ranked: Vec<(bool, f64, usize)> = Vec::new();
        for (h, cand) in problem.pool.iter().enumerate() {
            if used[h] || !inst.affordable(chosen.len(), spent, cand.cost) {
                continue;
            }
            let gain: Vec<CellRef> = inst.cover[h]
                .iter()
                .filter(|i| uncovered.contains(i))
                .map(|&i| problem.cells[i].clone())
                .collect();
            if gain.is_empty() {
                continue;
            }
            let weight = gain.len() as f64 * smoothed_expertise(history, &cand.id, &gain, problem.task, problem.prior);
            let free = cand.cost == 0.0;
            ranked.push((free, if free { weight } else { weight / cand.cost }, h));
        }
        ranked.sort_by(|a, b| {
            b.0.cmp(&a.0)
                .then_with(|| cmp_f64(b.1, a.1))
                .then_with(|| problem.pool[a.2].id.cmp(&problem.pool[b.2].id))
        });
        let pick = ranked.into_iter().map(|(_, _, h)| h).find(|&h| {
            let rest: BTreeSet<usize> = uncovered.iter().copied().filter(|&i| !inst.covers(h, i)).collect();
            used[h] = true;
            let ok = inst.completable(&rest, &mut used, chosen.len() + 1, spent + problem.pool[h].cost);
            used[h] = false;
            ok
        });
        let Some(h) = pick else {
            return Err(uncovered);
        };
        used[h] = true;
        spent += problem.pool[h].cost;
        uncovered.retain(|&i| !inst.covers(h, i));
        chosen.push(h);
    }

    // Drop humans made redundant by the others, most expensive first.
    let mut order: Vec<usize> = chosen.clone();
    order.sort_by(|&a, &b| cmp_f64(problem.pool[b].cost, problem.pool[a].cost).then_with(|| b.cmp(&a)));
    for h in order {
        let others: Vec<usize> = chosen.iter().copied().filter(|&o| o != h).collect();
        if inst.cover[h].iter().all(|&i| others.iter().any(|&o| inst.covers(o, i))) {
            chosen.retain(|&o| o != h);
        }
    }
    Ok(chosen)
}

/// Exhaustive oracle: the budget-feasible full cover with the highest total
/// expertise, then lowest cost, then lexicographically smallest id list.
pub fn brute_force_assignment(problem: &AssignmentProblem, history: &TaskHistory) -> Result<Assignment> {
    let m = problem.pool.len();
    if m > ORACLE_POOL_LIMIT {
        return Err(Error::OracleTooLarge {
            size: m,
            limit: ORACLE_POOL_LIMIT,
        });
    }
    if problem.cells.is_empty() {
        return Ok(Assignment::empty());
    }
    if m == 0 {
        return Err(Error::Infeasible {
            uncovered: problem.cells.clone(),
        });
    }
    let inst = Instance::new(problem, history)?;
    let n = problem.cells.len();
    let mut best: Option<(f64, f64, Vec<String>, Vec<usize>)> = None;
    // budget-feasible subset covering the most cells, for the error path
    let mut widest: Option<(usize, Vec<usize>)> = None;

    for mask in 1u32..(1u32 << m) {
        let members: Vec<usize> = (0..m).filter(|&h| mask & (1 << h) != 0).collect();
        let cost: f64 = members.iter().map(|&h| problem.pool[h].cost).sum();
        let within = match problem.budget {
            None => true,
            Some(Budget::MaxHumans(k)) => members.len() <= k as usize,
            Some(Budget::MaxTotalCost(b)) => cost <= b + EPS,
        };
        if !within {
            continue;
        }
        let mut covered = 0;
        let mut expertise = 0.0;
        for i in 0..n {
            let e = members
                .iter()
                .filter(|&&h| inst.covers(h, i))
                .map(|&h| inst.cell_expertise[h][i])
                .fold(None, |acc: Option<f64>, e| Some(acc.map_or(e, |a| a.max(e))));
            if let Some(e) = e {
                covered += 1;
                expertise += e;
            }
        }
        if widest.as_ref().is_none_or(|(c, _)| covered > *c) {
            widest = Some((covered, members.clone()));
        }
        if covered < n {
            continue;
        }
        let mut ids: Vec<String> = members.iter().map(|&h| problem.pool[h].id.clone()).collect();
        ids.sort();
        let better = match &best {
            None => true,
            Some((be, bc, bids, _)) => {
                cmp_f64(expertise, *be)
                    .then_with(|| cmp_f64(*bc, cost))
                    .then_with(|| bids.cmp(&ids))
                    == Ordering::Greater
            }
        };
        if better {
            best = Some((expertise, cost, ids, members));
        }
    }
    match best {
        Some((_, _, _, members)) => Ok(inst.finish(&members)),
        None => {
            let members = widest.map(|(_, m)| m).unwrap_or_default();
            let uncovered = (0..n)
                .filter(|&i| !members.iter().any(|&h| inst.covers(h, i)))
                .map(|i| problem.cells[i].clone())
                .collect();
            Err(Error::Infeasible { uncovered })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InteractionKind {
    ErrorReport,
    Specification,
    SpecificationErrorReport,
    FixPerformed,
}

impl InteractionKind {
    /// Role that receives this interaction.
    pub fn recipient(self) -> HumanRole {
        match self {
            InteractionKind::ErrorReport | InteractionKind::Specification => HumanRole::DataCurator,
            InteractionKind::SpecificationErrorReport => HumanRole::DomainExpert,
            InteractionKind::FixPerformed => HumanRole::DataValidator,
        }
    }
}

impl fmt::Display for InteractionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InteractionKind::ErrorReport => "error-report",
            InteractionKind::Specification => "specification",
            InteractionKind::SpecificationErrorReport => "specification-error-report",
            InteractionKind::FixPerformed => "fix-performed",
        })
    }
}

impl FromStr for InteractionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "error-report" => Ok(InteractionKind::ErrorReport),
            "specification" => Ok(InteractionKind::Specification),
            "specification-error-report" => Ok(InteractionKind::SpecificationErrorReport),
            "fix-performed" => Ok(InteractionKind::FixPerformed),
            _ => Err(Error::Routing(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionEvent {
    pub kind: InteractionKind,
    pub from: HumanRole,
}

pub fn route_interaction(event: &InteractionEvent) -> HumanRole {
    event.kind.recipient()
}

/// Routes an interaction named on the wire.
pub fn route_named(kind: &str, from: HumanRole) -> Result<HumanRole> {
    Ok(route_interaction(&InteractionEvent {
        kind: kind.parse()?,
        from,
    }))
}
