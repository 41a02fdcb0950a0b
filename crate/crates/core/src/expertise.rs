//! Human characterization and validation history.
//!
//! Expertise of a human on a set of cells for one task kind is the fraction
//! of their validated contributions that were judged correct. The raw ratio
//! is undefined for humans without validated history, so allocation uses a
//! Beta-smoothed variant.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CellRef, CellSelector, TaskKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum HumanRole {
    DataUser,
    DataCurator,
    DataValidator,
    DomainExpert,
}

impl fmt::Display for HumanRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl FromStr for HumanRole {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_', ' '], "").as_str() {
            "datauser" => Ok(HumanRole::DataUser),
            "datacurator" => Ok(HumanRole::DataCurator),
            "datavalidator" => Ok(HumanRole::DataValidator),
            "domainexpert" => Ok(HumanRole::DomainExpert),
            _ => Err(Error::Config(format!("unknown role `{s}`"))),
        }
    }
}

/// `⟨Role, Data, Cost, Expertise⟩`; expertise is computed on demand from the
/// session's [`TaskHistory`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanProfile {
    pub id: String,
    pub role: HumanRole,
    /// Cells the human is knowledgeable about.
    pub data: CellSelector,
    /// Cost of one task issued to this human.
    pub cost: f64,
}

impl HumanProfile {
    pub fn new(id: &str, role: HumanRole, data: CellSelector, cost: f64) -> Self {
        HumanProfile {
            id: id.to_string(),
            role,
            data,
            cost,
        }
    }

    pub fn check(&self) -> Result<()> {
        if !self.cost.is_finite() || self.cost < 0.0 {
            return Err(Error::Config(format!("cost of `{}` must be non-negative", self.id)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Correct,
    Incorrect,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub human: String,
    pub cell: CellRef,
    pub task: TaskKind,
    pub outcome: Outcome,
    pub sequence: u64,
}

/// Append-only log of validated contributions.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskHistory {
    entries: Vec<HistoryEntry>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counts {
    pub correct: u64,
    pub validated: u64,
}

/// Beta prior used by [`smoothed_expertise`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prior {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for Prior {
    fn default() -> Self {
        Prior { alpha: 1.0, beta: 1.0 }
    }
}

impl Prior {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0 && beta > 0.0) {
            return Err(Error::Config(format!(
                "prior parameters must be positive, got ({alpha}, {beta})"
            )));
        }
        Ok(Prior { alpha, beta })
    }
}

impl TaskHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[HistoryEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Appends one outcome and returns its sequence number.
    pub fn record_outcome(&mut self, human: &str, cell: &CellRef, task: TaskKind, outcome: Outcome) -> u64 {
        let sequence = self.entries.last().map_or(1, |e| e.sequence + 1);
        self.entries.push(HistoryEntry {
            human: human.to_string(),
            cell: cell.clone(),
            task,
            outcome,
            sequence,
        });
        sequence
    }

    pub fn counts<'a, I>(&self, human: &str, cells: I, task: TaskKind) -> Counts
    where
        I: IntoIterator<Item = &'a CellRef>,
    {
        let cells: BTreeSet<&CellRef> = cells.into_iter().collect();
        self.entries
            .iter()
            .filter(|e| e.human == human && e.task == task && cells.contains(&e.cell))
            .fold(Counts::default(), |mut acc, e| {
                acc.validated += 1;
                if e.outcome == Outcome::Correct {
                    acc.correct += 1;
                }
                acc
            })
    }

    /// Counts over every cell, for reporting.
    pub fn totals(&self, human: &str, task: TaskKind) -> Counts {
        self.entries
            .iter()
            .filter(|e| e.human == human && e.task == task)
            .fold(Counts::default(), |mut acc, e| {
                acc.validated += 1;
                acc.correct += u64::from(e.outcome == Outcome::Correct);
                acc
            })
    }
}

/// `#correct(C,T) / #validated(C,T)`.
pub fn expertise_score(history: &TaskHistory, human: &str, cells: &[CellRef], task: TaskKind) -> Result<f64> {
    let c = history.counts(human, cells, task);
    if c.validated == 0 {
        return Err(Error::UndefinedExpertise {
            human: human.to_string(),
            task: task.to_string(),
        });
    }
    Ok(c.correct as f64 / c.validated as f64)
}

/// `(#correct + α) / (#validated + α + β)`; always defined.
pub fn smoothed_expertise(history: &TaskHistory, human: &str, cells: &[CellRef], task: TaskKind, prior: Prior) -> f64 {
    let c = history.counts(human, cells, task);
    (c.correct as f64 + prior.alpha) / (c.validated as f64 + prior.alpha + prior.beta)
}
