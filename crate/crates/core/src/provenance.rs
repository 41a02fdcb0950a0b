//! Factor ledger: which detectors, repairers, resources and validators stand
//! behind every repaired cell, how often validations confirmed them, and
//! which cells to put in front of a validator next.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CellRef, Verdict};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorKind {
    Detector,
    Repairer,
    Resource,
    Validator,
}

impl fmt::Display for FactorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FactorKind::Detector => "detector",
            FactorKind::Repairer => "repairer",
            FactorKind::Resource => "resource",
            FactorKind::Validator => "validator",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationRecord {
    pub validator: String,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactorLedgerEntry {
    pub cell: CellRef,
    pub generation: u64,
    pub factors: BTreeSet<String>,
    #[serde(default)]
    pub validations: Vec<ValidationRecord>,
    /// Validators that entered `factors` by validating this entry.
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub joined: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactorStats {
    pub factor: String,
    pub correct: u64,
    pub validated: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Quality {
    Untested,
    Score(f64),
}

impl Quality {
    pub fn score(self) -> Option<f64> {
        match self {
            Quality::Score(q) => Some(q),
            Quality::Untested => None,
        }
    }
}

impl fmt::Display for Quality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Quality::Untested => f.write_str("untested"),
            Quality::Score(q) => write!(f, "{q:.4}"),
        }
    }
}

/// `#correct(f) / #validated(f)`, or `Untested` before any validation.
pub fn factor_quality(stats: &FactorStats) -> Quality {
    if stats.validated == 0 {
        Quality::Untested
    } else {
        Quality::Score(stats.correct as f64 / stats.validated as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ValidationMode {
    /// Cover as many distinct factors as possible with few cells.
    AggregateCoverage,
    /// Prefer cells with small factor sets to isolate culprits.
    IsolateFactors,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationStrategy {
    pub mode: ValidationMode,
    pub cell_budget: usize,
    /// Factors under suspicion; only used by `IsolateFactors`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub suspects: Vec<String>,
}

impl ValidationStrategy {
    pub fn new(mode: ValidationMode, cell_budget: usize) -> Result<Self> {
        let s = ValidationStrategy {
            mode,
            cell_budget,
            suspects: Vec::new(),
        };
        s.check()?;
        Ok(s)
    }

    pub fn check(&self) -> Result<()> {
        if self.cell_budget == 0 {
            return Err(Error::Config("validation cell budget must be at least 1".into()));
        }
        Ok(())
    }
}

/// Exact max-coverage search is used up to this many candidate cells.
const EXACT_COVERAGE_LIMIT: usize = 16;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FactorLedger {
    entries: Vec<FactorLedgerEntry>,
    /// cell -> indices into `entries`, oldest generation first
    by_cell: BTreeMap<CellRef, Vec<usize>>,
    kinds: BTreeMap<String, FactorKind>,
    stats: BTreeMap<String, FactorStats>,
}

impl FactorLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Rebuilds the cell index after deserialization.
    pub fn reindex(&mut self) {
        self.by_cell.clear();
        for (i, e) in self.entries.iter().enumerate() {
            self.by_cell.entry(e.cell.clone()).or_default().push(i);
        }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[FactorLedgerEntry] {
        &self.entries
    }

    pub fn entry(&self, cell: &CellRef, generation: u64) -> Option<&FactorLedgerEntry> {
        self.by_cell
            .get(cell)?
            .iter()
            .map(|&i| &self.entries[i])
            .find(|e| e.generation == generation)
    }

    pub fn latest(&self, cell: &CellRef) -> Option<&FactorLedgerEntry> {
        self.by_cell.get(cell)?.last().map(|&i| &self.entries[i])
    }

    pub fn kind(&self, factor: &str) -> Option<FactorKind> {
        self.kinds.get(factor).copied()
    }

    pub fn stats(&self, factor: &str) -> Option<&FactorStats> {
        self.stats.get(factor)
    }

    pub fn quality(&self, factor: &str) -> Quality {
        self.stats.get(factor).map_or(Quality::Untested, factor_quality)
    }

    fn note_kind(&mut self, factor: &str, kind: FactorKind) {
        self.kinds.entry(factor.to_string()).or_insert(kind);
    }

    /// Records the factors behind one repair generation of `cell`. Factors of
    /// earlier generations (except their validators) carry over.
    pub fn record_repair_factors(
        &mut self,
        cell: &CellRef,
        generation: u64,
        detectors: &[String],
        repairer: &str,
        resources: &[String],
    ) -> Result<&FactorLedgerEntry> {
        if self.entry(cell, generation).is_some() {
            return Err(Error::LedgerConflict {
                cell: cell.clone(),
                generation,
            });
        }
        for r in resources {
            self.note_kind(r, FactorKind::Resource);
        }
        for d in detectors {
            self.note_kind(d, FactorKind::Detector);
        }
        self.note_kind(repairer, FactorKind::Repairer);

        let mut factors: BTreeSet<String> = self
            .by_cell
            .get(cell)
            .into_iter()
            .flatten()
            .next_back()
            .map(|&i| &self.entries[i])
            .into_iter()
            .flat_map(|e| e.factors.difference(&e.joined))
            .cloned()
            .collect();
        factors.extend(detectors.iter().cloned());
        factors.insert(repairer.to_string());
        factors.extend(resources.iter().cloned());

        self.entries.push(FactorLedgerEntry {
            cell: cell.clone(),
            generation,
            factors,
            validations: Vec::new(),
            joined: BTreeSet::new(),
        });
        let idx = self.entries.len() - 1;
        self.by_cell.entry(cell.clone()).or_default().push(idx);
        Ok(&self.entries[idx])
    }

    /// Rewards (accurate) or penalizes (inaccurate) every factor of the
    /// entry, then adds the validator to its factors.
    pub fn apply_validation(
        &mut self,
        cell: &CellRef,
        generation: u64,
        verdict: Verdict,
        validator: &str,
    ) -> Result<Vec<FactorStats>> {
        let idx = self
            .by_cell
            .get(cell)
            .and_then(|v| v.iter().copied().find(|&i| self.entries[i].generation == generation))
            .ok_or_else(|| Error::MissingEntry {
                cell: cell.clone(),
                generation,
            })?;
        let factors: Vec<String> = self.entries[idx]
            .factors
            .iter()
            .filter(|f| *f != validator)
            .cloned()
            .collect();
        let mut updated = Vec::with_capacity(factors.len());
        for f in factors {
            let s = self.stats.entry(f.clone()).or_insert_with(|| FactorStats {
                factor: f,
                correct: 0,
                validated: 0,
            });
            s.validated += 1;
            if verdict.is_accurate() {
                s.correct += 1;
            }
            updated.push(s.clone());
        }
        self.note_kind(validator, FactorKind::Validator);
        let entry = &mut self.entries[idx];
        if entry.factors.insert(validator.to_string()) {
            entry.joined.insert(validator.to_string());
        }
        entry.validations.push(ValidationRecord {
            validator: validator.to_string(),
            verdict,
        });
        Ok(updated)
    }

    /// Picks which of `candidates` (already in canonical cell order) a
    /// validator should look at.
    pub fn select_validation_targets(&self, strategy: &ValidationStrategy, candidates: &[CellRef]) -> Vec<CellRef> {
        let budget = strategy.cell_budget.max(1);
        if budget >= candidates.len() {
            return candidates.to_vec();
        }
        let empty = BTreeSet::new();
        let sets: Vec<&BTreeSet<String>> = candidates
            .iter()
            .map(|c| self.latest(c).map_or(&empty, |e| &e.factors))
            .collect();
        match strategy.mode {
            ValidationMode::IsolateFactors => {
                let suspects: BTreeSet<&String> = strategy.suspects.iter().collect();
                let mut order: Vec<usize> = (0..candidates.len()).collect();
                order.sort_by_key(|&i| {
                    let hits = !suspects.is_empty() && sets[i].iter().any(|f| suspects.contains(f));
                    (!hits, sets[i].len(), i)
                });
                order.truncate(budget);
                order.sort_unstable();
                order.into_iter().map(|i| candidates[i].clone()).collect()
            }
            ValidationMode::AggregateCoverage => {
                let picked = if candidates.len() <= EXACT_COVERAGE_LIMIT {
                    exact_max_coverage(&sets, budget)
                } else {
                    greedy_max_coverage(&sets, budget)
                };
                picked.into_iter().map(|i| candidates[i].clone()).collect()
            }
        }
    }

    /// Factor rows sorted ascending by quality; untested factors last.
    pub fn factor_rows(&self) -> Vec<FactorRow> {
        let mut rows: Vec<FactorRow> = self
            .kinds
            .iter()
            .map(|(f, &kind)| {
                let (correct, validated) = self.stats.get(f).map_or((0, 0), |s| (s.correct, s.validated));
                FactorRow {
                    factor: f.clone(),
                    kind,
                    correct,
                    validated,
                    quality: self.quality(f).score(),
                    rank: None,
                }
            })
            .collect();
        rows.sort_by(|a, b| match (a.quality, b.quality) {
            (Some(x), Some(y)) => x.partial_cmp(&y).unwrap().then_with(|| a.factor.cmp(&b.factor)),
            (Some(_), None) => std::cmp::Ordering::Less,
            (None, Some(_)) => std::cmp::Ordering::Greater,
            (None, None) => a.factor.cmp(&b.factor),
        });
        // rank 1 = best quality
        let tested = rows.iter().filter(|r| r.quality.is_some()).count();
        for (i, r) in rows.iter_mut().enumerate().take(tested) {
            r.rank = Some(tested - i);
        }
        rows
    }
}

fn greedy_max_coverage(sets: &[&BTreeSet<String>], budget: usize) -> Vec<usize> {
    let mut covered: BTreeSet<&String> = BTreeSet::new();
    let mut picked: Vec<usize> = Vec::new();
    while picked.len() < budget {
        let best = (0..sets.len()).filter(|i| !picked.contains(i)).max_by_key(|&i| {
            let gain = sets[i].iter().filter(|f| !covered.contains(f)).count();
            (gain, sets[i].len(), std::cmp::Reverse(i))
        });
        let Some(i) = best else { break };
        covered.extend(sets[i].iter());
        picked.push(i);
    }
    picked.sort_unstable();
    picked
}

/// Max coverage with exactly `budget` cells; first combination in
/// lexicographic index order wins ties.
fn exact_max_coverage(sets: &[&BTreeSet<String>], budget: usize) -> Vec<usize> {
    fn walk(
        sets: &[&BTreeSet<String>],
        start: usize,
        left: usize,
        current: &mut Vec<usize>,
        best: &mut (usize, Vec<usize>),
    ) {
        if left == 0 {
            let covered: BTreeSet<&String> = current.iter().flat_map(|&i| sets[i].iter()).collect();
            if covered.len() > best.0 || best.1.is_empty() {
                *best = (covered.len(), current.clone());
            }
            return;
        }
        for i in start..=sets.len() - left {
            current.push(i);
            walk(sets, i + 1, left - 1, current, best);
            current.pop();
        }
    }
    let k = budget.min(sets.len());
    let mut best = (0, Vec::new());
    walk(sets, 0, k, &mut Vec::new(), &mut best);
    best.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorRow {
    pub factor: String,
    pub kind: FactorKind,
    pub correct: u64,
    pub validated: u64,
    /// `None` while untested.
    pub quality: Option<f64>,
    /// 1 is the best tested factor; untested factors are unranked.
    pub rank: Option<usize>,
}

/// Tab-separated bottleneck report.
pub fn render_factor_report(rows: &[FactorRow]) -> String {
    let mut out = String::from("factor\ttype\tcorrect\tvalidated\tquality\trank\n");
    for r in rows {
        let q = r.quality.map_or_else(|| "untested".to_string(), |q| format!("{q:.4}"));
        let rank = r.rank.map_or_else(|| "-".to_string(), |k| k.to_string());
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}",
            r.factor, r.kind, r.correct, r.validated, q, rank
        );
    }
    out
}
