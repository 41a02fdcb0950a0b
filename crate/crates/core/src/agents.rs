//! Black-box agent contract and the built-in agents: an FD-violation
//! detector, a majority-vote FD repairer and a scripted human.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{resolve_selector, CellRef, CellSelector, Database, RelationInstance, TaskKind, Verdict};

/// Functional dependency `lhs -> rhs` over one relation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FdRule {
    pub id: String,
    pub relation: String,
    pub lhs: Vec<String>,
    pub rhs: Vec<String>,
}

impl FdRule {
    pub fn check(&self, rel: &RelationInstance) -> Result<()> {
        if self.lhs.is_empty() || self.rhs.is_empty() {
            return Err(Error::Config(format!(
                "rule `{}` needs attributes on both sides",
                self.id
            )));
        }
        if let Some(a) = self.lhs.iter().find(|a| self.rhs.contains(a)) {
            return Err(Error::Config(format!("rule `{}` has `{a}` on both sides", self.id)));
        }
        for a in self.lhs.iter().chain(&self.rhs) {
            if rel.attribute_index(a).is_none() {
                return Err(Error::Config(format!(
                    "rule `{}` references missing attribute `{a}` of `{}`",
                    self.id, rel.name
                )));
            }
        }
        Ok(())
    }

    fn indices(&self, rel: &RelationInstance) -> Result<(Vec<usize>, Vec<usize>)> {
        if rel.name != self.relation {
            return Err(Error::Config(format!(
                "rule `{}` is defined on `{}`, not `{}`",
                self.id, self.relation, rel.name
            )));
        }
        self.check(rel)?;
        let idx = |attrs: &[String]| attrs.iter().map(|a| rel.attribute_index(a).unwrap()).collect();
        Ok((idx(&self.lhs), idx(&self.rhs)))
    }
}

impl fmt::Display for FdRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: {}: {} -> {}",
            self.id,
            self.relation,
            self.lhs.join(", "),
            self.rhs.join(", ")
        )
    }
}

impl FromStr for FdRule {
    type Err = Error;

    /// `id: relation: A, B -> C`
    fn from_str(line: &str) -> Result<Self> {
        let bad = |why: &str| Error::Config(format!("bad rule line `{line}`: {why}"));
        let mut parts = line.splitn(3, ':');
        let (id, relation, body) = match (parts.next(), parts.next(), parts.next()) {
            (Some(i), Some(r), Some(b)) => (i.trim(), r.trim(), b),
            _ => return Err(bad("expected `id: relation: lhs -> rhs`")),
        };
        let (lhs, rhs) = body.split_once("->").ok_or_else(|| bad("missing `->`"))?;
        let attrs = |s: &str| -> Vec<String> {
            s.split(',')
                .map(str::trim)
                .filter(|a| !a.is_empty())
                .map(String::from)
                .collect()
        };
        if id.is_empty() || relation.is_empty() {
            return Err(bad("empty id or relation"));
        }
        let rule = FdRule {
            id: id.to_string(),
            relation: relation.to_string(),
            lhs: attrs(lhs),
            rhs: attrs(rhs),
        };
        if rule.lhs.is_empty() || rule.rhs.is_empty() {
            return Err(bad("empty side"));
        }
        Ok(rule)
    }
}

/// Parses a rules file: one rule per line, `#` comments and blank lines skipped.
pub fn parse_rules(text: &str) -> Result<Vec<FdRule>> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::parse)
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evidence {
    /// Rule or other resource ids implicated.
    pub resources: Vec<String>,
    /// Co-violating cells.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub partners: Vec<CellRef>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub detector: String,
    pub suspects: Vec<CellRef>,
    #[serde(default)]
    pub evidence: BTreeMap<CellRef, Evidence>,
}

impl DetectionReport {
    pub fn empty(detector: &str) -> Self {
        DetectionReport {
            detector: detector.to_string(),
            suspects: Vec::new(),
            evidence: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellUpdate {
    pub cell: CellRef,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepairProposal {
    pub repairer: String,
    pub updates: Vec<CellUpdate>,
    #[serde(default)]
    pub resources_used: Vec<String>,
}

/// Flags the lhs and rhs cells of every tuple pair that agrees on `lhs` but
/// disagrees on `rhs`, restricted to `scope`.
pub fn detect_fd_violations(
    instance: &RelationInstance,
    rule: &FdRule,
    scope: &BTreeSet<CellRef>,
) -> Result<DetectionReport> {
    let (lhs, rhs) = rule.indices(instance)?;
    let mut groups: HashMap<Vec<&str>, Vec<usize>> = HashMap::new();
    for (r, row) in instance.rows.iter().enumerate() {
        groups
            .entry(lhs.iter().map(|&a| row[a].as_str()).collect())
            .or_default()
            .push(r);
    }
    let involved: Vec<usize> = lhs.iter().chain(&rhs).copied().collect();
    let rhs_of = |r: usize| -> Vec<&str> { rhs.iter().map(|&a| instance.rows[r][a].as_str()).collect() };

    let mut partners: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for rows in groups.values() {
        let mut by_rhs: BTreeMap<Vec<&str>, Vec<usize>> = BTreeMap::new();
        for &r in rows {
            by_rhs.entry(rhs_of(r)).or_default().push(r);
        }
        if by_rhs.len() < 2 {
            continue;
        }
        for &r in rows {
            let own = rhs_of(r);
            let others = rows.iter().copied().filter(|&o| rhs_of(o) != own);
            partners.entry(r).or_default().extend(others);
        }
    }

    let mut report = DetectionReport::empty(&rule.id);
    let mut attrs = involved.clone();
    attrs.sort_unstable();
    attrs.dedup();
    for (&r, others) in &partners {
        let partner_cells: Vec<CellRef> = others
            .iter()
            .flat_map(|&o| attrs.iter().map(move |&a| instance.cell(o, a)))
            .collect();
        for &a in &attrs {
            let cell = instance.cell(r, a);
            if scope.contains(&cell) {
                report.evidence.insert(
                    cell.clone(),
                    Evidence {
                        resources: vec![rule.id.clone()],
                        partners: partner_cells.clone(),
                    },
                );
                report.suspects.push(cell);
            }
        }
    }
    Ok(report)
}

/// Majority-vote repair: in every violating lhs-group, flagged rhs cells
/// take the group's most frequent rhs value (ties: lexicographically
/// smallest). Flagged lhs cells are re-asserted unchanged so that every
/// violating cell receives a repair generation.
pub fn repair_fd_violations(
    instance: &RelationInstance,
    rule: &FdRule,
    report: &DetectionReport,
) -> Result<RepairProposal> {
    let (lhs, rhs) = rule.indices(instance)?;
    let flagged: BTreeSet<&CellRef> = report
        .suspects
        .iter()
        .filter(|c| {
            c.relation == instance.name
                && report.evidence.get(*c).map_or(report.detector == rule.id, |e| {
                    e.resources.iter().any(|r| r == &rule.id)
                })
        })
        .collect();
    let mut proposal = RepairProposal {
        repairer: String::new(),
        updates: Vec::new(),
        resources_used: vec![rule.id.clone()],
    };
    if flagged.is_empty() {
        return Ok(proposal);
    }

    let mut groups: BTreeMap<Vec<&str>, Vec<usize>> = BTreeMap::new();
    for (r, row) in instance.rows.iter().enumerate() {
        groups
            .entry(lhs.iter().map(|&a| row[a].as_str()).collect())
            .or_default()
            .push(r);
    }
    let mut per_row: BTreeMap<usize, Vec<CellUpdate>> = BTreeMap::new();
    for rows in groups.values() {
        let mut counts: BTreeMap<Vec<&str>, usize> = BTreeMap::new();
        for &r in rows {
            *counts
                .entry(rhs.iter().map(|&a| instance.rows[r][a].as_str()).collect())
                .or_default() += 1;
        }
        if counts.len() < 2 {
            continue;
        }
        // BTreeMap iterates ascending, so the first maximum is the smallest value.
        let best = counts.values().copied().max().unwrap_or(0);
        let majority = counts.iter().find(|(_, &n)| n == best).map(|(v, _)| v.clone()).unwrap();
        for &r in rows {
            let mut updates = Vec::new();
            let mut attrs: Vec<usize> = lhs.iter().chain(&rhs).copied().collect();
            attrs.sort_unstable();
            for a in attrs {
                let cell = instance.cell(r, a);
                if !flagged.contains(&cell) {
                    continue;
                }
                let value = match rhs.iter().position(|&x| x == a) {
                    Some(k) => majority[k].to_string(),
                    None => instance.rows[r][a].clone(),
                };
                updates.push(CellUpdate { cell, value });
            }
            if !updates.is_empty() {
                per_row.insert(r, updates);
            }
        }
    }
    proposal.updates = per_row.into_values().flatten().collect();
    Ok(proposal)
}

/// A detector treated as a black box: cells in, suspect cells out.
pub trait Detector: Send + Sync {
    fn detect(&self, db: &Database, cells: &[CellRef]) -> Result<DetectionReport>;
}

/// A repairer treated as a black box: flagged cells in, proposed values out.
pub trait Repairer: Send + Sync {
    fn repair(&self, db: &Database, cells: &[CellRef], reports: &[DetectionReport]) -> Result<Vec<RepairProposal>>;
}

pub struct FdDetector {
    pub rule: FdRule,
}

impl Detector for FdDetector {
    fn detect(&self, db: &Database, cells: &[CellRef]) -> Result<DetectionReport> {
        let rel = db
            .relation(&self.rule.relation)
            .ok_or_else(|| Error::Config(format!("rule `{}` names unknown relation", self.rule.id)))?;
        let scope: BTreeSet<CellRef> = cells.iter().cloned().collect();
        let mut report = detect_fd_violations(rel, &self.rule, &scope)?;
        db.sort_cells(&mut report.suspects);
        Ok(report)
    }
}

/// FD repair tool. Repairs the rules named in detector evidence; with no
/// reports it detects with its own `default_rules` first.
pub struct FdRepairer {
    pub id: String,
    pub rules: BTreeMap<String, FdRule>,
    pub default_rules: Vec<String>,
}

impl Repairer for FdRepairer {
    fn repair(&self, db: &Database, cells: &[CellRef], reports: &[DetectionReport]) -> Result<Vec<RepairProposal>> {
        let given: BTreeSet<&CellRef> = cells.iter().collect();
        let mut by_rule: BTreeMap<String, DetectionReport> = BTreeMap::new();
        let mut order: Vec<String> = Vec::new();
        if reports.is_empty() {
            for id in &self.default_rules {
                let rule = self
                    .rules
                    .get(id)
                    .ok_or_else(|| Error::Config(format!("repairer `{}` uses unknown rule `{id}`", self.id)))?;
                let det = FdDetector { rule: rule.clone() };
                by_rule.insert(id.clone(), det.detect(db, cells)?);
                order.push(id.clone());
            }
        } else {
            for report in reports {
                for cell in report.suspects.iter().filter(|c| given.contains(c)) {
                    let Some(ev) = report.evidence.get(cell) else { continue };
                    for rid in ev.resources.iter().filter(|r| self.rules.contains_key(*r)) {
                        let merged = by_rule.entry(rid.clone()).or_insert_with(|| {
                            order.push(rid.clone());
                            DetectionReport::empty(rid)
                        });
                        if !merged.evidence.contains_key(cell) {
                            merged.suspects.push(cell.clone());
                            merged.evidence.insert(
                                cell.clone(),
                                Evidence {
                                    resources: vec![rid.clone()],
                                    partners: ev.partners.clone(),
                                },
                            );
                        }
                    }
                }
            }
        }
        let mut out = Vec::new();
        for rid in order {
            let rule = &self.rules[&rid];
            let rel = db
                .relation(&rule.relation)
                .ok_or_else(|| Error::Config(format!("rule `{rid}` names unknown relation")))?;
            let mut p = repair_fd_violations(rel, rule, &by_rule[&rid])?;
            p.repairer = self.id.clone();
            if !p.updates.is_empty() {
                out.push(p);
            }
        }
        Ok(out)
    }
}

/// One cell of a human task, with enough context that the human never needs
/// to see the raw data.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskCell {
    pub cell: CellRef,
    pub value: String,
    /// Value before the repair under validation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub previous: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generation: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellVerdict {
    pub cell: CellRef,
    pub verdict: Verdict,
}

/// Desk-scale stand-in for a human.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanScript {
    pub human: String,
    pub ground_truth: BTreeMap<CellRef, String>,
    pub error_rate: f64,
    pub coverage: CellSelector,
    pub seed: u64,
}

impl HumanScript {
    pub fn check(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.error_rate) {
            return Err(Error::Config(format!(
                "error rate of `{}` must lie in [0,1], got {}",
                self.human, self.error_rate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ScriptedAnswer {
    Report(DetectionReport),
    Repair(RepairProposal),
    Verdicts { verdicts: Vec<CellVerdict> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedResponse {
    pub answer: ScriptedAnswer,
    pub abstained: Vec<CellRef>,
}

/// Uniform draw in [0,1) that depends only on the seed and the salt.
pub fn unit_draw(seed: u64, salt: &str) -> f64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in salt.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    ChaCha8Rng::seed_from_u64(seed ^ h.rotate_left(29)).gen::<f64>()
}

/// Marker appended to a value when a scripted agent makes a repair mistake.
pub const MISTAKE_MARKER: char = '~';

pub fn perturb(value: &str) -> String {
    format!("{value}{MISTAKE_MARKER}")
}

/// Answers a task the way the scripted human would. Each cell is answered
/// from ground truth with probability `1 - error_rate`, otherwise with a
/// deterministic mistake. Cells outside coverage are abstained on.
pub fn run_scripted_human(
    kind: TaskKind,
    cells: &[TaskCell],
    script: &HumanScript,
    db: &Database,
) -> Result<ScriptedResponse> {
    script.check()?;
    let coverage: BTreeSet<CellRef> = resolve_selector(&script.coverage, db)?.into_iter().collect();
    let mut abstained = Vec::new();
    let mut answered = Vec::new();
    for tc in cells {
        if coverage.contains(&tc.cell) {
            let salt = format!("{kind}:{}:{}", tc.cell, tc.value);
            let mistaken = unit_draw(script.seed, &salt) < script.error_rate;
            answered.push((tc, mistaken));
        } else {
            abstained.push(tc.cell.clone());
        }
    }
    let truth = |tc: &TaskCell| {
        script
            .ground_truth
            .get(&tc.cell)
            .cloned()
            .unwrap_or_else(|| tc.value.clone())
    };
    let answer = match kind {
        TaskKind::Detect => {
            let mut report = DetectionReport::empty(&script.human);
            for (tc, mistaken) in answered {
                let dirty = truth(tc) != tc.value;
                if dirty != mistaken {
                    report.suspects.push(tc.cell.clone());
                }
            }
            ScriptedAnswer::Report(report)
        }
        TaskKind::Repair => ScriptedAnswer::Repair(RepairProposal {
            repairer: script.human.clone(),
            updates: answered
                .into_iter()
                .map(|(tc, mistaken)| {
                    let t = truth(tc);
                    CellUpdate {
                        cell: tc.cell.clone(),
                        value: if mistaken { perturb(&t) } else { t },
                    }
                })
                .collect(),
            resources_used: Vec::new(),
        }),
        TaskKind::Validate => ScriptedAnswer::Verdicts {
            verdicts: answered
                .into_iter()
                .map(|(tc, mistaken)| {
                    let v = Verdict::from_bool(truth(tc) == tc.value);
                    CellVerdict {
                        cell: tc.cell.clone(),
                        verdict: if mistaken { v.flipped() } else { v },
                    }
                })
                .collect(),
        },
        TaskKind::Specify => return Err(Error::Config("scripted humans do not write specifications".into())),
    };
    Ok(ScriptedResponse { answer, abstained })
}
