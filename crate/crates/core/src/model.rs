//! Shared domain types: relations and cells, selectors, cleaning jobs, agent
//! descriptors and the audited repair event.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::agents::FdRule;
use crate::error::{Error, Result};
use crate::expertise::HumanProfile;
use crate::orchestrator::CostStrategy;
use crate::provenance::ValidationStrategy;

/// Stable row identifier assigned at ingestion. Rendered as `r<n>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RowId(pub u64);

impl fmt::Display for RowId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

impl FromStr for RowId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.strip_prefix('r')
            .and_then(|n| n.parse().ok())
            .map(RowId)
            .ok_or_else(|| Error::Selector {
                token: s.to_string(),
                reason: "row ids look like `r<n>`".into(),
            })
    }
}

impl Serialize for RowId {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for RowId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Address of one cell `t[A]`, written `relation/row/attribute`.
///
/// The derived ordering is only used for map keys. Anything user-visible is
/// ordered through [`Database::sort_cells`], which follows schema order.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellRef {
    pub relation: String,
    pub row: RowId,
    pub attribute: String,
}

impl CellRef {
    pub fn new(relation: impl Into<String>, row: u64, attribute: impl Into<String>) -> Self {
        CellRef {
            relation: relation.into(),
            row: RowId(row),
            attribute: attribute.into(),
        }
    }
}

impl fmt::Display for CellRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.relation, self.row, self.attribute)
    }
}

impl FromStr for CellRef {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.splitn(3, '/');
        match (parts.next(), parts.next(), parts.next()) {
            (Some(rel), Some(row), Some(attr)) if !rel.is_empty() && !attr.is_empty() => Ok(CellRef {
                relation: rel.to_string(),
                row: row.parse()?,
                attribute: attr.to_string(),
            }),
            _ => Err(Error::Selector {
                token: s.to_string(),
                reason: "cells are written `relation/r<n>/attribute`".into(),
            }),
        }
    }
}

impl Serialize for CellRef {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CellRef {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationInstance {
    pub name: String,
    pub attributes: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub row_ids: Vec<RowId>,
}

impl RelationInstance {
    /// Builds a relation and assigns sequential row ids `r1..rn`.
    pub fn new(name: impl Into<String>, attributes: Vec<String>, rows: Vec<Vec<String>>) -> Result<Self> {
        let name = name.into();
        let mut seen = BTreeSet::new();
        for a in &attributes {
            if !seen.insert(a) {
                return Err(Error::Schema(format!("duplicate attribute `{a}` in `{name}`")));
            }
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != attributes.len() {
                return Err(Error::Schema(format!(
                    "row {} of `{name}` has {} values, expected {}",
                    i + 1,
                    row.len(),
                    attributes.len()
                )));
            }
        }
        let row_ids = (1..=rows.len() as u64).map(RowId).collect();
        Ok(RelationInstance {
            name,
            attributes,
            rows,
            row_ids,
        })
    }

    /// Convenience constructor for fixtures and tests.
    pub fn from_rows(name: &str, attributes: &[&str], rows: &[&[&str]]) -> Result<Self> {
        Self::new(
            name,
            attributes.iter().map(|s| s.to_string()).collect(),
            rows.iter().map(|r| r.iter().map(|s| s.to_string()).collect()).collect(),
        )
    }

    pub fn attribute_index(&self, attribute: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a == attribute)
    }

    pub fn row_index(&self, row: RowId) -> Option<usize> {
        self.row_ids.binary_search(&row).ok()
    }

    pub fn value(&self, row: RowId, attribute: &str) -> Option<&str> {
        let r = self.row_index(row)?;
        let a = self.attribute_index(attribute)?;
        Some(self.rows[r][a].as_str())
    }

    pub fn cell(&self, row_index: usize, attribute_index: usize) -> CellRef {
        CellRef {
            relation: self.name.clone(),
            row: self.row_ids[row_index],
            attribute: self.attributes[attribute_index].clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// All cells in row-major, schema order.
    pub fn cells(&self) -> impl Iterator<Item = CellRef> + '_ {
        (0..self.rows.len()).flat_map(move |r| (0..self.attributes.len()).map(move |a| self.cell(r, a)))
    }
}

/// The set of relations a session cleans.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Database {
    pub relations: BTreeMap<String, RelationInstance>,
}

impl Database {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, relation: RelationInstance) -> Result<()> {
        if self.relations.contains_key(&relation.name) {
            return Err(Error::Duplicate(relation.name));
        }
        self.relations.insert(relation.name.clone(), relation);
        Ok(())
    }

    pub fn relation(&self, name: &str) -> Option<&RelationInstance> {
        self.relations.get(name)
    }

    pub fn get(&self, cell: &CellRef) -> Option<&str> {
        self.relations.get(&cell.relation)?.value(cell.row, &cell.attribute)
    }

    pub fn contains(&self, cell: &CellRef) -> bool {
        self.get(cell).is_some()
    }

    pub fn set(&mut self, cell: &CellRef, value: String) -> Result<String> {
        let rel = self
            .relations
            .get_mut(&cell.relation)
            .ok_or_else(|| Error::NotFound(format!("relation `{}`", cell.relation)))?;
        let (r, a) = match (rel.row_index(cell.row), rel.attribute_index(&cell.attribute)) {
            (Some(r), Some(a)) => (r, a),
            _ => return Err(Error::NotFound(format!("cell {cell}"))),
        };
        Ok(std::mem::replace(&mut rel.rows[r][a], value))
    }

    /// Sort key following (relation name, row id, schema position).
    pub fn order_key(&self, cell: &CellRef) -> (String, RowId, usize) {
        let pos = self
            .relations
            .get(&cell.relation)
            .and_then(|r| r.attribute_index(&cell.attribute))
            .unwrap_or(usize::MAX);
        (cell.relation.clone(), cell.row, pos)
    }

    pub fn sort_cells(&self, cells: &mut Vec<CellRef>) {
        cells.sort_by_cached_key(|c| (self.order_key(c), c.attribute.clone()));
        cells.dedup();
    }

    pub fn all_cells(&self) -> Vec<CellRef> {
        self.relations.values().flat_map(|r| r.cells()).collect()
    }
}

/// One pattern of a cell selector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SelectorTerm {
    /// `*`
    All,
    /// `Rel[*]=*`
    Relation(String),
    /// `Rel[Attr]=*`
    Column { relation: String, attribute: String },
    /// `Rel/r<n>/Attr`
    Cell(CellRef),
}

impl fmt::Display for SelectorTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SelectorTerm::All => f.write_str("*"),
            SelectorTerm::Relation(r) => write!(f, "{r}[*]=*"),
            SelectorTerm::Column { relation, attribute } => write!(f, "{relation}[{attribute}]=*"),
            SelectorTerm::Cell(c) => write!(f, "{c}"),
        }
    }
}

impl FromStr for SelectorTerm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        if t == "*" {
            return Ok(SelectorTerm::All);
        }
        if let Some(head) = t.strip_suffix("]=*") {
            let (relation, attribute) = head.split_once('[').ok_or_else(|| Error::Selector {
                token: t.to_string(),
                reason: "expected `relation[attribute]=*`".into(),
            })?;
            if relation.is_empty() || attribute.is_empty() {
                return Err(Error::Selector {
                    token: t.to_string(),
                    reason: "empty relation or attribute".into(),
                });
            }
            return Ok(if attribute == "*" {
                SelectorTerm::Relation(relation.to_string())
            } else {
                SelectorTerm::Column {
                    relation: relation.to_string(),
                    attribute: attribute.to_string(),
                }
            });
        }
        t.parse().map(SelectorTerm::Cell)
    }
}

/// A union of selector terms. The empty selector denotes no cells.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CellSelector(pub Vec<SelectorTerm>);

impl CellSelector {
    pub fn all() -> Self {
        CellSelector(vec![SelectorTerm::All])
    }

    pub fn column(relation: &str, attribute: &str) -> Self {
        CellSelector(vec![SelectorTerm::Column {
            relation: relation.into(),
            attribute: attribute.into(),
        }])
    }

    pub fn cells<I: IntoIterator<Item = CellRef>>(cells: I) -> Self {
        CellSelector(cells.into_iter().map(SelectorTerm::Cell).collect())
    }

    pub fn parse_terms<S: AsRef<str>>(terms: &[S]) -> Result<Self> {
        terms
            .iter()
            .map(|t| t.as_ref().parse())
            .collect::<Result<_>>()
            .map(CellSelector)
    }

    pub fn union(mut self, other: CellSelector) -> Self {
        self.0.extend(other.0);
        self
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl Serialize for CellSelector {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let terms: Vec<String> = self.0.iter().map(|t| t.to_string()).collect();
        terms.serialize(s)
    }
}

impl<'de> Deserialize<'de> for CellSelector {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            One(String),
            Many(Vec<String>),
        }
        let terms = match Raw::deserialize(d)? {
            Raw::One(s) => vec![s],
            Raw::Many(v) => v,
        };
        CellSelector::parse_terms(&terms).map_err(serde::de::Error::custom)
    }
}

/// Resolves a selector to the cells it denotes, in (relation, row id,
/// schema position) order without duplicates.
pub fn resolve_selector(selector: &CellSelector, db: &Database) -> Result<Vec<CellRef>> {
    let mut out = Vec::new();
    for term in &selector.0 {
        match term {
            SelectorTerm::All => out.extend(db.all_cells()),
            SelectorTerm::Relation(name) => {
                let rel = db.relation(name).ok_or_else(|| Error::Selector {
                    token: term.to_string(),
                    reason: format!("unknown relation `{name}`"),
                })?;
                out.extend(rel.cells());
            }
            SelectorTerm::Column { relation, attribute } => {
                let rel = db.relation(relation).ok_or_else(|| Error::Selector {
                    token: term.to_string(),
                    reason: format!("unknown relation `{relation}`"),
                })?;
                let a = rel.attribute_index(attribute).ok_or_else(|| Error::Selector {
                    token: term.to_string(),
                    reason: format!("unknown attribute `{attribute}`"),
                })?;
                out.extend((0..rel.len()).map(|r| rel.cell(r, a)));
            }
            SelectorTerm::Cell(c) => {
                if !db.contains(c) {
                    return Err(Error::Selector {
                        token: c.to_string(),
                        reason: "no such cell".into(),
                    });
                }
                out.push(c.clone());
            }
        }
    }
    db.sort_cells(&mut out);
    Ok(out)
}

/// Hard cap on human involvement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Budget {
    MaxHumans(u32),
    MaxTotalCost(f64),
}

impl Budget {
    pub fn check(&self) -> Result<()> {
        match *self {
            Budget::MaxTotalCost(v) if v.is_nan() || v < 0.0 => {
                Err(Error::Config(format!("budget must be non-negative, got {v}")))
            }
            _ => Ok(()),
        }
    }
}

impl FromStr for Budget {
    type Err = Error;

    /// `max-humans=<n>` or `max-cost=<x>`.
    fn from_str(s: &str) -> Result<Self> {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("bad budget `{s}`")))?;
        let bad = || Error::Config(format!("bad budget value `{v}`"));
        let b = match k.trim() {
            "max-humans" | "max_humans" => Budget::MaxHumans(v.trim().parse().map_err(|_| bad())?),
            "max-cost" | "max-total-cost" | "max_total_cost" => {
                Budget::MaxTotalCost(v.trim().parse().map_err(|_| bad())?)
            }
            _ => return Err(Error::Config(format!("unknown budget kind `{k}`"))),
        };
        b.check()?;
        Ok(b)
    }
}

/// Marker `H` for "the system picks from the human pool".
pub const POOL_MARKER: &str = "H";

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Participant {
    Agent(String),
    Pool,
}

impl Participant {
    pub fn agent(id: &str) -> Self {
        Participant::Agent(id.to_string())
    }
}

impl fmt::Display for Participant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Participant::Agent(a) => f.write_str(a),
            Participant::Pool => f.write_str(POOL_MARKER),
        }
    }
}

impl Serialize for Participant {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Participant {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(if s == POOL_MARKER {
            Participant::Pool
        } else {
            Participant::Agent(s)
        })
    }
}

/// A declarative cleaning job: cells, detectors, repairers, validators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleaningJob {
    pub id: String,
    pub cells: CellSelector,
    #[serde(default)]
    pub detectors: Vec<String>,
    #[serde(default)]
    pub repairers: Vec<Participant>,
    #[serde(default)]
    pub validators: Vec<Participant>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<Budget>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<CostStrategy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation: Option<ValidationStrategy>,
}

impl CleaningJob {
    pub fn new(id: &str, cells: CellSelector) -> Self {
        CleaningJob {
            id: id.to_string(),
            cells,
            detectors: Vec::new(),
            repairers: Vec::new(),
            validators: Vec::new(),
            budget: None,
            strategy: None,
            validation: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Detector,
    Repairer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Nature {
    Human,
    Automatic,
}

/// What backs an automatic agent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum AgentImpl {
    /// Projects one FD rule onto the data.
    FdDetector { rule: String },
    /// Majority-vote FD repair over the rules named in detector evidence.
    FdRepair,
    /// Implementation supplied at runtime through the agent host.
    External,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentDescriptor {
    pub id: String,
    pub kind: AgentKind,
    #[serde(default = "automatic")]
    pub nature: Nature,
    #[serde(default)]
    pub resources: Vec<String>,
    #[serde(rename = "impl")]
    pub implementation: AgentImpl,
    /// Data view the agent works on; `None` means every cell.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scope: Option<CellSelector>,
}

fn automatic() -> Nature {
    Nature::Automatic
}

impl AgentDescriptor {
    pub fn fd_detector(rule: &FdRule) -> Self {
        AgentDescriptor {
            id: rule.id.clone(),
            kind: AgentKind::Detector,
            nature: Nature::Automatic,
            resources: vec![rule.id.clone()],
            implementation: AgentImpl::FdDetector { rule: rule.id.clone() },
            scope: None,
        }
    }

    pub fn fd_repairer(id: &str, scope: Option<CellSelector>) -> Self {
        AgentDescriptor {
            id: id.to_string(),
            kind: AgentKind::Repairer,
            nature: Nature::Automatic,
            resources: Vec::new(),
            implementation: AgentImpl::FdRepair,
            scope,
        }
    }

    pub fn external(id: &str, kind: AgentKind, scope: Option<CellSelector>) -> Self {
        AgentDescriptor {
            id: id.to_string(),
            kind,
            nature: Nature::Automatic,
            resources: Vec::new(),
            implementation: AgentImpl::External,
            scope,
        }
    }
}

/// Automatic agents, FD rules and the human pool of a session.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Registry {
    pub agents: BTreeMap<String, AgentDescriptor>,
    pub rules: BTreeMap<String, FdRule>,
    pub humans: BTreeMap<String, HumanProfile>,
}

impl Registry {
    fn claim(&self, id: &str) -> Result<()> {
        if self.agents.contains_key(id) || self.humans.contains_key(id) || id == POOL_MARKER {
            return Err(Error::Duplicate(id.to_string()));
        }
        Ok(())
    }

    /// Adds a rule together with the detector that projects it.
    pub fn add_rule(&mut self, rule: FdRule) -> Result<()> {
        self.claim(&rule.id)?;
        self.agents.insert(rule.id.clone(), AgentDescriptor::fd_detector(&rule));
        self.rules.insert(rule.id.clone(), rule);
        Ok(())
    }

    pub fn add_agent(&mut self, agent: AgentDescriptor) -> Result<()> {
        self.claim(&agent.id)?;
        self.agents.insert(agent.id.clone(), agent);
        Ok(())
    }

    pub fn add_human(&mut self, human: HumanProfile) -> Result<()> {
        self.claim(&human.id)?;
        human.check()?;
        self.humans.insert(human.id.clone(), human);
        Ok(())
    }

    pub fn is_human(&self, id: &str) -> bool {
        self.humans.contains_key(id)
    }

    pub fn is_rule(&self, id: &str) -> bool {
        self.rules.contains_key(id)
    }

    /// Validates rules against the relations they mention.
    pub fn check_against(&self, db: &Database) -> Result<()> {
        for rule in self.rules.values() {
            let rel = db.relation(&rule.relation).ok_or_else(|| {
                Error::Config(format!("rule `{}` names unknown relation `{}`", rule.id, rule.relation))
            })?;
            rule.check(rel)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Detect,
    Repair,
    Validate,
    Specify,
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskKind::Detect => "detect",
            TaskKind::Repair => "repair",
            TaskKind::Validate => "validate",
            TaskKind::Specify => "specify",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Accurate,
    Inaccurate,
}

impl Verdict {
    pub fn from_bool(accurate: bool) -> Self {
        if accurate {
            Verdict::Accurate
        } else {
            Verdict::Inaccurate
        }
    }

    pub fn is_accurate(self) -> bool {
        self == Verdict::Accurate
    }

    pub fn flipped(self) -> Self {
        Verdict::from_bool(!self.is_accurate())
    }
}

/// One audited cell update. `sequence` is the audit log position and
/// doubles as the repair generation of the cell.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepairEvent {
    pub sequence: u64,
    pub cell: CellRef,
    pub old_value: String,
    pub new_value: String,
    pub producer: String,
    pub job: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JobClass {
    DetectAndRepair,
    DetectOnly,
    DirectRepair,
    Validation,
}

/// A job accepted by [`validate_job`], with its cell set resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedJob {
    pub job: CleaningJob,
    pub cells: Vec<CellRef>,
    pub class: JobClass,
}

pub fn validate_job(job: &CleaningJob, registry: &Registry, db: &Database) -> Result<ValidatedJob> {
    let cells = resolve_selector(&job.cells, db)?;
    if cells.is_empty() {
        return Err(Error::EmptyCells(job.id.clone()));
    }
    if job.detectors.is_empty() && job.repairers.is_empty() && job.validators.is_empty() {
        return Err(Error::EmptyJob(job.id.clone()));
    }
    for d in &job.detectors {
        let ok = registry.is_human(d) || registry.agents.get(d).is_some_and(|a| a.kind == AgentKind::Detector);
        if !ok {
            return Err(Error::UnknownAgent {
                id: d.clone(),
                context: "not a registered detector or human".into(),
            });
        }
    }
    for r in &job.repairers {
        if let Participant::Agent(id) = r {
            let ok = registry.is_human(id) || registry.agents.get(id).is_some_and(|a| a.kind == AgentKind::Repairer);
            if !ok {
                return Err(Error::UnknownAgent {
                    id: id.clone(),
                    context: "not a registered repairer or human".into(),
                });
            }
        }
    }
    for v in &job.validators {
        if let Participant::Agent(id) = v {
            if !registry.is_human(id) {
                return Err(Error::UnknownAgent {
                    id: id.clone(),
                    context: "validators must be humans".into(),
                });
            }
        }
    }
    if let Some(b) = &job.budget {
        b.check()?;
    }
    if let Some(v) = &job.validation {
        v.check()?;
    }
    let class = match (job.detectors.is_empty(), job.repairers.is_empty()) {
        (false, false) => JobClass::DetectAndRepair,
        (false, true) => JobClass::DetectOnly,
        (true, false) => JobClass::DirectRepair,
        (true, true) => JobClass::Validation,
    };
    Ok(ValidatedJob {
        job: job.clone(),
        cells,
        class,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expertise::HumanRole;

    fn branches() -> Database {
        let mut db = Database::new();
        db.insert(
            RelationInstance::from_rows(
                "Branches",
                &["BID", "Zip", "City"],
                &[
                    &["B1", "47906", "Lafayette"],
                    &["B2", "46201", "Indianapolis"],
                    &["B3", "46201", "Indianapols"],
                    &["B4", "47904", "Lafayette"],
                    &["B5", "47904", "Lafyette"],
                ],
            )
            .unwrap(),
        )
        .unwrap();
        db
    }

    fn registry() -> Registry {
        let mut reg = Registry::default();
        for (id, role) in [
            ("Alice", HumanRole::DataUser),
            ("Bob", HumanRole::DataCurator),
            ("Jen", HumanRole::DataValidator),
        ] {
            reg.add_human(HumanProfile::new(id, role, CellSelector::all(), 1.0))
                .unwrap();
        }
        reg.add_rule("phi1: Branches: Zip -> City".parse().unwrap()).unwrap();
        reg.add_agent(AgentDescriptor::fd_repairer("R1", None)).unwrap();
        reg
    }

    #[test]
    fn column_wildcard_resolves_every_row() {
        let db = branches();
        let cells = resolve_selector(
            &"Branches[Zip]=*"
                .parse::<SelectorTerm>()
                .map(|t| CellSelector(vec![t]))
                .unwrap(),
            &db,
        )
        .unwrap();
        assert_eq!(cells.len(), 5);
        assert!(cells.iter().all(|c| c.attribute == "Zip"));
        assert_eq!(cells[0], CellRef::new("Branches", 1, "Zip"));
    }

    #[test]
    fn global_wildcard_on_empty_session() {
        assert!(resolve_selector(&CellSelector::all(), &Database::new())
            .unwrap()
            .is_empty());
    }

    #[test]
    fn explicit_cells_resolve_to_themselves() {
        let db = branches();
        let sel = CellSelector::parse_terms(&["Branches/r1/Zip", "Branches/r1/City"]).unwrap();
        let cells = resolve_selector(&sel, &db).unwrap();
        assert_eq!(
            cells,
            vec![CellRef::new("Branches", 1, "Zip"), CellRef::new("Branches", 1, "City")]
        );
    }

    #[test]
    fn resolution_follows_schema_order() {
        let db = branches();
        let cells = resolve_selector(&CellSelector::all(), &db).unwrap();
        let first: Vec<_> = cells.iter().take(3).map(|c| c.attribute.as_str()).collect();
        assert_eq!(first, ["BID", "Zip", "City"]);
    }

    #[test]
    fn unknown_tokens_are_named() {
        let db = branches();
        let err = resolve_selector(&CellSelector::parse_terms(&["Branches[Country]=*"]).unwrap(), &db).unwrap_err();
        assert!(matches!(err, Error::Selector { ref token, .. } if token == "Branches[Country]=*"));
        let err = resolve_selector(&CellSelector::parse_terms(&["Shops[*]=*"]).unwrap(), &db).unwrap_err();
        assert_eq!(err.code(), "selector-resolution");
    }

    #[test]
    fn selector_spellings_round_trip() {
        for s in ["*", "Branches[Zip]=*", "Branches[*]=*", "Branches/r12/City"] {
            let t: SelectorTerm = s.parse().unwrap();
            assert_eq!(t.to_string(), s);
        }
    }

    #[test]
    fn detect_and_repair_job_is_accepted() {
        let db = branches();
        let mut job = CleaningJob::new("job1", CellSelector::all());
        job.detectors = vec!["Alice".into()];
        job.repairers = vec![Participant::agent("Bob")];
        let v = validate_job(&job, &registry(), &db).unwrap();
        assert_eq!(v.class, JobClass::DetectAndRepair);
        assert_eq!(v.cells.len(), 15);
    }

    #[test]
    fn empty_cells_rejected() {
        let db = branches();
        let mut job = CleaningJob::new("j", CellSelector::default());
        job.detectors = vec!["Alice".into()];
        let err = validate_job(&job, &registry(), &db).unwrap_err();
        assert_eq!(err.code(), "empty-cells");
    }

    #[test]
    fn pure_validation_job() {
        let db = branches();
        let mut job = CleaningJob::new("j", CellSelector::column("Branches", "Zip"));
        job.validators = vec![Participant::agent("Jen")];
        assert_eq!(
            validate_job(&job, &registry(), &db).unwrap().class,
            JobClass::Validation
        );
    }

    #[test]
    fn all_empty_and_unknown_agents_rejected() {
        let db = branches();
        let job = CleaningJob::new("j", CellSelector::all());
        assert_eq!(validate_job(&job, &registry(), &db).unwrap_err().code(), "empty-job");
        let mut job = CleaningJob::new("j", CellSelector::all());
        job.repairers = vec![Participant::agent("R9")];
        assert_eq!(
            validate_job(&job, &registry(), &db).unwrap_err().code(),
            "unknown-agent"
        );
        // a repairer cannot serve as validator
        let mut job = CleaningJob::new("j", CellSelector::all());
        job.validators = vec![Participant::agent("R1")];
        assert_eq!(
            validate_job(&job, &registry(), &db).unwrap_err().code(),
            "unknown-agent"
        );
    }

    #[test]
    fn job_document_round_trip() {
        let text = r#"
id = "job2"
cells = ["Branches[Zip]=*", "Branches[City]=*"]
detectors = ["phi1"]
repairers = ["R1", "H"]
validators = ["Jen"]
budget = { max_humans = 1 }
strategy = "qualitative"
"#;
        let job = CleaningJob::from_toml(text).unwrap();
        assert_eq!(job.repairers[1], Participant::Pool);
        assert_eq!(job.budget, Some(Budget::MaxHumans(1)));
        let back = CleaningJob::from_toml(&job.to_toml().unwrap()).unwrap();
        assert_eq!(back, job);
    }

    #[test]
    fn single_string_selector_accepted() {
        let job = CleaningJob::from_toml("id = \"j\"\ncells = \"*\"\nvalidators = [\"Jen\"]\n").unwrap();
        assert_eq!(job.cells, CellSelector::all());
    }

    #[test]
    fn budget_parsing() {
        assert_eq!("max-humans=1".parse::<Budget>().unwrap(), Budget::MaxHumans(1));
        assert_eq!("max-cost=2.5".parse::<Budget>().unwrap(), Budget::MaxTotalCost(2.5));
        assert!("max-cost=-1".parse::<Budget>().is_err());
        assert!("max-humans=1.5".parse::<Budget>().is_err());
    }

    #[test]
    fn ragged_and_duplicate_schemas_rejected() {
        assert!(RelationInstance::from_rows("T", &["A", "A"], &[]).is_err());
        assert!(RelationInstance::from_rows("T", &["A", "B"], &[&["x"]]).is_err());
    }
}
