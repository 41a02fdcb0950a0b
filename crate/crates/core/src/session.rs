//! Event-sourced session state.
//!
//! A [`Session`] is the ingestion snapshot plus an ordered audit log. Every
//! piece of derived state (current relations, jobs, task queues, the factor
//! ledger and the task history) is produced by folding audit records through
//! [`Session::apply`], which is the only mutation path. Replaying the same
//! log over the same base therefore reproduces the same state.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agents::{parse_rules, DetectionReport};
use crate::error::{Error, Result};
use crate::expertise::{HumanProfile, Outcome, TaskHistory};
use crate::gateway::PendingTask;
use crate::model::{
    validate_job, AgentDescriptor, AgentImpl, CellRef, CleaningJob, Database, JobClass, Registry, RelationInstance,
    RepairEvent, TaskKind, Verdict,
};
use crate::orchestrator::ExecutionPlan;
use crate::provenance::FactorLedger;

/// Reads a CSV with a header row. Values are kept verbatim.
pub fn ingest_reader<R: Read>(reader: R, name: &str) -> Result<RelationInstance> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let attributes: Vec<String> = rdr.headers()?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != attributes.len() {
            return Err(Error::Ingest {
                line: rec.position().map_or(0, |p| p.line()),
                message: format!("expected {} fields, found {}", attributes.len(), rec.len()),
            });
        }
        rows.push(rec.iter().map(String::from).collect());
    }
    RelationInstance::new(name, attributes, rows)
}

pub fn ingest_csv(path: impl AsRef<Path>, name: &str) -> Result<RelationInstance> {
    ingest_reader(File::open(path)?, name)
}

pub fn write_csv<W: Write>(relation: &RelationInstance, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(&relation.attributes)?;
    for row in &relation.rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn task_id(sequence: u64) -> String {
    format!("t{sequence}")
}

pub fn parse_task_id(id: &str) -> Option<u64> {
    id.strip_prefix('t')?.parse().ok()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum AuditEvent {
    JobAdded {
        job: CleaningJob,
    },
    JobPlanned {
        job: String,
        plan: ExecutionPlan,
    },
    Detected {
        job: String,
        report: DetectionReport,
    },
    /// An automatic step (or a pool allocation) was handed `cells`.
    StepInvoked {
        job: String,
        step: String,
        cells: Vec<CellRef>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error: Option<String>,
    },
    Repaired {
        job: String,
        cell: CellRef,
        old_value: String,
        new_value: String,
        producer: String,
        #[serde(default)]
        detectors: Vec<String>,
        #[serde(default)]
        resources: Vec<String>,
    },
    TaskOpened {
        task: PendingTask,
    },
    Validated {
        job: String,
        task: String,
        validator: String,
        cell: CellRef,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        generation: Option<u64>,
        verdict: Verdict,
    },
    TaskClosed {
        task: String,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        abstained: Vec<CellRef>,
    },
    ValidationStarted {
        job: String,
        targets: Vec<CellRef>,
    },
    JobCompleted {
        job: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub seq: u64,
    pub event: AuditEvent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Added,
    Running,
    Validating,
    Completed,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub invocations: u32,
    /// Latest failure, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobState {
    pub job: CleaningJob,
    pub class: JobClass,
    pub cells: Vec<CellRef>,
    pub status: JobStatus,
    pub plan: Option<ExecutionPlan>,
    pub reports: Vec<DetectionReport>,
    /// Flagged cell -> detectors that flagged it.
    pub flagged: BTreeMap<CellRef, BTreeSet<String>>,
    /// Step key -> cells already handed to that step.
    pub dispatched: BTreeMap<String, BTreeSet<CellRef>>,
    pub steps: BTreeMap<String, StepOutcome>,
    pub repaired: BTreeSet<CellRef>,
    pub targets: Vec<CellRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskState {
    pub task: PendingTask,
    pub closed: Option<u64>,
}

impl TaskState {
    pub fn is_open(&self) -> bool {
        self.closed.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepairRecord {
    pub event: RepairEvent,
    pub detectors: Vec<String>,
    pub resources: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    base: Database,
    registry: Registry,
    db: Database,
    jobs: BTreeMap<String, JobState>,
    tasks: BTreeMap<u64, TaskState>,
    history: TaskHistory,
    ledger: FactorLedger,
    repairs: Vec<RepairRecord>,
    audit: Vec<AuditRecord>,
}

impl Session {
    pub fn new(db: Database, registry: Registry) -> Result<Self> {
        registry.check_against(&db)?;
        Ok(Session {
            base: db.clone(),
            registry,
            db,
            jobs: BTreeMap::new(),
            tasks: BTreeMap::new(),
            history: TaskHistory::new(),
            ledger: FactorLedger::new(),
            repairs: Vec::new(),
            audit: Vec::new(),
        })
    }

    /// Rebuilds a session from its base and audit log.
    pub fn replay(base: Database, registry: Registry, audit: &[AuditRecord]) -> Result<Self> {
        let mut s = Session::new(base, registry)?;
        for rec in audit {
            s.apply(rec)?;
        }
        Ok(s)
    }

    pub fn base(&self) -> &Database {
        &self.base
    }

    pub fn db(&self) -> &Database {
        &self.db
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn jobs(&self) -> &BTreeMap<String, JobState> {
        &self.jobs
    }

    pub fn job(&self, id: &str) -> Result<&JobState> {
        self.jobs.get(id).ok_or_else(|| Error::NotFound(format!("job `{id}`")))
    }

    pub fn tasks(&self) -> impl Iterator<Item = &TaskState> {
        self.tasks.values()
    }

    pub fn task(&self, id: &str) -> Result<&TaskState> {
        parse_task_id(id)
            .and_then(|n| self.tasks.get(&n))
            .ok_or_else(|| Error::NotFound(format!("task `{id}`")))
    }

    /// Open tasks of `human`, oldest first.
    pub fn open_tasks(&self, human: &str) -> Vec<&PendingTask> {
        self.tasks
            .values()
            .filter(|t| t.is_open() && t.task.assignee == human)
            .map(|t| &t.task)
            .collect()
    }

    pub fn open_job_tasks(&self, job: &str, kinds: &[TaskKind]) -> usize {
        self.tasks
            .values()
            .filter(|t| t.is_open() && t.task.job == job && kinds.contains(&t.task.kind))
            .count()
    }

    pub fn history(&self) -> &TaskHistory {
        &self.history
    }

    pub fn ledger(&self) -> &FactorLedger {
        &self.ledger
    }

    pub fn repairs(&self) -> &[RepairRecord] {
        &self.repairs
    }

    pub fn audit(&self) -> &[AuditRecord] {
        &self.audit
    }

    pub fn last_sequence(&self) -> u64 {
        self.audit.last().map_or(0, |r| r.seq)
    }

    /// Latest repair generation of `cell`, if it was ever repaired.
    pub fn generation(&self, cell: &CellRef) -> Option<u64> {
        self.ledger.latest(cell).map(|e| e.generation)
    }

    pub fn repair_at(&self, generation: u64) -> Option<&RepairRecord> {
        self.repairs
            .binary_search_by_key(&generation, |r| r.event.sequence)
            .ok()
            .map(|i| &self.repairs[i])
    }

    /// Appends `event` with the next sequence number.
    pub fn commit(&mut self, event: AuditEvent) -> Result<AuditRecord> {
        let record = AuditRecord {
            seq: self.last_sequence() + 1,
            event,
        };
        self.apply(&record)?;
        Ok(record)
    }

    fn job_mut(&mut self, id: &str) -> Result<&mut JobState> {
        self.jobs
            .get_mut(id)
            .ok_or_else(|| Error::NotFound(format!("job `{id}`")))
    }

    fn open_task_mut(&mut self, id: &str) -> Result<&mut TaskState> {
        let t = parse_task_id(id)
            .and_then(|n| self.tasks.get_mut(&n))
            .ok_or_else(|| Error::NotFound(format!("task `{id}`")))?;
        if !t.is_open() {
            return Err(Error::TaskClosed(id.to_string()));
        }
        Ok(t)
    }

    /// Folds one audit record into the state. Checks run before any
    /// mutation, so a rejected record leaves the session unchanged.
    pub fn apply(&mut self, record: &AuditRecord) -> Result<()> {
        let seq = record.seq;
        if seq != self.last_sequence() + 1 {
            return Err(Error::Restore(format!(
                "audit sequence {seq} does not follow {}",
                self.last_sequence()
            )));
        }
        match &record.event {
            AuditEvent::JobAdded { job } => {
                if self.jobs.contains_key(&job.id) {
                    return Err(Error::Duplicate(job.id.clone()));
                }
                let v = validate_job(job, &self.registry, &self.db)?;
                self.jobs.insert(
                    job.id.clone(),
                    JobState {
                        job: v.job,
                        class: v.class,
                        cells: v.cells,
                        status: JobStatus::Added,
                        plan: None,
                        reports: Vec::new(),
                        flagged: BTreeMap::new(),
                        dispatched: BTreeMap::new(),
                        steps: BTreeMap::new(),
                        repaired: BTreeSet::new(),
                        targets: Vec::new(),
                    },
                );
            }
            AuditEvent::JobPlanned { job, plan } => {
                let st = self.job_mut(job)?;
                if st.status != JobStatus::Added {
                    return Err(Error::AlreadyRun(job.clone()));
                }
                st.plan = Some(plan.clone());
                st.status = JobStatus::Running;
            }
            AuditEvent::Detected { job, report } => {
                let st = self.job_mut(job)?;
                let scope: BTreeSet<&CellRef> = st.cells.iter().collect();
                let inside: Vec<CellRef> = report.suspects.iter().filter(|c| scope.contains(c)).cloned().collect();
                for c in inside {
                    st.flagged.entry(c).or_default().insert(report.detector.clone());
                }
                st.reports.push(report.clone());
            }
            AuditEvent::StepInvoked {
                job,
                step,
                cells,
                error,
            } => {
                let st = self.job_mut(job)?;
                st.dispatched
                    .entry(step.clone())
                    .or_default()
                    .extend(cells.iter().cloned());
                let o = st.steps.entry(step.clone()).or_default();
                o.invocations += 1;
                if error.is_some() {
                    o.error = error.clone();
                }
            }
            AuditEvent::Repaired {
                job,
                cell,
                old_value,
                new_value,
                producer,
                detectors,
                resources,
            } => {
                self.job(job)?;
                let current = self
                    .db
                    .get(cell)
                    .ok_or_else(|| Error::NotFound(format!("cell {cell}")))?;
                if current != old_value {
                    return Err(Error::Restore(format!(
                        "repair {seq} expects {cell} = `{old_value}`, found `{current}`"
                    )));
                }
                self.ledger
                    .record_repair_factors(cell, seq, detectors, producer, resources)?;
                self.db.set(cell, new_value.clone())?;
                self.repairs.push(RepairRecord {
                    event: RepairEvent {
                        sequence: seq,
                        cell: cell.clone(),
                        old_value: old_value.clone(),
                        new_value: new_value.clone(),
                        producer: producer.clone(),
                        job: job.clone(),
                    },
                    detectors: detectors.clone(),
                    resources: resources.clone(),
                });
                self.job_mut(job)?.repaired.insert(cell.clone());
            }
            AuditEvent::TaskOpened { task } => {
                if task.id != task_id(seq) {
                    return Err(Error::Restore(format!("task opened at {seq} is named `{}`", task.id)));
                }
                if !self.registry.is_human(&task.assignee) {
                    return Err(Error::NotFound(format!("human `{}`", task.assignee)));
                }
                let st = self.job_mut(&task.job)?;
                st.dispatched
                    .entry(task.step.clone())
                    .or_default()
                    .extend(task.cells.iter().map(|c| c.cell.clone()));
                self.tasks.insert(
                    seq,
                    TaskState {
                        task: task.clone(),
                        closed: None,
                    },
                );
            }
            AuditEvent::Validated {
                job,
                task,
                validator,
                cell,
                generation,
                verdict,
            } => {
                self.job(job)?;
                self.open_task_mut(task)?;
                if let Some(g) = *generation {
                    let outcomes = self.outcomes_for(cell, g, validator, *verdict)?;
                    self.ledger.apply_validation(cell, g, *verdict, validator)?;
                    for (human, kind, ok) in outcomes {
                        let o = if ok { Outcome::Correct } else { Outcome::Incorrect };
                        self.history.record_outcome(&human, cell, kind, o);
                    }
                }
            }
            AuditEvent::TaskClosed { task, .. } => {
                self.open_task_mut(task)?.closed = Some(seq);
            }
            AuditEvent::ValidationStarted { job, targets } => {
                let st = self.job_mut(job)?;
                if st.status != JobStatus::Running {
                    return Err(Error::Planning(format!("job `{job}` is not running")));
                }
                st.status = JobStatus::Validating;
                st.targets = targets.clone();
            }
            AuditEvent::JobCompleted { job } => {
                self.job_mut(job)?.status = JobStatus::Completed;
            }
        }
        self.audit.push(record.clone());
        Ok(())
    }

    /// Expertise outcomes implied by a verdict on one repair generation:
    /// the human repairer and human detectors are judged by the verdict,
    /// earlier validators by agreement with it.
    fn outcomes_for(
        &self,
        cell: &CellRef,
        generation: u64,
        validator: &str,
        verdict: Verdict,
    ) -> Result<Vec<(String, TaskKind, bool)>> {
        let entry = self.ledger.entry(cell, generation).ok_or_else(|| Error::MissingEntry {
            cell: cell.clone(),
            generation,
        })?;
        let mut out = Vec::new();
        let hit = verdict.is_accurate();
        if let Some(rec) = self.repair_at(generation) {
            let p = &rec.event.producer;
            if p != validator && self.registry.is_human(p) {
                out.push((p.clone(), TaskKind::Repair, hit));
            }
            for d in &rec.detectors {
                if d != validator && self.registry.is_human(d) {
                    out.push((d.clone(), TaskKind::Detect, hit));
                }
            }
        }
        for v in &entry.validations {
            if v.validator != validator {
                out.push((v.validator.clone(), TaskKind::Validate, v.verdict == verdict));
            }
        }
        Ok(out)
    }

    /// Full-state serialization.
    pub fn snapshot(&self) -> Result<Vec<u8>> {
        Ok(serde_json::to_vec(self)?)
    }

    /// Inverse of [`Session::snapshot`]. The payload is only accepted if
    /// replaying its own audit log over its base reproduces it exactly.
    pub fn restore(bytes: &[u8]) -> Result<Self> {
        if bytes.iter().all(u8::is_ascii_whitespace) {
            return Err(Error::Restore("empty payload".into()));
        }
        let s: Session = serde_json::from_slice(bytes).map_err(|e| Error::Restore(e.to_string()))?;
        let replayed = Session::replay(s.base.clone(), s.registry.clone(), &s.audit)
            .map_err(|e| Error::Restore(format!("audit log does not replay: {e}")))?;
        if replayed.canonical()? != s.canonical()? {
            return Err(Error::Restore("state disagrees with its audit log".into()));
        }
        Ok(replayed)
    }

    /// Canonical byte form used for equality checks.
    pub fn canonical(&self) -> Result<Vec<u8>> {
        self.snapshot()
    }
}

/// Append-only audit file: one JSON record per line, synced per append.
pub struct AuditFile {
    file: File,
}

impl AuditFile {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(AuditFile { file })
    }

    pub fn append(&mut self, record: &AuditRecord) -> Result<()> {
        let mut line = serde_json::to_vec(record)?;
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.file.sync_data()?;
        Ok(())
    }
}

pub fn read_audit(path: impl AsRef<Path>) -> Result<Vec<AuditRecord>> {
    let path = path.as_ref();
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Ingest {
            line: i as u64 + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct HumansFile {
    #[serde(default)]
    human: Vec<HumanProfile>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct AgentsFile {
    #[serde(default)]
    agent: Vec<AgentDescriptor>,
}

/// On-disk session layout:
///
/// ```text
/// data/<relation>.csv   rules/*.rules   humans/pool.toml
/// agents.toml           jobs/<id>.toml  audit.log
/// ```
#[derive(Debug, Clone)]
pub struct SessionDir {
    root: PathBuf,
}

impl SessionDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        SessionDir { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn audit_path(&self) -> PathBuf {
        self.root.join("audit.log")
    }

    pub fn jobs_dir(&self) -> PathBuf {
        self.root.join("jobs")
    }

    /// Writes the base of `session` (data, rules, humans, agents). Fails if
    /// the directory already holds an audit log.
    pub fn create(&self, base: &Database, registry: &Registry) -> Result<()> {
        if self.audit_path().exists() {
            return Err(Error::Duplicate(format!("session at {}", self.root.display())));
        }
        for d in ["data", "rules", "humans", "jobs"] {
            fs::create_dir_all(self.root.join(d))?;
        }
        for rel in base.relations.values() {
            write_csv(
                rel,
                File::create(self.root.join("data").join(format!("{}.csv", rel.name)))?,
            )?;
        }
        let mut rules = String::new();
        for r in registry.rules.values() {
            rules.push_str(&r.to_string());
            rules.push('\n');
        }
        fs::write(self.root.join("rules").join("session.rules"), rules)?;
        let humans = HumansFile {
            human: registry.humans.values().cloned().collect(),
        };
        fs::write(self.root.join("humans").join("pool.toml"), toml::to_string(&humans)?)?;
        let agents = AgentsFile {
            agent: registry
                .agents
                .values()
                .filter(|a| !matches!(a.implementation, AgentImpl::FdDetector { .. }))
                .cloned()
                .collect(),
        };
        fs::write(self.root.join("agents.toml"), toml::to_string(&agents)?)?;
        File::create(self.audit_path())?;
        Ok(())
    }

    /// Reads the base from disk and replays `audit.log` over it.
    pub fn load(&self) -> Result<Session> {
        if !self.audit_path().exists() {
            return Err(Error::NotFound(format!("session at {}", self.root.display())));
        }
        let mut db = Database::new();
        for path in sorted_files(&self.root.join("data"), "csv")? {
            let name = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or_default()
                .to_string();
            db.insert(ingest_csv(&path, &name)?)?;
        }
        let mut registry = Registry::default();
        for path in sorted_files(&self.root.join("rules"), "rules")? {
            for rule in parse_rules(&fs::read_to_string(&path)?)? {
                registry.add_rule(rule)?;
            }
        }
        let humans = self.root.join("humans").join("pool.toml");
        if humans.exists() {
            let file: HumansFile = toml::from_str(&fs::read_to_string(humans)?)?;
            for h in file.human {
                registry.add_human(h)?;
            }
        }
        let agents = self.root.join("agents.toml");
        if agents.exists() {
            let file: AgentsFile = toml::from_str(&fs::read_to_string(agents)?)?;
            for a in file.agent {
                registry.add_agent(a)?;
            }
        }
        Session::replay(db, registry, &read_audit(self.audit_path())?)
    }

    pub fn audit_file(&self) -> Result<AuditFile> {
        AuditFile::open(self.audit_path())
    }
}

fn sorted_files(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let mut out: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().and_then(|e| e.to_str()) == Some(ext))
        .collect();
    out.sort();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CellSelector;

    const BRANCHES: &str = "BID,Zip,City\nB1,47906,Lafayette\nB2,46201,Indianapolis\nB3,46201,Indianapols\nB4,47904,Lafayette\nB5,47904,Lafyette\n";

    fn session() -> Session {
        let mut db = Database::new();
        db.insert(ingest_reader(BRANCHES.as_bytes(), "Branches").unwrap())
            .unwrap();
        let mut reg = Registry::default();
        reg.add_rule("phi1: Branches: Zip -> City".parse().unwrap()).unwrap();
        reg.add_agent(AgentDescriptor::fd_repairer("R1", None)).unwrap();
        Session::new(db, reg).unwrap()
    }

    fn repair(job: &str, row: u64, old: &str, new: &str) -> AuditEvent {
        AuditEvent::Repaired {
            job: job.into(),
            cell: CellRef::new("Branches", row, "City"),
            old_value: old.into(),
            new_value: new.into(),
            producer: "R1".into(),
            detectors: vec!["phi1".into()],
            resources: vec!["phi1".into()],
        }
    }

    fn job_added() -> AuditEvent {
        let mut job = CleaningJob::new("j", CellSelector::all());
        job.detectors = vec!["phi1".into()];
        AuditEvent::JobAdded { job }
    }

    #[test]
    fn branches_csv() {
        let rel = ingest_reader(BRANCHES.as_bytes(), "Branches").unwrap();
        assert_eq!(rel.len(), 5);
        assert_eq!(rel.attributes, ["BID", "Zip", "City"]);
        assert_eq!(rel.row_ids.last().unwrap().to_string(), "r5");
    }

    #[test]
    fn header_only() {
        assert!(ingest_reader("A,B\n".as_bytes(), "T").unwrap().is_empty());
    }

    #[test]
    fn ragged_row_names_line() {
        let err = ingest_reader("A,B\n1,2\n3,4\n5\n".as_bytes(), "T").unwrap_err();
        assert!(matches!(err, Error::Ingest { line: 4, .. }), "{err:?}");
        assert_eq!(
            ingest_reader("A,A\n1,2\n".as_bytes(), "T").unwrap_err().code(),
            "schema"
        );
    }

    #[test]
    fn values_are_verbatim() {
        let rel = ingest_reader("A,B\n\" x \",007\n".as_bytes(), "T").unwrap();
        assert_eq!(rel.rows[0], [" x ", "007"]);
    }

    #[test]
    fn sequences_start_at_one() {
        let mut s = session();
        assert_eq!(s.commit(job_added()).unwrap().seq, 1);
        assert_eq!(s.commit(repair("j", 3, "Indianapols", "Indianapolis")).unwrap().seq, 2);
    }

    #[test]
    fn rejected_record_leaves_state_unchanged() {
        let mut s = session();
        s.commit(job_added()).unwrap();
        let before = s.canonical().unwrap();
        assert!(s.commit(repair("j", 3, "wrong", "x")).is_err());
        assert_eq!(s.canonical().unwrap(), before);
        let gap = AuditRecord {
            seq: 9,
            event: job_added(),
        };
        assert_eq!(s.apply(&gap).unwrap_err().code(), "restore");
    }

    #[test]
    fn snapshot_round_trip_and_suffix_replay() {
        let mut s = session();
        s.commit(job_added()).unwrap();
        s.commit(repair("j", 3, "Indianapols", "Indianapolis")).unwrap();
        s.commit(repair("j", 5, "Lafyette", "Lafayette")).unwrap();
        let snap = s.snapshot().unwrap();
        let restored = Session::restore(&snap).unwrap();
        assert_eq!(restored.canonical().unwrap(), s.canonical().unwrap());

        let mut live = s.clone();
        let next = live.commit(repair("j", 1, "Lafayette", "Lafayette")).unwrap();
        let mut resumed = restored;
        resumed.apply(&next).unwrap();
        assert_eq!(resumed.canonical().unwrap(), live.canonical().unwrap());
    }

    #[test]
    fn corrupt_payloads_rejected() {
        assert_eq!(Session::restore(b"").unwrap_err().code(), "restore");
        assert_eq!(Session::restore(b"{\"base\":").unwrap_err().code(), "restore");
        let mut s = session();
        s.commit(job_added()).unwrap();
        s.commit(repair("j", 3, "Indianapols", "Indianapolis")).unwrap();
        let text = String::from_utf8(s.snapshot().unwrap()).unwrap();
        // tamper with derived state only
        let forged = text.replacen("\"Indianapolis\"]", "\"Chicago\"]", 1);
        assert_ne!(forged, text);
        assert!(Session::restore(forged.as_bytes()).is_err());
    }

    #[test]
    fn directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let sd = SessionDir::new(dir.path());
        let s = session();
        sd.create(s.base(), s.registry()).unwrap();
        let mut audit = sd.audit_file().unwrap();
        let mut live = sd.load().unwrap();
        for ev in [job_added(), repair("j", 3, "Indianapols", "Indianapolis")] {
            let rec = live.commit(ev).unwrap();
            audit.append(&rec).unwrap();
        }
        let loaded = sd.load().unwrap();
        assert_eq!(loaded.canonical().unwrap(), live.canonical().unwrap());
        assert!(sd.create(s.base(), s.registry()).is_err());
    }
}
