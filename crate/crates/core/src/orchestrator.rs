//! Job planning and execution.
//!
//! A job runs as a pipeline. Automatic detectors run as soon as the job
//! starts and their findings go straight to the repair steps; human
//! detection tasks feed further repair rounds when they are answered. Once
//! no detection or repair task is open the validation phase starts, and the
//! job completes when every validation task is closed.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::agents::{DetectionReport, Detector, Evidence, FdDetector, FdRepairer, Repairer, TaskCell};
use crate::allocation::{
    assign_tasks, route_interaction, Assignment, AssignmentProblem, InteractionEvent, InteractionKind,
};
use crate::error::{Error, Result};
use crate::expertise::HumanRole;
use crate::gateway::{PendingTask, TaskResponse};
use crate::model::{
    resolve_selector, AgentImpl, Budget, CellRef, Database, JobClass, Participant, Registry, TaskKind, ValidatedJob,
};
use crate::session::{task_id, AuditEvent, AuditFile, JobStatus, Session, StepOutcome};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CostStrategy {
    /// Automatic agents win on overlap; humans are not asked about those cells.
    #[default]
    #[serde(alias = "quantitative-first", alias = "QuantitativeFirst")]
    Quantitative,
    /// Automatic agents run first and humans get the final say on overlap.
    #[serde(alias = "qualitative-first", alias = "QualitativeFirst")]
    Qualitative,
}

impl std::str::FromStr for CostStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "quantitative" | "quantitative-first" | "quantitativefirst" => Ok(CostStrategy::Quantitative),
            "qualitative" | "qualitative-first" | "qualitativefirst" => Ok(CostStrategy::Qualitative),
            _ => Err(Error::Config(format!("unknown strategy `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Actor {
    Automatic {
        id: String,
    },
    Human {
        id: String,
    },
    /// Picked at run time from the humans holding `role`.
    Pool {
        role: HumanRole,
    },
}

impl Actor {
    pub fn is_human(&self) -> bool {
        !matches!(self, Actor::Automatic { .. })
    }

    pub fn label(&self) -> String {
        match self {
            Actor::Automatic { id } | Actor::Human { id } => id.clone(),
            Actor::Pool { role } => format!("H[{role}]"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Detect,
    Repair,
    Validate,
}

impl Phase {
    fn task(self) -> TaskKind {
        match self {
            Phase::Detect => TaskKind::Detect,
            Phase::Repair => TaskKind::Repair,
            Phase::Validate => TaskKind::Validate,
        }
    }
}

pub fn step_key(phase: Phase, actor: &Actor) -> String {
    let p = match phase {
        Phase::Detect => "detect",
        Phase::Repair => "repair",
        Phase::Validate => "validate",
    };
    format!("{p}:{}", actor.label())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanStep {
    pub actor: Actor,
    pub cells: Vec<CellRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionPlan {
    pub job: String,
    pub class: JobClass,
    pub strategy: CostStrategy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<Budget>,
    pub detection: Vec<PlanStep>,
    pub repair: Vec<PlanStep>,
    pub validation: Vec<PlanStep>,
    /// Cells given to both a human and an automatic repairer.
    pub overlap: Vec<CellRef>,
    /// Overlap cells dropped from each human step (quantitative only).
    #[serde(default)]
    pub removed: BTreeMap<String, Vec<CellRef>>,
}

pub fn overlap_cells(human_steps: &[PlanStep], automatic_steps: &[PlanStep]) -> BTreeSet<CellRef> {
    let auto: BTreeSet<&CellRef> = automatic_steps.iter().flat_map(|s| &s.cells).collect();
    human_steps
        .iter()
        .flat_map(|s| &s.cells)
        .filter(|c| auto.contains(c))
        .cloned()
        .collect()
}

fn restrict(cells: &[CellRef], allowed: &BTreeSet<CellRef>) -> Vec<CellRef> {
    cells.iter().filter(|c| allowed.contains(c)).cloned().collect()
}

fn human_view(registry: &Registry, db: &Database, id: &str, cells: &[CellRef]) -> Result<Vec<CellRef>> {
    let h = &registry.humans[id];
    Ok(restrict(cells, &resolve_selector(&h.data, db)?.into_iter().collect()))
}

fn agent_view(registry: &Registry, db: &Database, id: &str, cells: &[CellRef]) -> Result<Vec<CellRef>> {
    match registry.agents.get(id).and_then(|a| a.scope.as_ref()) {
        Some(scope) => Ok(restrict(cells, &resolve_selector(scope, db)?.into_iter().collect())),
        None => Ok(cells.to_vec()),
    }
}

fn pool_view(registry: &Registry, db: &Database, role: HumanRole, cells: &[CellRef]) -> Result<Vec<CellRef>> {
    let mut union = BTreeSet::new();
    for h in registry.humans.values().filter(|h| h.role == role) {
        union.extend(resolve_selector(&h.data, db)?);
    }
    Ok(restrict(cells, &union))
}

fn step_for(registry: &Registry, db: &Database, id: &str, cells: &[CellRef]) -> Result<PlanStep> {
    Ok(if registry.is_human(id) {
        PlanStep {
            actor: Actor::Human { id: id.to_string() },
            cells: human_view(registry, db, id, cells)?,
        }
    } else {
        PlanStep {
            actor: Actor::Automatic { id: id.to_string() },
            cells: agent_view(registry, db, id, cells)?,
        }
    })
}

/// Builds the plan of a validated job. Deterministic in its inputs.
pub fn plan_job(
    job: &ValidatedJob,
    registry: &Registry,
    db: &Database,
    strategy: CostStrategy,
    budget: Option<Budget>,
) -> Result<ExecutionPlan> {
    let c = &job.cells;
    let detection = job
        .job
        .detectors
        .iter()
        .map(|d| step_for(registry, db, d, c))
        .collect::<Result<Vec<_>>>()?;

    let repair_role = route_interaction(&InteractionEvent {
        kind: InteractionKind::ErrorReport,
        from: HumanRole::DataUser,
    });
    let mut repair = Vec::new();
    for r in &job.job.repairers {
        repair.push(match r {
            Participant::Agent(id) => step_for(registry, db, id, c)?,
            Participant::Pool => PlanStep {
                actor: Actor::Pool { role: repair_role },
                cells: pool_view(registry, db, repair_role, c)?,
            },
        });
    }
    if job.class == JobClass::DetectOnly {
        // reports from data users are routed to curators
        let reporters: Vec<HumanRole> = job
            .job
            .detectors
            .iter()
            .filter_map(|d| registry.humans.get(d).map(|h| h.role))
            .collect();
        if let Some(&from) = reporters.first() {
            let role = route_interaction(&InteractionEvent {
                kind: InteractionKind::ErrorReport,
                from,
            });
            let cells = pool_view(registry, db, role, c)?;
            if !cells.is_empty() {
                repair.push(PlanStep {
                    actor: Actor::Pool { role },
                    cells,
                });
            }
        }
    }
    let named_humans = job.job.repairers.iter().any(|r| match r {
        Participant::Pool => true,
        Participant::Agent(id) => registry.is_human(id),
    });
    if named_humans && repair.iter().filter(|s| s.actor.is_human()).all(|s| s.cells.is_empty()) {
        return Err(Error::Planning(format!(
            "job `{}` needs human repairers but none covers its cells",
            job.job.id
        )));
    }

    let (humans, autos): (Vec<PlanStep>, Vec<PlanStep>) = repair.iter().cloned().partition(|s| s.actor.is_human());
    let overlap = overlap_cells(&humans, &autos);
    let mut removed = BTreeMap::new();
    match strategy {
        CostStrategy::Quantitative => {
            for s in repair.iter_mut().filter(|s| s.actor.is_human()) {
                let (kept, dropped): (Vec<CellRef>, Vec<CellRef>) =
                    s.cells.drain(..).partition(|c| !overlap.contains(c));
                s.cells = kept;
                if !dropped.is_empty() {
                    removed.insert(s.actor.label(), dropped);
                }
            }
            repair.retain(|s| !s.cells.is_empty());
        }
        CostStrategy::Qualitative => {
            repair = autos.into_iter().chain(humans).collect();
        }
    }

    let validate_role = route_interaction(&InteractionEvent {
        kind: InteractionKind::FixPerformed,
        from: HumanRole::DataCurator,
    });
    let mut validation = Vec::new();
    for v in &job.job.validators {
        validation.push(match v {
            Participant::Agent(id) => PlanStep {
                actor: Actor::Human { id: id.clone() },
                cells: human_view(registry, db, id, c)?,
            },
            Participant::Pool => PlanStep {
                actor: Actor::Pool { role: validate_role },
                cells: pool_view(registry, db, validate_role, c)?,
            },
        });
    }
    if !validation.is_empty() && validation.iter().all(|s| s.cells.is_empty()) {
        return Err(Error::Planning(format!(
            "no validator of job `{}` covers its cells",
            job.job.id
        )));
    }

    Ok(ExecutionPlan {
        job: job.job.id.clone(),
        class: job.class,
        strategy,
        budget,
        detection,
        repair,
        validation,
        overlap: {
            let mut v: Vec<CellRef> = overlap.into_iter().collect();
            db.sort_cells(&mut v);
            v
        },
        removed,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<CostStrategy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<Budget>,
}

/// Job status as reported after a run or a response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobRun {
    pub job: String,
    pub status: JobStatus,
    pub sequence: u64,
    pub steps: BTreeMap<String, StepOutcome>,
    pub open_tasks: Vec<String>,
}

/// Drives jobs against a session. All state changes are audit records
/// committed through [`Session::commit`], optionally mirrored to disk.
pub struct Engine {
    session: Session,
    sink: Option<AuditFile>,
    detectors: BTreeMap<String, Arc<dyn Detector>>,
    repairers: BTreeMap<String, Arc<dyn Repairer>>,
}

impl Engine {
    pub fn new(session: Session) -> Self {
        Engine {
            session,
            sink: None,
            detectors: BTreeMap::new(),
            repairers: BTreeMap::new(),
        }
    }

    pub fn with_audit_file(mut self, file: AuditFile) -> Self {
        self.sink = Some(file);
        self
    }

    pub fn session(&self) -> &Session {
        &self.session
    }

    pub fn into_session(self) -> Session {
        self.session
    }

    /// Supplies the implementation of an `external` detector.
    pub fn register_detector(&mut self, id: &str, agent: Arc<dyn Detector>) {
        self.detectors.insert(id.to_string(), agent);
    }

    /// Supplies the implementation of an `external` repairer.
    pub fn register_repairer(&mut self, id: &str, agent: Arc<dyn Repairer>) {
        self.repairers.insert(id.to_string(), agent);
    }

    fn commit(&mut self, event: AuditEvent) -> Result<u64> {
        let rec = self.session.commit(event)?;
        if let Some(sink) = self.sink.as_mut() {
            sink.append(&rec)?;
        }
        Ok(rec.seq)
    }

    pub fn add_job(&mut self, job: crate::model::CleaningJob) -> Result<u64> {
        self.commit(AuditEvent::JobAdded { job })
    }

    fn detector_for(&self, id: &str) -> Result<Arc<dyn Detector>> {
        if let Some(d) = self.detectors.get(id) {
            return Ok(d.clone());
        }
        let reg = self.session.registry();
        match reg.agents.get(id).map(|a| &a.implementation) {
            Some(AgentImpl::FdDetector { rule }) => {
                let rule = reg
                    .rules
                    .get(rule)
                    .ok_or_else(|| Error::Config(format!("detector `{id}` uses unknown rule `{rule}`")))?;
                Ok(Arc::new(FdDetector { rule: rule.clone() }))
            }
            _ => Err(Error::UnknownAgent {
                id: id.to_string(),
                context: "no detector implementation available".into(),
            }),
        }
    }

    fn repairer_for(&self, id: &str) -> Result<Arc<dyn Repairer>> {
        if let Some(r) = self.repairers.get(id) {
            return Ok(r.clone());
        }
        let reg = self.session.registry();
        match reg.agents.get(id) {
            Some(a) if a.implementation == AgentImpl::FdRepair => Ok(Arc::new(FdRepairer {
                id: id.to_string(),
                rules: reg.rules.clone(),
                default_rules: a.resources.clone(),
            })),
            _ => Err(Error::UnknownAgent {
                id: id.to_string(),
                context: "no repairer implementation available".into(),
            }),
        }
    }

    pub fn plan(&self, job: &str, options: &RunOptions) -> Result<ExecutionPlan> {
        let st = self.session.job(job)?;
        let v = ValidatedJob {
            job: st.job.clone(),
            cells: st.cells.clone(),
            class: st.class,
        };
        let strategy = options.strategy.or(st.job.strategy).unwrap_or_default();
        let budget = options.budget.or(st.job.budget);
        plan_job(&v, self.session.registry(), self.session.db(), strategy, budget)
    }

    pub fn run_job(&mut self, job: &str, options: &RunOptions) -> Result<JobRun> {
        if self.session.job(job)?.status != JobStatus::Added {
            return Err(Error::AlreadyRun(job.to_string()));
        }
        let plan = self.plan(job, options)?;
        self.execute_plan(plan)
    }

    /// Runs the automatic part of a plan and opens the first human tasks.
    pub fn execute_plan(&mut self, plan: ExecutionPlan) -> Result<JobRun> {
        let job = plan.job.clone();
        self.commit(AuditEvent::JobPlanned {
            job: job.clone(),
            plan: plan.clone(),
        })?;
        for step in &plan.detection {
            if step.cells.is_empty() {
                continue;
            }
            let key = step_key(Phase::Detect, &step.actor);
            match &step.actor {
                Actor::Automatic { id } => {
                    let outcome = self
                        .detector_for(id)
                        .and_then(|d| guarded(id, || d.detect(self.session.db(), &step.cells)));
                    match outcome {
                        Ok(mut report) => {
                            report.detector = id.clone();
                            self.commit(AuditEvent::StepInvoked {
                                job: job.clone(),
                                step: key,
                                cells: step.cells.clone(),
                                error: None,
                            })?;
                            self.commit(AuditEvent::Detected {
                                job: job.clone(),
                                report,
                            })?;
                        }
                        Err(e) => {
                            self.commit(AuditEvent::StepInvoked {
                                job: job.clone(),
                                step: key,
                                cells: step.cells.clone(),
                                error: Some(e.to_string()),
                            })?;
                        }
                    }
                }
                Actor::Human { id } => {
                    self.open_task(&job, &key, id, TaskKind::Detect, &step.cells)?;
                }
                Actor::Pool { .. } => {}
            }
        }
        self.repair_round(&job)?;
        self.advance(&job)?;
        self.job_run(&job)
    }

    pub fn job_run(&self, job: &str) -> Result<JobRun> {
        let st = self.session.job(job)?;
        Ok(JobRun {
            job: job.to_string(),
            status: st.status,
            sequence: self.session.last_sequence(),
            steps: st.steps.clone(),
            open_tasks: self
                .session
                .tasks()
                .filter(|t| t.is_open() && t.task.job == job)
                .map(|t| t.task.id.clone())
                .collect(),
        })
    }

    fn task_cells(&self, kind: TaskKind, cells: &[CellRef]) -> Vec<TaskCell> {
        let s = &self.session;
        cells
            .iter()
            .map(|c| {
                let value = s.db().get(c).unwrap_or_default().to_string();
                let (previous, generation) = if kind == TaskKind::Validate {
                    match s.generation(c) {
                        Some(g) => (s.repair_at(g).map(|r| r.event.old_value.clone()), Some(g)),
                        None => (None, None),
                    }
                } else {
                    (None, None)
                };
                TaskCell {
                    cell: c.clone(),
                    value,
                    previous,
                    generation,
                }
            })
            .collect()
    }

    fn open_task(&mut self, job: &str, step: &str, human: &str, kind: TaskKind, cells: &[CellRef]) -> Result<u64> {
        let st = self.session.job(job)?;
        let mut evidence = BTreeMap::new();
        for c in cells {
            if let Some(e) = st.reports.iter().find_map(|r| r.evidence.get(c)) {
                evidence.insert(c.clone(), e.clone());
            }
        }
        let seq = self.session.last_sequence() + 1;
        let task = PendingTask {
            id: task_id(seq),
            assignee: human.to_string(),
            kind,
            job: job.to_string(),
            step: step.to_string(),
            cells: self.task_cells(kind, cells),
            evidence,
            opened: seq,
        };
        self.commit(AuditEvent::TaskOpened { task })
    }

    fn allocate(
        &self,
        role: HumanRole,
        kind: TaskKind,
        cells: &[CellRef],
        budget: Option<Budget>,
    ) -> Result<Assignment> {
        let s = &self.session;
        let profiles = s.registry().humans.values().filter(|h| h.role == role);
        let problem = AssignmentProblem::from_profiles(cells.to_vec(), profiles, s.db(), kind, budget)?;
        assign_tasks(&problem, s.history())
    }

    /// Opens one task per chosen human, or records the failed allocation.
    fn dispatch_pool(
        &mut self,
        job: &str,
        phase: Phase,
        actor: &Actor,
        role: HumanRole,
        cells: &[CellRef],
        budget: Option<Budget>,
    ) -> Result<()> {
        let key = step_key(phase, actor);
        match self.allocate(role, phase.task(), cells, budget) {
            Ok(assignment) => {
                self.commit(AuditEvent::StepInvoked {
                    job: job.to_string(),
                    step: key.clone(),
                    cells: cells.to_vec(),
                    error: None,
                })?;
                for (human, mut hc) in assignment.humans {
                    self.session.db().sort_cells(&mut hc);
                    self.open_task(job, &key, &human, phase.task(), &hc)?;
                }
            }
            Err(e) => {
                self.commit(AuditEvent::StepInvoked {
                    job: job.to_string(),
                    step: key,
                    cells: cells.to_vec(),
                    error: Some(e.to_string()),
                })?;
            }
        }
        Ok(())
    }

    /// Hands newly flagged cells (all of C for direct repair) to every
    /// repair step that has not seen them yet, in plan order.
    fn repair_round(&mut self, job: &str) -> Result<()> {
        let st = self.session.job(job)?;
        let Some(plan) = st.plan.clone() else { return Ok(()) };
        let targets: BTreeSet<CellRef> = match st.class {
            JobClass::DirectRepair => st.cells.iter().cloned().collect(),
            _ => st.flagged.keys().cloned().collect(),
        };
        for step in &plan.repair {
            let key = step_key(Phase::Repair, &step.actor);
            let st = self.session.job(job)?;
            let seen = st.dispatched.get(&key);
            let cells: Vec<CellRef> = step
                .cells
                .iter()
                .filter(|c| targets.contains(*c) && !seen.is_some_and(|s| s.contains(*c)))
                .cloned()
                .collect();
            if cells.is_empty() {
                continue;
            }
            match &step.actor {
                Actor::Automatic { id } => self.run_repairer(job, &key, id, &cells)?,
                Actor::Human { id } => {
                    self.open_task(job, &key, id, TaskKind::Repair, &cells)?;
                }
                Actor::Pool { role } => {
                    self.dispatch_pool(job, Phase::Repair, &step.actor, *role, &cells, plan.budget)?
                }
            }
        }
        Ok(())
    }

    fn run_repairer(&mut self, job: &str, key: &str, id: &str, cells: &[CellRef]) -> Result<()> {
        let st = self.session.job(job)?;
        let reports: Vec<DetectionReport> = st.reports.clone();
        let outcome = self
            .repairer_for(id)
            .and_then(|r| guarded(id, || r.repair(self.session.db(), cells, &reports)));
        let proposals = match outcome {
            Ok(p) => p,
            Err(e) => {
                self.commit(AuditEvent::StepInvoked {
                    job: job.to_string(),
                    step: key.to_string(),
                    cells: cells.to_vec(),
                    error: Some(e.to_string()),
                })?;
                return Ok(());
            }
        };
        self.commit(AuditEvent::StepInvoked {
            job: job.to_string(),
            step: key.to_string(),
            cells: cells.to_vec(),
            error: None,
        })?;
        let allowed: BTreeSet<&CellRef> = cells.iter().collect();
        let own_resources = self
            .session
            .registry()
            .agents
            .get(id)
            .map(|a| a.resources.clone())
            .unwrap_or_default();
        for p in proposals {
            let mut resources: Vec<String> = p.resources_used.clone();
            for r in &own_resources {
                if !resources.contains(r) {
                    resources.push(r.clone());
                }
            }
            for u in p.updates.into_iter().filter(|u| allowed.contains(&u.cell)) {
                self.commit_repair(job, &u.cell, u.value, id, resources.clone())?;
            }
        }
        Ok(())
    }

    fn commit_repair(
        &mut self,
        job: &str,
        cell: &CellRef,
        value: String,
        producer: &str,
        resources: Vec<String>,
    ) -> Result<u64> {
        let st = self.session.job(job)?;
        let detectors: Vec<String> = st
            .flagged
            .get(cell)
            .map(|d| d.iter().cloned().collect())
            .unwrap_or_default();
        let old_value = self
            .session
            .db()
            .get(cell)
            .ok_or_else(|| Error::NotFound(format!("cell {cell}")))?
            .to_string();
        self.commit(AuditEvent::Repaired {
            job: job.to_string(),
            cell: cell.clone(),
            old_value,
            new_value: value,
            producer: producer.to_string(),
            detectors,
            resources,
        })
    }

    fn start_validation(&mut self, job: &str) -> Result<()> {
        let st = self.session.job(job)?;
        let plan = st
            .plan
            .clone()
            .ok_or_else(|| Error::Planning(format!("job `{job}` has no plan")))?;
        let mut candidates: Vec<CellRef> = if st.class == JobClass::Validation {
            st.cells.clone()
        } else {
            st.repaired.iter().cloned().collect()
        };
        self.session.db().sort_cells(&mut candidates);
        let targets = match (&st.job.validation, plan.validation.is_empty()) {
            (Some(vs), false) => self.session.ledger().select_validation_targets(vs, &candidates),
            _ => candidates,
        };
        self.commit(AuditEvent::ValidationStarted {
            job: job.to_string(),
            targets: targets.clone(),
        })?;
        if targets.is_empty() {
            return Ok(());
        }
        let wanted: BTreeSet<CellRef> = targets.iter().cloned().collect();
        for step in &plan.validation {
            let in_view: BTreeSet<&CellRef> = step.cells.iter().collect();
            let cells: Vec<CellRef> = targets
                .iter()
                .filter(|c| in_view.contains(c) && wanted.contains(*c))
                .cloned()
                .collect();
            if cells.is_empty() {
                continue;
            }
            let key = step_key(Phase::Validate, &step.actor);
            match &step.actor {
                Actor::Human { id } => {
                    self.open_task(job, &key, id, TaskKind::Validate, &cells)?;
                }
                Actor::Pool { role } => {
                    self.dispatch_pool(job, Phase::Validate, &step.actor, *role, &cells, plan.budget)?
                }
                Actor::Automatic { .. } => {}
            }
        }
        Ok(())
    }

    /// Moves the job through validation and completion when nothing is
    /// pending in its current phase.
    fn advance(&mut self, job: &str) -> Result<()> {
        loop {
            match self.session.job(job)?.status {
                JobStatus::Running if self.session.open_job_tasks(job, &[TaskKind::Detect, TaskKind::Repair]) == 0 => {
                    self.start_validation(job)?
                }
                JobStatus::Validating if self.session.open_job_tasks(job, &[TaskKind::Validate]) == 0 => {
                    self.commit(AuditEvent::JobCompleted { job: job.to_string() })?;
                }
                _ => return Ok(()),
            }
        }
    }

    /// Applies a human's answer to an open task and returns the audit
    /// sequence of the closing record.
    pub fn submit_response(&mut self, task: &str, response: &TaskResponse) -> Result<u64> {
        let ts = self.session.task(task)?;
        if !ts.is_open() {
            return Err(Error::TaskClosed(task.to_string()));
        }
        let pending = ts.task.clone();
        if response.kind() != pending.kind {
            return Err(Error::KindMismatch {
                expected: pending.kind.to_string(),
                got: response.kind().to_string(),
            });
        }
        let scope: BTreeMap<&CellRef, &TaskCell> = pending.cells.iter().map(|c| (&c.cell, c)).collect();
        let mut seen = BTreeSet::new();
        for c in response.cells() {
            if !scope.contains_key(c) {
                return Err(Error::OutOfScope(c.clone()));
            }
            if !seen.insert(c) {
                return Err(Error::Duplicate(c.to_string()));
            }
        }
        let abstained = response.abstained().to_vec();
        let job = pending.job.clone();
        let who = pending.assignee.clone();
        match response {
            TaskResponse::Detect { cells, .. } => {
                let mut suspects = cells.clone();
                self.session.db().sort_cells(&mut suspects);
                let report = DetectionReport {
                    detector: who.clone(),
                    evidence: suspects
                        .iter()
                        .map(|c| {
                            (
                                c.clone(),
                                Evidence {
                                    resources: Vec::new(),
                                    partners: Vec::new(),
                                },
                            )
                        })
                        .collect(),
                    suspects,
                };
                self.commit(AuditEvent::Detected {
                    job: job.clone(),
                    report,
                })?;
            }
            TaskResponse::Repair { updates, .. } => {
                for u in updates {
                    self.commit_repair(&job, &u.cell, u.value.clone(), &who, Vec::new())?;
                }
            }
            TaskResponse::Validate { .. } => {
                let skip: BTreeSet<&CellRef> = abstained.iter().collect();
                for (cell, verdict) in response.verdicts(&pending) {
                    if skip.contains(&cell) {
                        continue;
                    }
                    let generation = scope[&cell].generation;
                    self.commit(AuditEvent::Validated {
                        job: job.clone(),
                        task: task.to_string(),
                        validator: who.clone(),
                        cell,
                        generation,
                        verdict,
                    })?;
                }
            }
        }
        let seq = self.commit(AuditEvent::TaskClosed {
            task: task.to_string(),
            abstained,
        })?;
        if pending.kind == TaskKind::Detect {
            self.repair_round(&job)?;
        }
        self.advance(&job)?;
        Ok(seq.max(self.session.last_sequence()))
    }
}

/// Turns agent panics into step failures.
fn guarded<T>(agent: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(v)) => Ok(v),
        Ok(Err(Error::Agent { agent, message })) => Err(Error::Agent { agent, message }),
        Ok(Err(e)) => Err(Error::Agent {
            agent: agent.to_string(),
            message: e.to_string(),
        }),
        Err(payload) => {
            let detail = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_default();
            Err(Error::Agent {
                agent: agent.to_string(),
                message: format!("agent panicked: {detail}"),
            })
        }
    }
}
