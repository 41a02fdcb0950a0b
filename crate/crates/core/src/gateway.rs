//! Human task queues and the versioned JSON wire API.
//!
//! [`Gateway::handle`] is transport-agnostic: it takes a method, a path and
//! a body and returns a status code and a JSON document. The CLI mounts it on
//! an HTTP server; tests and the simulation harness call it in-process.
//!
//! | method | path                    | body                 |
//! |--------|-------------------------|----------------------|
//! | GET    | `/humans/{id}/tasks`    |                      |
//! | POST   | `/tasks/{id}/response`  | [`TaskResponse`]     |
//! | GET    | `/factors`              |                      |
//! | GET    | `/expertise/{human}`    |                      |
//! | POST   | `/jobs`                 | [`CleaningJob`]      |
//! | POST   | `/jobs/{id}/run`        | [`RunOptions`], optional |
//!
//! Every document carries `"version": 1`. Mutating endpoints return the
//! audit sequence number after the mutation. Errors are
//! `{"version":1,"error":{"code":..,"message":..}}`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::agents::{CellUpdate, CellVerdict, Evidence, TaskCell};
use crate::error::{Error, Result};
use crate::expertise::{expertise_score, smoothed_expertise, Prior};
use crate::model::{CellRef, CleaningJob, TaskKind, Verdict};
use crate::orchestrator::{Engine, RunOptions};
use crate::provenance::FactorRow;

pub const WIRE_VERSION: u32 = 1;

/// One open unit of human work.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PendingTask {
    pub id: String,
    pub assignee: String,
    pub kind: TaskKind,
    pub job: String,
    /// Plan step the task belongs to.
    pub step: String,
    pub cells: Vec<TaskCell>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub evidence: BTreeMap<CellRef, Evidence>,
    /// Audit sequence at which the task was opened.
    pub opened: u64,
}

/// A human's answer. `abstain` lists cells the human declines to judge.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskResponse {
    Detect {
        #[serde(default)]
        cells: Vec<CellRef>,
        #[serde(default)]
        abstain: Vec<CellRef>,
    },
    Repair {
        #[serde(default)]
        updates: Vec<CellUpdate>,
        #[serde(default)]
        abstain: Vec<CellRef>,
    },
    Validate {
        #[serde(default)]
        verdicts: Vec<CellVerdict>,
        /// Shorthand: one verdict for every task cell not listed elsewhere.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        verdict: Option<Verdict>,
        #[serde(default)]
        abstain: Vec<CellRef>,
    },
}

impl TaskResponse {
    pub fn kind(&self) -> TaskKind {
        match self {
            TaskResponse::Detect { .. } => TaskKind::Detect,
            TaskResponse::Repair { .. } => TaskKind::Repair,
            TaskResponse::Validate { .. } => TaskKind::Validate,
        }
    }

    pub fn abstained(&self) -> &[CellRef] {
        match self {
            TaskResponse::Detect { abstain, .. }
            | TaskResponse::Repair { abstain, .. }
            | TaskResponse::Validate { abstain, .. } => abstain,
        }
    }

    /// Every cell the response mentions explicitly.
    pub fn cells(&self) -> Vec<&CellRef> {
        let named: Vec<&CellRef> = match self {
            TaskResponse::Detect { cells, .. } => cells.iter().collect(),
            TaskResponse::Repair { updates, .. } => updates.iter().map(|u| &u.cell).collect(),
            TaskResponse::Validate { verdicts, .. } => verdicts.iter().map(|v| &v.cell).collect(),
        };
        named.into_iter().chain(self.abstained()).collect()
    }

    /// Per-cell verdicts in task order, expanding the shorthand.
    pub fn verdicts(&self, task: &PendingTask) -> Vec<(CellRef, Verdict)> {
        let TaskResponse::Validate { verdicts, verdict, .. } = self else {
            return Vec::new();
        };
        let explicit: BTreeMap<&CellRef, Verdict> = verdicts.iter().map(|v| (&v.cell, v.verdict)).collect();
        task.cells
            .iter()
            .filter_map(|tc| {
                explicit
                    .get(&tc.cell)
                    .copied()
                    .or(*verdict)
                    .map(|v| (tc.cell.clone(), v))
            })
            .collect()
    }
}

pub fn list_pending_tasks(engine: &Engine, human: &str) -> Result<Vec<PendingTask>> {
    if !engine.session().registry().is_human(human) {
        return Err(Error::NotFound(format!("human `{human}`")));
    }
    Ok(engine.session().open_tasks(human).into_iter().cloned().collect())
}

pub fn submit_response(engine: &mut Engine, task: &str, response: &TaskResponse) -> Result<u64> {
    engine.submit_response(task, response)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskExpertise {
    pub task: TaskKind,
    pub correct: u64,
    pub validated: u64,
    /// `None` while undefined (no validated entries).
    pub expertise: Option<f64>,
    pub smoothed: f64,
}

pub fn expertise_report(engine: &Engine, human: &str) -> Result<Vec<TaskExpertise>> {
    let s = engine.session();
    if !s.registry().is_human(human) {
        return Err(Error::NotFound(format!("human `{human}`")));
    }
    let cells: Vec<CellRef> = s
        .history()
        .entries()
        .iter()
        .filter(|e| e.human == human)
        .map(|e| e.cell.clone())
        .collect();
    Ok([TaskKind::Detect, TaskKind::Repair, TaskKind::Validate]
        .into_iter()
        .map(|task| {
            let t = s.history().totals(human, task);
            TaskExpertise {
                task,
                correct: t.correct,
                validated: t.validated,
                expertise: expertise_score(s.history(), human, &cells, task).ok(),
                smoothed: smoothed_expertise(s.history(), human, &cells, task, Prior::default()),
            }
        })
        .collect())
}

pub fn factor_table(engine: &Engine) -> Vec<FactorRow> {
    engine.session().ledger().factor_rows()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reply {
    pub status: u16,
    pub body: Value,
}

impl Reply {
    fn ok(mut body: Value) -> Self {
        body["version"] = json!(WIRE_VERSION);
        Reply { status: 200, body }
    }

    fn error(e: &Error) -> Self {
        let status = match e.code() {
            "not-found" => 404,
            "task-closed" | "already-run" | "duplicate" => 409,
            "json" => 400,
            "io" => 500,
            _ => 422,
        };
        Reply {
            status,
            body: json!({"version": WIRE_VERSION, "error": {"code": e.code(), "message": e.to_string()}}),
        }
    }
}

/// In-process endpoint dispatcher over one engine.
pub struct Gateway {
    engine: Engine,
}

impl Gateway {
    pub fn new(engine: Engine) -> Self {
        Gateway { engine }
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn engine_mut(&mut self) -> &mut Engine {
        &mut self.engine
    }

    pub fn into_engine(self) -> Engine {
        self.engine
    }

    pub fn handle(&mut self, method: &str, path: &str, body: &str) -> Reply {
        match self.route(method, path, body) {
            Ok(v) => Reply::ok(v),
            Err(e) => Reply::error(&e),
        }
    }

    fn route(&mut self, method: &str, path: &str, body: &str) -> Result<Value> {
        let parts: Vec<&str> = path.trim_matches('/').split('/').collect();
        match (method, parts.as_slice()) {
            ("GET", ["humans", id, "tasks"]) => {
                let tasks = list_pending_tasks(&self.engine, id)?;
                Ok(json!({"human": id, "tasks": tasks}))
            }
            ("POST", ["tasks", id, "response"]) => {
                let response: TaskResponse = serde_json::from_str(body)?;
                let sequence = self.engine.submit_response(id, &response)?;
                Ok(json!({"task": id, "status": "closed", "sequence": sequence}))
            }
            ("GET", ["factors"]) => Ok(json!({"factors": factor_table(&self.engine)})),
            ("GET", ["expertise", human]) => {
                let role = self.engine.session().registry().humans.get(*human).map(|h| h.role);
                let tasks = expertise_report(&self.engine, human)?;
                Ok(json!({"human": human, "role": role, "tasks": tasks}))
            }
            ("POST", ["jobs"]) => {
                let job: CleaningJob = serde_json::from_str(body)?;
                let id = job.id.clone();
                let sequence = self.engine.add_job(job)?;
                Ok(json!({"job": id, "sequence": sequence}))
            }
            ("POST", ["jobs", id, "run"]) => {
                let options: RunOptions = if body.trim().is_empty() {
                    RunOptions::default()
                } else {
                    serde_json::from_str(body)?
                };
                let run = self.engine.run_job(id, &options)?;
                Ok(serde_json::to_value(run)?)
            }
            _ => Err(Error::NotFound(format!("route {method} {path}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn response_documents() {
        let r: TaskResponse = serde_json::from_str(r#"{"kind":"validate","verdict":"accurate"}"#).unwrap();
        assert_eq!(r.kind(), TaskKind::Validate);
        let r: TaskResponse =
            serde_json::from_str(r#"{"kind":"repair","updates":[{"cell":"Employees/r2/Sal","value":"80"}]}"#).unwrap();
        assert_eq!(r.cells().len(), 1);
        assert!(serde_json::from_str::<TaskResponse>(r#"{"kind":"specify"}"#).is_err());
    }

    #[test]
    fn shorthand_verdict_expands() {
        let task = PendingTask {
            id: "t1".into(),
            assignee: "Jen".into(),
            kind: TaskKind::Validate,
            job: "j".into(),
            step: "validate:Jen".into(),
            cells: vec![
                TaskCell {
                    cell: CellRef::new("T", 1, "A"),
                    value: "x".into(),
                    previous: None,
                    generation: None,
                },
                TaskCell {
                    cell: CellRef::new("T", 2, "A"),
                    value: "y".into(),
                    previous: None,
                    generation: None,
                },
            ],
            evidence: BTreeMap::new(),
            opened: 1,
        };
        let r = TaskResponse::Validate {
            verdicts: vec![CellVerdict {
                cell: CellRef::new("T", 2, "A"),
                verdict: Verdict::Inaccurate,
            }],
            verdict: Some(Verdict::Accurate),
            abstain: vec![],
        };
        let v = r.verdicts(&task);
        assert_eq!(v[0].1, Verdict::Accurate);
        assert_eq!(v[1].1, Verdict::Inaccurate);
    }
}
