//! Desk-scale simulation: inject errors into clean data, run jobs through
//! the gateway with scripted humans, and score the outcome against the
//! clean data.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::agents::{
    perturb, run_scripted_human, unit_draw, CellUpdate, DetectionReport, HumanScript, RepairProposal, Repairer,
    ScriptedAnswer,
};
use crate::error::{Error, Result};
use crate::expertise::{HumanProfile, HumanRole};
use crate::gateway::{Gateway, PendingTask, TaskResponse};
use crate::model::{
    AgentDescriptor, AgentKind, Budget, CellRef, CellSelector, CleaningJob, Database, Registry, RelationInstance,
};
use crate::orchestrator::{CostStrategy, Engine, RunOptions};
use crate::provenance::{render_factor_report, FactorRow};
use crate::session::Session;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorKind {
    /// Replace with another value of the column domain.
    Substitution,
    /// Copy a differing value from another row; tends to break FDs.
    FdSwap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorInjectionSpec {
    pub relation: String,
    pub attributes: Vec<String>,
    #[serde(default = "substitution_only")]
    pub kinds: Vec<ErrorKind>,
    pub rate: f64,
    pub seed: u64,
}

fn substitution_only() -> Vec<ErrorKind> {
    vec![ErrorKind::Substitution]
}

/// Returns the dirty instance and the clean value of every modified cell.
pub fn inject_errors(
    clean: &RelationInstance,
    spec: &ErrorInjectionSpec,
) -> Result<(RelationInstance, BTreeMap<CellRef, String>)> {
    if !(0.0..=1.0).contains(&spec.rate) {
        return Err(Error::Config(format!(
            "injection rate must lie in [0,1], got {}",
            spec.rate
        )));
    }
    let mut cols = Vec::new();
    for a in &spec.attributes {
        cols.push(
            clean
                .attribute_index(a)
                .ok_or_else(|| Error::Config(format!("unknown target attribute `{a}` of `{}`", clean.name)))?,
        );
    }
    let kinds = if spec.kinds.is_empty() {
        substitution_only()
    } else {
        spec.kinds.clone()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut dirty = clean.clone();
    let mut truth = BTreeMap::new();
    for &a in &cols {
        let domain: BTreeSet<&str> = clean.rows.iter().map(|r| r[a].as_str()).collect();
        for r in 0..clean.len() {
            if rng.gen::<f64>() >= spec.rate {
                continue;
            }
            let kind = kinds[rng.gen_range(0..kinds.len())];
            let current = clean.rows[r][a].as_str();
            let swap: Vec<&str> = clean
                .rows
                .iter()
                .map(|row| row[a].as_str())
                .filter(|v| *v != current)
                .collect();
            let others: Vec<&str> = domain.iter().copied().filter(|v| *v != current).collect();
            let value = match kind {
                ErrorKind::FdSwap if !swap.is_empty() => swap[rng.gen_range(0..swap.len())].to_string(),
                _ if !others.is_empty() => others[rng.gen_range(0..others.len())].to_string(),
                _ => format!("{current}?"),
            };
            truth.insert(clean.cell(r, a), current.to_string());
            dirty.rows[r][a] = value;
        }
    }
    Ok((dirty, truth))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationSpec {
    pub name: String,
    pub attributes: Vec<String>,
    #[serde(default)]
    pub rows: Vec<Vec<String>>,
}

/// A repairer stand-in that proposes the clean value, or a deterministic
/// mistake with probability `error_rate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedAgentSpec {
    pub id: String,
    pub error_rate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scope: Option<CellSelector>,
    #[serde(default)]
    pub seed: u64,
}

pub struct SimulatedRepairer {
    pub id: String,
    pub truth: Arc<BTreeMap<CellRef, String>>,
    pub error_rate: f64,
    pub seed: u64,
}

impl Repairer for SimulatedRepairer {
    fn repair(&self, db: &Database, cells: &[CellRef], _reports: &[DetectionReport]) -> Result<Vec<RepairProposal>> {
        let updates = cells
            .iter()
            .map(|c| {
                let t = match self.truth.get(c) {
                    Some(v) => v.clone(),
                    None => db.get(c).unwrap_or_default().to_string(),
                };
                let wrong = unit_draw(self.seed, &format!("sim-repair:{c}")) < self.error_rate;
                CellUpdate {
                    cell: c.clone(),
                    value: if wrong { perturb(&t) } else { t },
                }
            })
            .collect();
        Ok(vec![RepairProposal {
            repairer: self.id.clone(),
            updates,
            resources_used: Vec::new(),
        }])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedHumanSpec {
    pub id: String,
    pub role: HumanRole,
    pub data: CellSelector,
    #[serde(default = "unit_cost")]
    pub cost: f64,
    #[serde(default)]
    pub error_rate: f64,
    /// Cells the script will answer on; defaults to `data`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coverage: Option<CellSelector>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

fn unit_cost() -> f64 {
    1.0
}

/// Everything a simulation needs. Relations hold clean data; the dirty
/// session data is derived through `corruptions` and `injection`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub relations: Vec<RelationSpec>,
    #[serde(default)]
    pub corruptions: Vec<CellUpdate>,
    #[serde(default)]
    pub injection: Vec<ErrorInjectionSpec>,
    #[serde(default)]
    pub rules: Vec<String>,
    #[serde(default)]
    pub agents: Vec<AgentDescriptor>,
    #[serde(default)]
    pub simulated: Vec<SimulatedAgentSpec>,
    #[serde(default)]
    pub humans: Vec<ScriptedHumanSpec>,
    pub jobs: Vec<CleaningJob>,
    /// Overrides every job's own strategy.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<CostStrategy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<Budget>,
}

/// Materialized simulation inputs.
#[derive(Debug, Clone)]
pub struct World {
    pub clean: Database,
    pub dirty: Database,
    pub registry: Registry,
    /// Clean value of every cell.
    pub truth: BTreeMap<CellRef, String>,
    pub scripts: BTreeMap<String, HumanScript>,
}

impl SimulationConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn build(&self) -> Result<World> {
        let mut clean = Database::new();
        for r in &self.relations {
            clean.insert(RelationInstance::new(&r.name, r.attributes.clone(), r.rows.clone())?)?;
        }
        let mut dirty = clean.clone();
        for u in &self.corruptions {
            dirty.set(&u.cell, u.value.clone())?;
        }
        for spec in &self.injection {
            let rel = dirty
                .relation(&spec.relation)
                .ok_or_else(|| Error::Config(format!("injection names unknown relation `{}`", spec.relation)))?;
            let (d, _) = inject_errors(rel, spec)?;
            dirty.relations.insert(spec.relation.clone(), d);
        }
        let mut registry = Registry::default();
        for line in &self.rules {
            registry.add_rule(line.parse()?)?;
        }
        for a in &self.agents {
            registry.add_agent(a.clone())?;
        }
        for s in &self.simulated {
            registry.add_agent(AgentDescriptor::external(&s.id, AgentKind::Repairer, s.scope.clone()))?;
        }
        let truth: BTreeMap<CellRef, String> = clean
            .relations
            .values()
            .flat_map(|r| {
                r.cells()
                    .map(move |c| (c.clone(), r.value(c.row, &c.attribute).unwrap().to_string()))
            })
            .collect();
        let mut scripts = BTreeMap::new();
        for h in &self.humans {
            registry.add_human(HumanProfile::new(&h.id, h.role, h.data.clone(), h.cost))?;
            let script = HumanScript {
                human: h.id.clone(),
                ground_truth: truth.clone(),
                error_rate: h.error_rate,
                coverage: h.coverage.clone().unwrap_or_else(|| h.data.clone()),
                seed: h.seed.unwrap_or(self.seed),
            };
            script.check()?;
            scripts.insert(h.id.clone(), script);
        }
        Ok(World {
            clean,
            dirty,
            registry,
            truth,
            scripts,
        })
    }

    /// Engine over the dirty data, with simulated agents registered.
    pub fn engine(&self, world: &World) -> Result<Engine> {
        let session = Session::new(world.dirty.clone(), world.registry.clone())?;
        let mut engine = Engine::new(session);
        let truth = Arc::new(world.truth.clone());
        for s in &self.simulated {
            if !(0.0..=1.0).contains(&s.error_rate) {
                return Err(Error::Config(format!("error rate of `{}` must lie in [0,1]", s.id)));
            }
            engine.register_repairer(
                &s.id,
                Arc::new(SimulatedRepairer {
                    id: s.id.clone(),
                    truth: truth.clone(),
                    error_rate: s.error_rate,
                    seed: s.seed,
                }),
            );
        }
        Ok(engine)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HumanTally {
    pub tasks: usize,
    pub cells: usize,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<CostStrategy>,
    pub seeds: Vec<u64>,
    pub errors: usize,
    pub changed: usize,
    pub fixed: usize,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub overlap_cells: usize,
    pub overlap_accurate: usize,
    pub overlap_accuracy: Option<f64>,
    pub human_tasks: BTreeMap<String, HumanTally>,
    pub total_tasks: usize,
    pub total_cost: f64,
    pub factors: Vec<FactorRow>,
    pub jobs: BTreeMap<String, String>,
    pub final_sequence: u64,
}

impl SimulationReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn render(&self) -> String {
        let pct = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"));
        let mut out = String::new();
        let _ = writeln!(out, "simulation {}", self.name);
        if let Some(s) = self.strategy {
            let _ = writeln!(
                out,
                "strategy   {}",
                serde_json::to_string(&s).unwrap_or_default().trim_matches('"')
            );
        }
        let _ = writeln!(
            out,
            "errors {}  changed {}  fixed {}",
            self.errors, self.changed, self.fixed
        );
        let _ = writeln!(out, "precision {}  recall {}", pct(self.precision), pct(self.recall));
        let _ = writeln!(
            out,
            "overlap cells {}  accurate {}  accuracy {}",
            self.overlap_cells,
            self.overlap_accurate,
            pct(self.overlap_accuracy)
        );
        let _ = writeln!(out, "human tasks {}  cost {:.2}", self.total_tasks, self.total_cost);
        for (h, t) in &self.human_tasks {
            let _ = writeln!(out, "  {h}\t{} task(s)\t{} cell(s)\t{:.2}", t.tasks, t.cells, t.cost);
        }
        out.push_str(&render_factor_report(&self.factors));
        out
    }
}

fn wire_error(context: &str, body: &Value) -> Error {
    let code = body["error"]["code"].as_str().unwrap_or("unknown");
    let msg = body["error"]["message"].as_str().unwrap_or("");
    Error::Config(format!("{context}: [{code}] {msg}"))
}

fn call(gw: &mut Gateway, method: &str, path: &str, body: &str) -> Result<Value> {
    let reply = gw.handle(method, path, body);
    if reply.status != 200 {
        return Err(wire_error(&format!("{method} {path}"), &reply.body));
    }
    Ok(reply.body)
}

pub fn to_response(answer: ScriptedAnswer, abstain: Vec<CellRef>) -> TaskResponse {
    match answer {
        ScriptedAnswer::Report(r) => TaskResponse::Detect {
            cells: r.suspects,
            abstain,
        },
        ScriptedAnswer::Repair(p) => TaskResponse::Repair {
            updates: p.updates,
            abstain,
        },
        ScriptedAnswer::Verdicts { verdicts } => TaskResponse::Validate {
            verdicts,
            verdict: None,
            abstain,
        },
    }
}

/// Answers open tasks with the scripted humans until none remain.
pub fn drain_tasks(gw: &mut Gateway, scripts: &BTreeMap<String, HumanScript>) -> Result<usize> {
    let mut answered = 0;
    let limit = 100_000;
    loop {
        let mut open: Vec<PendingTask> = Vec::new();
        for h in scripts.keys() {
            let body = call(gw, "GET", &format!("/humans/{h}/tasks"), "")?;
            open.extend(serde_json::from_value::<Vec<PendingTask>>(body["tasks"].clone())?);
        }
        let Some(task) = open.into_iter().min_by_key(|t| t.opened) else {
            return Ok(answered);
        };
        let script = &scripts[&task.assignee];
        let r = run_scripted_human(task.kind, &task.cells, script, gw.engine().session().db())?;
        let response = to_response(r.answer, r.abstained);
        call(
            gw,
            "POST",
            &format!("/tasks/{}/response", task.id),
            &serde_json::to_string(&response)?,
        )?;
        answered += 1;
        if answered > limit {
            return Err(Error::Planning("scripted session did not settle".into()));
        }
    }
}

/// Runs every job of `config` end-to-end through the gateway.
pub fn run_simulation(config: &SimulationConfig) -> Result<SimulationReport> {
    Ok(simulate(config)?.0)
}

/// Like [`run_simulation`], also returning the final session.
pub fn simulate(config: &SimulationConfig) -> Result<(SimulationReport, Session)> {
    let world = config.build()?;
    let mut gw = Gateway::new(config.engine(&world)?);
    let options = serde_json::to_string(&RunOptions {
        strategy: config.strategy,
        budget: config.budget,
    })?;
    for job in &config.jobs {
        call(&mut gw, "POST", "/jobs", &serde_json::to_string(job)?)
            .map_err(|e| Error::Config(format!("job `{}`: {e}", job.id)))?;
        call(&mut gw, "POST", &format!("/jobs/{}/run", job.id), &options)
            .map_err(|e| Error::Config(format!("job `{}`: {e}", job.id)))?;
        drain_tasks(&mut gw, &world.scripts).map_err(|e| Error::Config(format!("job `{}`: {e}", job.id)))?;
    }
    let session = gw.into_engine().into_session();
    let report = score(config, &world, &session);
    Ok((report, session))
}

fn score(config: &SimulationConfig, world: &World, session: &Session) -> SimulationReport {
    let (mut errors, mut changed, mut fixed, mut changed_ok) = (0, 0, 0, 0);
    for (cell, truth) in &world.truth {
        let dirty = world.dirty.get(cell).unwrap_or_default();
        let now = session.db().get(cell).unwrap_or_default();
        if dirty != truth {
            errors += 1;
            if now == truth {
                fixed += 1;
            }
        }
        if now != dirty {
            changed += 1;
            if now == truth {
                changed_ok += 1;
            }
        }
    }
    let ratio = |n: usize, d: usize| if d == 0 { None } else { Some(n as f64 / d as f64) };

    let overlap: BTreeSet<CellRef> = session
        .jobs()
        .values()
        .filter_map(|j| j.plan.as_ref())
        .flat_map(|p| p.overlap.iter().cloned())
        .collect();
    let overlap_accurate = overlap
        .iter()
        .filter(|c| session.db().get(c) == world.truth.get(*c).map(String::as_str))
        .count();

    let mut human_tasks: BTreeMap<String, HumanTally> = BTreeMap::new();
    for t in session.tasks() {
        let cost = session.registry().humans.get(&t.task.assignee).map_or(0.0, |h| h.cost);
        let e = human_tasks.entry(t.task.assignee.clone()).or_default();
        e.tasks += 1;
        e.cells += t.task.cells.len();
        e.cost += cost;
    }
    let mut seeds = vec![config.seed];
    seeds.extend(config.injection.iter().map(|i| i.seed));
    seeds.extend(config.simulated.iter().map(|s| s.seed));
    seeds.extend(world.scripts.values().map(|s| s.seed));
    seeds.sort_unstable();
    seeds.dedup();

    SimulationReport {
        name: config.name.clone(),
        strategy: config.strategy,
        seeds,
        errors,
        changed,
        fixed,
        precision: ratio(changed_ok, changed),
        recall: ratio(fixed, errors),
        overlap_cells: overlap.len(),
        overlap_accurate,
        overlap_accuracy: ratio(overlap_accurate, overlap.len()),
        total_tasks: human_tasks.values().map(|t| t.tasks).sum(),
        total_cost: human_tasks.values().map(|t| t.cost).sum(),
        human_tasks,
        factors: session.ledger().factor_rows(),
        jobs: session
            .jobs()
            .iter()
            .map(|(id, j)| {
                (
                    id.clone(),
                    serde_json::to_value(j.status)
                        .ok()
                        .and_then(|v| v.as_str().map(String::from))
                        .unwrap_or_default(),
                )
            })
            .collect(),
        final_sequence: session.last_sequence(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyComparison {
    pub quantitative: SimulationReport,
    pub qualitative: SimulationReport,
    /// Qualitative minus quantitative.
    pub task_delta: i64,
    pub cost_delta: f64,
    pub overlap_accuracy_delta: f64,
}

/// Runs `config` once per strategy on identical dirty data.
pub fn compare_strategies(config: &SimulationConfig) -> Result<StrategyComparison> {
    let mut quant = config.clone();
    quant.strategy = Some(CostStrategy::Quantitative);
    let mut qual = config.clone();
    qual.strategy = Some(CostStrategy::Qualitative);
    let a = run_simulation(&quant)?;
    let b = run_simulation(&qual)?;
    Ok(StrategyComparison {
        task_delta: b.total_tasks as i64 - a.total_tasks as i64,
        cost_delta: b.total_cost - a.total_cost,
        overlap_accuracy_delta: b.overlap_accuracy.unwrap_or(0.0) - a.overlap_accuracy.unwrap_or(0.0),
        quantitative: a,
        qualitative: b,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::detect_fd_violations;

    fn clean(rows: usize) -> RelationInstance {
        let pairs = [
            ("47906", "Lafayette"),
            ("46201", "Indianapolis"),
            ("47904", "WestLafayette"),
        ];
        let data: Vec<Vec<String>> = (0..rows)
            .map(|i| {
                let (z, c) = pairs[i % pairs.len()];
                vec![format!("B{i}"), z.to_string(), c.to_string()]
            })
            .collect();
        RelationInstance::new("Branches", vec!["BID".into(), "Zip".into(), "City".into()], data).unwrap()
    }

    fn spec(rate: f64, kinds: Vec<ErrorKind>) -> ErrorInjectionSpec {
        ErrorInjectionSpec {
            relation: "Branches".into(),
            attributes: vec!["City".into()],
            kinds,
            rate,
            seed: 11,
        }
    }

    #[test]
    fn zero_rate_is_identity() {
        let c = clean(10);
        let (d, truth) = inject_errors(&c, &spec(0.0, vec![])).unwrap();
        assert_eq!(d, c);
        assert!(truth.is_empty());
    }

    #[test]
    fn full_rate_touches_every_row() {
        let c = clean(10);
        let (d, truth) = inject_errors(&c, &spec(1.0, vec![])).unwrap();
        assert_eq!(truth.len(), 10);
        for (cell, v) in &truth {
            assert_ne!(d.value(cell.row, "City").unwrap(), v);
        }
    }

    #[test]
    fn swaps_break_the_dependency() {
        let c = clean(12);
        let (d, truth) = inject_errors(&c, &spec(0.3, vec![ErrorKind::FdSwap])).unwrap();
        assert!(!truth.is_empty());
        let rule = "phi1: Branches: Zip -> City".parse().unwrap();
        let all = d.cells().collect();
        assert!(!detect_fd_violations(&d, &rule, &all).unwrap().suspects.is_empty());
    }

    #[test]
    fn injection_is_seeded() {
        let c = clean(30);
        let s = spec(0.4, vec![ErrorKind::Substitution, ErrorKind::FdSwap]);
        assert_eq!(inject_errors(&c, &s).unwrap(), inject_errors(&c, &s).unwrap());
    }

    #[test]
    fn bad_specs_rejected() {
        let c = clean(3);
        assert!(inject_errors(&c, &spec(1.5, vec![])).is_err());
        let mut s = spec(0.5, vec![]);
        s.attributes = vec!["Country".into()];
        assert_eq!(inject_errors(&c, &s).unwrap_err().code(), "config");
    }

    #[test]
    fn single_value_domain_gets_marked() {
        let c = RelationInstance::from_rows("Branches", &["City"], &[&["X"], &["X"]]).unwrap();
        let (d, _) = inject_errors(&c, &spec(1.0, vec![ErrorKind::FdSwap])).unwrap();
        assert_eq!(d.rows[0][0], "X?");
    }
}
