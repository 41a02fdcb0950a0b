use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::{Arc, Mutex};

use anyhow::{Context, Result};
use axum::body::Bytes;
use axum::extract::State;
use axum::http::{Method, StatusCode, Uri};
use axum::response::IntoResponse;
use axum::Router;
use clap::{Parser, Subcommand};
use hcclean_core::fixtures;
use hcclean_core::model::{Budget, CleaningJob};
use hcclean_core::provenance::render_factor_report;
use hcclean_core::sim::{compare_strategies, run_simulation, SimulationConfig};
use hcclean_core::{CostStrategy, Engine, Gateway, RunOptions, SessionDir};
use serde_json::Value;

#[derive(Parser)]
#[command(name = "hcclean", version, about = "Human-in-the-loop data cleaning")]
struct Cli {
    /// Session directory.
    #[arg(long, short, global = true, env = "HCCLEAN_SESSION")]
    session: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Create or inspect a session directory.
    Session {
        #[command(subcommand)]
        action: SessionCmd,
    },
    /// Submit and run cleaning jobs.
    Job {
        #[command(subcommand)]
        action: JobCmd,
    },
    /// List and answer human tasks.
    Task {
        #[command(subcommand)]
        action: TaskCmd,
    },
    /// Factor and expertise reports.
    Report {
        #[command(subcommand)]
        action: ReportCmd,
    },
    /// Run a simulation from a TOML config or a built-in fixture.
    Simulate {
        config: Option<PathBuf>,
        #[arg(long, conflicts_with = "config")]
        fixture: Option<String>,
        /// Run both cost strategies and report the difference.
        #[arg(long)]
        compare: bool,
        #[arg(long)]
        json: bool,
    },
    /// Serve the JSON wire API over HTTP.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
    },
}

#[derive(Subcommand)]
enum SessionCmd {
    /// Write a new session directory from a fixture or simulation config.
    Init {
        dir: PathBuf,
        #[arg(long)]
        fixture: Option<String>,
        #[arg(long, conflicts_with = "fixture")]
        config: Option<PathBuf>,
    },
    /// Replay the session and print a summary.
    Show,
}

#[derive(Subcommand)]
enum JobCmd {
    /// Submit a job from a TOML or JSON file.
    Add { file: PathBuf },
    Run {
        id: String,
        #[arg(long)]
        strategy: Option<CostStrategy>,
        /// `max-humans=<n>` or `max-cost=<x>`.
        #[arg(long)]
        budget: Option<Budget>,
    },
}

#[derive(Subcommand)]
enum TaskCmd {
    List {
        human: String,
    },
    /// Answer a task. The response is inline JSON or `@file`.
    Respond {
        id: String,
        response: String,
    },
}

#[derive(Subcommand)]
enum ReportCmd {
    Factors {
        #[arg(long)]
        json: bool,
    },
    Expertise {
        human: String,
    },
}

/// An error reply from the wire API.
#[derive(Debug)]
struct WireError {
    code: String,
    message: String,
}

impl fmt::Display for WireError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for WireError {}

fn error_code(e: &anyhow::Error) -> String {
    if let Some(w) = e.downcast_ref::<WireError>() {
        return w.code.clone();
    }
    if let Some(c) = e.chain().find_map(|c| c.downcast_ref::<hcclean_core::Error>()) {
        return c.code().to_string();
    }
    "cli".into()
}

fn session_dir(cli: &Cli) -> Result<SessionDir> {
    let dir = cli
        .session
        .clone()
        .context("no session directory: pass --session or set HCCLEAN_SESSION")?;
    Ok(SessionDir::new(dir))
}

fn open_gateway(dir: &SessionDir) -> Result<Gateway> {
    let session = dir.load()?;
    Ok(Gateway::new(Engine::new(session).with_audit_file(dir.audit_file()?)))
}

fn call(gw: &mut Gateway, method: &str, path: &str, body: &str) -> Result<Value> {
    let reply = gw.handle(method, path, body);
    if reply.status == 200 {
        return Ok(reply.body);
    }
    let err = &reply.body["error"];
    Err(WireError {
        code: err["code"].as_str().unwrap_or("unknown").to_string(),
        message: err["message"].as_str().unwrap_or("").to_string(),
    }
    .into())
}

fn print_json(v: &Value) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn load_config(config: Option<&Path>, fixture: Option<&str>) -> Result<SimulationConfig> {
    match (config, fixture) {
        (Some(path), _) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            Ok(SimulationConfig::from_toml(&text)?)
        }
        (None, Some(name)) => fixtures::by_name(name)
            .with_context(|| format!("unknown fixture `{name}` (known: {})", fixtures::FIXTURES.join(", "))),
        (None, None) => anyhow::bail!("pass a config file or --fixture"),
    }
}

fn read_job(path: &Path) -> Result<CleaningJob> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if path.extension().and_then(|e| e.to_str()) == Some("json") {
        Ok(serde_json::from_str(&text)?)
    } else {
        Ok(CleaningJob::from_toml(&text)?)
    }
}

fn session_init(dir: &Path, fixture: Option<&str>, config: Option<&Path>) -> Result<()> {
    let cfg = load_config(config, Some(fixture.unwrap_or("scenario1")))?;
    let world = cfg.build()?;
    let sd = SessionDir::new(dir);
    sd.create(&world.dirty, &world.registry)?;
    let mut gw = open_gateway(&sd)?;
    for job in &cfg.jobs {
        fs::write(sd.jobs_dir().join(format!("{}.toml", job.id)), job.to_toml()?)?;
        call(&mut gw, "POST", "/jobs", &serde_json::to_string(job)?)?;
    }
    println!(
        "created session `{}` at {} with {} job(s)",
        cfg.name,
        dir.display(),
        cfg.jobs.len()
    );
    Ok(())
}

fn session_show(sd: &SessionDir) -> Result<()> {
    let s = sd.load()?;
    println!("session {}", sd.root().display());
    for rel in s.db().relations.values() {
        println!(
            "  relation {} ({} rows, {})",
            rel.name,
            rel.len(),
            rel.attributes.join(", ")
        );
    }
    for (id, job) in s.jobs() {
        println!("  job {id}: {:?}", job.status);
    }
    let open = s.tasks().filter(|t| t.is_open()).count();
    println!("  {open} open task(s), last sequence {}", s.last_sequence());
    Ok(())
}

fn simulate(config: Option<&Path>, fixture: Option<&str>, compare: bool, json: bool) -> Result<()> {
    let cfg = load_config(config, fixture)?;
    if compare {
        let cmp = compare_strategies(&cfg)?;
        if json {
            println!("{}", serde_json::to_string_pretty(&cmp)?);
        } else {
            print!("{}", cmp.quantitative.render());
            print!("{}", cmp.qualitative.render());
            println!(
                "qualitative - quantitative: tasks {:+}, cost {:+}, overlap accuracy {:+.4}",
                cmp.task_delta, cmp.cost_delta, cmp.overlap_accuracy_delta
            );
        }
        return Ok(());
    }
    let report = run_simulation(&cfg)?;
    if json {
        println!("{}", report.to_json()?);
    } else {
        print!("{}", report.render());
    }
    Ok(())
}

type Shared = Arc<Mutex<Gateway>>;

async fn dispatch(State(gw): State<Shared>, method: Method, uri: Uri, body: Bytes) -> impl IntoResponse {
    let body = String::from_utf8_lossy(&body).into_owned();
    let reply = gw
        .lock()
        .expect("gateway lock")
        .handle(method.as_str(), uri.path(), &body);
    let status = StatusCode::from_u16(reply.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    (status, axum::Json(reply.body))
}

fn serve(sd: &SessionDir, addr: &str) -> Result<()> {
    let gw: Shared = Arc::new(Mutex::new(open_gateway(sd)?));
    let app = Router::new().fallback(dispatch).with_state(gw);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        axum::serve(listener, app).await?;
        Ok(())
    })
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Session {
            action: SessionCmd::Init { dir, fixture, config },
        } => session_init(dir, fixture.as_deref(), config.as_deref()),
        Command::Session {
            action: SessionCmd::Show,
        } => session_show(&session_dir(&cli)?),
        Command::Simulate {
            config,
            fixture,
            compare,
            json,
        } => simulate(config.as_deref(), fixture.as_deref(), *compare, *json),
        Command::Serve { addr } => serve(&session_dir(&cli)?, addr),
        Command::Job { action } => {
            let sd = session_dir(&cli)?;
            let mut gw = open_gateway(&sd)?;
            match action {
                JobCmd::Add { file } => {
                    let job = read_job(file)?;
                    let v = call(&mut gw, "POST", "/jobs", &serde_json::to_string(&job)?)?;
                    fs::write(sd.jobs_dir().join(format!("{}.toml", job.id)), job.to_toml()?)?;
                    print_json(&v)
                }
                JobCmd::Run { id, strategy, budget } => {
                    let options = RunOptions {
                        strategy: *strategy,
                        budget: *budget,
                    };
                    print_json(&call(
                        &mut gw,
                        "POST",
                        &format!("/jobs/{id}/run"),
                        &serde_json::to_string(&options)?,
                    )?)
                }
            }
        }
        Command::Task { action } => {
            let mut gw = open_gateway(&session_dir(&cli)?)?;
            match action {
                TaskCmd::List { human } => print_json(&call(&mut gw, "GET", &format!("/humans/{human}/tasks"), "")?),
                TaskCmd::Respond { id, response } => {
                    let body = match response.strip_prefix('@') {
                        Some(path) => fs::read_to_string(path).with_context(|| format!("reading {path}"))?,
                        None => response.clone(),
                    };
                    print_json(&call(&mut gw, "POST", &format!("/tasks/{id}/response"), &body)?)
                }
            }
        }
        Command::Report { action } => {
            let mut gw = open_gateway(&session_dir(&cli)?)?;
            match action {
                ReportCmd::Factors { json: true } => print_json(&call(&mut gw, "GET", "/factors", "")?),
                ReportCmd::Factors { json: false } => {
                    print!(
                        "{}",
                        render_factor_report(&gw.engine().session().ledger().factor_rows())
                    );
                    Ok(())
                }
                ReportCmd::Expertise { human } => {
                    print_json(&call(&mut gw, "GET", &format!("/expertise/{human}"), "")?)
                }
            }
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e:#}", error_code(&e));
            ExitCode::FAILURE
        }
    }
}
