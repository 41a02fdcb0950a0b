//! Human-in-the-loop data cleaning engine.
//!
//! Cleaning jobs name the cells to clean together with the detectors,
//! repairers and validators to involve. Agents are black boxes, human or
//! automatic. The engine plans each job, allocates human tasks under
//! expertise and budget constraints, applies repairs through an
//! event-sourced session and keeps a factor ledger that scores every
//! detector, repairer, rule and validator by how its repairs validate.

pub mod agents;
pub mod allocation;
pub mod error;
pub mod expertise;
pub mod fixtures;
pub mod gateway;
pub mod model;
pub mod orchestrator;
pub mod provenance;
pub mod session;
pub mod sim;

pub use error::{Error, Result};
pub use gateway::{Gateway, PendingTask, TaskResponse};
pub use model::{CellRef, CellSelector, CleaningJob, Database, RelationInstance};
pub use orchestrator::{CostStrategy, Engine, RunOptions};
pub use session::{Session, SessionDir};
