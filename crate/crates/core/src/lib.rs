//! Compositional verification of adaptive air-traffic flight plans on a mesh of sub-tracks.

pub mod bench;
pub mod engine;
pub mod magnifier;
pub mod plan;
pub mod planner;
pub mod scenario;
pub mod sorted;
pub mod statespace;
pub mod topology;

pub use engine::{Diagnosis, DiagnosisKind, Engine, ModelState, Policy};
pub use magnifier::{MagnifierReport, Mode, RunOptions};
pub use plan::{FlightPlan, PlanEntry};
pub use scenario::{parse_scenario, ScenarioConfig, ScenarioError};
pub use statespace::{Exploration, ExplorationStats, Limits, Verdict};
pub use topology::{Cell, ComponentId, StormEvent, Tick, Topology};
