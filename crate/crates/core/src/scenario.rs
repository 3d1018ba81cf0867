//! Scenario files: loading, validation and turning a scenario into an engine.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{Engine, Policy};
use crate::plan::{self, FlightPlan};
use crate::planner::{self, PlannerError};
use crate::topology::{Cell, StormEvent, Tick, Topology};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed scenario: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid scenario: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error(transparent)]
    Planner(#[from] PlannerError),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeChoice {
    #[default]
    Compositional,
    Monolithic,
    Both,
}

/// A scripted reroute: when `aircraft` is blocked at `tick`, fly `route` next.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Adaptation {
    pub aircraft: u32,
    pub tick: Tick,
    pub route: Vec<Cell>,
}

fn default_fd() -> Tick {
    1
}
fn default_fuel() -> i64 {
    325
}
fn default_lambda() -> f64 {
    0.5
}
fn default_time_limit() -> u64 {
    60_000
}
fn default_id() -> String {
    "scenario".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    #[serde(default = "default_id")]
    pub scenario_id: String,
    /// Mesh dimension; `width`/`height` override it for rectangular meshes.
    pub n: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<u32>,
    pub region_size: u32,
    #[serde(default)]
    pub m: usize,
    #[serde(default = "default_lambda")]
    pub lambda_param: f64,
    #[serde(default = "default_fd")]
    pub fd: Tick,
    #[serde(default = "default_fuel")]
    pub fuel: i64,
    /// Defaults to the middlemost cell.
    #[serde(default)]
    pub storm_cell: Option<Cell>,
    pub storm_tick: Tick,
    #[serde(default)]
    pub storm_end_tick: Option<Tick>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_time_limit")]
    pub time_limit_millis: u64,
    #[serde(default)]
    pub max_states: Option<u64>,
    #[serde(default)]
    pub mode: ModeChoice,
    /// Ticks an aircraft may be held in place before it counts as blocked.
    #[serde(default)]
    pub stall_limit: Option<u32>,
    #[serde(default)]
    pub parallel: bool,
    /// Fixed initial plans instead of generated ones.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plans: Option<Vec<FlightPlan>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub adaptations: Vec<Adaptation>,
}

impl ScenarioConfig {
    /// Square mesh scenario with defaults for everything optional.
    pub fn new(id: &str, n: u32, region_size: u32, m: usize, storm_tick: Tick, seed: u64) -> Self {
        ScenarioConfig {
            schema_version: SCHEMA_VERSION,
            scenario_id: id.into(),
            n,
            width: None,
            height: None,
            region_size,
            m,
            lambda_param: default_lambda(),
            fd: default_fd(),
            fuel: default_fuel(),
            storm_cell: None,
            storm_tick,
            storm_end_tick: None,
            seed,
            time_limit_millis: default_time_limit(),
            max_states: None,
            mode: ModeChoice::default(),
            stall_limit: None,
            parallel: false,
            plans: None,
            adaptations: Vec::new(),
        }
    }

    pub fn width(&self) -> u32 {
        self.width.unwrap_or(self.n)
    }

    pub fn height(&self) -> u32 {
        self.height.unwrap_or(self.n)
    }

    pub fn topology(&self) -> Result<Topology, ScenarioError> {
        Topology::grid(self.width(), self.height(), self.region_size).map_err(|e| ScenarioError::Invalid(vec![e.to_string()]))
    }

    pub fn storm(&self) -> StormEvent {
        let cell = self.storm_cell.unwrap_or_else(|| Cell::new((self.width().max(1) - 1) / 2, (self.height().max(1) - 1) / 2));
        StormEvent { cell, start_tick: self.storm_tick, end_tick: self.storm_end_tick }
    }

    pub fn time_limit(&self) -> Duration {
        Duration::from_millis(self.time_limit_millis)
    }

    /// Every violated invariant, or nothing.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.schema_version != SCHEMA_VERSION {
            out.push(format!("schemaVersion {} is not supported (expected {SCHEMA_VERSION})", self.schema_version));
        }
        let topo = match Topology::grid(self.width(), self.height(), self.region_size) {
            Ok(t) => Some(t),
            Err(e) => {
                out.push(e.to_string());
                None
            }
        };
        if self.fd < 1 {
            out.push(format!("fd must be at least 1, got {}", self.fd));
        }
        if self.plans.is_none() && !(self.lambda_param > 0.0 && self.lambda_param.is_finite()) {
            out.push(format!("lambdaParam must be positive, got {}", self.lambda_param));
        }
        if self.storm_tick < 0 {
            out.push(format!("stormTick must be non-negative, got {}", self.storm_tick));
        }
        if let Some(end) = self.storm_end_tick {
            if end <= self.storm_tick {
                out.push(format!("stormEndTick {end} must be after stormTick {}", self.storm_tick));
            }
        }
        if let Some(topo) = &topo {
            let bound = i64::from(topo.longest_path());
            if self.fuel <= bound {
                out.push(format!("fuel {} must exceed the longest path of {bound} sub-tracks", self.fuel));
            }
            let storm = self.storm();
            if !topo.contains(storm.cell) {
                out.push(format!("storm cell {} is off the {}x{} mesh", storm.cell, topo.width, topo.height));
            }
            if let Some(plans) = &self.plans {
                if let Err(e) = plan::validate_all(plans, topo) {
                    out.push(e.to_string());
                }
            }
            for a in &self.adaptations {
                if let Some(c) = a.route.iter().find(|c| !topo.contains(**c)) {
                    out.push(format!("adaptation for aircraft {} leaves the mesh at {c}", a.aircraft));
                }
                if a.route.windows(2).any(|w| !w[0].is_adjacent(w[1])) {
                    out.push(format!("adaptation for aircraft {} is not a connected route", a.aircraft));
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(ScenarioError::Invalid(p))
        }
    }

    /// The initial plans: the fixed ones, or a freshly generated batch.
    pub fn initial_plans(&self) -> Result<Vec<FlightPlan>, ScenarioError> {
        match &self.plans {
            Some(p) => Ok(p.clone()),
            None => {
                let topo = self.topology()?;
                Ok(planner::generate_flight_plans(self.m, self.lambda_param, self.fd, &topo, self.seed, self.fuel)?.plans)
            }
        }
    }

    pub fn engine(&self) -> Result<Engine, ScenarioError> {
        self.validate()?;
        let topo = self.topology()?;
        let plans = self.initial_plans()?;
        let mut e = Engine::new(topo, &plans, Some(self.storm()), self.fd);
        if let Some(l) = self.stall_limit {
            e = e.with_stall_limit(l);
        }
        if !self.adaptations.is_empty() {
            let table: BTreeMap<(u32, Tick), Vec<Cell>> =
                self.adaptations.iter().map(|a| ((a.aircraft, a.tick), a.route.clone())).collect();
            e = e.with_policy(Policy::Scripted(table));
        }
        Ok(e)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }
}

pub fn parse_scenario_str(text: &str) -> Result<ScenarioConfig, ScenarioError> {
    let cfg: ScenarioConfig = serde_json::from_str(text)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Read and validate a scenario file.
pub fn parse_scenario(path: impl AsRef<Path>) -> Result<ScenarioConfig, ScenarioError> {
    parse_scenario_str(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn es1_style_config_is_accepted() {
        let cfg = parse_scenario_str(r#"{"schemaVersion":1,"n":15,"regionSize":5,"m":30,"fuel":325,"lambdaParam":0.5,"stormTick":10}"#).unwrap();
        assert_eq!(cfg.storm().cell, Cell::new(7, 7));
        assert_eq!(cfg.fd, 1);
        assert_eq!(cfg.mode, ModeChoice::Compositional);
    }

    #[test]
    fn low_fuel_and_bad_storm_are_all_reported() {
        let err = parse_scenario_str(r#"{"schemaVersion":1,"n":15,"regionSize":5,"fuel":1,"stormTick":-2,"stormCell":{"x":20,"y":0}}"#)
            .unwrap_err();
        let ScenarioError::Invalid(list) = err else { panic!("{err}") };
        assert_eq!(list.len(), 3, "{list:?}");
        assert!(list[1].contains("fuel"));
    }

    #[test]
    fn malformed_and_unknown_version() {
        assert!(matches!(parse_scenario_str("{"), Err(ScenarioError::Json(_))));
        let err = parse_scenario_str(r#"{"schemaVersion":7,"n":6,"regionSize":3,"stormTick":1}"#).unwrap_err();
        assert!(err.to_string().contains("schemaVersion"));
        assert!(matches!(parse_scenario_str(r#"{"schemaVersion":1,"n":6,"regionSize":4,"stormTick":1}"#), Err(ScenarioError::Invalid(_))));
    }

    #[test]
    fn round_trip() {
        let cfg = ScenarioConfig::new("x", 9, 3, 10, 5, 7);
        let back = parse_scenario_str(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.engine().unwrap().plans().len(), 10);
    }
}
