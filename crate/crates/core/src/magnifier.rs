//! Iterative zoom-in/zoom-out analysis and the monolithic baseline.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::Serialize;

use crate::engine::{Diagnosis, Engine, EngineError, ModelState, Place, Step, Successors};
use crate::plan::FlightPlan;
use crate::statespace::{self, Exploration, ExplorationStats, Limits, Verdict};
use crate::topology::{Cell, ComponentId, Tick};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Compositional,
    Monolithic,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Compositional => "compositional",
            Mode::Monolithic => "monolithic",
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub time_limit: Option<Duration>,
    pub max_states: Option<u64>,
    pub parallel: bool,
    pub check_invariants: bool,
}

impl RunOptions {
    fn limits(&self, deadline: Option<Instant>, conservation: Option<usize>) -> Limits {
        Limits {
            deadline,
            max_states: self.max_states,
            parallel: self.parallel,
            check_invariants: self.check_invariants,
            conservation,
            carried_seeds: false,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct IterationRecord {
    pub scope: BTreeSet<ComponentId>,
    pub seeds: usize,
    /// Earliest tick among the seeds.
    pub start_tick: Tick,
    pub verdict: Verdict,
    pub stop_tick: Option<Tick>,
    pub diagnoses: Vec<Diagnosis>,
    pub absorbed: BTreeSet<ComponentId>,
    pub stats: ExplorationStats,
}

/// An aircraft passing from one component into another.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct Crossing {
    pub object: u32,
    pub from: ComponentId,
    pub to: ComponentId,
    pub tick: Tick,
    /// Tick of the same crossing in the original plan, if it had one.
    pub planned: Option<Tick>,
}

impl Crossing {
    pub fn off_schedule(&self) -> bool {
        self.planned != Some(self.tick)
    }
}

/// One canonical run through the analysed scope.
#[derive(Clone, Debug, Default, Serialize)]
pub struct Witness {
    /// Reached the final state without getting stuck.
    pub complete: bool,
    /// Last plan of every aircraft that appeared in the run.
    pub plans: BTreeMap<u32, FlightPlan>,
    pub crossings: Vec<Crossing>,
    pub steps: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct MagnifierReport {
    pub mode: Mode,
    pub verdict: Verdict,
    pub iterations: Vec<IterationRecord>,
    pub final_scope: BTreeSet<ComponentId>,
    pub stats: ExplorationStats,
    /// Plans that differ from the original ones in the witness run.
    pub adapted_plans: Vec<FlightPlan>,
    /// Border crossings of the witness run that left their planned tick.
    pub off_schedule: Vec<Crossing>,
    /// Some branch reached a final state.
    pub success_trace: bool,
    pub violations: Vec<String>,
}

impl MagnifierReport {
    pub fn iteration_count(&self) -> usize {
        self.iterations.len()
    }
}

/// Scope with `new` added. Adding a member again changes nothing.
pub fn compose_components(scope: &BTreeSet<ComponentId>, new: ComponentId) -> BTreeSet<ComponentId> {
    let mut out = scope.clone();
    out.insert(new);
    out
}

/// Explore a scope against its environment from a time state.
pub fn check_compatibility(engine: &Engine, state0: ModelState, limits: &Limits) -> (Verdict, ExplorationStats) {
    let x = statespace::generate_state_space(engine, state0, limits);
    (x.verdict, x.stats)
}

fn record(x: &Exploration, scope: &BTreeSet<ComponentId>, seeds: &[ModelState]) -> IterationRecord {
    IterationRecord {
        scope: scope.clone(),
        seeds: seeds.len(),
        start_tick: seeds.iter().map(|s| s.now).min().unwrap_or_default(),
        verdict: x.verdict,
        stop_tick: x.stop_tick,
        diagnoses: x.diagnoses.clone(),
        absorbed: BTreeSet::new(),
        stats: x.stats,
    }
}

/// Tick the analysis starts from: the post-tick state just before the storm.
pub fn analysis_start(engine: &Engine) -> Tick {
    engine.storm.map_or_else(
        || engine.plans().iter().map(|p| p.departure()).min().unwrap_or(0) - 1,
        |s| s.start_tick - 1,
    )
}

/// Start from the storm's component and absorb every component a deadlock points at
/// until the scope is compatible with its environment.
pub fn run_magnifier(engine: &Engine, opts: &RunOptions) -> Result<MagnifierReport, EngineError> {
    let start = Instant::now();
    let deadline = opts.time_limit.map(|t| start + t);
    let mut limits = opts.limits(deadline, None);
    let t0 = analysis_start(engine);
    let first = engine.storm.map_or_else(|| engine.topo.component_of(engine.topo.middle()), |s| engine.topo.component_of(s.cell));
    let mut scope: BTreeSet<ComponentId> = [first].into();
    let mut seeds = vec![engine.initial_state(t0, scope.clone())?];
    let mut iterations = Vec::new();
    let mut violations = Vec::new();
    loop {
        let x = statespace::explore(engine, seeds.clone(), &limits);
        let mut rec = record(&x, &scope, &seeds);
        violations.extend(x.violations.iter().cloned());
        let outside: BTreeSet<ComponentId> = x
            .diagnoses
            .iter()
            .filter(|d| d.is_environment() && !scope.contains(&d.component))
            .map(|d| d.component)
            .collect();
        if !matches!(x.verdict, Verdict::Deadlock { .. }) || outside.is_empty() {
            iterations.push(rec);
            return Ok(finish(engine, Mode::Compositional, x.verdict, t0, scope, iterations, violations, start));
        }
        rec.absorbed = outside.clone();
        iterations.push(rec);
        scope = outside.iter().fold(scope, |s, &c| compose_components(&s, c));
        seeds = x.frontier.iter().map(|s| engine.absorb(s, &scope)).collect::<Result<_, _>>()?;
        limits.carried_seeds = true;
    }
}

/// The whole mesh in one exploration, with no environment.
pub fn run_monolithic(engine: &Engine, opts: &RunOptions) -> Result<MagnifierReport, EngineError> {
    let start = Instant::now();
    let deadline = opts.time_limit.map(|t| start + t);
    let limits = opts.limits(deadline, Some(engine.plans().len()));
    let t0 = analysis_start(engine);
    let scope = engine.topo.components();
    let s0 = engine.initial_state(t0, scope.clone())?;
    let seeds = vec![s0];
    let x = statespace::explore(engine, seeds.clone(), &limits);
    let iterations = vec![record(&x, &scope, &seeds)];
    Ok(finish(engine, Mode::Monolithic, x.verdict, t0, scope, iterations, x.violations, start))
}

#[allow(clippy::too_many_arguments)]
fn finish(
    engine: &Engine,
    mode: Mode,
    verdict: Verdict,
    t0: Tick,
    scope: BTreeSet<ComponentId>,
    iterations: Vec<IterationRecord>,
    violations: Vec<String>,
    start: Instant,
) -> MagnifierReport {
    let mut stats = ExplorationStats::default();
    for it in &iterations {
        stats.add(&it.stats);
    }
    let success_trace = stats.final_states > 0;
    let (adapted_plans, off_schedule) = if verdict == Verdict::Timeout {
        (Vec::new(), Vec::new())
    } else {
        let w = engine.initial_state(t0, scope.clone()).map(|s| witness(engine, s)).unwrap_or_default();
        let adapted = w
            .plans
            .values()
            .filter(|p| engine.original_plan(p.id).is_none_or(|o| o.as_ref() != *p))
            .cloned()
            .collect();
        (adapted, w.crossings.into_iter().filter(|c| c.off_schedule()).collect())
    };
    stats.wall_millis = start.elapsed().as_millis() as u64;
    MagnifierReport { mode, verdict, iterations, final_scope: scope, stats, adapted_plans, off_schedule, success_trace, violations }
}

/// Follow the first transition of every state from `s` until nothing is left to do.
pub fn witness(engine: &Engine, mut s: ModelState) -> Witness {
    let topo = &engine.topo;
    let mut plans: BTreeMap<u32, Arc<FlightPlan>> = BTreeMap::new();
    let mut w = Witness::default();
    for tp in s.occupied.values().chain(s.pending_departures()) {
        plans.insert(tp.id, tp.plan.clone());
    }
    loop {
        if engine.disaster(&s).is_some() {
            break;
        }
        match engine.successors(&s) {
            Successors::Timed => {
                if s.is_final() {
                    w.complete = true;
                    break;
                }
                if !engine.timed_deadlocks(&s).is_empty() {
                    break;
                }
                match engine.advance_time(&s) {
                    Ok(Some(n)) => s = n,
                    _ => break,
                }
            }
            Successors::Stuck(_) => break,
            Successors::Next(mut v) => {
                let (step, n) = v.swap_remove(0);
                w.steps += 1;
                match &step {
                    Step::Move { id, from: Place::Cell(a), to: Place::Cell(b), tick, plan } => {
                        plans.insert(*id, plan.clone());
                        let (ca, cb) = (topo.component_of(*a), topo.component_of(*b));
                        if ca != cb {
                            let planned = engine.original_plan(*id).and_then(|p| planned_crossing(engine, p, ca, cb));
                            w.crossings.push(Crossing { object: *id, from: ca, to: cb, tick: *tick, planned });
                        }
                    }
                    Step::Move { id, plan, .. } | Step::Reroute { id, plan, .. } => {
                        plans.insert(*id, plan.clone());
                    }
                    Step::Hold { id, at, .. } => {
                        if let Some(tp) = n.pending_departures().find(|t| t.id == *id && t.plan.source() == *at) {
                            plans.insert(*id, tp.plan.clone());
                        }
                    }
                }
                s = n;
            }
        }
    }
    w.plans = plans.into_iter().map(|(k, v)| (k, v.as_ref().clone())).collect();
    w
}

fn planned_crossing(engine: &Engine, p: &FlightPlan, from: ComponentId, to: ComponentId) -> Option<Tick> {
    let comp = |c: Cell| engine.topo.component_of(c);
    p.entries.windows(2).find(|w| comp(w[0].cell) == from && comp(w[1].cell) == to).map(|w| w[1].tick)
}
