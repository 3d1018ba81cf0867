//! Timed-actor semantics of one (possibly composite) component and its environment.

mod state;

pub use state::{ActorState, EnvActorState, ErsEntry, ErsKind, Event, ModelState, Receiver, TransP};

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::plan::FlightPlan;
use crate::sorted::SortedMap;
use crate::planner::{self, NetworkView, RerouteStage};
use crate::topology::{Cell, Channel, ComponentId, StormEvent, Tick, Topology};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EngineError {
    #[error("aircraft {a} and {b} both occupy {cell} at tick {tick}")]
    Collision { a: u32, b: u32, cell: Cell, tick: Tick },
    #[error("advance requested at tick {0} with events still enabled")]
    EventsPending(Tick),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiagnosisKind {
    /// The environment could not push an object in when it expected to.
    MissedSend,
    /// The environment never got an object it expected.
    MissedReceive,
    /// An object arrived that the environment did not expect (wrong object or wrong tick).
    Mismatch,
    /// An object has been held in place longer than the stall limit.
    Blockage,
}

/// Why a state cannot progress, and where.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Diagnosis {
    pub tick: Tick,
    pub kind: DiagnosisKind,
    pub cell: Cell,
    pub component: ComponentId,
    pub object: Option<u32>,
}

impl Diagnosis {
    /// Environment diagnoses point at a component outside the scope.
    pub fn is_environment(&self) -> bool {
        self.kind != DiagnosisKind::Blockage
    }
}

impl fmt::Display for Diagnosis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} at {} in {} (tick {}", self.kind, self.cell, self.component, self.tick)?;
        if let Some(id) = self.object {
            write!(f, ", aircraft {id}")?;
        }
        write!(f, ")")
    }
}

/// How blocked aircraft pick a new route.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub enum Policy {
    #[default]
    Alg2,
    /// Fixed routes keyed by (aircraft, tick). A scripted route is used when its first
    /// cell is available; otherwise ALG2 decides.
    Scripted(BTreeMap<(u32, Tick), Vec<Cell>>),
}

/// Where an aircraft came from or went to in a step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Place {
    Airport,
    Cell(Cell),
}

/// Label of one transition.
#[derive(Clone, Debug)]
pub enum Step {
    Move { id: u32, from: Place, to: Place, tick: Tick, plan: Arc<FlightPlan> },
    Reroute { id: u32, at: Cell, tick: Tick, stage: RerouteStage, plan: Arc<FlightPlan> },
    /// Departure postponed a tick because the first cell is unavailable.
    Hold { id: u32, at: Cell, tick: Tick },
}

impl Step {
    pub fn object(&self) -> u32 {
        match self {
            Step::Move { id, .. } | Step::Reroute { id, .. } | Step::Hold { id, .. } => *id,
        }
    }
}

/// What can happen next from a state.
#[derive(Debug)]
pub enum Successors {
    /// No event is due at `now`: the state is a time state.
    Timed,
    Next(Vec<(Step, ModelState)>),
    /// Events are due but none can fire and no reroute helps.
    Stuck(Vec<Diagnosis>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Refusal {
    Stormy,
    Occupied,
    /// Target env actor is about to push its own object into us.
    EnvBusy,
    Mismatch,
}

/// Original positions of every aircraft, for judging occupancy outside the scope.
#[derive(Clone, Debug, Default)]
struct OriginalIndex {
    by_cell: HashMap<Cell, Vec<(Tick, Tick, u32)>>,
}

impl OriginalIndex {
    fn new(plans: &[Arc<FlightPlan>], fd: Tick) -> Self {
        let mut by_cell: HashMap<Cell, Vec<(Tick, Tick, u32)>> = HashMap::new();
        for p in plans {
            for (k, e) in p.entries.iter().enumerate() {
                by_cell.entry(e.cell).or_default().push((e.tick, p.leave_tick(k, fd), p.id));
            }
        }
        OriginalIndex { by_cell }
    }

    fn occupied(&self, cell: Cell, t: Tick, skip: &BTreeSet<u32>) -> bool {
        self.by_cell
            .get(&cell)
            .is_some_and(|v| v.iter().any(|&(a, b, id)| a <= t && t < b && !skip.contains(&id)))
    }
}

/// Static context shared by every state of an analysis.
#[derive(Clone, Debug)]
pub struct Engine {
    pub topo: Topology,
    pub storm: Option<StormEvent>,
    pub fd: Tick,
    pub stall_limit: u32,
    pub policy: Policy,
    plans: Vec<Arc<FlightPlan>>,
    original: OriginalIndex,
}

impl Engine {
    pub fn new(topo: Topology, plans: &[FlightPlan], storm: Option<StormEvent>, fd: Tick) -> Self {
        let plans: Vec<Arc<FlightPlan>> = plans.iter().cloned().map(Arc::new).collect();
        let original = OriginalIndex::new(&plans, fd);
        let stall_limit = topo.width.max(topo.height);
        Engine { topo, storm, fd, stall_limit, policy: Policy::Alg2, plans, original }
    }

    pub fn with_policy(mut self, policy: Policy) -> Self {
        self.policy = policy;
        self
    }

    pub fn with_stall_limit(mut self, limit: u32) -> Self {
        self.stall_limit = limit;
        self
    }

    pub fn plans(&self) -> &[Arc<FlightPlan>] {
        &self.plans
    }

    pub fn original_plan(&self, id: u32) -> Option<&Arc<FlightPlan>> {
        self.plans.iter().find(|p| p.id == id)
    }

    pub fn in_scope(&self, s: &ModelState, c: Cell) -> bool {
        s.scope.contains(&self.topo.component_of(c))
    }

    fn stormy(&self, c: Cell, t: Tick) -> bool {
        self.storm.is_some_and(|st| st.covers(c, t))
    }

    /// Post-tick state at `t` of the components in `scope`, following the original plans,
    /// with environment actors for every neighbor cell outside the scope.
    pub fn initial_state(&self, t: Tick, scope: BTreeSet<ComponentId>) -> Result<ModelState, EngineError> {
        let mut s = ModelState::empty(t, scope.clone());
        self.place(&mut s, &scope, &BTreeSet::new())?;
        self.reset_env(&mut s);
        Ok(s)
    }

    /// Extend a state's scope with `new` components, placing their aircraft per the
    /// original plans at the state's tick and rebuilding the environment.
    pub fn absorb(&self, seed: &ModelState, new: &BTreeSet<ComponentId>) -> Result<ModelState, EngineError> {
        let mut s = seed.clone();
        let fresh: BTreeSet<ComponentId> = new.difference(&seed.scope).copied().collect();
        Arc::make_mut(&mut s.scope).extend(fresh.iter().copied());
        let tracked = seed.tracked_ids();
        self.place(&mut s, &fresh, &tracked)?;
        self.reset_env(&mut s);
        Ok(s)
    }

    fn place(&self, s: &mut ModelState, comps: &BTreeSet<ComponentId>, skip: &BTreeSet<u32>) -> Result<(), EngineError> {
        let t = s.now;
        let fd = self.fd;
        for p in self.plans.iter().filter(|p| !skip.contains(&p.id)) {
            let within = |c: Cell| comps.contains(&self.topo.component_of(c));
            if p.departure() > t {
                if within(p.source()) {
                    s.buffer.insert(Event::depart(p.departure(), p.source(), TransP::new(p.clone(), 0, p.fuel)));
                }
            } else if p.exit_tick(fd) <= t {
                if within(p.destination()) {
                    s.delivered.insert(p.id);
                }
            } else {
                let k = p.position_index(t, fd).expect("airborne");
                let cell = p.entries[k].cell;
                if !within(cell) {
                    continue;
                }
                let leave = p.leave_tick(k, fd);
                let tp = TransP::new(p.clone(), k + 1, p.fuel - (leave - p.departure()));
                if let Some(other) = s.occupied.get(&cell) {
                    return Err(EngineError::Collision { a: other.id, b: p.id, cell, tick: t });
                }
                s.occupied.insert(cell, tp);
                s.buffer.insert(Event::fire(leave, cell, p.id));
            }
        }
        Ok(())
    }

    fn reset_env(&self, s: &mut ModelState) {
        s.buffer.retain(|e| !matches!(e.receiver, Receiver::Env(_)));
        s.env = Arc::new(self.derive_ers(&s.scope, s.now));
        for env in s.env.values() {
            if let (Some(h), Some(t)) = (env.head_entry(), env.next_action_tick()) {
                if h.kind == ErsKind::Send {
                    s.buffer.insert(Event::env_send(t, env.cell, h.transp.id));
                }
            }
        }
    }

    /// Expected interactions of each environment cell of `scope` after tick `t`,
    /// read off the original plans.
    pub fn derive_ers(&self, scope: &BTreeSet<ComponentId>, t: Tick) -> SortedMap<Cell, EnvActorState> {
        let inside = |c: Cell| scope.contains(&self.topo.component_of(c));
        let mut raw: BTreeMap<Cell, Vec<(Tick, ErsKind, ErsEntry)>> =
            self.topo.scope_env_cells(scope).into_iter().map(|c| (c, Vec::new())).collect();
        for p in &self.plans {
            for k in 0..p.entries.len().saturating_sub(1) {
                let (a, b) = (p.entries[k].cell, p.entries[k + 1].cell);
                let tick = p.entries[k + 1].tick;
                if tick <= t || inside(a) == inside(b) {
                    continue;
                }
                let channel = Channel::between(a, b).expect("plans move between neighbors");
                let tp = TransP::new(p.clone(), k + 1, p.fuel - (tick - p.departure()));
                let (env, kind) = if inside(a) { (b, ErsKind::Receive) } else { (a, ErsKind::Send) };
                let entry = ErsEntry { transp: tp, delay: 0, channel, kind };
                raw.get_mut(&env).expect("crossing touches an env cell").push((tick, kind, entry));
            }
        }
        raw.into_iter()
            .map(|(cell, mut v)| {
                v.sort_by_key(|x| (x.0, x.1, x.2.transp.id));
                let mut last = t;
                let ers: Vec<ErsEntry> = v
                    .into_iter()
                    .map(|(tick, _, mut e)| {
                        e.delay = tick - last;
                        last = tick;
                        e
                    })
                    .collect();
                (cell, EnvActorState { cell, ers: ers.into(), head: 0, last_action: t })
            })
            .collect()
    }

    /// Events due at the state's current tick.
    pub fn enabled_events<'a>(&self, s: &'a ModelState) -> Vec<&'a Event> {
        s.enabled().collect()
    }

    fn travel_time(&self, plan: &FlightPlan, k: usize) -> Tick {
        plan.leave_tick(k, self.fd) - plan.entries[k].tick
    }

    /// Put `tp` into `cell` as its entry `tp.next`, charging fuel and scheduling its next send.
    fn enter(&self, s: &mut ModelState, cell: Cell, mut tp: TransP) {
        let k = tp.next;
        tp.fuel_left -= self.travel_time(&tp.plan, k);
        tp.next = k + 1;
        tp.stall = 0;
        let leave = tp.plan.leave_tick(k, self.fd);
        s.buffer.insert(Event::fire(leave, cell, tp.id));
        s.occupied.insert(cell, tp);
    }

    fn schedule_env_head(s: &mut ModelState, cell: Cell) {
        let env = &s.env[&cell];
        if let (Some(h), Some(t)) = (env.head_entry(), env.next_action_tick()) {
            if h.kind == ErsKind::Send {
                let ev = Event::env_send(t, cell, h.transp.id);
                s.buffer.insert(ev);
            }
        }
    }

    fn can_enter(&self, s: &ModelState, cell: Cell) -> Result<(), Refusal> {
        if self.stormy(cell, s.now) {
            Err(Refusal::Stormy)
        } else if s.occupied.contains_key(&cell) {
            Err(Refusal::Occupied)
        } else {
            Ok(())
        }
    }

    /// Fire one enabled event.
    fn trigger(&self, s: &ModelState, e: &Event) -> Result<(Step, ModelState), Refusal> {
        let now = s.now;
        match (e.receiver, &e.payload) {
            (Receiver::Actor(cell), Some(tp)) => {
                self.can_enter(s, cell)?;
                let mut n = s.clone();
                n.buffer.remove(e);
                self.enter(&mut n, cell, tp.clone());
                let plan = tp.plan.clone();
                Ok((Step::Move { id: tp.id, from: Place::Airport, to: Place::Cell(cell), tick: now, plan }, n))
            }
            (Receiver::Actor(cell), None) => {
                let tp = &s.occupied[&cell];
                let plan = tp.plan.clone();
                let Some(next) = tp.remainder().first() else {
                    let mut n = s.clone();
                    n.buffer.remove(e);
                    let tp = n.occupied.remove(&cell).expect("occupant");
                    n.delivered.insert(tp.id);
                    return Ok((Step::Move { id: tp.id, from: Place::Cell(cell), to: Place::Airport, tick: now, plan }, n));
                };
                let target = next.cell;
                let step = Step::Move { id: tp.id, from: Place::Cell(cell), to: Place::Cell(target), tick: now, plan };
                if self.in_scope(s, target) {
                    self.can_enter(s, target)?;
                    let mut n = s.clone();
                    n.buffer.remove(e);
                    let tp = n.occupied.remove(&cell).expect("occupant");
                    self.enter(&mut n, target, tp);
                    Ok((step, n))
                } else {
                    let env = s.env.get(&target).ok_or(Refusal::Mismatch)?;
                    let channel = Channel::between(cell, target);
                    match env.head_entry() {
                        Some(h)
                            if h.kind == ErsKind::Receive
                                && h.transp.id == tp.id
                                && Some(h.channel) == channel
                                && env.next_action_tick() == Some(now) =>
                        {
                            let mut n = s.clone();
                            n.buffer.remove(e);
                            n.occupied.remove(&cell);
                            n.env_mut().get_mut(&target).expect("env actor").consume(now);
                            Self::schedule_env_head(&mut n, target);
                            Ok((step, n))
                        }
                        Some(h) if h.kind == ErsKind::Send && env.next_action_tick() == Some(now) => Err(Refusal::EnvBusy),
                        _ => Err(Refusal::Mismatch),
                    }
                }
            }
            (Receiver::Env(cell), _) => {
                let env = &s.env[&cell];
                let h = env.head_entry().expect("scheduled env send has a head");
                let target = h.channel.to_cell();
                self.can_enter(s, target)?;
                let mut n = s.clone();
                n.buffer.remove(e);
                let tp = h.transp.clone();
                let plan = tp.plan.clone();
                let id = tp.id;
                self.enter(&mut n, target, tp);
                n.env_mut().get_mut(&cell).expect("env actor").consume(now);
                Self::schedule_env_head(&mut n, cell);
                Ok((Step::Move { id, from: Place::Cell(cell), to: Place::Cell(target), tick: now, plan }, n))
            }
        }
    }

    /// Ids the state already accounts for, which the outside oracle must ignore.
    fn outside_view<'a>(&'a self, s: &'a ModelState) -> StateView<'a> {
        StateView { engine: self, state: s, tracked: s.tracked_ids() }
    }

    fn reroute_transition(&self, s: &ModelState, e: &Event, view: &StateView<'_>) -> (Step, ModelState) {
        let Receiver::Actor(cell) = e.receiver else { unreachable!("only occupants reroute") };
        let tp = &s.occupied[&cell];
        let current = tp.current();
        let scripted = match &self.policy {
            Policy::Scripted(table) => table
                .get(&(tp.id, s.now))
                .filter(|r| r.first().is_some_and(|&c| c.is_adjacent(cell) && view.available(c))),
            Policy::Alg2 => None,
        };
        let (plan, stage) = match scripted {
            Some(route) => (planner::create_flight_plan(&tp.plan, current, s.now, route, false, self.fd), RerouteStage::Detour),
            None => planner::reroute(&tp.plan, current, s.now, &self.topo, view, self.fd),
        };
        let plan = Arc::new(plan);
        let mut n = s.clone();
        let occupant = n.occupied.get_mut(&cell).expect("occupant");
        occupant.plan = plan.clone();
        if stage.delays() {
            occupant.stall += 1;
            occupant.fuel_left -= 1;
            n.buffer.remove(e);
            n.buffer.insert(Event::fire(s.now + 1, cell, e.object));
        }
        (Step::Reroute { id: e.object, at: cell, tick: s.now, stage, plan }, n)
    }

    fn hold_transition(&self, s: &ModelState, e: &Event) -> (Step, ModelState) {
        let Receiver::Actor(cell) = e.receiver else { unreachable!("departures target actors") };
        let tp = e.payload.as_ref().expect("departure payload");
        let route = tp.plan.cells();
        let shifted = FlightPlan::along(tp.id, &route, s.now + 1, self.fd, tp.plan.fuel);
        let mut held = TransP::new(Arc::new(shifted), 0, tp.fuel_left);
        held.stall = tp.stall + 1;
        let mut n = s.clone();
        n.buffer.remove(e);
        n.buffer.insert(Event::depart(s.now + 1, cell, held));
        (Step::Hold { id: tp.id, at: cell, tick: s.now }, n)
    }

    /// Every transition out of `s` at its current tick.
    pub fn successors(&self, s: &ModelState) -> Successors {
        let enabled: Vec<&Event> = s.enabled().collect();
        if enabled.is_empty() {
            return Successors::Timed;
        }
        let mut next = Vec::new();
        let mut blocked = Vec::new();
        for e in enabled {
            match self.trigger(s, e) {
                Ok(x) => next.push(x),
                Err(r) => blocked.push((e, r)),
            }
        }
        if !next.is_empty() {
            return Successors::Next(next);
        }

        let mismatches: Vec<Diagnosis> = blocked
            .iter()
            .filter(|(_, r)| *r == Refusal::Mismatch)
            .map(|(e, _)| {
                let Receiver::Actor(cell) = e.receiver else { unreachable!() };
                let target = s.occupied[&cell].remainder()[0].cell;
                self.diagnosis(DiagnosisKind::Mismatch, target, s.now, Some(e.object))
            })
            .collect();
        if !mismatches.is_empty() {
            return Successors::Stuck(mismatches);
        }

        let view = self.outside_view(s);
        for (e, r) in &blocked {
            match (e.receiver, &e.payload, r) {
                (Receiver::Actor(_), None, Refusal::Stormy | Refusal::Occupied) => next.push(self.reroute_transition(s, e, &view)),
                (Receiver::Actor(_), Some(_), _) => next.push(self.hold_transition(s, e)),
                _ => {}
            }
        }
        if !next.is_empty() {
            return Successors::Next(next);
        }

        let missed: Vec<Diagnosis> = blocked
            .iter()
            .filter_map(|(e, _)| match e.receiver {
                Receiver::Env(cell) => Some(self.diagnosis(DiagnosisKind::MissedSend, cell, s.now, Some(e.object))),
                Receiver::Actor(_) => None,
            })
            .collect();
        Successors::Stuck(missed)
    }

    fn diagnosis(&self, kind: DiagnosisKind, cell: Cell, tick: Tick, object: Option<u32>) -> Diagnosis {
        Diagnosis { tick, kind, cell, component: self.topo.component_of(cell), object }
    }

    /// Next tick at which anything is scheduled to happen.
    pub fn next_tick(&self, s: &ModelState) -> Option<Tick> {
        let ev = s.buffer.first().map(|e| e.tag);
        let recv = s
            .env
            .values()
            .filter(|a| a.head_entry().is_some_and(|h| h.kind == ErsKind::Receive))
            .filter_map(|a| a.next_action_tick())
            .min();
        match (ev, recv) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }

    /// Move a time state to the next tick with something to do.
    pub fn advance_time(&self, s: &ModelState) -> Result<Option<ModelState>, EngineError> {
        if !s.is_timed() {
            return Err(EngineError::EventsPending(s.now));
        }
        Ok(self.next_tick(s).map(|t| {
            let mut n = s.clone();
            n.now = t.max(s.now + 1);
            n
        }))
    }

    /// Deadlock checks on a time state: overdue environment receives and stalled aircraft.
    pub fn timed_deadlocks(&self, s: &ModelState) -> Vec<Diagnosis> {
        let mut out: Vec<Diagnosis> = s
            .env
            .values()
            .filter(|a| a.head_entry().is_some_and(|h| h.kind == ErsKind::Receive))
            .filter(|a| a.next_action_tick().is_some_and(|t| t <= s.now))
            .map(|a| {
                let h = a.head_entry().expect("head");
                self.diagnosis(DiagnosisKind::MissedReceive, a.cell, a.next_action_tick().expect("tick"), Some(h.transp.id))
            })
            .collect();
        for (&cell, tp) in &s.occupied {
            if tp.stall > self.stall_limit {
                out.push(self.diagnosis(DiagnosisKind::Blockage, cell, s.now, Some(tp.id)));
            }
        }
        for tp in s.pending_departures() {
            if tp.stall > self.stall_limit {
                out.push(self.diagnosis(DiagnosisKind::Blockage, tp.plan.source(), s.now, Some(tp.id)));
            }
        }
        out
    }

    /// Deadlock of any state: stuck events, or the time-state checks.
    pub fn is_deadlock(&self, s: &ModelState) -> Option<Diagnosis> {
        match self.successors(s) {
            Successors::Stuck(d) => d.into_iter().min(),
            Successors::Timed => self.timed_deadlocks(s).into_iter().min(),
            Successors::Next(_) => None,
        }
    }

    /// First aircraft out of fuel, if any.
    pub fn disaster(&self, s: &ModelState) -> Option<u32> {
        s.occupied.values().filter(|t| t.fuel_left <= 0).map(|t| t.id).min()
    }
}

struct StateView<'a> {
    engine: &'a Engine,
    state: &'a ModelState,
    tracked: BTreeSet<u32>,
}

impl NetworkView for StateView<'_> {
    fn stormy(&self, cell: Cell) -> bool {
        self.engine.stormy(cell, self.state.now)
    }

    fn occupied(&self, cell: Cell) -> bool {
        if self.engine.in_scope(self.state, cell) {
            self.state.occupied.contains_key(&cell)
        } else {
            self.engine.original.occupied(cell, self.state.now, &self.tracked)
        }
    }
}

#[cfg(test)]
mod tests;
