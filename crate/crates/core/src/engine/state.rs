use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::plan::{FlightPlan, PlanEntry};
use crate::sorted::{SortedMap, SortedSet};
use crate::topology::{Cell, Channel, ComponentId, Tick};

/// A moving object in flight: its plan and how far along it is.
///
/// Equality looks only at the untraveled remainder, so two objects that got to
/// the same situation along different histories compare equal.
#[derive(Clone, Debug)]
pub struct TransP {
    pub id: u32,
    pub plan: Arc<FlightPlan>,
    /// Index of the first entry not yet traveled.
    pub next: usize,
    pub fuel_left: i64,
    /// Consecutive ticks spent waiting on the current cell.
    pub stall: u32,
}

impl TransP {
    pub fn new(plan: Arc<FlightPlan>, next: usize, fuel_left: i64) -> Self {
        TransP { id: plan.id, plan, next, fuel_left, stall: 0 }
    }

    pub fn remainder(&self) -> &[PlanEntry] {
        &self.plan.entries[self.next..]
    }

    /// Index of the entry for the cell currently occupied.
    pub fn current(&self) -> usize {
        self.next - 1
    }

    fn cmp_key(&self) -> (u32, &[PlanEntry], i64, u32) {
        (self.id, self.remainder(), self.fuel_left, self.stall)
    }
}

impl PartialEq for TransP {
    fn eq(&self, other: &Self) -> bool {
        self.cmp_key() == other.cmp_key()
    }
}

impl Eq for TransP {}

impl Hash for TransP {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.cmp_key().hash(state)
    }
}

impl PartialOrd for TransP {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for TransP {
    fn cmp(&self, other: &Self) -> Ordering {
        self.cmp_key().cmp(&other.cmp_key())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ActorState {
    Free,
    Occupied(TransP),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ErsKind {
    /// The environment pushes an object into the scope.
    Send,
    /// The environment expects an object from the scope.
    Receive,
}

/// One expected interaction of an environment actor.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ErsEntry {
    pub transp: TransP,
    /// Ticks after the previous action of the same actor.
    pub delay: Tick,
    pub channel: Channel,
    pub kind: ErsKind,
}

/// An environment actor standing in for an out-of-scope neighbor cell.
#[derive(Clone, Debug)]
pub struct EnvActorState {
    pub cell: Cell,
    pub ers: Arc<[ErsEntry]>,
    pub head: usize,
    pub last_action: Tick,
}

impl EnvActorState {
    pub fn head_entry(&self) -> Option<&ErsEntry> {
        self.ers.get(self.head)
    }

    pub fn next_action_tick(&self) -> Option<Tick> {
        self.head_entry().map(|e| self.last_action + e.delay)
    }

    pub fn is_exhausted(&self) -> bool {
        self.head >= self.ers.len()
    }

    pub fn remaining(&self) -> &[ErsEntry] {
        &self.ers[self.head.min(self.ers.len())..]
    }

    /// Remaining expectations with absolute action ticks.
    pub fn schedule(&self) -> Vec<(Tick, ErsKind, u32, Channel)> {
        let mut t = self.last_action;
        self.remaining()
            .iter()
            .map(|e| {
                t += e.delay;
                (t, e.kind, e.transp.id, e.channel)
            })
            .collect()
    }

    pub(crate) fn consume(&mut self, now: Tick) {
        self.head += 1;
        self.last_action = now;
    }
}

impl PartialEq for EnvActorState {
    fn eq(&self, other: &Self) -> bool {
        self.cell == other.cell && self.schedule() == other.schedule()
    }
}

impl Eq for EnvActorState {}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Receiver {
    Actor(Cell),
    Env(Cell),
}

/// A time-tagged event. No payload means a self-trigger of the receiver
/// (an occupant's scheduled send, or an environment actor's scheduled send).
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Event {
    pub tag: Tick,
    pub receiver: Receiver,
    pub object: u32,
    pub payload: Option<TransP>,
}

impl Event {
    pub fn fire(tag: Tick, cell: Cell, object: u32) -> Self {
        Event { tag, receiver: Receiver::Actor(cell), object, payload: None }
    }

    pub fn depart(tag: Tick, cell: Cell, tp: TransP) -> Self {
        Event { tag, receiver: Receiver::Actor(cell), object: tp.id, payload: Some(tp) }
    }

    pub fn env_send(tag: Tick, cell: Cell, object: u32) -> Self {
        Event { tag, receiver: Receiver::Env(cell), object, payload: None }
    }
}

/// One explicit state of the in-scope components plus their environment.
///
/// Environment actors and the scope change rarely, so they are shared between
/// states and copied on write.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelState {
    pub now: Tick,
    /// In-scope cells holding an object; every other in-scope cell is free.
    pub occupied: SortedMap<Cell, TransP>,
    pub env: Arc<SortedMap<Cell, EnvActorState>>,
    pub buffer: SortedSet<Event>,
    pub delivered: SortedSet<u32>,
    pub scope: Arc<BTreeSet<ComponentId>>,
}

impl ModelState {
    pub fn empty(now: Tick, scope: BTreeSet<ComponentId>) -> Self {
        ModelState {
            now,
            occupied: SortedMap::new(),
            env: Arc::default(),
            buffer: SortedSet::new(),
            delivered: SortedSet::new(),
            scope: Arc::new(scope),
        }
    }

    pub fn env_mut(&mut self) -> &mut SortedMap<Cell, EnvActorState> {
        Arc::make_mut(&mut self.env)
    }

    pub fn actor(&self, cell: Cell) -> ActorState {
        match self.occupied.get(&cell) {
            Some(tp) => ActorState::Occupied(tp.clone()),
            None => ActorState::Free,
        }
    }

    pub fn enabled(&self) -> impl Iterator<Item = &Event> {
        let now = self.now;
        self.buffer.iter().take_while(move |e| e.tag == now)
    }

    pub fn is_timed(&self) -> bool {
        self.buffer.first().is_none_or(|e| e.tag > self.now)
    }

    /// Objects waiting at an airport to enter the scope.
    pub fn pending_departures(&self) -> impl Iterator<Item = &TransP> {
        self.buffer.iter().filter_map(|e| e.payload.as_ref())
    }

    /// Ids of every object this state accounts for.
    pub fn tracked_ids(&self) -> BTreeSet<u32> {
        let mut ids: BTreeSet<u32> = self.occupied.values().map(|t| t.id).collect();
        ids.extend(self.pending_departures().map(|t| t.id));
        ids.extend(self.delivered.iter().copied());
        ids
    }

    pub fn position_of(&self, id: u32) -> Option<Cell> {
        self.occupied.iter().find(|(_, t)| t.id == id).map(|(c, _)| *c)
    }

    /// Scope traffic finished and every environment expectation met.
    pub fn is_final(&self) -> bool {
        self.occupied.is_empty() && self.buffer.is_empty() && self.env.values().all(|e| e.is_exhausted())
    }

    /// Mutual exclusion, uniqueness of objects and (optionally) conservation of `total` objects.
    pub fn check_invariants(&self, total: Option<usize>) -> Result<(), String> {
        let mut seen = BTreeSet::new();
        let mut check = |id: u32, what: &str| {
            if seen.insert(id) {
                Ok(())
            } else {
                Err(format!("object {id} appears twice ({what}) at tick {}", self.now))
            }
        };
        for tp in self.occupied.values() {
            check(tp.id, "in transit")?;
            if tp.remainder().is_empty() && tp.next == 0 {
                return Err(format!("object {} in transit without a current cell", tp.id));
            }
        }
        for tp in self.pending_departures() {
            check(tp.id, "awaiting departure")?;
        }
        for &id in &self.delivered {
            check(id, "delivered")?;
        }
        if let Some(e) = self.buffer.first() {
            if e.tag < self.now {
                return Err(format!("event tagged {} behind now {}", e.tag, self.now));
            }
        }
        if let Some(m) = total {
            if seen.len() != m {
                return Err(format!("conservation: {} objects accounted, expected {m}", seen.len()));
            }
        }
        Ok(())
    }
}
