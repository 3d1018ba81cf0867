//! Explicit state-space exploration, one tick at a time.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU32, Ordering};
use std::time::{Duration, Instant};

use std::sync::Arc;

use dashmap::{DashMap, DashSet};
use integer_encoding::VarInt;
use rustc_hash::FxBuildHasher;
use rayon::prelude::*;
use serde::Serialize;

use crate::engine::{Diagnosis, Engine, EnvActorState, ErsEntry, ModelState, Receiver, Successors, TransP};
use crate::plan::FlightPlan;
use crate::topology::{Cell, Tick};

/// Collision-free binary encoding of a state.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StateKey(Box<[u8]>);

impl StateKey {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Bound on pointer-keyed cache entries, which pin the plans they refer to.
const CACHE_CAP: usize = 1 << 20;

type FastMap<K, V> = DashMap<K, V, FxBuildHasher>;
type ScheduleAt = (usize, usize, Tick);
pub(crate) type SeenSet = DashSet<StateKey, FxBuildHasher>;

/// Builds state keys, replacing plan remainders and environment schedules by
/// small ids. Keys from one encoder are only comparable with each other.
#[derive(Debug, Default)]
pub struct KeyEncoder {
    interned: FastMap<Box<[u8]>, u32>,
    next: AtomicU32,
    /// (plan address, next index) to remainder id; the stored Arc pins the address.
    remainders: FastMap<(usize, usize), (u32, Arc<FlightPlan>)>,
    /// (schedule address, head, last action) to schedule id.
    schedules: FastMap<ScheduleAt, (u32, Arc<[ErsEntry]>)>,
}

/// Varint byte sink; state numbers are small, so most fields take one byte.
struct Buf(Vec<u8>);

impl Buf {
    fn u(&mut self, v: impl Into<u64>) {
        let mut tmp = [0u8; 10];
        let n = v.into().encode_var(&mut tmp);
        self.0.extend_from_slice(&tmp[..n]);
    }
    fn i(&mut self, v: i64) {
        let mut tmp = [0u8; 10];
        let n = v.encode_var(&mut tmp);
        self.0.extend_from_slice(&tmp[..n]);
    }
    fn len(&mut self, n: usize) {
        self.u(n as u64);
    }
    fn cell(&mut self, c: Cell) {
        self.u(c.x);
        self.u(c.y);
    }
}

impl KeyEncoder {
    pub fn new() -> Self {
        Self::default()
    }

    fn intern(&self, bytes: Vec<u8>) -> u32 {
        if let Some(id) = self.interned.get(bytes.as_slice()) {
            return *id;
        }
        *self.interned.entry(bytes.into_boxed_slice()).or_insert_with(|| self.next.fetch_add(1, Ordering::Relaxed))
    }

    fn remainder_id(&self, tp: &TransP) -> u32 {
        let at = (Arc::as_ptr(&tp.plan) as usize, tp.next);
        if let Some(v) = self.remainders.get(&at) {
            return v.0;
        }
        let mut r = Buf(Vec::with_capacity(tp.remainder().len() * 3));
        for e in tp.remainder() {
            r.i(e.tick);
            r.cell(e.cell);
        }
        let id = self.intern(r.0);
        if self.remainders.len() < CACHE_CAP {
            self.remainders.insert(at, (id, tp.plan.clone()));
        }
        id
    }

    fn schedule_id(&self, env: &EnvActorState) -> u32 {
        let at = (env.ers.as_ptr() as usize, env.head, env.last_action);
        if let Some(v) = self.schedules.get(&at) {
            return v.0;
        }
        let mut r = Buf(Vec::new());
        for (t, kind, id, ch) in env.schedule() {
            r.i(t);
            r.u(kind as u8);
            r.u(id);
            r.cell(ch.from_cell());
            r.cell(ch.to_cell());
        }
        let id = self.intern(r.0);
        if self.schedules.len() < CACHE_CAP {
            self.schedules.insert(at, (id, env.ers.clone()));
        }
        id
    }

    fn transp(&self, b: &mut Buf, tp: &TransP) {
        b.u(tp.id);
        b.u(self.remainder_id(tp));
        b.i(tp.fuel_left);
        b.u(tp.stall);
    }

    pub fn key(&self, s: &ModelState) -> StateKey {
        let mut b = Buf(Vec::with_capacity(8 + 2 * s.scope.len() + 10 * s.occupied.len() + 4 * s.env.len() + 8 * s.buffer.len()));
        b.i(s.now);
        b.len(s.scope.len());
        for c in s.scope.iter() {
            b.u(c.rx);
            b.u(c.ry);
        }
        b.len(s.occupied.len());
        for (cell, tp) in &s.occupied {
            b.cell(*cell);
            self.transp(&mut b, tp);
        }
        b.len(s.env.len());
        for (cell, env) in s.env.iter() {
            b.cell(*cell);
            b.u(self.schedule_id(env));
        }
        b.len(s.buffer.len());
        for e in &s.buffer {
            b.i(e.tag - s.now);
            let (tag, cell) = match e.receiver {
                Receiver::Actor(c) => (0u8, c),
                Receiver::Env(c) => (1, c),
            };
            b.u(tag);
            b.cell(cell);
            b.u(e.object);
            match &e.payload {
                Some(tp) => {
                    b.u(1u8);
                    self.transp(&mut b, tp);
                }
                None => b.u(0u8),
            }
        }
        b.len(s.delivered.len());
        for &id in &s.delivered {
            b.u(id);
        }
        StateKey(b.0.into_boxed_slice())
    }
}

/// Key of a single state with a throwaway encoder.
pub fn state_key(s: &ModelState) -> StateKey {
    KeyEncoder::new().key(s)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "verdict", rename_all = "kebab-case")]
pub enum Verdict {
    Compatible,
    Deadlock { diagnosis: Diagnosis },
    Disaster { object: u32, tick: Tick },
    Timeout,
}

impl Verdict {
    pub fn name(&self) -> &'static str {
        match self {
            Verdict::Compatible => "compatible",
            Verdict::Deadlock { .. } => "deadlock",
            Verdict::Disaster { .. } => "disaster",
            Verdict::Timeout => "timeout",
        }
    }

    /// Process exit code for a run ending in this verdict.
    pub fn exit_code(&self) -> i32 {
        match self {
            Verdict::Compatible => 0,
            Verdict::Deadlock { .. } => 2,
            Verdict::Timeout => 3,
            Verdict::Disaster { .. } => 4,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ExplorationStats {
    pub total_states: u64,
    pub timed_states: u64,
    pub transitions: u64,
    pub final_states: u64,
    pub wall_millis: u64,
    pub peak_resident_bytes: u64,
}

impl ExplorationStats {
    pub fn add(&mut self, o: &ExplorationStats) {
        self.total_states += o.total_states;
        self.timed_states += o.timed_states;
        self.transitions += o.transitions;
        self.final_states += o.final_states;
        self.wall_millis += o.wall_millis;
        self.peak_resident_bytes = self.peak_resident_bytes.max(o.peak_resident_bytes);
    }
}

#[derive(Clone, Debug, Default)]
pub struct Limits {
    pub deadline: Option<Instant>,
    pub max_states: Option<u64>,
    /// Expand each tick's work list on the rayon pool.
    pub parallel: bool,
    pub check_invariants: bool,
    /// Number of aircraft that must always be accounted for (monolithic runs only).
    pub conservation: Option<usize>,
    /// Seeds were already counted by the exploration that produced them.
    pub carried_seeds: bool,
}

impl Limits {
    pub fn with_timeout(t: Duration) -> Self {
        Limits { deadline: Some(Instant::now() + t), ..Default::default() }
    }

    fn expired(&self) -> bool {
        self.deadline.is_some_and(|d| Instant::now() >= d)
    }
}

#[derive(Clone, Debug)]
pub struct Exploration {
    pub verdict: Verdict,
    pub stats: ExplorationStats,
    /// Every deadlock found at the stopping tick.
    pub diagnoses: Vec<Diagnosis>,
    /// Time states still waiting for the stopping tick or later.
    pub frontier: Vec<ModelState>,
    pub stop_tick: Option<Tick>,
    pub violations: Vec<String>,
}

/// Peak resident set size of this process in bytes, or 0 where unavailable.
pub fn peak_resident_bytes() -> u64 {
    std::fs::read_to_string("/proc/self/status")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("VmHWM:"))
                .and_then(|l| l.split_whitespace().nth(1))
                .and_then(|kb| kb.parse::<u64>().ok())
        })
        .map_or(0, |kb| kb * 1024)
}

/// Ask the kernel to restart peak RSS accounting. Best effort.
pub fn reset_peak_resident() {
    let _ = std::fs::write("/proc/self/clear_refs", "5");
}

/// Whether exploration may stop at this state, and how.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Termination {
    Final,
    Disaster(u32),
    Deadlock(Vec<Diagnosis>),
    Timeout,
}

/// Terminal conditions of a state, if any.
pub fn terminate(engine: &Engine, s: &ModelState, limits: &Limits) -> Option<Termination> {
    if limits.expired() {
        return Some(Termination::Timeout);
    }
    if let Some(id) = engine.disaster(s) {
        return Some(Termination::Disaster(id));
    }
    match engine.successors(s) {
        Successors::Timed if s.is_final() => Some(Termination::Final),
        Successors::Timed => {
            let d = engine.timed_deadlocks(s);
            (!d.is_empty()).then_some(Termination::Deadlock(d))
        }
        Successors::Stuck(d) => Some(Termination::Deadlock(d)),
        Successors::Next(_) => None,
    }
}

enum Expansion {
    Children(Vec<ModelState>, u64),
    Timed(ModelState),
    End(Termination),
}

fn expand(engine: &Engine, s: ModelState, seen: &SeenSet, keys: &KeyEncoder, limits: &Limits, violations: &mut Vec<String>) -> Expansion {
    if let Some(id) = engine.disaster(&s) {
        return Expansion::End(Termination::Disaster(id));
    }
    match engine.successors(&s) {
        Successors::Timed if s.is_final() => Expansion::End(Termination::Final),
        Successors::Timed => {
            let d = engine.timed_deadlocks(&s);
            if d.is_empty() {
                Expansion::Timed(s)
            } else {
                Expansion::End(Termination::Deadlock(d))
            }
        }
        Successors::Stuck(d) => Expansion::End(Termination::Deadlock(d)),
        Successors::Next(list) => {
            let n = list.len() as u64;
            let mut fresh = Vec::new();
            for (_, c) in list {
                if limits.check_invariants {
                    if c.now != s.now {
                        violations.push(format!("event moved time from {} to {}", s.now, c.now));
                    }
                    if let Err(v) = c.check_invariants(limits.conservation) {
                        violations.push(v);
                    }
                }
                if seen.insert(keys.key(&c)) {
                    fresh.push(c);
                }
            }
            Expansion::Children(fresh, n)
        }
    }
}

/// Exhaustive search from `s0`.
pub fn generate_state_space(engine: &Engine, s0: ModelState, limits: &Limits) -> Exploration {
    explore(engine, vec![s0], limits)
}

/// Exhaustive search from several time states, processed in tick order.
///
/// Stops at the first tick where some branch deadlocks or runs out of fuel.
pub fn explore(engine: &Engine, seeds: Vec<ModelState>, limits: &Limits) -> Exploration {
    let start = Instant::now();
    let keys = KeyEncoder::new();
    let mut stats = ExplorationStats::default();
    let mut violations = Vec::new();
    let mut frontier: BTreeMap<Tick, Vec<ModelState>> = BTreeMap::new();

    let seed_seen = SeenSet::default();
    for s in seeds {
        if !seed_seen.insert(keys.key(&s)) {
            continue;
        }
        if !limits.carried_seeds {
            stats.total_states += 1;
            stats.timed_states += 1;
        }
        if s.is_final() {
            stats.final_states += 1;
            continue;
        }
        match engine.next_tick(&s) {
            Some(t) => frontier.entry(t).or_default().push(s),
            None => stats.final_states += 1,
        }
    }
    drop(seed_seen);

    let finish = |verdict, stats: ExplorationStats, diagnoses, frontier: Vec<ModelState>, stop_tick, violations| {
        let mut stats = stats;
        stats.wall_millis = start.elapsed().as_millis() as u64;
        stats.peak_resident_bytes = peak_resident_bytes();
        Exploration { verdict, stats, diagnoses, frontier, stop_tick, violations }
    };
    let rest = |group: Vec<ModelState>, frontier: BTreeMap<Tick, Vec<ModelState>>| {
        group.into_iter().chain(frontier.into_values().flatten()).collect::<Vec<_>>()
    };

    while let Some((tick, group)) = frontier.pop_first() {
        if limits.expired() {
            return finish(Verdict::Timeout, stats, vec![], rest(group, frontier), Some(tick), violations);
        }
        let seen = SeenSet::default();
        let mut stack = Vec::new();
        for g in &group {
            let a = engine.advance_time(g).ok().flatten().expect("frontier states have a next tick");
            if limits.check_invariants && a.now <= g.now {
                violations.push(format!("time did not advance past {}", g.now));
            }
            if seen.insert(keys.key(&a)) {
                stats.total_states += 1;
                stack.push(a);
            }
        }

        let mut timed = Vec::new();
        let mut deadlocks = Vec::new();
        let mut disasters = Vec::new();
        while !stack.is_empty() {
            if limits.expired() || limits.max_states.is_some_and(|m| stats.total_states > m) {
                return finish(Verdict::Timeout, stats, vec![], rest(group, frontier), Some(tick), violations);
            }
            let results: Vec<(Expansion, Vec<String>)> = if limits.parallel && stack.len() > 1 {
                let batch = std::mem::take(&mut stack);
                batch
                    .into_par_iter()
                    .map(|s| {
                        let mut v = Vec::new();
                        (expand(engine, s, &seen, &keys, limits, &mut v), v)
                    })
                    .collect()
            } else {
                let s = stack.pop().expect("non-empty");
                let mut v = Vec::new();
                vec![(expand(engine, s, &seen, &keys, limits, &mut v), v)]
            };
            for (r, v) in results {
                violations.extend(v);
                match r {
                    Expansion::Children(c, n) => {
                        stats.transitions += n;
                        stats.total_states += c.len() as u64;
                        stack.extend(c);
                    }
                    Expansion::Timed(s) => timed.push(s),
                    Expansion::End(Termination::Final) => {
                        stats.timed_states += 1;
                        stats.final_states += 1;
                    }
                    Expansion::End(Termination::Deadlock(d)) => deadlocks.extend(d),
                    Expansion::End(Termination::Disaster(id)) => disasters.push(id),
                    Expansion::End(Termination::Timeout) => unreachable!("expansion does not check the clock"),
                }
            }
        }
        drop(seen);

        if !deadlocks.is_empty() || !disasters.is_empty() {
            deadlocks.sort();
            deadlocks.dedup();
            let env = deadlocks.iter().find(|d| d.is_environment());
            let verdict = match (env, deadlocks.first(), disasters.iter().min()) {
                (Some(&d), _, _) | (None, Some(&d), _) => Verdict::Deadlock { diagnosis: d },
                (None, None, Some(&object)) => Verdict::Disaster { object, tick },
                (None, None, None) => unreachable!(),
            };
            return finish(verdict, stats, deadlocks, rest(group, frontier), Some(tick), violations);
        }

        stats.timed_states += timed.len() as u64;
        timed.sort_by_cached_key(|s| keys.key(s));
        for s in timed {
            match engine.next_tick(&s) {
                Some(t) => frontier.entry(t).or_default().push(s),
                None => stats.final_states += 1,
            }
        }
    }
    finish(Verdict::Compatible, stats, vec![], vec![], None, violations)
}

/// Depth-first search of the states reachable from `s` without advancing time.
///
/// Returns the time states reached and every terminal condition met on the way.
pub fn depth_fs(engine: &Engine, s: ModelState) -> (Vec<ModelState>, Vec<Termination>) {
    let keys = KeyEncoder::new();
    let seen = SeenSet::default();
    seen.insert(keys.key(&s));
    let mut stack = vec![s];
    let (mut timed, mut ends) = (Vec::new(), Vec::new());
    let limits = Limits::default();
    let mut v = Vec::new();
    while let Some(s) = stack.pop() {
        match expand(engine, s, &seen, &keys, &limits, &mut v) {
            Expansion::Children(c, _) => stack.extend(c),
            Expansion::Timed(s) => timed.push(s),
            Expansion::End(t) => ends.push(t),
        }
    }
    (timed, ends)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plan::FlightPlan;
    use crate::topology::{Cell, ComponentId, Topology};
    use std::collections::BTreeSet;

    fn c(x: u32, y: u32) -> Cell {
        Cell::new(x, y)
    }

    fn all(topo: &Topology) -> BTreeSet<ComponentId> {
        topo.components()
    }

    #[test]
    fn keys_distinguish_and_agree() {
        let topo = Topology::mesh(3, 3).unwrap();
        let p = FlightPlan::along(0, &[c(0, 1), c(1, 1), c(2, 1)], 1, 1, 10);
        let e = Engine::new(topo.clone(), &[p], None, 1);
        let s0 = e.initial_state(0, all(&topo)).unwrap();
        let enc = KeyEncoder::new();
        assert_eq!(enc.key(&s0), enc.key(&s0.clone()));
        let mut later = s0.clone();
        later.now = 1;
        assert_ne!(enc.key(&s0), enc.key(&later));
        assert_eq!(state_key(&s0), state_key(&s0));
    }

    #[test]
    fn single_aircraft_is_linear() {
        let topo = Topology::mesh(3, 3).unwrap();
        let p = FlightPlan::along(0, &[c(0, 1), c(1, 1), c(2, 1)], 1, 1, 10);
        let e = Engine::new(topo.clone(), &[p], None, 1);
        let s0 = e.initial_state(0, all(&topo)).unwrap();
        let x = generate_state_space(&e, s0, &Limits::default());
        assert_eq!(x.verdict, Verdict::Compatible);
        // s0, then per tick 1..=4 one advanced state and one post-event state
        assert_eq!(x.stats.total_states, 9);
        assert_eq!(x.stats.timed_states, 5);
        assert_eq!(x.stats.final_states, 1);
    }

    #[test]
    fn empty_plan_set_is_trivially_compatible() {
        let topo = Topology::mesh(3, 3).unwrap();
        let e = Engine::new(topo.clone(), &[], None, 1);
        let s0 = e.initial_state(0, all(&topo)).unwrap();
        let x = generate_state_space(&e, s0, &Limits::default());
        assert_eq!(x.verdict, Verdict::Compatible);
        assert_eq!(x.stats.total_states, 1);
    }

    #[test]
    fn out_of_fuel_is_a_disaster() {
        let topo = Topology::mesh(3, 3).unwrap();
        let p = FlightPlan::along(0, &[c(0, 1), c(1, 1), c(2, 1)], 1, 1, 2);
        let e = Engine::new(topo.clone(), &[p], None, 1);
        let s0 = e.initial_state(0, all(&topo)).unwrap();
        let x = generate_state_space(&e, s0, &Limits::default());
        assert_eq!(x.verdict, Verdict::Disaster { object: 0, tick: 2 });
    }

    #[test]
    fn max_states_times_out() {
        let topo = Topology::mesh(3, 3).unwrap();
        let p = FlightPlan::along(0, &[c(0, 1), c(1, 1), c(2, 1)], 1, 1, 10);
        let e = Engine::new(topo.clone(), &[p], None, 1);
        let s0 = e.initial_state(0, all(&topo)).unwrap();
        let lim = Limits { max_states: Some(2), ..Default::default() };
        let x = generate_state_space(&e, s0, &lim);
        assert_eq!(x.verdict, Verdict::Timeout);
        assert!(!x.frontier.is_empty());
    }

    #[test]
    fn depth_fs_stays_within_a_tick() {
        let topo = Topology::mesh(3, 3).unwrap();
        let a = FlightPlan::along(0, &[c(0, 0), c(1, 0), c(2, 0)], 1, 1, 10);
        let b = FlightPlan::along(1, &[c(0, 2), c(1, 2), c(2, 2)], 1, 1, 10);
        let e = Engine::new(topo.clone(), &[a, b], None, 1);
        let s0 = e.initial_state(0, all(&topo)).unwrap();
        let s1 = e.advance_time(&s0).unwrap().unwrap();
        let (timed, ends) = depth_fs(&e, s1);
        assert!(ends.is_empty());
        assert_eq!(timed.len(), 1);
        assert_eq!(timed[0].now, 1);
        assert_eq!(timed[0].occupied.len(), 2);
    }
}
