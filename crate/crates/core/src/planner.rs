//! Initial flight-plan generation (ALG1) and on-line rerouting (ALG2).

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::plan::{FlightPlan, PlanEntry};
use crate::topology::{Cell, Tick, Topology};

#[derive(Debug, Error, PartialEq)]
pub enum PlannerError {
    #[error("lambda must be positive, got {0}")]
    BadLambda(f64),
    #[error("flight duration must be positive, got {0}")]
    BadFd(Tick),
    #[error("placed {placed} of {wanted} plans within the retry budget of {budget} attempts")]
    BudgetExhausted { placed: usize, wanted: usize, budget: usize },
}

/// A generated set of initial plans.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanBatch {
    pub plans: Vec<FlightPlan>,
    pub lambda: f64,
    pub seed: u64,
    pub n: u32,
    pub fd: Tick,
}

/// Literal conflict predicate: some plan arrives at `cell` at `t`, or leaves it at `t + fd`.
pub fn has_time_conflict(cell: Cell, t: Tick, plans: &[FlightPlan], fd: Tick) -> bool {
    plans.iter().any(|p| {
        p.entries.iter().enumerate().any(|(k, e)| e.cell == cell && (e.tick == t || p.leave_tick(k, fd) == t + fd))
    })
}

/// Hashed form of the conflict predicate, updated as plans are accepted.
#[derive(Clone, Debug, Default)]
pub struct PlanIndex {
    fd: Tick,
    arrivals: HashSet<(Cell, Tick)>,
    departures: HashSet<(Cell, Tick)>,
    moves: HashSet<(Cell, Cell, Tick)>,
}

impl PlanIndex {
    pub fn new(fd: Tick) -> Self {
        PlanIndex { fd, ..Default::default() }
    }

    pub fn from_plans(plans: &[FlightPlan], fd: Tick) -> Self {
        let mut idx = PlanIndex::new(fd);
        for p in plans {
            idx.insert(p);
        }
        idx
    }

    pub fn insert(&mut self, plan: &FlightPlan) {
        for (k, e) in plan.entries.iter().enumerate() {
            self.arrivals.insert((e.cell, e.tick));
            self.departures.insert((e.cell, plan.leave_tick(k, self.fd)));
            if let Some(next) = plan.entries.get(k + 1) {
                self.moves.insert((e.cell, next.cell, next.tick));
            }
        }
    }

    pub fn has_time_conflict(&self, cell: Cell, t: Tick) -> bool {
        self.arrivals.contains(&(cell, t)) || self.departures.contains(&(cell, t + self.fd))
    }

    /// Some plan moves `to -> from` at `t`, so moving `from -> to` at `t` would be a head-on swap.
    pub fn has_swap(&self, from: Cell, to: Cell, t: Tick) -> bool {
        self.moves.contains(&(to, from, t))
    }
}

/// Recursive XY route with time-conflict checks and backtracking.
///
/// X only ever increases; Y moves toward the destination. Returns an empty
/// route when no conflict-free path exists.
pub fn generate_route(src: Cell, arrival: Tick, dst: Cell, index: &PlanIndex, topo: &Topology) -> Vec<Cell> {
    let mut route = Vec::new();
    let mut failed = HashSet::new();
    if alg4(src, arrival, dst, index, topo, None, &mut route, &mut failed) {
        route
    } else {
        Vec::new()
    }
}

#[allow(clippy::too_many_arguments)]
fn alg4(
    at: Cell,
    t: Tick,
    dst: Cell,
    index: &PlanIndex,
    topo: &Topology,
    prev: Option<Cell>,
    route: &mut Vec<Cell>,
    failed: &mut HashSet<(Cell, Option<Cell>)>,
) -> bool {
    if !topo.contains(at) || failed.contains(&(at, prev)) {
        return false;
    }
    if index.has_time_conflict(at, t) || prev.is_some_and(|p| index.has_swap(p, at, t)) {
        return false;
    }
    route.push(at);
    if at == dst {
        return true;
    }
    let inc_x = at.x < dst.x;
    let inc_y = (dst.y as i64 - at.y as i64).signum();
    let next_t = t + index.fd;
    let y_step = || (inc_y != 0).then(|| Cell::new(at.x, (at.y as i64 + inc_y) as u32));

    let ok = if inc_x {
        alg4(Cell::new(at.x + 1, at.y), next_t, dst, index, topo, Some(at), route, failed)
            || y_step().is_some_and(|c| alg4(c, next_t, dst, index, topo, Some(at), route, failed))
    } else {
        y_step().is_some_and(|c| alg4(c, next_t, dst, index, topo, Some(at), route, failed))
    };
    if !ok {
        route.pop();
        failed.insert((at, prev));
    }
    ok
}

fn exp_ticks(rng: &mut ChaCha8Rng, lambda: f64) -> Tick {
    // inverse CDF; 1-u lies in (0, 1]
    let u: f64 = rng.gen();
    let x = -(1.0 - u).ln() / lambda;
    x.ceil().max(1.0) as Tick
}

/// ALG1: `m` pairwise conflict-free plans with exponential departures per source.
pub fn generate_flight_plans(
    m: usize,
    lambda: f64,
    fd: Tick,
    topo: &Topology,
    seed: u64,
    fuel: i64,
) -> Result<PlanBatch, PlannerError> {
    if lambda.is_nan() || lambda <= 0.0 || !lambda.is_finite() {
        return Err(PlannerError::BadLambda(lambda));
    }
    if fd <= 0 {
        return Err(PlannerError::BadFd(fd));
    }
    let mut choice = ChaCha8Rng::seed_from_u64(seed);
    let mut streams: Vec<ChaCha8Rng> = (0..topo.sources.len())
        .map(|i| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(i as u64 + 1);
            r
        })
        .collect();
    let mut last_departure: Vec<Option<Tick>> = vec![None; topo.sources.len()];
    let mut index = PlanIndex::new(fd);
    let mut plans = Vec::with_capacity(m);
    let budget = 100 * m;
    let mut attempts = 0;
    while plans.len() < m {
        if attempts >= budget {
            return Err(PlannerError::BudgetExhausted { placed: plans.len(), wanted: m, budget });
        }
        attempts += 1;
        let si = choice.gen_range(0..topo.sources.len());
        let di = choice.gen_range(0..topo.destinations.len());
        let (src, dst) = (topo.sources[si], topo.destinations[di]);
        let gap = exp_ticks(&mut streams[si], lambda).max(fd);
        let dep = last_departure[si].unwrap_or(0) + gap;
        let route = generate_route(src, dep, dst, &index, topo);
        if route.is_empty() {
            continue;
        }
        let plan = FlightPlan::along(plans.len() as u32, &route, dep, fd, fuel);
        index.insert(&plan);
        last_departure[si] = Some(dep);
        plans.push(plan);
    }
    Ok(PlanBatch { plans, lambda, seed, n: topo.width, fd })
}

/// Check the batch invariants: no pairwise time conflicts, no head-on swaps,
/// and per-source departure gaps of at least `fd`.
pub fn validate_batch(plans: &[FlightPlan], fd: Tick) -> Result<(), String> {
    let mut arrivals: HashMap<(Cell, Tick), Vec<u32>> = HashMap::new();
    let mut departures: HashMap<(Cell, Tick), Vec<u32>> = HashMap::new();
    for p in plans {
        for (k, e) in p.entries.iter().enumerate() {
            arrivals.entry((e.cell, e.tick)).or_default().push(p.id);
            departures.entry((e.cell, p.leave_tick(k, fd))).or_default().push(p.id);
        }
    }
    for p in plans {
        for e in &p.entries {
            let clash = |ids: Option<&Vec<u32>>| ids.is_some_and(|v| v.iter().any(|&i| i != p.id));
            if clash(arrivals.get(&(e.cell, e.tick))) || clash(departures.get(&(e.cell, e.tick + fd))) {
                return Err(format!("plan {} conflicts at {} tick {}", p.id, e.cell, e.tick));
            }
        }
    }
    let mut by_source: BTreeMap<Cell, Vec<Tick>> = BTreeMap::new();
    for p in plans {
        by_source.entry(p.source()).or_default().push(p.departure());
    }
    for (src, mut ticks) in by_source {
        ticks.sort_unstable();
        if let Some(w) = ticks.windows(2).find(|w| w[1] - w[0] < fd) {
            return Err(format!("source {src}: departures {} and {} closer than {fd}", w[0], w[1]));
        }
    }
    Ok(())
}

/// What the rerouting policy can observe about the network at the blocked tick.
pub trait NetworkView {
    fn stormy(&self, cell: Cell) -> bool;
    fn occupied(&self, cell: Cell) -> bool;
    fn available(&self, cell: Cell) -> bool {
        !self.stormy(cell) && !self.occupied(cell)
    }
}

/// Storm-avoiding XY route (no time checks). X is traversed first in either direction.
pub fn xy_route(src: Cell, dst: Cell, topo: &Topology, blocked: &dyn Fn(Cell) -> bool) -> Vec<Cell> {
    let mut route = Vec::new();
    let mut failed = HashSet::new();
    if xy_step(src, dst, topo, blocked, &mut route, &mut failed) {
        route
    } else {
        Vec::new()
    }
}

fn xy_step(
    at: Cell,
    dst: Cell,
    topo: &Topology,
    blocked: &dyn Fn(Cell) -> bool,
    route: &mut Vec<Cell>,
    failed: &mut HashSet<Cell>,
) -> bool {
    if !topo.contains(at) || failed.contains(&at) || blocked(at) {
        return false;
    }
    route.push(at);
    if at == dst {
        return true;
    }
    let dx = (dst.x as i64 - at.x as i64).signum();
    let dy = (dst.y as i64 - at.y as i64).signum();
    let shift = |ddx: i64, ddy: i64| Cell::new((at.x as i64 + ddx) as u32, (at.y as i64 + ddy) as u32);
    let ok = if dx != 0 {
        xy_step(shift(dx, 0), dst, topo, blocked, route, failed)
            || (dy != 0 && xy_step(shift(0, dy), dst, topo, blocked, route, failed))
    } else {
        dy != 0 && xy_step(shift(0, dy), dst, topo, blocked, route, failed)
    };
    if !ok {
        route.pop();
        failed.insert(at);
    }
    ok
}

/// Which branch of ALG2 produced the new route.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RerouteStage {
    /// Same-length detour through an available neighbor, no delay.
    Detour,
    /// Route to the destination through a non-stormy neighbor, after waiting one tick.
    Fallback,
    /// Wait one tick and keep the current route.
    Wait,
}

impl RerouteStage {
    pub fn delays(self) -> bool {
        !matches!(self, RerouteStage::Detour)
    }
}

/// ALG2 on cells only: the new remaining route (after `current`) and the stage that chose it.
///
/// `initial` is the remaining route whose first cell is unavailable.
pub fn reroute_route(current: Cell, initial: &[Cell], topo: &Topology, view: &dyn NetworkView) -> (Vec<Cell>, RerouteStage) {
    assert!(!initial.is_empty(), "reroute needs a blocked next cell");
    let blocked_next = initial[0];
    let stormy = |c: Cell| view.stormy(c);

    for t in topo.neighbors(current).filter(|&c| c != blocked_next && view.available(c)) {
        for i in 1..initial.len() {
            let route = xy_route(t, initial[i], topo, &stormy);
            if !route.is_empty() && route.len() == i + 1 {
                let mut out = route;
                out.extend_from_slice(&initial[i + 1..]);
                return (out, RerouteStage::Detour);
            }
        }
    }
    let dest = initial[initial.len() - 1];
    for t in topo.neighbors(current).filter(|&c| c != blocked_next && !view.stormy(c)) {
        let route = xy_route(t, dest, topo, &stormy);
        if !route.is_empty() {
            return (route, RerouteStage::Fallback);
        }
    }
    (initial.to_vec(), RerouteStage::Wait)
}

/// Keep the traveled prefix of `plan` up to entry `current`, then follow `route`
/// one cell per `fd`, leaving the current cell at `now` (or `now + 1` with a delay).
pub fn create_flight_plan(plan: &FlightPlan, current: usize, now: Tick, route: &[Cell], delay: bool, fd: Tick) -> FlightPlan {
    let mut entries: Vec<PlanEntry> = plan.entries[..=current].to_vec();
    let start = now + Tick::from(delay);
    entries.extend(route.iter().enumerate().map(|(k, &c)| PlanEntry::new(start + k as Tick * fd, c)));
    FlightPlan { id: plan.id, entries, fuel: plan.fuel }
}

/// ALG2 on a plan: the aircraft sits at `plan.entries[current]` and cannot enter the next cell at `now`.
pub fn reroute(
    plan: &FlightPlan,
    current: usize,
    now: Tick,
    topo: &Topology,
    view: &dyn NetworkView,
    fd: Tick,
) -> (FlightPlan, RerouteStage) {
    let here = plan.entries[current].cell;
    let initial: Vec<Cell> = plan.entries[current + 1..].iter().map(|e| e.cell).collect();
    let (route, stage) = reroute_route(here, &initial, topo, view);
    (create_flight_plan(plan, current, now, &route, stage.delays(), fd), stage)
}
