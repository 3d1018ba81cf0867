use super::*;
use crate::plan::PlanEntry;

fn c(x: u32, y: u32) -> Cell {
    Cell::new(x, y)
}

fn west() -> BTreeSet<ComponentId> {
    [ComponentId { rx: 0, ry: 0 }].into()
}

fn both() -> BTreeSet<ComponentId> {
    [ComponentId { rx: 0, ry: 0 }, ComponentId { rx: 1, ry: 0 }].into()
}

fn grid() -> Topology {
    Topology::grid(6, 3, 3).unwrap()
}

/// Walk the canonical first branch until a time state, returning it.
fn settle(e: &Engine, mut s: ModelState) -> ModelState {
    loop {
        match e.successors(&s) {
            Successors::Next(mut v) => s = v.remove(0).1,
            Successors::Timed => return s,
            Successors::Stuck(d) => panic!("stuck: {d:?}"),
        }
    }
}

fn tick(e: &Engine, s: &ModelState) -> ModelState {
    settle(e, e.advance_time(s).unwrap().unwrap())
}

#[test]
fn initial_state_follows_plans() {
    let a = FlightPlan::along(0, &[c(0, 1), c(1, 1), c(2, 1), c(3, 1)], 0, 1, 20);
    let b = FlightPlan::along(1, &[c(1, 0), c(2, 0)], 3, 1, 20);
    let done = FlightPlan::along(2, &[c(0, 2), c(1, 2)], -5, 1, 20);
    let e = Engine::new(grid(), &[a, b, done], None, 1);
    let s = e.initial_state(0, west()).unwrap();
    assert_eq!(s.occupied.len(), 1);
    let tp = &s.occupied[&c(0, 1)];
    assert_eq!(tp.id, 0);
    assert_eq!(tp.remainder().len(), 3);
    assert_eq!(tp.fuel_left, 19);
    assert_eq!(s.pending_departures().count(), 1);
    assert!(s.delivered.contains(&2));
    assert!(s.is_timed());
    assert_eq!(e.next_tick(&s), Some(1));
}

#[test]
fn env_schedule_from_crossings() {
    // east-bound crossing at tick 3 and a west-bound one at tick 6
    let a = FlightPlan::along(0, &[c(1, 1), c(2, 1), c(3, 1)], 1, 1, 20);
    let b = FlightPlan::along(1, &[c(4, 0), c(3, 0), c(2, 0)], 4, 1, 20);
    let e = Engine::new(grid(), &[a, b], None, 1);
    let ers = e.derive_ers(&west(), 0);
    assert_eq!(ers.len(), 3);
    assert!(ers.values().all(|x| x.cell.x == 3));
    let recv = &ers[&c(3, 1)];
    assert_eq!(recv.schedule(), vec![(3, ErsKind::Receive, 0, Channel::between(c(2, 1), c(3, 1)).unwrap())]);
    assert_eq!(recv.ers[0].delay, 3);
    let send = &ers[&c(3, 0)];
    assert_eq!(send.next_action_tick(), Some(6));
    assert_eq!(send.ers[0].kind, ErsKind::Send);
    assert!(ers[&c(3, 2)].is_exhausted());
    // after the crossing tick nothing is expected
    assert!(e.derive_ers(&west(), 3).values().all(|x| x.is_exhausted() || x.cell == c(3, 0)));
}

#[test]
fn compositional_run_matches_schedule() {
    let a = FlightPlan::along(0, &[c(1, 1), c(2, 1), c(3, 1), c(4, 1)], 1, 1, 20);
    let b = FlightPlan::along(1, &[c(4, 0), c(3, 0), c(2, 0)], 2, 1, 20);
    let e = Engine::new(grid(), &[a, b], None, 1);
    let mut s = e.initial_state(0, west()).unwrap();
    while !s.is_final() {
        assert!(e.timed_deadlocks(&s).is_empty(), "{:?}", e.timed_deadlocks(&s));
        s = tick(&e, &s);
    }
    assert_eq!(s.delivered, [1].into());
    assert!(s.env.values().all(|x| x.is_exhausted()));
}

#[test]
fn race_for_a_cell_branches() {
    let a = FlightPlan::along(0, &[c(0, 1), c(1, 1)], 1, 1, 20);
    let b = FlightPlan::along(1, &[c(1, 0), c(1, 1)], 1, 1, 20);
    let e = Engine::new(grid(), &[a, b], None, 1);
    let s = tick(&e, &e.initial_state(0, west()).unwrap());
    let s2 = e.advance_time(&s).unwrap().unwrap();
    let Successors::Next(v) = e.successors(&s2) else { panic!() };
    assert_eq!(v.len(), 2);
    for (step, n) in &v {
        let Step::Move { id, to, .. } = step else { panic!() };
        assert_eq!(*to, Place::Cell(c(1, 1)));
        assert_eq!(n.occupied[&c(1, 1)].id, *id);
        // the loser is now blocked and must reroute or wait
        let Successors::Next(w) = e.successors(n) else { panic!() };
        assert!(w.iter().all(|(s, _)| matches!(s, Step::Reroute { .. })));
    }
}

#[test]
fn storm_triggers_detour() {
    let topo = Topology::mesh(3, 3).unwrap();
    let p = FlightPlan::along(0, &[c(0, 1), c(1, 1), c(2, 1), c(2, 2)], 0, 1, 20);
    let storm = StormEvent { cell: c(1, 1), start_tick: 1, end_tick: None };
    let e = Engine::new(topo.clone(), &[p], Some(storm), 1);
    let s0 = e.initial_state(0, topo.components()).unwrap();
    let s1 = e.advance_time(&s0).unwrap().unwrap();
    let Successors::Next(v) = e.successors(&s1) else { panic!() };
    assert_eq!(v.len(), 1);
    let (Step::Reroute { stage, plan, .. }, n) = &v[0] else { panic!() };
    assert_eq!(*stage, RerouteStage::Detour);
    assert_eq!(plan.entries[1], PlanEntry::new(1, c(0, 2)));
    let n = settle(&e, n.clone());
    assert_eq!(n.position_of(0), Some(c(0, 2)));
}

#[test]
fn scripted_policy_wins_when_available() {
    let topo = Topology::mesh(3, 3).unwrap();
    let p = FlightPlan::along(0, &[c(0, 1), c(1, 1), c(2, 1), c(2, 2)], 0, 1, 20);
    let storm = StormEvent { cell: c(1, 1), start_tick: 1, end_tick: None };
    let script: BTreeMap<(u32, Tick), Vec<Cell>> = [((0, 1), vec![c(0, 2), c(1, 2), c(2, 2)])].into();
    let e = Engine::new(topo.clone(), &[p], Some(storm), 1).with_policy(Policy::Scripted(script));
    let s1 = e.advance_time(&e.initial_state(0, topo.components()).unwrap()).unwrap().unwrap();
    let Successors::Next(v) = e.successors(&s1) else { panic!() };
    let (Step::Reroute { plan, .. }, _) = &v[0] else { panic!() };
    assert_eq!(plan.cells(), vec![c(0, 1), c(0, 2), c(1, 2), c(2, 2)]);
}

#[test]
fn late_exit_is_missed_receive() {
    // the aircraft waits behind a storm so it cannot reach the border on time
    let a = FlightPlan::along(0, &[c(1, 1), c(2, 1), c(3, 1)], 0, 1, 20);
    let storm = StormEvent { cell: c(2, 1), start_tick: 1, end_tick: Some(3) };
    let e = Engine::new(grid(), &[a], Some(storm), 1);
    let mut s = e.initial_state(0, west()).unwrap();
    let mut found = None;
    for _ in 0..4 {
        s = tick(&e, &s);
        if let Some(d) = e.timed_deadlocks(&s).first() {
            found = Some(*d);
            break;
        }
    }
    let d = found.expect("deadlock");
    assert_eq!(d.kind, DiagnosisKind::MissedReceive);
    assert_eq!((d.cell, d.tick, d.object), (c(3, 1), 2, Some(0)));
    assert_eq!(d.component, ComponentId { rx: 1, ry: 0 });
}

#[test]
fn unexpected_arrival_is_mismatch() {
    let a = FlightPlan::along(0, &[c(2, 1), c(3, 1)], 0, 1, 20);
    let e = Engine::new(grid(), &[a], None, 1);
    let mut s = e.initial_state(0, west()).unwrap();
    // pretend the env expects nothing at (3,1)
    let env = s.env_mut().get_mut(&c(3, 1)).unwrap();
    env.head = env.ers.len();
    let s1 = e.advance_time(&s).unwrap().unwrap();
    let Successors::Stuck(d) = e.successors(&s1) else { panic!() };
    assert_eq!(d[0].kind, DiagnosisKind::Mismatch);
    assert_eq!(e.is_deadlock(&s1), Some(d[0]));
}

#[test]
fn blocked_env_send_is_missed_send() {
    // an eastern object must enter (2,0) while a western one still sits there
    let stay = FlightPlan::new(0, vec![PlanEntry::new(0, c(2, 0)), PlanEntry::new(5, c(2, 1))], 20);
    let incoming = FlightPlan::along(1, &[c(3, 0), c(2, 0)], 1, 1, 20);
    let e = Engine::new(grid(), &[stay, incoming], None, 1);
    let s0 = e.initial_state(0, west()).unwrap();
    assert_eq!(s0.buffer.iter().filter(|x| matches!(x.receiver, Receiver::Env(_))).count(), 1);
    let s2 = e.advance_time(&s0).unwrap().unwrap();
    assert_eq!(s2.now, 2);
    let Successors::Stuck(d) = e.successors(&s2) else { panic!() };
    assert_eq!(d, vec![Diagnosis { tick: 2, kind: DiagnosisKind::MissedSend, cell: c(3, 0), component: ComponentId { rx: 1, ry: 0 }, object: Some(1) }]);
}

#[test]
fn occupied_source_holds_departure() {
    let a = FlightPlan::new(0, vec![PlanEntry::new(0, c(0, 1)), PlanEntry::new(3, c(1, 1))], 20);
    let b = FlightPlan::along(1, &[c(0, 1), c(0, 2)], 1, 1, 20);
    let e = Engine::new(grid(), &[a, b], None, 1);
    let s1 = e.advance_time(&e.initial_state(0, west()).unwrap()).unwrap().unwrap();
    let Successors::Next(v) = e.successors(&s1) else { panic!() };
    assert!(matches!(v[0].0, Step::Hold { id: 1, .. }));
    let held = v[0].1.pending_departures().next().unwrap();
    assert_eq!(held.plan.departure(), 2);
    assert_eq!(held.stall, 1);
}

#[test]
fn stall_limit_reports_blockage() {
    let a = FlightPlan::along(0, &[c(1, 1), c(2, 1)], 0, 1, 50);
    let storm = StormEvent { cell: c(2, 1), start_tick: 0, end_tick: None };
    let topo = Topology::mesh(3, 3).unwrap();
    // every other neighbor is taken by a parked aircraft
    let mut plans = vec![a];
    for (i, &x) in [c(1, 0), c(0, 1), c(1, 2)].iter().enumerate() {
        plans.push(FlightPlan::new(i as u32 + 1, vec![PlanEntry::new(0, x)], 50));
    }
    let e = Engine::new(topo.clone(), &plans, Some(storm), 30).with_stall_limit(2);
    let mut s = e.initial_state(0, topo.components()).unwrap();
    let mut blockage = None;
    for _ in 0..6 {
        s = tick(&e, &s);
        if let Some(d) = e.timed_deadlocks(&s).into_iter().find(|d| d.kind == DiagnosisKind::Blockage) {
            blockage = Some(d);
            break;
        }
    }
    let d = blockage.expect("blockage");
    assert_eq!((d.cell, d.object), (c(1, 1), Some(0)));
    assert!(!d.is_environment());
}

#[test]
fn advance_refuses_pending_events() {
    let a = FlightPlan::along(0, &[c(0, 1), c(1, 1)], 1, 1, 20);
    let e = Engine::new(grid(), &[a], None, 1);
    let s1 = e.advance_time(&e.initial_state(0, west()).unwrap()).unwrap().unwrap();
    assert_eq!(e.advance_time(&s1), Err(EngineError::EventsPending(1)));
}

#[test]
fn absorb_adds_neighbor_traffic() {
    let a = FlightPlan::along(0, &[c(1, 1), c(2, 1), c(3, 1)], 0, 1, 20);
    let b = FlightPlan::along(1, &[c(4, 2), c(4, 1)], 0, 1, 20);
    let e = Engine::new(grid(), &[a, b], None, 1);
    let s = e.initial_state(0, west()).unwrap();
    assert_eq!(s.env.len(), 3);
    let s2 = e.absorb(&s, &both()).unwrap();
    assert_eq!(*s2.scope, both());
    assert!(s2.env.is_empty());
    assert_eq!(s2.occupied.len(), 2);
    assert!(s2.buffer.iter().all(|x| matches!(x.receiver, Receiver::Actor(_))));
    assert_eq!(s2.tracked_ids(), [0, 1].into());
    assert!(s2.check_invariants(Some(2)).is_ok());
}

#[test]
fn collision_in_plans_is_rejected() {
    let a = FlightPlan::along(0, &[c(1, 1)], 0, 2, 20);
    let b = FlightPlan::along(1, &[c(1, 1)], 0, 2, 20);
    let e = Engine::new(grid(), &[a, b], None, 2);
    assert!(matches!(e.initial_state(1, west()), Err(EngineError::Collision { .. })));
}
