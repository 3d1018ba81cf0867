//! Flight plans: timed routes through the mesh.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::{Cell, Tick, Topology};

/// Arrival of an aircraft at a sub-track.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PlanEntry {
    pub tick: Tick,
    pub cell: Cell,
}

impl PlanEntry {
    pub const fn new(tick: Tick, cell: Cell) -> Self {
        PlanEntry { tick, cell }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PlanError {
    #[error("plan {0} has no entries")]
    Empty(u32),
    #[error("plan {id}: ticks not strictly increasing at entry {index}")]
    NonMonotone { id: u32, index: usize },
    #[error("plan {id}: cells {from} and {to} are not adjacent")]
    Gap { id: u32, from: Cell, to: Cell },
    #[error("plan {id}: cell {cell} is off the mesh")]
    OffGrid { id: u32, cell: Cell },
    #[error("plan {0}: fuel must be positive")]
    NoFuel(u32),
    #[error("duplicate aircraft id {0}")]
    DuplicateId(u32),
}

/// One aircraft's schedule. The aircraft arrives at `entries[k].cell` at
/// `entries[k].tick` and leaves its last cell one flight duration after arriving.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FlightPlan {
    pub id: u32,
    pub entries: Vec<PlanEntry>,
    pub fuel: i64,
}

impl FlightPlan {
    pub fn new(id: u32, entries: Vec<PlanEntry>, fuel: i64) -> Self {
        FlightPlan { id, entries, fuel }
    }

    /// Plan along `cells`, one cell every `fd` ticks starting at `start`.
    pub fn along(id: u32, cells: &[Cell], start: Tick, fd: Tick, fuel: i64) -> Self {
        let entries = cells.iter().enumerate().map(|(k, &c)| PlanEntry::new(start + k as Tick * fd, c)).collect();
        FlightPlan { id, entries, fuel }
    }

    pub fn departure(&self) -> Tick {
        self.entries[0].tick
    }

    pub fn source(&self) -> Cell {
        self.entries[0].cell
    }

    pub fn destination(&self) -> Cell {
        self.entries[self.entries.len() - 1].cell
    }

    /// Tick at which the aircraft leaves the cell of entry `k`.
    pub fn leave_tick(&self, k: usize, fd: Tick) -> Tick {
        match self.entries.get(k + 1) {
            Some(e) => e.tick,
            None => self.entries[k].tick + fd,
        }
    }

    pub fn exit_tick(&self, fd: Tick) -> Tick {
        self.leave_tick(self.entries.len() - 1, fd)
    }

    /// Index of the entry whose cell the aircraft occupies at `t`, if airborne.
    pub fn position_index(&self, t: Tick, fd: Tick) -> Option<usize> {
        if self.entries.is_empty() || t < self.departure() || t >= self.exit_tick(fd) {
            return None;
        }
        // last entry with tick <= t
        Some(self.entries.partition_point(|e| e.tick <= t) - 1)
    }

    pub fn cells(&self) -> Vec<Cell> {
        self.entries.iter().map(|e| e.cell).collect()
    }

    pub fn validate(&self, topo: &Topology) -> Result<(), PlanError> {
        if self.entries.is_empty() {
            return Err(PlanError::Empty(self.id));
        }
        if self.fuel <= 0 {
            return Err(PlanError::NoFuel(self.id));
        }
        for e in &self.entries {
            if !topo.contains(e.cell) {
                return Err(PlanError::OffGrid { id: self.id, cell: e.cell });
            }
        }
        for (i, w) in self.entries.windows(2).enumerate() {
            if w[1].tick <= w[0].tick {
                return Err(PlanError::NonMonotone { id: self.id, index: i + 1 });
            }
            if !w[0].cell.is_adjacent(w[1].cell) {
                return Err(PlanError::Gap { id: self.id, from: w[0].cell, to: w[1].cell });
            }
        }
        Ok(())
    }
}

/// Validate every plan and the uniqueness of ids.
pub fn validate_all(plans: &[FlightPlan], topo: &Topology) -> Result<(), PlanError> {
    let mut seen = std::collections::HashSet::new();
    for p in plans {
        if !seen.insert(p.id) {
            return Err(PlanError::DuplicateId(p.id));
        }
        p.validate(topo)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(x: u32, y: u32) -> Cell {
        Cell::new(x, y)
    }

    #[test]
    fn positions_and_exit() {
        let p = FlightPlan::along(1, &[c(0, 0), c(1, 0), c(2, 0)], 4, 1, 10);
        assert_eq!(p.exit_tick(1), 7);
        assert_eq!(p.position_index(3, 1), None);
        assert_eq!(p.position_index(4, 1), Some(0));
        assert_eq!(p.position_index(6, 1), Some(2));
        assert_eq!(p.position_index(7, 1), None);
        assert_eq!(p.leave_tick(0, 1), 5);
    }

    #[test]
    fn validation_catches_gaps() {
        let topo = Topology::mesh(3, 3).unwrap();
        let ok = FlightPlan::along(1, &[c(0, 0), c(1, 0)], 0, 1, 5);
        assert!(ok.validate(&topo).is_ok());
        let gap = FlightPlan::along(2, &[c(0, 0), c(2, 0)], 0, 1, 5);
        assert!(matches!(gap.validate(&topo), Err(PlanError::Gap { .. })));
        let mut back = ok.clone();
        back.entries[1].tick = 0;
        assert!(matches!(back.validate(&topo), Err(PlanError::NonMonotone { .. })));
        let off = FlightPlan::along(3, &[c(2, 2), c(3, 2)], 0, 1, 5);
        assert!(matches!(off.validate(&topo), Err(PlanError::OffGrid { .. })));
        assert_eq!(validate_all(&[ok.clone(), ok], &topo), Err(PlanError::DuplicateId(1)));
    }
}
