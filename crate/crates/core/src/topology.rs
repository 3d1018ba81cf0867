//! Mesh topology: cells, regions (components), channels and storms.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Integer model time.
pub type Tick = i64;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TopologyError {
    #[error("mesh must be at least 2x2, got {width}x{height}")]
    TooSmall { width: u32, height: u32 },
    #[error("region size {region} does not divide mesh {width}x{height}")]
    RegionMismatch { width: u32, height: u32, region: u32 },
    #[error("cell {0} lies outside the mesh")]
    OffGrid(Cell),
}

/// One sub-track of the mesh. `x` grows eastward, `y` grows southward.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub x: u32,
    pub y: u32,
}

impl Cell {
    pub const fn new(x: u32, y: u32) -> Self {
        Cell { x, y }
    }

    pub fn manhattan(self, other: Cell) -> u32 {
        self.x.abs_diff(other.x) + self.y.abs_diff(other.y)
    }

    pub fn is_adjacent(self, other: Cell) -> bool {
        self.manhattan(other) == 1
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.x, self.y)
    }
}

/// The four ports of every actor, in the fixed iteration order used by rerouting.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Direction {
    North,
    East,
    South,
    West,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::North, Direction::East, Direction::South, Direction::West];

    pub fn opposite(self) -> Direction {
        match self {
            Direction::North => Direction::South,
            Direction::East => Direction::West,
            Direction::South => Direction::North,
            Direction::West => Direction::East,
        }
    }

    /// Direction of the step `from -> to`, if the cells are adjacent.
    pub fn between(from: Cell, to: Cell) -> Option<Direction> {
        match (to.x as i64 - from.x as i64, to.y as i64 - from.y as i64) {
            (0, -1) => Some(Direction::North),
            (1, 0) => Some(Direction::East),
            (0, 1) => Some(Direction::South),
            (-1, 0) => Some(Direction::West),
            _ => None,
        }
    }
}

/// Region coordinates of a component.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ComponentId {
    pub rx: u32,
    pub ry: u32,
}

impl ComponentId {
    pub const fn new(rx: u32, ry: u32) -> Self {
        ComponentId { rx, ry }
    }
}

impl fmt::Display for ComponentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "C[{},{}]", self.rx, self.ry)
    }
}

/// A directed link between the ports of two adjacent actors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Channel {
    pub source: (Cell, Direction),
    pub sink: (Cell, Direction),
}

impl Channel {
    /// The channel carrying an object from `from` into the adjacent cell `to`.
    pub fn between(from: Cell, to: Cell) -> Option<Channel> {
        let d = Direction::between(from, to)?;
        Some(Channel { source: (from, d), sink: (to, d.opposite()) })
    }

    pub fn from_cell(&self) -> Cell {
        self.source.0
    }

    pub fn to_cell(&self) -> Cell {
        self.sink.0
    }
}

/// A sub-track becoming unavailable for a while.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StormEvent {
    pub cell: Cell,
    pub start_tick: Tick,
    /// `None` means the storm persists to the end of the run.
    pub end_tick: Option<Tick>,
}

impl StormEvent {
    pub fn active_at(&self, t: Tick) -> bool {
        t >= self.start_tick && self.end_tick.is_none_or(|e| t < e)
    }

    pub fn covers(&self, cell: Cell, t: Tick) -> bool {
        cell == self.cell && self.active_at(t)
    }
}

/// A rectangular mesh split into equal square regions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    pub width: u32,
    pub height: u32,
    pub region_size: u32,
    pub sources: Vec<Cell>,
    pub destinations: Vec<Cell>,
}

impl Topology {
    /// Square `n`x`n` mesh with boundary airports.
    pub fn mesh(n: u32, region_size: u32) -> Result<Self, TopologyError> {
        Self::grid(n, n, region_size)
    }

    /// Rectangular mesh. Sources sit on the west and north borders, destinations
    /// on the east and south borders.
    pub fn grid(width: u32, height: u32, region_size: u32) -> Result<Self, TopologyError> {
        if width < 2 || height < 2 {
            return Err(TopologyError::TooSmall { width, height });
        }
        if region_size == 0 || !width.is_multiple_of(region_size) || !height.is_multiple_of(region_size) {
            return Err(TopologyError::RegionMismatch { width, height, region: region_size });
        }
        let mut sources: Vec<Cell> = (1..height).map(|i| Cell::new(0, i)).collect();
        sources.extend((1..width).map(|i| Cell::new(i, 0)));
        let mut destinations: Vec<Cell> = (0..height - 1).map(|i| Cell::new(width - 1, i)).collect();
        destinations.extend((0..width - 1).map(|i| Cell::new(i, height - 1)));
        Ok(Topology { width, height, region_size, sources, destinations })
    }

    pub fn contains(&self, c: Cell) -> bool {
        c.x < self.width && c.y < self.height
    }

    pub fn check(&self, c: Cell) -> Result<Cell, TopologyError> {
        if self.contains(c) {
            Ok(c)
        } else {
            Err(TopologyError::OffGrid(c))
        }
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.height).flat_map(move |y| (0..self.width).map(move |x| Cell::new(x, y)))
    }

    pub fn cell_count(&self) -> usize {
        (self.width * self.height) as usize
    }

    /// Neighbor through port `d`, if it exists.
    pub fn step(&self, c: Cell, d: Direction) -> Option<Cell> {
        let n = match d {
            Direction::North => Cell::new(c.x, c.y.checked_sub(1)?),
            Direction::East => Cell::new(c.x + 1, c.y),
            Direction::South => Cell::new(c.x, c.y + 1),
            Direction::West => Cell::new(c.x.checked_sub(1)?, c.y),
        };
        self.contains(n).then_some(n)
    }

    /// 4-neighborhood in N, E, S, W order.
    pub fn neighbors(&self, c: Cell) -> impl Iterator<Item = Cell> + '_ {
        Direction::ALL.into_iter().filter_map(move |d| self.step(c, d))
    }

    /// All channels leaving `c`.
    pub fn out_channels(&self, c: Cell) -> Vec<Channel> {
        self.neighbors(c).filter_map(|n| Channel::between(c, n)).collect()
    }

    /// All channels entering `c`.
    pub fn in_channels(&self, c: Cell) -> Vec<Channel> {
        self.neighbors(c).filter_map(|n| Channel::between(n, c)).collect()
    }

    pub fn regions_x(&self) -> u32 {
        self.width / self.region_size
    }

    pub fn regions_y(&self) -> u32 {
        self.height / self.region_size
    }

    pub fn component_of(&self, c: Cell) -> ComponentId {
        ComponentId::new(c.x / self.region_size, c.y / self.region_size)
    }

    pub fn components(&self) -> BTreeSet<ComponentId> {
        (0..self.regions_y())
            .flat_map(|ry| (0..self.regions_x()).map(move |rx| ComponentId::new(rx, ry)))
            .collect()
    }

    pub fn cells_of(&self, comp: ComponentId) -> impl Iterator<Item = Cell> {
        let r = self.region_size;
        (comp.ry * r..(comp.ry + 1) * r).flat_map(move |y| (comp.rx * r..(comp.rx + 1) * r).map(move |x| Cell::new(x, y)))
    }

    /// Components that own a cell across the region border from `comp`.
    pub fn env_components(&self, comp: ComponentId) -> BTreeSet<ComponentId> {
        let mut out = BTreeSet::new();
        for c in self.cells_of(comp) {
            for n in self.neighbors(c) {
                let other = self.component_of(n);
                if other != comp {
                    out.insert(other);
                }
            }
        }
        out
    }

    /// Cells of `neighbor` wired directly to some cell of `comp`.
    pub fn env_actors(&self, comp: ComponentId, neighbor: ComponentId) -> BTreeSet<Cell> {
        if comp == neighbor {
            return BTreeSet::new();
        }
        self.cells_of(neighbor)
            .filter(|&c| self.neighbors(c).any(|n| self.component_of(n) == comp))
            .collect()
    }

    /// Out-of-scope cells adjacent to a scope (the environment actors of a composite component).
    pub fn scope_env_cells(&self, scope: &BTreeSet<ComponentId>) -> BTreeSet<Cell> {
        let mut out = BTreeSet::new();
        for &comp in scope {
            for c in self.cells_of(comp) {
                for n in self.neighbors(c) {
                    if !scope.contains(&self.component_of(n)) {
                        out.insert(n);
                    }
                }
            }
        }
        out
    }

    /// Number of cells on the longest monotone path between opposite corners.
    pub fn longest_path(&self) -> u32 {
        self.width + self.height - 1
    }

    /// The middlemost cell, the default storm location.
    pub fn middle(&self) -> Cell {
        Cell::new((self.width - 1) / 2, (self.height - 1) / 2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mesh_counts() {
        let t = Topology::mesh(15, 5).unwrap();
        assert_eq!(t.components().len(), 9);
        assert_eq!(t.sources.len(), 28);
        assert_eq!(t.destinations.len(), 28);

        let t = Topology::mesh(2, 1).unwrap();
        assert_eq!(t.components().len(), 4);
        assert_eq!(t.sources.len(), 2);
        assert_eq!(t.destinations.len(), 2);

        let t = Topology::mesh(18, 6).unwrap();
        assert_eq!(t.components().len(), 9);
        assert_eq!(t.sources.len(), 34);
    }

    #[test]
    fn rejects_bad_region() {
        assert!(matches!(Topology::mesh(10, 3), Err(TopologyError::RegionMismatch { .. })));
        assert!(matches!(Topology::mesh(1, 1), Err(TopologyError::TooSmall { .. })));
    }

    #[test]
    fn airports_on_borders() {
        let t = Topology::mesh(5, 5).unwrap();
        assert!(t.sources.iter().all(|c| c.x == 0 || c.y == 0));
        assert!(t.destinations.iter().all(|c| c.x == 4 || c.y == 4));
    }

    #[test]
    fn component_lookup() {
        let t = Topology::mesh(15, 5).unwrap();
        assert_eq!(t.component_of(Cell::new(7, 3)), ComponentId::new(1, 0));
        assert_eq!(t.component_of(Cell::new(0, 0)), ComponentId::new(0, 0));
        assert_eq!(t.component_of(Cell::new(14, 14)), ComponentId::new(2, 2));
    }

    #[test]
    fn env_components_of_center_and_corner() {
        let t = Topology::mesh(9, 3).unwrap();
        let center = t.env_components(ComponentId::new(1, 1));
        let want: BTreeSet<_> =
            [ComponentId::new(0, 1), ComponentId::new(2, 1), ComponentId::new(1, 0), ComponentId::new(1, 2)].into();
        assert_eq!(center, want);
        let corner = t.env_components(ComponentId::new(0, 0));
        assert_eq!(corner, [ComponentId::new(1, 0), ComponentId::new(0, 1)].into());

        let single = Topology::mesh(3, 3).unwrap();
        assert!(single.env_components(ComponentId::new(0, 0)).is_empty());
    }

    #[test]
    fn env_actor_cells() {
        let t = Topology::grid(10, 5, 5).unwrap();
        let cells = t.env_actors(ComponentId::new(0, 0), ComponentId::new(1, 0));
        assert_eq!(cells.len(), 5);
        assert!(cells.iter().all(|c| c.x == 5));

        let t = Topology::mesh(9, 3).unwrap();
        assert!(t.env_actors(ComponentId::new(0, 0), ComponentId::new(2, 2)).is_empty());
    }

    #[test]
    fn channels_are_mesh_adjacency() {
        let t = Topology::mesh(5, 5).unwrap();
        let inner = Cell::new(2, 2);
        assert_eq!(t.in_channels(inner).len(), 4);
        assert_eq!(t.out_channels(inner).len(), 4);
        assert_eq!(t.out_channels(Cell::new(0, 0)).len(), 2);
        for ch in t.out_channels(inner) {
            assert!(ch.from_cell().is_adjacent(ch.to_cell()));
            assert_eq!(ch.source.1.opposite(), ch.sink.1);
        }
    }

    #[test]
    fn storm_window() {
        let s = StormEvent { cell: Cell::new(1, 1), start_tick: 3, end_tick: Some(5) };
        assert!(!s.active_at(2));
        assert!(s.active_at(3));
        assert!(s.active_at(4));
        assert!(!s.active_at(5));
        assert!(!s.covers(Cell::new(0, 1), 3));
    }

    #[test]
    fn middle_cell() {
        assert_eq!(Topology::mesh(15, 5).unwrap().middle(), Cell::new(7, 7));
        assert_eq!(Topology::mesh(9, 3).unwrap().middle(), Cell::new(4, 4));
    }
}
