//! Agent pose, the 3x5 sensing window, and line-of-sight visibility.

use serde::{Deserialize, Serialize};

use super::world::World;

/// Cells ahead of the agent covered by the sensor, including its own row.
pub const SENSE_DEPTH: usize = 5;
/// Width of the sensing window.
pub const SENSE_WIDTH: usize = 3;
/// Number of sensor readings.
pub const SENSOR_LEN: usize = SENSE_DEPTH * SENSE_WIDTH;

pub const READING_FREE: f64 = 0.0;
pub const READING_WALL: f64 = 1.0;
pub const READING_UNKNOWN: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Heading {
    North,
    East,
    South,
    West,
}

impl Heading {
    pub const ALL: [Heading; 4] = [Heading::North, Heading::East, Heading::South, Heading::West];

    /// Unit step in grid coordinates (x right, y down).
    pub fn forward(self) -> (i32, i32) {
        match self {
            Heading::North => (0, -1),
            Heading::East => (1, 0),
            Heading::South => (0, 1),
            Heading::West => (-1, 0),
        }
    }

    pub fn left(self) -> Heading {
        match self {
            Heading::North => Heading::West,
            Heading::West => Heading::South,
            Heading::South => Heading::East,
            Heading::East => Heading::North,
        }
    }

    pub fn right(self) -> Heading {
        match self {
            Heading::North => Heading::East,
            Heading::East => Heading::South,
            Heading::South => Heading::West,
            Heading::West => Heading::North,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Heading> {
        Heading::ALL.get(i).copied()
    }

    pub fn letter(self) -> char {
        match self {
            Heading::North => 'N',
            Heading::East => 'E',
            Heading::South => 'S',
            Heading::West => 'W',
        }
    }

    pub fn from_letter(c: char) -> Option<Heading> {
        match c {
            'N' | '0' => Some(Heading::North),
            'E' | '1' => Some(Heading::East),
            'S' | '2' => Some(Heading::South),
            'W' | '3' => Some(Heading::West),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AgentPose {
    pub x: i32,
    pub y: i32,
    pub heading: Heading,
}

impl AgentPose {
    pub fn new(x: i32, y: i32, heading: Heading) -> Self {
        AgentPose { x, y, heading }
    }
}

/// Grid cell of the sensing window at `depth` ahead and `lateral` to the
/// right (negative is left) of a pose.
pub fn window_cell(pose: AgentPose, depth: i32, lateral: i32) -> (i32, i32) {
    let (fx, fy) = pose.heading.forward();
    let (rx, ry) = pose.heading.right().forward();
    (pose.x + depth * fx + lateral * rx, pose.y + depth * fy + lateral * ry)
}

/// The 15 window cells in sensor order: depth-major, left to right.
pub fn footprint(pose: AgentPose) -> [(i32, i32); SENSOR_LEN] {
    let mut out = [(0, 0); SENSOR_LEN];
    for depth in 0..SENSE_DEPTH as i32 {
        for lateral in -1..=1 {
            out[depth as usize * SENSE_WIDTH + (lateral + 1) as usize] = window_cell(pose, depth, lateral);
        }
    }
    out
}

/// Does the segment between the centers of cells `a` and `b` touch the closed
/// square of cell `c`? Exact: all coordinates are doubled to stay integral.
pub fn segment_touches_cell(a: (i32, i32), b: (i32, i32), c: (i32, i32)) -> bool {
    let (ax, ay) = (2 * a.0 as i64 + 1, 2 * a.1 as i64 + 1);
    let (bx, by) = (2 * b.0 as i64 + 1, 2 * b.1 as i64 + 1);
    let (x0, y0) = (2 * c.0 as i64, 2 * c.1 as i64);
    let (x1, y1) = (x0 + 2, y0 + 2);
    if ax.max(bx) < x0 || ax.min(bx) > x1 || ay.max(by) < y0 || ay.min(by) > y1 {
        return false;
    }
    let (dx, dy) = (bx - ax, by - ay);
    let side = |px: i64, py: i64| (dx * (py - ay) - dy * (px - ax)).signum();
    let sides = [side(x0, y0), side(x1, y0), side(x0, y1), side(x1, y1)];
    !(sides.iter().all(|s| *s > 0) || sides.iter().all(|s| *s < 0))
}

/// Line of sight from `from` to `to`: no wall cell other than the two
/// endpoints is touched by the center-to-center segment. Corner contacts
/// count, so the sensor cannot see diagonally past a wall corner.
pub fn line_of_sight(world: &World, from: (i32, i32), to: (i32, i32)) -> bool {
    let (lx, hx) = (from.0.min(to.0), from.0.max(to.0));
    let (ly, hy) = (from.1.min(to.1), from.1.max(to.1));
    for cy in ly..=hy {
        for cx in lx..=hx {
            if (cx, cy) == from || (cx, cy) == to {
                continue;
            }
            if world.is_wall(cx, cy) && segment_touches_cell(from, to, (cx, cy)) {
                return false;
            }
        }
    }
    true
}

/// One visible cell of the sensing window.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VisibleCell {
    pub x: i32,
    pub y: i32,
    /// Position in the sensor vector.
    pub slot: usize,
    pub wall: bool,
}

/// In-bounds window cells visible from `pose`.
pub fn visible_cells(world: &World, pose: AgentPose) -> Vec<VisibleCell> {
    let origin = (pose.x, pose.y);
    footprint(pose)
        .iter()
        .enumerate()
        .filter(|(_, &(x, y))| world.in_bounds(x, y))
        .filter(|(_, &cell)| line_of_sight(world, origin, cell))
        .map(|(slot, &(x, y))| VisibleCell {
            x,
            y,
            slot,
            wall: world.is_wall(x, y),
        })
        .collect()
}

/// Sensor vector for `pose`: free 0, wall 1, occluded or out of bounds 0.5.
pub fn sense(world: &World, pose: AgentPose) -> [f64; SENSOR_LEN] {
    let mut out = [READING_UNKNOWN; SENSOR_LEN];
    for cell in visible_cells(world, pose) {
        out[cell.slot] = if cell.wall { READING_WALL } else { READING_FREE };
    }
    out
}
