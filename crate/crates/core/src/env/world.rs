use std::collections::VecDeque;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::sensor::{visible_cells, AgentPose, Heading};
use crate::error::{Error, Result};

/// Obstacle probability per cell used by the generator unless overridden.
pub const DEFAULT_DENSITY: f64 = 0.2;
/// Generated worlds must let at least this fraction of cells be observed.
pub const MIN_OBSERVABLE_FRACTION: f64 = 0.5;
const MAX_ATTEMPTS: usize = 10_000;

/// Immutable grid world. Out-of-bounds cells behave as walls.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct World {
    width: usize,
    height: usize,
    walls: Vec<bool>,
    observable: Vec<bool>,
    observable_count: usize,
    start: Option<AgentPose>,
}

impl World {
    /// Builds a world from a wall mask (row-major). Fails unless the free
    /// cells are non-empty and connected.
    pub fn from_walls(width: usize, height: usize, walls: Vec<bool>, start: Option<AgentPose>) -> Result<Self> {
        if width == 0 || height == 0 || walls.len() != width * height {
            return Err(Error::Invalid(format!(
                "wall mask of {} cells for a {width}x{height} world",
                walls.len()
            )));
        }
        let mut world = World {
            width,
            height,
            walls,
            observable: Vec::new(),
            observable_count: 0,
            start: None,
        };
        if !world.free_space_connected() {
            return Err(Error::Invalid("free cells are empty or disconnected".into()));
        }
        if let Some(pose) = start {
            if world.is_wall(pose.x, pose.y) {
                return Err(Error::Invalid(format!("start pose {pose:?} is not a free cell")));
            }
        }
        world.start = start;
        world.compute_observable();
        Ok(world)
    }

    /// Random world of `size`x`size` with i.i.d. obstacles at `density`,
    /// rejected until connected and sufficiently observable.
    pub fn generate(size: usize, density: f64, seed: u64) -> Result<Self> {
        if !(8..=16).contains(&size) {
            return Err(Error::Invalid(format!("world size {size} outside 8..=16")));
        }
        if !(0.0..1.0).contains(&density) {
            return Err(Error::Invalid(format!("obstacle density {density} outside [0, 1)")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..MAX_ATTEMPTS {
            let walls: Vec<bool> = (0..size * size).map(|_| rng.gen_bool(density)).collect();
            let Ok(world) = World::from_walls(size, size, walls, None) else {
                continue;
            };
            if (world.observable_count as f64) < MIN_OBSERVABLE_FRACTION * (size * size) as f64 {
                continue;
            }
            let pose = world.random_pose(&mut rng);
            return Ok(World {
                start: Some(pose),
                ..world
            });
        }
        Err(Error::GenerationFailed {
            size,
            density,
            attempts: MAX_ATTEMPTS,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn num_cells(&self) -> usize {
        self.width * self.height
    }

    pub fn start(&self) -> Option<AgentPose> {
        self.start
    }

    pub fn with_start(mut self, pose: AgentPose) -> Result<Self> {
        if self.is_wall(pose.x, pose.y) {
            return Err(Error::Invalid(format!("start pose {pose:?} is not a free cell")));
        }
        self.start = Some(pose);
        Ok(self)
    }

    pub fn in_bounds(&self, x: i32, y: i32) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height
    }

    /// Row-major index of an in-bounds cell.
    pub fn index(&self, x: i32, y: i32) -> usize {
        y as usize * self.width + x as usize
    }

    pub fn is_wall(&self, x: i32, y: i32) -> bool {
        !self.in_bounds(x, y) || self.walls[self.index(x, y)]
    }

    pub fn walls(&self) -> &[bool] {
        &self.walls
    }

    /// Cells seen from at least one reachable pose.
    pub fn observable(&self) -> &[bool] {
        &self.observable
    }

    pub fn observable_count(&self) -> usize {
        self.observable_count
    }

    pub fn free_cells(&self) -> impl Iterator<Item = (i32, i32)> + '_ {
        (0..self.height as i32)
            .flat_map(move |y| (0..self.width as i32).map(move |x| (x, y)))
            .filter(move |&(x, y)| !self.is_wall(x, y))
    }

    /// Uniform draw over free cells and headings.
    pub fn random_pose<R: Rng>(&self, rng: &mut R) -> AgentPose {
        let free: Vec<(i32, i32)> = self.free_cells().collect();
        let (x, y) = free[rng.gen_range(0..free.len())];
        let heading = Heading::ALL[rng.gen_range(0..4)];
        AgentPose::new(x, y, heading)
    }

    fn free_space_connected(&self) -> bool {
        let Some((sx, sy)) = self.free_cells().next() else {
            return false;
        };
        let mut seen = vec![false; self.num_cells()];
        let mut queue = VecDeque::from([(sx, sy)]);
        seen[self.index(sx, sy)] = true;
        let mut reached = 1;
        while let Some((x, y)) = queue.pop_front() {
            for h in Heading::ALL {
                let (dx, dy) = h.forward();
                let (nx, ny) = (x + dx, y + dy);
                if !self.is_wall(nx, ny) && !seen[self.index(nx, ny)] {
                    seen[self.index(nx, ny)] = true;
                    reached += 1;
                    queue.push_back((nx, ny));
                }
            }
        }
        reached == self.free_cells().count()
    }

    fn compute_observable(&mut self) {
        let mut observable = vec![false; self.num_cells()];
        let cells: Vec<(i32, i32)> = self.free_cells().collect();
        for (x, y) in cells {
            for heading in Heading::ALL {
                for c in visible_cells(self, AgentPose::new(x, y, heading)) {
                    observable[self.index(c.x, c.y)] = true;
                }
            }
        }
        self.observable_count = observable.iter().filter(|o| **o).count();
        self.observable = observable;
    }

    /// Text form: `W H`, then `H` rows of `#`/`.`, then optionally `S x y h`.
    pub fn render(&self) -> String {
        let mut out = format!("{} {}\n", self.width, self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                out.push(if self.walls[y * self.width + x] { '#' } else { '.' });
            }
            out.push('\n');
        }
        if let Some(p) = self.start {
            let _ = writeln!(out, "S {} {} {}", p.x, p.y, p.heading.letter());
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let err = |msg: String| Error::Parse {
            what: "world".into(),
            msg,
        };
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| err("empty input".into()))?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse::<usize>().map_err(|e| err(format!("bad header `{header}`: {e}"))))
            .collect::<Result<_>>()?;
        let [width, height] = dims[..] else {
            return Err(err(format!("header `{header}` must be `W H`")));
        };
        let mut walls = Vec::with_capacity(width * height);
        for row in 0..height {
            let line = lines
                .next()
                .ok_or_else(|| err(format!("missing row {row}")))?
                .trim_end();
            if line.chars().count() != width {
                return Err(err(format!("row {row} has {} cells, expected {width}", line.chars().count())));
            }
            for c in line.chars() {
                walls.push(match c {
                    '#' => true,
                    '.' => false,
                    other => return Err(err(format!("unexpected cell `{other}` in row {row}"))),
                });
            }
        }
        let start = match lines.next() {
            None => None,
            Some(line) => {
                let parts: Vec<&str> = line.split_whitespace().collect();
                let ["S", x, y, h] = parts[..] else {
                    return Err(err(format!("trailing line `{line}` is not `S x y h`")));
                };
                let x = x.parse().map_err(|e| err(format!("start x: {e}")))?;
                let y = y.parse().map_err(|e| err(format!("start y: {e}")))?;
                let mut hc = h.chars();
                let heading = match (hc.next(), hc.next()) {
                    (Some(c), None) => Heading::from_letter(c),
                    _ => None,
                }
                .ok_or_else(|| err(format!("bad heading `{h}`")))?;
                Some(AgentPose::new(x, y, heading))
            }
        };
        if let Some(extra) = lines.next() {
            return Err(err(format!("unexpected trailing line `{extra}`")));
        }
        World::from_walls(width, height, walls, start)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        World::parse(&text).map_err(|e| match e {
            Error::Parse { msg, .. } => Error::Parse {
                what: path.display().to_string(),
                msg,
            },
            other => other,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render()).map_err(|e| Error::io(path, e))
    }
}
