//! Procedural maze tasks and the episodic gridworld that runs on them.
//!
//! Mazes are carved by randomized depth-first search on the odd-coordinate
//! lattice, so every free cell is reachable from every other one. An optional
//! fraction of interior walls can be knocked out afterwards to add loops.

mod env;

pub use env::{
    Direction, EnvState, InputVector, StepOutcome, VisitedSet, ACTION_DIM, DEFAULT_MAX_STEPS, GOAL_REWARD, INPUT_DIM,
    OBS_DIM, STEP_PENALTY,
};

use std::collections::VecDeque;
use std::fmt;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;

use crate::seed::rng_from;
use crate::{Error, Result};

/// Grid coordinate, row-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Pos {
    pub row: usize,
    pub col: usize,
}

impl Pos {
    pub const fn new(row: usize, col: usize) -> Self {
        Pos { row, col }
    }
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.row, self.col)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MazeGenConfig {
    /// Fraction of removable interior walls knocked out after carving.
    pub loop_fraction: f64,
}

impl Default for MazeGenConfig {
    fn default() -> Self {
        MazeGenConfig { loop_fraction: 0.0 }
    }
}

/// One inner-loop task: a walled grid with a start and a hidden goal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MazeTask {
    width: usize,
    height: usize,
    walls: Vec<bool>,
    start: Pos,
    goal: Pos,
    task_seed: u64,
}

impl MazeTask {
    /// Generate a square `size`×`size` perfect maze.
    pub fn generate(size: usize, seed: u64) -> Result<Self> {
        Self::generate_with(size, seed, &MazeGenConfig::default())
    }

    pub fn generate_with(size: usize, seed: u64, config: &MazeGenConfig) -> Result<Self> {
        if size < 5 || size.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "maze size must be odd and at least 5, got {size}"
            )));
        }
        if !(0.0..=1.0).contains(&config.loop_fraction) {
            return Err(Error::InvalidArgument(format!(
                "loop fraction must lie in [0, 1], got {}",
                config.loop_fraction
            )));
        }
        let mut rng = rng_from(seed);
        let n = size;
        let mut walls = vec![true; n * n];

        // Randomized DFS over lattice cells (odd row, odd col).
        let cells = (n - 1) / 2;
        let first = Pos::new(2 * rng.random_range(0..cells) + 1, 2 * rng.random_range(0..cells) + 1);
        walls[first.row * n + first.col] = false;
        let mut stack = vec![first];
        while let Some(&cur) = stack.last() {
            let mut options = Vec::with_capacity(4);
            for (dr, dc) in [(0isize, 2isize), (0, -2), (2, 0), (-2, 0)] {
                let r = cur.row as isize + dr;
                let c = cur.col as isize + dc;
                if r < 1 || c < 1 || r > n as isize - 2 || c > n as isize - 2 {
                    continue;
                }
                let (r, c) = (r as usize, c as usize);
                if walls[r * n + c] {
                    options.push(Pos::new(r, c));
                }
            }
            match options.choose(&mut rng) {
                Some(&next) => {
                    let mid = Pos::new((cur.row + next.row) / 2, (cur.col + next.col) / 2);
                    walls[mid.row * n + mid.col] = false;
                    walls[next.row * n + next.col] = false;
                    stack.push(next);
                }
                None => {
                    stack.pop();
                }
            }
        }

        if config.loop_fraction > 0.0 {
            // Interior walls sitting between two lattice cells.
            let mut removable: Vec<Pos> = Vec::new();
            for r in 1..n - 1 {
                for c in 1..n - 1 {
                    if !walls[r * n + c] || (r % 2) == (c % 2) {
                        continue;
                    }
                    removable.push(Pos::new(r, c));
                }
            }
            removable.shuffle(&mut rng);
            let k = (config.loop_fraction * removable.len() as f64).round() as usize;
            for p in removable.into_iter().take(k) {
                walls[p.row * n + p.col] = false;
            }
        }

        let free: Vec<Pos> = (0..n * n)
            .filter(|&i| !walls[i])
            .map(|i| Pos::new(i / n, i % n))
            .collect();
        let picked: Vec<&Pos> = free.choose_multiple(&mut rng, 2).collect();
        let task = MazeTask {
            width: n,
            height: n,
            walls,
            start: *picked[0],
            goal: *picked[1],
            task_seed: seed,
        };
        debug_assert!(task.validate().is_ok());
        Ok(task)
    }

    /// Build a task from an explicit grid and check every invariant.
    pub fn from_grid(
        width: usize,
        height: usize,
        walls: Vec<bool>,
        start: Pos,
        goal: Pos,
        task_seed: u64,
    ) -> Result<Self> {
        let task = MazeTask {
            width,
            height,
            walls,
            start,
            goal,
            task_seed,
        };
        task.validate()?;
        Ok(task)
    }

    fn validate(&self) -> Result<()> {
        let bad = |reason: String| Err(Error::Parse { what: "maze", reason });
        if self.width < 5 || self.height < 5 || self.width.is_multiple_of(2) || self.height.is_multiple_of(2) {
            return bad(format!(
                "dimensions must be odd and at least 5, got {}x{}",
                self.width, self.height
            ));
        }
        if self.walls.len() != self.width * self.height {
            return bad("grid length does not match dimensions".into());
        }
        for r in 0..self.height {
            for c in 0..self.width {
                let border = r == 0 || c == 0 || r == self.height - 1 || c == self.width - 1;
                if border && !self.is_wall(Pos::new(r, c)) {
                    return bad(format!("border cell {} is not a wall", Pos::new(r, c)));
                }
            }
        }
        for (name, p) in [("start", self.start), ("goal", self.goal)] {
            if !self.in_bounds(p) || self.is_wall(p) {
                return bad(format!("{name} {p} is not a free cell"));
            }
        }
        if self.start == self.goal {
            return bad("start and goal coincide".into());
        }
        let dist = self.distances_from(self.start);
        if dist.iter().zip(&self.walls).any(|(d, &w)| !w && d.is_none()) {
            return bad("some free cells are unreachable from start".into());
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn start(&self) -> Pos {
        self.start
    }

    pub fn goal(&self) -> Pos {
        self.goal
    }

    pub fn task_seed(&self) -> u64 {
        self.task_seed
    }

    #[inline]
    pub fn in_bounds(&self, p: Pos) -> bool {
        p.row < self.height && p.col < self.width
    }

    #[inline]
    pub fn is_wall(&self, p: Pos) -> bool {
        self.walls[p.row * self.width + p.col]
    }

    /// Wall test for signed coordinates; anything off the grid counts as wall.
    #[inline]
    pub fn is_wall_at(&self, row: isize, col: isize) -> bool {
        if row < 0 || col < 0 || row >= self.height as isize || col >= self.width as isize {
            return true;
        }
        self.walls[row as usize * self.width + col as usize]
    }

    pub fn free_cells(&self) -> impl Iterator<Item = Pos> + '_ {
        (0..self.walls.len())
            .filter(|&i| !self.walls[i])
            .map(|i| Pos::new(i / self.width, i % self.width))
    }

    pub fn free_count(&self) -> usize {
        self.walls.iter().filter(|w| !**w).count()
    }

    /// BFS step distances from `from`; `None` for walls and unreachable cells.
    pub fn distances_from(&self, from: Pos) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.walls.len()];
        let mut queue = VecDeque::new();
        dist[from.row * self.width + from.col] = Some(0);
        queue.push_back(from);
        while let Some(p) = queue.pop_front() {
            let d = dist[p.row * self.width + p.col].unwrap();
            for dir in Direction::ALL {
                let (r, c) = dir.offset(p);
                if self.is_wall_at(r, c) {
                    continue;
                }
                let idx = r as usize * self.width + c as usize;
                if dist[idx].is_none() {
                    dist[idx] = Some(d + 1);
                    queue.push_back(Pos::new(r as usize, c as usize));
                }
            }
        }
        dist
    }

    /// Number of free cells reachable from start, start included.
    pub fn reachable_count(&self) -> usize {
        self.distances_from(self.start).iter().filter(|d| d.is_some()).count()
    }

    /// Shortest start→goal path length in steps.
    pub fn shortest_path_length(&self) -> usize {
        self.distances_from(self.start)[self.goal.row * self.width + self.goal.col]
            .expect("goal reachable by construction")
    }

    /// Episode reward of an agent walking the shortest path.
    pub fn oracle_reward(&self) -> f64 {
        oracle_reward_for(self.shortest_path_length())
    }

    /// Serialize as `W H`, the grid rows, then `start r c` and `goal r c`.
    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.width, self.height);
        for r in 0..self.height {
            for c in 0..self.width {
                out.push(if self.is_wall(Pos::new(r, c)) { '#' } else { '.' });
            }
            out.push('\n');
        }
        out.push_str(&format!("start {} {}\n", self.start.row, self.start.col));
        out.push_str(&format!("goal {} {}\n", self.goal.row, self.goal.col));
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let err = |reason: String| Error::Parse {
            what: "maze text",
            reason,
        };
        let mut lines = text.lines().map(str::trim_end).filter(|l| !l.is_empty());
        let header = lines.next().ok_or_else(|| err("empty input".into()))?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse::<usize>().map_err(|e| err(format!("header `{header}`: {e}"))))
            .collect::<Result<_>>()?;
        let [width, height] = dims[..] else {
            return Err(err(format!("header `{header}` must be `W H`")));
        };
        let mut walls = Vec::with_capacity(width * height);
        for r in 0..height {
            let line = lines.next().ok_or_else(|| err(format!("missing grid row {r}")))?;
            if line.chars().count() != width {
                return Err(err(format!(
                    "row {r} has {} cells, expected {width}",
                    line.chars().count()
                )));
            }
            for ch in line.chars() {
                walls.push(match ch {
                    '#' => true,
                    '.' => false,
                    other => return Err(err(format!("unexpected cell character {other:?}"))),
                });
            }
        }
        let mut parse_pos = |key: &str| -> Result<Pos> {
            let line = lines.next().ok_or_else(|| err(format!("missing `{key}` line")))?;
            let parts: Vec<&str> = line.split_whitespace().collect();
            match parts[..] {
                [k, r, c] if k == key => Ok(Pos::new(
                    r.parse().map_err(|e| err(format!("{key} row: {e}")))?,
                    c.parse().map_err(|e| err(format!("{key} col: {e}")))?,
                )),
                _ => Err(err(format!("expected `{key} r c`, got `{line}`"))),
            }
        };
        let start = parse_pos("start")?;
        let goal = parse_pos("goal")?;
        MazeTask::from_grid(width, height, walls, start, goal, 0)
    }

    /// ASCII rendering with `S`, `G`, and an optional path overlay drawn as `*`.
    pub fn render(&self, path: &[Pos], agent: Option<Pos>) -> String {
        let mut grid: Vec<Vec<char>> = (0..self.height)
            .map(|r| {
                (0..self.width)
                    .map(|c| if self.is_wall(Pos::new(r, c)) { '#' } else { ' ' })
                    .collect()
            })
            .collect();
        for p in path {
            grid[p.row][p.col] = '*';
        }
        grid[self.start.row][self.start.col] = 'S';
        grid[self.goal.row][self.goal.col] = 'G';
        if let Some(a) = agent {
            grid[a.row][a.col] = '@';
        }
        grid.into_iter()
            .map(|row| row.into_iter().collect::<String>() + "\n")
            .collect()
    }
}

/// Reward of an episode that reaches the goal on step `steps`.
pub fn oracle_reward_for(steps: usize) -> f64 {
    1.0 - env::STEP_PENALTY * (steps as f64 - 1.0)
}

/// Generate `count` tasks whose seeds are derived from `seeds`.
pub fn generate_set(
    size: usize,
    seeds: impl IntoIterator<Item = u64>,
    config: &MazeGenConfig,
) -> Result<Vec<MazeTask>> {
    seeds
        .into_iter()
        .map(|s| MazeTask::generate_with(size, s, config))
        .collect()
}
