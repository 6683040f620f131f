//! Environments: a POMDP defined by its matrices and a grid maze built on it.

use std::collections::VecDeque;
use std::fmt;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::distributions::CategoricalParams;
use crate::error::{Error, Result};
use crate::model::{ModelParams, ModelSpec, TargetDist, ACTION, NEXT_STATE, OBS, STATE};
use crate::tensor::{Axis, Tensor};

/// The world outside the agent. Hidden states stay hidden: the agent only
/// sees the observations returned by [`reset`](Environment::reset) and
/// [`step`](Environment::step).
pub trait Environment {
    fn spec(&self) -> ModelSpec;

    /// Starts a new episode and returns the first observation.
    fn reset(&mut self) -> usize;

    /// Executes `action` and returns the resulting observation.
    fn step(&mut self, action: usize) -> Result<usize>;

    /// The current hidden state, for diagnostics.
    fn state(&self) -> usize;

    /// True once the episode has ended.
    fn is_terminal(&self) -> bool {
        false
    }
}

/// An environment sampling from known `A`, `B` and `D`.
#[derive(Clone, Debug)]
pub struct PomdpEnv {
    spec: ModelSpec,
    obs_given_state: Vec<WeightedIndex<f64>>,
    next_given_state_action: Vec<Vec<WeightedIndex<f64>>>,
    initial: WeightedIndex<f64>,
    terminal: Option<usize>,
    state: usize,
    rng: ChaCha8Rng,
}

fn column_sampler(t: &Tensor, fixed: &[(&str, usize)]) -> Result<WeightedIndex<f64>> {
    let mut t = t.clone();
    for &(axis, i) in fixed {
        t = t.select(axis, i)?;
    }
    WeightedIndex::new(t.data()).map_err(|e| Error::InvalidValue(format!("column: {e}")))
}

impl PomdpEnv {
    /// Samples from the means of `model`, which is normally a known-matrix
    /// model.
    pub fn new(model: &ModelParams, seed: u64) -> Result<Self> {
        let spec = model.spec();
        let a = model.a().mean();
        let b = model.b().mean();
        let obs_given_state = (0..spec.n_states)
            .map(|s| column_sampler(a, &[(STATE, s)]))
            .collect::<Result<_>>()?;
        let next_given_state_action = (0..spec.n_states)
            .map(|s| {
                (0..spec.n_actions)
                    .map(|u| column_sampler(b, &[(STATE, s), (ACTION, u)]))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        let initial = column_sampler(model.d().mean(), &[])?;
        Ok(Self {
            spec,
            obs_given_state,
            next_given_state_action,
            initial,
            terminal: None,
            state: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    /// Ends episodes on reaching `state`.
    pub fn with_terminal_state(mut self, state: usize) -> Result<Self> {
        if state >= self.spec.n_states {
            return Err(Error::OutOfRange(format!("terminal state {state}")));
        }
        self.terminal = Some(state);
        Ok(self)
    }

    fn observe(&mut self) -> usize {
        self.obs_given_state[self.state].sample(&mut self.rng)
    }
}

impl Environment for PomdpEnv {
    fn spec(&self) -> ModelSpec {
        self.spec
    }

    fn reset(&mut self) -> usize {
        self.state = self.initial.sample(&mut self.rng);
        self.observe()
    }

    fn step(&mut self, action: usize) -> Result<usize> {
        if action >= self.spec.n_actions {
            return Err(Error::OutOfRange(format!(
                "action {action} >= {}",
                self.spec.n_actions
            )));
        }
        self.state = self.next_given_state_action[self.state][action].sample(&mut self.rng);
        Ok(self.observe())
    }

    fn state(&self) -> usize {
        self.state
    }

    fn is_terminal(&self) -> bool {
        self.terminal == Some(self.state)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Cell {
    Wall,
    Free,
    Start,
    Goal,
}

impl Cell {
    fn is_free(self) -> bool {
        self != Cell::Wall
    }
}

/// Moves in action order. `stay` is present only in the five-action maze.
pub const MAZE_ACTIONS: [&str; 5] = ["up", "down", "left", "right", "stay"];

const MOVES: [(isize, isize); 5] = [(-1, 0), (1, 0), (0, -1), (0, 1), (0, 0)];

/// A rectangular grid in which every non-wall cell is a hidden state.
///
/// The text format has one row per line: `#` wall, `.` free, `S` start and
/// `G` goal. Blank lines are ignored.
#[derive(Clone, Debug, PartialEq)]
pub struct MazeSpec {
    rows: usize,
    cols: usize,
    cells: Vec<Cell>,
    /// Probability of observing a cell other than the true one.
    pub obs_noise: f64,
    /// 4 (no `stay`) or 5.
    pub n_actions: usize,
}

impl MazeSpec {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cells = Vec::new();
        let mut cols = None;
        let mut rows = 0;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.is_empty() {
                continue;
            }
            let row: Vec<Cell> = line
                .chars()
                .map(|c| match c {
                    '#' => Ok(Cell::Wall),
                    '.' => Ok(Cell::Free),
                    'S' => Ok(Cell::Start),
                    'G' => Ok(Cell::Goal),
                    other => Err(Error::Parse {
                        line: i + 1,
                        message: format!("unknown maze cell `{other}`"),
                    }),
                })
                .collect::<Result<_>>()?;
            match cols {
                None => cols = Some(row.len()),
                Some(c) if c != row.len() => {
                    return Err(Error::Parse {
                        line: i + 1,
                        message: format!("row has {} cells, expected {c}", row.len()),
                    })
                }
                Some(_) => {}
            }
            cells.extend(row);
            rows += 1;
        }
        let cols = cols.ok_or(Error::Empty("maze"))?;
        for (kind, name) in [(Cell::Start, "start"), (Cell::Goal, "goal")] {
            let count = cells.iter().filter(|&&c| c == kind).count();
            if count != 1 {
                return Err(Error::InvalidValue(format!(
                    "maze needs exactly one {name} cell, found {count}"
                )));
            }
        }
        Ok(Self {
            rows,
            cols,
            cells,
            obs_noise: 0.0,
            n_actions: 5,
        })
    }

    pub fn with_obs_noise(mut self, eps: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&eps) {
            return Err(Error::InvalidValue(format!("observation noise {eps}")));
        }
        self.obs_noise = eps;
        Ok(self)
    }

    pub fn with_actions(mut self, n: usize) -> Result<Self> {
        if n != 4 && n != 5 {
            return Err(Error::InvalidValue(format!("a maze has 4 or 5 actions, not {n}")));
        }
        self.n_actions = n;
        Ok(self)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn cell(&self, row: usize, col: usize) -> Cell {
        self.cells[row * self.cols + col]
    }

    /// Free cells in row-major order; the position in this list is the
    /// state index.
    pub fn free_cells(&self) -> Vec<(usize, usize)> {
        (0..self.rows)
            .flat_map(|r| (0..self.cols).map(move |c| (r, c)))
            .filter(|&(r, c)| self.cell(r, c).is_free())
            .collect()
    }

    pub fn n_states(&self) -> usize {
        self.free_cells().len()
    }

    fn state_of_kind(&self, kind: Cell) -> usize {
        self.free_cells()
            .iter()
            .position(|&(r, c)| self.cell(r, c) == kind)
            .expect("validated on parse")
    }

    pub fn start_state(&self) -> usize {
        self.state_of_kind(Cell::Start)
    }

    pub fn goal_state(&self) -> usize {
        self.state_of_kind(Cell::Goal)
    }

    /// The state reached from `state` by `action`; walls and edges block.
    pub fn move_from(&self, state: usize, action: usize) -> usize {
        let free = self.free_cells();
        let (r, c) = free[state];
        let (dr, dc) = MOVES[action];
        let (nr, nc) = (r as isize + dr, c as isize + dc);
        if nr < 0 || nc < 0 || nr >= self.rows as isize || nc >= self.cols as isize {
            return state;
        }
        let (nr, nc) = (nr as usize, nc as usize);
        if !self.cell(nr, nc).is_free() {
            return state;
        }
        free.iter().position(|&p| p == (nr, nc)).expect("free neighbour")
    }

    /// Breadth-first distance from start to goal, or `None` if unreachable.
    pub fn shortest_path_len(&self) -> Option<usize> {
        let n = self.n_states();
        let goal = self.goal_state();
        let mut dist = vec![usize::MAX; n];
        let mut queue = VecDeque::from([self.start_state()]);
        dist[self.start_state()] = 0;
        while let Some(s) = queue.pop_front() {
            if s == goal {
                return Some(dist[s]);
            }
            for a in 0..4 {
                let next = self.move_from(s, a);
                if dist[next] == usize::MAX {
                    dist[next] = dist[s] + 1;
                    queue.push_back(next);
                }
            }
        }
        None
    }

    /// Known-matrix model of the maze: one state and one observation per
    /// free cell, deterministic moves and `D` one-hot at the start.
    pub fn to_model(&self) -> Result<ModelParams> {
        if self.shortest_path_len().is_none() {
            log::warn!("the goal cannot be reached from the start");
        }
        let n = self.n_states();
        let eps = self.obs_noise;
        let a = Tensor::from_fn(
            vec![Axis::new(OBS, n)?, Axis::new(STATE, n)?],
            |ix| match (n, ix[0] == ix[1]) {
                (1, _) => 1.0,
                (_, true) => 1.0 - eps,
                (_, false) => eps / (n - 1) as f64,
            },
        )?;
        let b = Tensor::from_fn(
            vec![
                Axis::new(NEXT_STATE, n)?,
                Axis::new(STATE, n)?,
                Axis::new(ACTION, self.n_actions)?,
            ],
            |ix| f64::from(u8::from(self.move_from(ix[1], ix[2]) == ix[0])),
        )?;
        let d = CategoricalParams::one_hot(STATE, n, self.start_state())?
            .tensor()
            .clone();
        ModelParams::known(a, b, d)
    }

    /// Preferences one-hot at the goal, for both observations and states.
    pub fn goal_target(&self) -> Result<TargetDist> {
        let n = self.n_states();
        TargetDist::new(
            CategoricalParams::one_hot(OBS, n, self.goal_state())?,
            CategoricalParams::one_hot(STATE, n, self.goal_state())?,
        )
    }

    /// An environment that ends on reaching the goal.
    pub fn environment(&self, seed: u64) -> Result<PomdpEnv> {
        PomdpEnv::new(&self.to_model()?, seed)?.with_terminal_state(self.goal_state())
    }
}

impl fmt::Display for MazeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in 0..self.rows {
            for c in 0..self.cols {
                let ch = match self.cell(r, c) {
                    Cell::Wall => '#',
                    Cell::Free => '.',
                    Cell::Start => 'S',
                    Cell::Goal => 'G',
                };
                write!(f, "{ch}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}
