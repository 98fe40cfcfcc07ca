//! Grid navigation with items whose visiting order is rewarded by a reward
//! machine. The machine and the labeling are hidden from the learner; only
//! observations and scalar rewards come out.

use crate::automata::MooreMachine;
use crate::diffmath::Tensor;
use crate::error::{Error, Result};
use crate::tasks::{self, REWARD_SATISFIED, REWARD_VIOLATED};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Cell {
    pub x: usize,
    pub y: usize,
}

impl Cell {
    pub const fn new(x: usize, y: usize) -> Self {
        Self { x, y }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Up, Action::Down, Action::Left, Action::Right];

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("action {i} out of range")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ObsMode {
    Vector,
    Image,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridConfig {
    pub width: usize,
    pub height: usize,
    /// Item symbol index (into [`tasks::ALPHABET`]) and its cell.
    pub items: Vec<(usize, Cell)>,
    pub start: Cell,
    pub max_steps: usize,
    pub obs_mode: ObsMode,
    pub image_side: usize,
}

impl Default for GridConfig {
    /// 5×5, items a, b, c, d in the corners, start in the centre.
    fn default() -> Self {
        Self {
            width: 5,
            height: 5,
            items: vec![
                (0, Cell::new(0, 0)),
                (1, Cell::new(4, 0)),
                (2, Cell::new(0, 4)),
                (3, Cell::new(4, 4)),
            ],
            start: Cell::new(2, 2),
            max_steps: 75,
            obs_mode: ObsMode::Vector,
            image_side: 64,
        }
    }
}

/// Index of `e`, the label of cells without an item.
pub const EMPTY: usize = 4;

impl GridConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.width == 0 || self.height == 0 {
            return bad("grid dimensions must be positive".into());
        }
        if self.max_steps == 0 {
            return bad("max_steps must be positive".into());
        }
        let inside = |c: Cell| c.x < self.width && c.y < self.height;
        if !inside(self.start) {
            return bad(format!("start {:?} outside the grid", self.start));
        }
        for (i, &(sym, cell)) in self.items.iter().enumerate() {
            if sym >= EMPTY {
                return bad(format!("item symbol {sym} is not one of a-d"));
            }
            if !inside(cell) {
                return bad(format!("item cell {cell:?} outside the grid"));
            }
            if cell == self.start {
                return bad("start cell holds an item".into());
            }
            if self.items[..i].iter().any(|&(s, c)| s == sym || c == cell) {
                return bad(format!("duplicate item symbol or cell at {cell:?}"));
            }
        }
        if self.obs_mode == ObsMode::Image && self.image_side < self.width.max(self.height) {
            return bad(format!("image_side {} too small for the grid", self.image_side));
        }
        Ok(())
    }

    pub fn label_at(&self, cell: Cell) -> usize {
        self.items
            .iter()
            .find(|&&(_, c)| c == cell)
            .map_or(EMPTY, |&(s, _)| s)
    }

    pub fn obs_shape(&self) -> Vec<usize> {
        match self.obs_mode {
            ObsMode::Vector => vec![2],
            ObsMode::Image => vec![self.image_side, self.image_side, 3],
        }
    }

    pub fn obs_len(&self) -> usize {
        self.obs_shape().iter().product()
    }

    /// Pixels per grid cell in image mode.
    pub fn cell_pixels(&self) -> usize {
        self.image_side / self.width.max(self.height)
    }

    pub fn vector_obs(&self, cell: Cell) -> Vec<f64> {
        let scale = |v: usize, n: usize| if n > 1 { v as f64 / (n - 1) as f64 } else { 0.0 };
        vec![scale(cell.x, self.width), scale(cell.y, self.height)]
    }

    pub fn observe(&self, cell: Cell) -> Tensor {
        let data = match self.obs_mode {
            ObsMode::Vector => self.vector_obs(cell),
            ObsMode::Image => self.render(cell),
        };
        Tensor::new(self.obs_shape(), data).expect("observation shape matches data")
    }

    /// HWC raster in [0,1]: black background, a solid square per item, and a
    /// white square marker inset in the agent's cell, drawn over any item.
    pub fn render(&self, agent: Cell) -> Vec<f64> {
        const COLORS: [[f64; 3]; 4] = [
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
            [1.0, 1.0, 0.0],
        ];
        let side = self.image_side;
        let c = self.cell_pixels();
        let mut img = vec![0.0; side * side * 3];
        let mut fill = |cell: Cell, inset: usize, rgb: [f64; 3]| {
            for py in cell.y * c + inset..(cell.y + 1) * c - inset {
                for px in cell.x * c + inset..(cell.x + 1) * c - inset {
                    let o = (py * side + px) * 3;
                    img[o..o + 3].copy_from_slice(&rgb);
                }
            }
        };
        for &(sym, cell) in &self.items {
            fill(cell, 0, COLORS[sym]);
        }
        let border = (c / 4).max(1).min((c - 1) / 2);
        fill(agent, border, [1.0, 1.0, 1.0]);
        img
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Satisfied,
    Violated,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvState {
    pub agent: Cell,
    pub steps: usize,
    pub machine_state: usize,
    pub done: bool,
    pub verdict: Option<Verdict>,
}

#[derive(Clone, Debug)]
pub struct Step {
    pub obs: Tensor,
    pub reward: f64,
    pub done: bool,
    /// Ground-truth label of the entered cell, for diagnostics only.
    pub label: usize,
}

/// The composition of the labeling and a task machine, driven by moves.
#[derive(Clone, Debug)]
pub struct GridWorld {
    config: GridConfig,
    machine: MooreMachine,
    state: EnvState,
}

impl GridWorld {
    pub fn new(config: GridConfig, machine: MooreMachine) -> Result<Self> {
        config.validate()?;
        if machine.num_symbols() != tasks::ALPHABET.len() {
            return Err(Error::AlphabetMismatch(tasks::ALPHABET.len(), machine.num_symbols()));
        }
        let state = EnvState {
            agent: config.start,
            steps: 0,
            machine_state: machine.initial(),
            done: false,
            verdict: None,
        };
        Ok(Self { config, machine, state })
    }

    pub fn config(&self) -> &GridConfig {
        &self.config
    }

    pub fn machine(&self) -> &MooreMachine {
        &self.machine
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    /// Transitions are deterministic, so no seed is involved.
    pub fn reset(&mut self) -> Tensor {
        self.state = EnvState {
            agent: self.config.start,
            steps: 0,
            machine_state: self.machine.initial(),
            done: false,
            verdict: None,
        };
        self.config.observe(self.state.agent)
    }

    pub fn label(&self) -> usize {
        self.config.label_at(self.state.agent)
    }

    pub fn step(&mut self, action: Action) -> Result<Step> {
        if self.state.done {
            return Err(Error::EpisodeFinished);
        }
        let Cell { x, y } = self.state.agent;
        let (w, h) = (self.config.width, self.config.height);
        self.state.agent = match action {
            Action::Up => Cell::new(x, y.saturating_sub(1)),
            Action::Down => Cell::new(x, (y + 1).min(h - 1)),
            Action::Left => Cell::new(x.saturating_sub(1), y),
            Action::Right => Cell::new((x + 1).min(w - 1), y),
        };
        self.state.steps += 1;
        let label = self.label();
        self.state.machine_state = self.machine.next(self.state.machine_state, label);
        let reward = self.machine.output(self.state.machine_state);
        self.state.verdict = if reward == REWARD_SATISFIED {
            Some(Verdict::Satisfied)
        } else if reward == REWARD_VIOLATED {
            Some(Verdict::Violated)
        } else {
            None
        };
        self.state.done = self.state.verdict.is_some() || self.state.steps >= self.config.max_steps;
        Ok(Step {
            obs: self.config.observe(self.state.agent),
            reward,
            done: self.state.done,
            label,
        })
    }
}
