//! Flat `key = value` experiment configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::agents::{AgentConfig, Method, StopRule};
use crate::error::{Error, Result};
use crate::gridworld::{Cell, GridConfig, ObsMode};
use crate::tasks;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub task: usize,
    pub env_mode: ObsMode,
    pub method: Method,
    pub num_states: usize,
    pub num_symbols: usize,
    pub tau: f64,
    pub seeds: Vec<u64>,
    pub episodes: usize,
    /// Stop a seed early once the windowed success rate reaches this.
    pub stop_threshold: Option<f64>,
    pub stop_window: usize,
    pub out: PathBuf,
    pub grid: GridConfig,
    pub agent: AgentConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            task: 1,
            env_mode: ObsMode::Vector,
            method: Method::Flnrm,
            num_states: 5,
            num_symbols: 5,
            tau: 0.5,
            seeds: vec![1, 2, 3, 4, 5],
            episodes: 2000,
            stop_threshold: None,
            stop_window: 100,
            out: PathBuf::from("runs/default"),
            grid: GridConfig::default(),
            agent: AgentConfig::default(),
        }
    }
}

fn bad(key: &str, value: &str) -> Error {
    Error::Config(format!("bad value `{value}` for `{key}`"))
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| bad(key, value))
}

fn opt_f64(key: &str, value: &str) -> Result<Option<f64>> {
    if value == "none" {
        Ok(None)
    } else {
        num(key, value).map(Some)
    }
}

fn cell(key: &str, value: &str) -> Result<Cell> {
    let (x, y) = value.split_once(',').ok_or_else(|| bad(key, value))?;
    Ok(Cell::new(num(key, x.trim())?, num(key, y.trim())?))
}

fn show_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "none".to_string(), |x| x.to_string())
}

const ITEM_KEYS: [&str; 4] = ["item_a", "item_b", "item_c", "item_d"];

impl RunConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key.trim() {
            "task" => self.task = num(key, value)?,
            "env_mode" => {
                self.env_mode = match value {
                    "vector" => ObsMode::Vector,
                    "image" => ObsMode::Image,
                    _ => return Err(bad(key, value)),
                };
                self.grid.obs_mode = self.env_mode;
            }
            "method" => self.method = value.parse()?,
            "num_states" => self.num_states = num(key, value)?,
            "num_symbols" => self.num_symbols = num(key, value)?,
            "tau" => self.tau = num(key, value)?,
            "lr" => self.agent.lr = num(key, value)?,
            "seeds" => {
                self.seeds = value
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| num(key, s.trim()))
                    .collect::<Result<_>>()?
            }
            "episodes" => self.episodes = num(key, value)?,
            "stop_threshold" => self.stop_threshold = opt_f64(key, value)?,
            "stop_window" => self.stop_window = num(key, value)?,
            "out" => self.out = PathBuf::from(value),
            "width" => self.grid.width = num(key, value)?,
            "height" => self.grid.height = num(key, value)?,
            "start" => self.grid.start = cell(key, value)?,
            "max_steps" => self.grid.max_steps = num(key, value)?,
            "image_side" => self.grid.image_side = num(key, value)?,
            "gamma" => self.agent.gamma = num(key, value)?,
            "entropy_coef" => self.agent.entropy_coef = num(key, value)?,
            "value_coef" => self.agent.value_coef = num(key, value)?,
            "hidden" => self.agent.hidden = num(key, value)?,
            "retrain_every" => self.agent.retrain_every = num(key, value)?,
            "flnrm_epochs" => self.agent.flnrm_epochs = num(key, value)?,
            "flnrm_batch" => self.agent.flnrm_batch = num(key, value)?,
            "buffer_capacity" => self.agent.buffer_capacity = num(key, value)?,
            "max_grad_norm" => self.agent.max_grad_norm = opt_f64(key, value)?,
            k => {
                let Some(i) = ITEM_KEYS.iter().position(|&x| x == k) else {
                    return Err(Error::Config(format!("unknown key `{k}`")));
                };
                self.grid.items.retain(|&(s, _)| s != i);
                if value != "none" {
                    self.grid.items.push((i, cell(key, value)?));
                    self.grid.items.sort_by_key(|&(s, _)| s);
                }
            }
        }
        Ok(())
    }

    /// Parses a config file body over the defaults. Blank lines and `#`
    /// comments are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Every key, in a fixed order; `parse(to_text())` reproduces `self`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("task", self.task.to_string());
        kv(
            "env_mode",
            match self.env_mode {
                ObsMode::Vector => "vector",
                ObsMode::Image => "image",
            }
            .into(),
        );
        kv("method", self.method.to_string());
        kv("num_states", self.num_states.to_string());
        kv("num_symbols", self.num_symbols.to_string());
        kv("tau", self.tau.to_string());
        kv("lr", self.agent.lr.to_string());
        let seeds: Vec<String> = self.seeds.iter().map(|s| s.to_string()).collect();
        kv("seeds", seeds.join(","));
        kv("episodes", self.episodes.to_string());
        kv("stop_threshold", show_opt(self.stop_threshold));
        kv("stop_window", self.stop_window.to_string());
        kv("out", self.out.display().to_string());
        kv("width", self.grid.width.to_string());
        kv("height", self.grid.height.to_string());
        for (i, key) in ITEM_KEYS.iter().enumerate() {
            let v = match self.grid.items.iter().find(|&&(s, _)| s == i) {
                Some((_, c)) => format!("{},{}", c.x, c.y),
                None => "none".into(),
            };
            kv(key, v);
        }
        kv("start", format!("{},{}", self.grid.start.x, self.grid.start.y));
        kv("max_steps", self.grid.max_steps.to_string());
        kv("image_side", self.grid.image_side.to_string());
        kv("gamma", self.agent.gamma.to_string());
        kv("entropy_coef", self.agent.entropy_coef.to_string());
        kv("value_coef", self.agent.value_coef.to_string());
        kv("hidden", self.agent.hidden.to_string());
        kv("retrain_every", self.agent.retrain_every.to_string());
        kv("flnrm_epochs", self.agent.flnrm_epochs.to_string());
        kv("flnrm_batch", self.agent.flnrm_batch.to_string());
        kv("buffer_capacity", self.agent.buffer_capacity.to_string());
        kv("max_grad_norm", show_opt(self.agent.max_grad_norm));
        out
    }

    pub fn grid_config(&self) -> GridConfig {
        GridConfig {
            obs_mode: self.env_mode,
            ..self.grid.clone()
        }
    }

    pub fn stop_rule(&self) -> Option<StopRule> {
        self.stop_threshold.map(|threshold| StopRule {
            window: self.stop_window,
            threshold,
        })
    }

    pub fn validate(&self) -> Result<()> {
        tasks::task(self.task)?;
        self.grid_config().validate()?;
        self.agent.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        if self.episodes == 0 || self.num_states == 0 || self.stop_window == 0 {
            return Err(Error::Config("episodes, num_states and stop_window must be positive".into()));
        }
        if self.num_symbols == 0 {
            return Err(Error::Config("num_symbols must be positive".into()));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::Config(format!("tau must lie in (0, 1], got {}", self.tau)));
        }
        if let Some(t) = self.stop_threshold {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::Config(format!("stop_threshold must lie in [0, 1], got {t}")));
            }
        }
        if self.out.as_os_str().is_empty() {
            return Err(Error::Config("output directory is required".into()));
        }
        Ok(())
    }
}
