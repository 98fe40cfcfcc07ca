use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{a2c_update, a2c_update_rnn, ActorCritic, AgentConfig, ObsSpec, RnnNets, Segment};
use crate::diffmath::{Adam, Tensor};
use crate::error::{Error, Result};
use crate::flnrm::{step_belief, Episode, EpisodeBuffer, Flnrm, GrounderSpec, RewardVocab, TrainOptions};
use crate::gridworld::{Action, GridConfig, GridWorld, ObsMode};
use crate::tasks::{TaskSpec, REWARD_SATISFIED};

/// Per-component RNG streams derived from one seed.
pub mod streams {
    pub const ENV: u64 = 0;
    pub const POLICY_INIT: u64 = 1;
    pub const FLNRM_INIT: u64 = 2;
    pub const ACTIONS: u64 = 3;
    pub const FLNRM_SHUFFLE: u64 = 4;
    pub const DATA: u64 = 5;
}

/// ChaCha8 keyed by `seed`, on stream `stream`.
pub fn component_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    Flnrm,
    Rnn,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Flnrm => "flnrm",
            Method::Rnn => "rnn",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "flnrm" => Ok(Method::Flnrm),
            "rnn" => Ok(Method::Rnn),
            _ => Err(Error::Config(format!("unknown method `{s}` (flnrm|rnn)"))),
        }
    }
}

pub fn obs_spec(cfg: &GridConfig) -> ObsSpec {
    match cfg.obs_mode {
        ObsMode::Vector => ObsSpec::Vector(2),
        ObsMode::Image => ObsSpec::Image {
            side: cfg.image_side,
            channels: 3,
        },
    }
}

pub fn grounder_spec(cfg: &GridConfig) -> GrounderSpec {
    match cfg.obs_mode {
        ObsMode::Vector => GrounderSpec::Mlp { input: 2 },
        ObsMode::Image => GrounderSpec::Conv {
            side: cfg.image_side,
            channels: 3,
        },
    }
}

/// Everything observed during one episode.
#[derive(Clone, Debug, Default)]
pub struct Rollout {
    pub segment: Segment,
    /// Observation after each action; these feed the FLNRM buffer.
    pub next_obs: Vec<Tensor>,
    pub labels: Vec<usize>,
    /// Hidden machine state of the environment after each step.
    pub machine_states: Vec<usize>,
    /// Belief after each step (FLNRM agents only).
    pub beliefs: Vec<Vec<f64>>,
}

impl Rollout {
    pub fn success(&self) -> bool {
        self.segment.rewards.last() == Some(&REWARD_SATISFIED)
    }

    pub fn episode_return(&self) -> f64 {
        self.segment.rewards.iter().sum()
    }
}

/// Runs one episode. `history` is called with each new observation and
/// returns the extra features for the next decision.
fn run_episode(
    env: &mut GridWorld,
    ac: &ActorCritic,
    initial_extra: Vec<f64>,
    mut history: impl FnMut(&Tensor) -> Result<Vec<f64>>,
    keep_beliefs: bool,
    rng: &mut impl Rng,
) -> Result<Rollout> {
    let mut obs = env.reset();
    let mut extra = initial_extra;
    let mut r = Rollout::default();
    loop {
        let out = ac.act(&obs, &extra, rng)?;
        let step = env.step(Action::from_index(out.action)?)?;
        r.segment.obs.push(obs);
        r.segment.extras.push(extra);
        r.segment.actions.push(out.action);
        r.segment.rewards.push(step.reward);
        r.labels.push(step.label);
        r.machine_states.push(env.state().machine_state);
        extra = history(&step.obs)?;
        if keep_beliefs {
            r.beliefs.push(extra.clone());
        }
        r.next_obs.push(step.obs.clone());
        obs = step.obs;
        if step.done {
            if env.state().verdict.is_none() {
                r.segment.bootstrap = ac.evaluate(&obs, &extra)?.1;
            }
            return Ok(r);
        }
    }
}

/// A2C agent whose observations are augmented with the FLNRM belief.
#[derive(Clone, Debug)]
pub struct FlnrmAgent {
    pub ac: ActorCritic,
    pub model: Flnrm,
    pub vocab: RewardVocab,
    pub buffer: EpisodeBuffer,
    pub last_loss: Option<f64>,
    pub retrains: usize,
    cfg: AgentConfig,
    ac_opt: Adam,
    flnrm_opt: Adam,
}

impl FlnrmAgent {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        grid: &GridConfig,
        task: &TaskSpec,
        symbols: usize,
        states: usize,
        tau: f64,
        cfg: &AgentConfig,
        policy_rng: &mut impl Rng,
        flnrm_rng: &mut impl Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        let rewards = task.reward_values.len();
        Ok(Self {
            ac: ActorCritic::new(obs_spec(grid), states, Action::ALL.len(), cfg.hidden, policy_rng)?,
            model: Flnrm::new(&grounder_spec(grid), symbols, states, rewards, tau, flnrm_rng)?,
            vocab: RewardVocab::new(rewards),
            buffer: EpisodeBuffer::new(cfg.buffer_capacity)?,
            last_loss: None,
            retrains: 0,
            cfg: cfg.clone(),
            ac_opt: Adam::new(cfg.lr)?,
            flnrm_opt: Adam::new(cfg.lr)?,
        })
    }

    /// One episode with the belief tracked alongside; no learning.
    pub fn rollout(&self, env: &mut GridWorld, rng: &mut impl Rng) -> Result<Rollout> {
        let (t, _) = self.model.machine_matrices()?;
        let mut q = self.model.initial_belief();
        let model = &self.model;
        run_episode(
            env,
            &self.ac,
            q.clone(),
            |obs| {
                q = step_belief(&q, &model.ground(obs)?, &t)?;
                Ok(q.clone())
            },
            true,
            rng,
        )
    }

    /// Stores the episode for FLNRM training and takes one A2C step.
    pub fn learn(&mut self, r: &Rollout) -> Result<()> {
        for &x in &r.segment.rewards {
            self.vocab.observe(x)?;
        }
        self.buffer.push(&r.next_obs, &r.segment.rewards, &r.labels)?;
        a2c_update(&mut self.ac, &r.segment, &self.cfg, &mut self.ac_opt)?;
        Ok(())
    }

    pub fn retrain(&mut self, rng: &mut impl Rng) -> Result<Vec<f64>> {
        let episodes: Vec<&Episode> = self.buffer.episodes().collect();
        let opts = TrainOptions {
            epochs: self.cfg.flnrm_epochs,
            batch_size: self.cfg.flnrm_batch,
        };
        let history = self
            .model
            .train(&self.buffer.pool, &episodes, &self.vocab, &opts, &mut self.flnrm_opt, rng)?;
        self.retrains += 1;
        if let Some(&l) = history.last() {
            self.last_loss = Some(l);
        }
        Ok(history)
    }
}

/// A2C agent with an LSTM carrying history.
#[derive(Clone, Debug)]
pub struct RnnAgent {
    pub nets: RnnNets,
    cfg: AgentConfig,
    opt: Adam,
}

impl RnnAgent {
    pub fn new(grid: &GridConfig, cfg: &AgentConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            nets: RnnNets::new(obs_spec(grid), Action::ALL.len(), cfg.hidden, rng)?,
            cfg: cfg.clone(),
            opt: Adam::new(cfg.lr)?,
        })
    }

    pub fn rollout(&self, env: &mut GridWorld, rng: &mut impl Rng) -> Result<Rollout> {
        let nets = &self.nets;
        let mut state = nets.lstm.zero_state();
        let features = |obs: &Tensor| -> Result<Tensor> {
            let f = nets.ac.obs_features(obs)?;
            Tensor::new(vec![1, f.len()], f)
        };
        // the LSTM sees the start observation before the first decision
        let start = env.reset();
        let first = nets.lstm.step(&features(&start)?, &mut state)?.into_data();
        run_episode(
            env,
            &nets.ac,
            first,
            |obs| Ok(nets.lstm.step(&features(obs)?, &mut state)?.into_data()),
            false,
            rng,
        )
    }

    pub fn learn(&mut self, r: &Rollout) -> Result<()> {
        a2c_update_rnn(&mut self.nets, &r.segment, &self.cfg, &mut self.opt)?;
        Ok(())
    }
}

/// Stop once the success rate over the last `window` episodes reaches
/// `threshold`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StopRule {
    pub window: usize,
    pub threshold: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpisodeMetrics {
    pub episode: usize,
    pub seed: u64,
    pub method: String,
    pub task: usize,
    #[serde(rename = "return")]
    pub episode_return: f64,
    pub success: u8,
    pub steps: usize,
    pub flnrm_loss: Option<f64>,
}

pub enum TrainedAgent {
    Flnrm(Box<FlnrmAgent>),
    Rnn(Box<RnnAgent>),
}

pub struct TrainingOutcome {
    pub metrics: Vec<EpisodeMetrics>,
    pub agent: TrainedAgent,
    /// Episode (1-based) at which the stop rule fired, if it did.
    pub stopped_at: Option<usize>,
}

impl TrainingOutcome {
    pub fn flnrm(&self) -> Option<&FlnrmAgent> {
        match &self.agent {
            TrainedAgent::Flnrm(a) => Some(a),
            TrainedAgent::Rnn(_) => None,
        }
    }
}

/// Success rate over the last `window` rows, or `None` with fewer rows.
pub fn windowed_success(metrics: &[EpisodeMetrics], window: usize) -> Option<f64> {
    if window == 0 || metrics.len() < window {
        return None;
    }
    let tail = &metrics[metrics.len() - window..];
    Some(tail.iter().map(|m| m.success as f64).sum::<f64>() / window as f64)
}

/// Alternates episodes and A2C updates; FLNRM agents retrain their machine
/// every `retrain_every` episodes on the episode buffer.
#[allow(clippy::too_many_arguments)]
pub fn training_loop(
    grid: &GridConfig,
    task: &TaskSpec,
    method: Method,
    cfg: &AgentConfig,
    flnrm_sizes: (usize, usize),
    tau: f64,
    seed: u64,
    episodes: usize,
    stop: Option<StopRule>,
) -> Result<TrainingOutcome> {
    let mut env = GridWorld::new(grid.clone(), task.compile()?)?;
    let mut policy_rng = component_rng(seed, streams::POLICY_INIT);
    let mut act_rng = component_rng(seed, streams::ACTIONS);
    let mut metrics = Vec::with_capacity(episodes);
    let mut stopped_at = None;

    let mut flnrm_agent = None;
    let mut rnn_agent = None;
    match method {
        Method::Flnrm => {
            let mut init = component_rng(seed, streams::FLNRM_INIT);
            let (symbols, states) = flnrm_sizes;
            flnrm_agent = Some(FlnrmAgent::new(grid, task, symbols, states, tau, cfg, &mut policy_rng, &mut init)?);
        }
        Method::Rnn => rnn_agent = Some(RnnAgent::new(grid, cfg, &mut policy_rng)?),
    }
    let mut shuffle_rng = component_rng(seed, streams::FLNRM_SHUFFLE);

    for episode in 1..=episodes {
        let (rollout, loss) = if let Some(agent) = flnrm_agent.as_mut() {
            let r = agent.rollout(&mut env, &mut act_rng)?;
            agent.learn(&r)?;
            if episode % cfg.retrain_every == 0 {
                agent.retrain(&mut shuffle_rng)?;
            }
            (r, agent.last_loss)
        } else {
            let agent = rnn_agent.as_mut().expect("one agent is set");
            let r = agent.rollout(&mut env, &mut act_rng)?;
            agent.learn(&r)?;
            (r, None)
        };
        metrics.push(EpisodeMetrics {
            episode,
            seed,
            method: method.to_string(),
            task: task.id,
            episode_return: rollout.episode_return(),
            success: rollout.success() as u8,
            steps: rollout.segment.len(),
            flnrm_loss: loss,
        });
        if let Some(rule) = stop {
            if windowed_success(&metrics, rule.window).is_some_and(|s| s >= rule.threshold) {
                stopped_at = Some(episode);
                break;
            }
        }
    }
    let agent = match (flnrm_agent, rnn_agent) {
        (Some(a), _) => TrainedAgent::Flnrm(Box::new(a)),
        (_, Some(a)) => TrainedAgent::Rnn(Box::new(a)),
        _ => unreachable!("exactly one agent is constructed"),
    };
    Ok(TrainingOutcome {
        metrics,
        agent,
        stopped_at,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::task;

    #[test]
    fn injected_machine_tracks_env_state() {
        let t = task(5).unwrap();
        let m = t.compile().unwrap();
        let grid = GridConfig::default();
        let cfg = AgentConfig::default();
        let mut agent = FlnrmAgent::new(
            &grid,
            &t,
            5,
            m.num_states(),
            0.5,
            &cfg,
            &mut component_rng(0, 1),
            &mut component_rng(0, 2),
        )
        .unwrap();
        agent.model.inject_exact(&m).unwrap();
        let (tm, rm) = agent.model.machine_matrices().unwrap();
        let mut env = GridWorld::new(grid, m.clone()).unwrap();
        let mut rng = component_rng(0, 3);
        // with perfect grounding the belief stays on the environment's state
        // (up to the swap that puts the initial state first)
        let relabel = |s: usize| match s {
            s if s == m.initial() => 0,
            0 => m.initial(),
            s => s,
        };
        for _ in 0..20 {
            let r = agent.rollout(&mut env, &mut rng).unwrap();
            let mut q = agent.model.initial_belief();
            for ((&label, &s), &reward) in r.labels.iter().zip(&r.machine_states).zip(&r.segment.rewards) {
                let mut p = vec![0.0; 5];
                p[label] = 1.0;
                q = step_belief(&q, &p, &tm).unwrap();
                let mut one = vec![0.0; m.num_states()];
                one[relabel(s)] = 1.0;
                assert_eq!(q, one);
                let dist = crate::flnrm::reward_distribution(&q, &rm).unwrap();
                let k = t.reward_values.iter().position(|&v| v == reward).unwrap();
                assert_eq!(dist[k], 1.0);
            }
        }
    }

    #[test]
    fn loop_metrics_and_retrain_schedule() {
        let grid = GridConfig::default();
        let cfg = AgentConfig {
            retrain_every: 3,
            flnrm_epochs: 1,
            ..AgentConfig::default()
        };
        let out = training_loop(&grid, &task(1).unwrap(), Method::Flnrm, &cfg, (5, 5), 0.5, 7, 10, None).unwrap();
        assert_eq!(out.metrics.len(), 10);
        let agent = out.flnrm().unwrap();
        assert_eq!(agent.retrains, 3);
        assert_eq!(agent.buffer.len(), 10);
        assert!(out.metrics[..2].iter().all(|m| m.flnrm_loss.is_none()));
        assert!(out.metrics[3].flnrm_loss.is_some());
        for m in &out.metrics {
            assert_eq!(m.success == 1, m.episode_return == 1.0);
            assert!(m.steps <= grid.max_steps);
        }
    }

    #[test]
    fn rnn_rollouts_are_reproducible() {
        let grid = GridConfig::default();
        let cfg = AgentConfig::default();
        let agent = RnnAgent::new(&grid, &cfg, &mut component_rng(1, 1)).unwrap();
        let t = task(1).unwrap().compile().unwrap();
        let mut env = GridWorld::new(grid, t).unwrap();
        let a = agent.rollout(&mut env, &mut component_rng(1, 3)).unwrap();
        let b = agent.rollout(&mut env, &mut component_rng(1, 3)).unwrap();
        assert_eq!(a.segment, b.segment);
        assert_eq!(a.segment.len(), a.labels.len());
        let zero = agent.nets.lstm.zero_state();
        assert!(zero.h.iter().chain(&zero.c).flat_map(|t| t.data()).all(|&v| v == 0.0));
    }

    #[test]
    fn method_parsing() {
        assert_eq!("flnrm".parse::<Method>().unwrap(), Method::Flnrm);
        assert_eq!(Method::Rnn.to_string(), "rnn");
        assert!("ppo".parse::<Method>().is_err());
    }
}
