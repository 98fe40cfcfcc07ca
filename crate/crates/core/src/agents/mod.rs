//! Advantage actor-critic over observations augmented with extra history
//! features: the FLNRM belief state, or the output of a recurrent baseline.

pub mod training;

pub use training::{
    component_rng, streams, training_loop, EpisodeMetrics, FlnrmAgent, Method, RnnAgent, Rollout, StopRule, TrainedAgent,
    TrainingOutcome,
};

use rand::Rng;

use crate::diffmath::graph::Var;
use crate::diffmath::nn::{Activation, ConvStack, Lstm, Mlp};
use crate::diffmath::tensor::{self, argmax};
use crate::diffmath::{Adam, Graph, Parameterized, Tensor};
use crate::error::{shape_err, Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct AgentConfig {
    pub gamma: f64,
    pub lr: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub hidden: usize,
    /// Episodes between FLNRM retrains.
    pub retrain_every: usize,
    pub flnrm_epochs: usize,
    pub flnrm_batch: usize,
    pub buffer_capacity: usize,
    pub max_grad_norm: Option<f64>,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lr: 0.0004,
            entropy_coef: 0.01,
            value_coef: 0.5,
            hidden: 120,
            retrain_every: 100,
            flnrm_epochs: 20,
            flnrm_batch: 32,
            buffer_capacity: 1000,
            max_grad_norm: None,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if self.hidden == 0 || self.retrain_every == 0 || self.flnrm_batch == 0 || self.buffer_capacity == 0 {
            return bad("hidden, retrain_every, flnrm_batch and buffer_capacity must be positive");
        }
        Ok(())
    }
}

/// Raw observation layout as seen by a network.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ObsSpec {
    Vector(usize),
    Image { side: usize, channels: usize },
}

impl ObsSpec {
    pub fn shape(&self) -> Vec<usize> {
        match *self {
            ObsSpec::Vector(n) => vec![n],
            ObsSpec::Image { side, channels } => vec![side, side, channels],
        }
    }

    fn stack(&self, obs: &[&Tensor]) -> Result<Tensor> {
        let shape = self.shape();
        let mut data = Vec::with_capacity(obs.len() * shape.iter().product::<usize>());
        for o in obs {
            if o.shape() != shape.as_slice() {
                return shape_err("observation", format!("{:?}, expected {shape:?}", o.shape()));
            }
            data.extend_from_slice(o.data());
        }
        let mut full = vec![obs.len()];
        full.extend(shape);
        Tensor::new(full, data)
    }
}

/// Concatenates observation features with a belief (or any history vector).
pub fn augment(features: &[f64], q: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(features.len() + q.len());
    out.extend_from_slice(features);
    out.extend_from_slice(q);
    out
}

/// Policy and value heads, each one hidden tanh layer, over
/// `[observation features ‖ extra]`. Image observations first pass through
/// a conv stack shared by both heads.
#[derive(Clone, Debug, PartialEq)]
pub struct ActorCritic {
    pub obs: ObsSpec,
    pub extra: usize,
    pub features: Option<ConvStack>,
    pub policy: Mlp,
    pub value: Mlp,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActOutput {
    pub action: usize,
    pub log_prob: f64,
    pub value: f64,
    pub probs: Vec<f64>,
}

impl ActorCritic {
    pub fn new(obs: ObsSpec, extra: usize, actions: usize, hidden: usize, rng: &mut impl Rng) -> Result<Self> {
        let (features, width) = match obs {
            ObsSpec::Vector(n) => (None, n),
            ObsSpec::Image { side, channels } => {
                let c = ConvStack::new("features", side, channels, rng)?;
                let w = c.out_features();
                (Some(c), w)
            }
        };
        let input = width + extra;
        Ok(Self {
            obs,
            extra,
            features,
            policy: Mlp::new("policy", &[input, hidden, actions], Activation::Tanh, rng),
            value: Mlp::new("value", &[input, hidden, 1], Activation::Tanh, rng),
        })
    }

    pub fn num_actions(&self) -> usize {
        self.policy.output()
    }

    pub fn input_dim(&self) -> usize {
        self.policy.input()
    }

    /// Flattened observation features (identity for vectors).
    pub fn obs_features(&self, obs: &Tensor) -> Result<Vec<f64>> {
        let x = self.obs.stack(&[obs])?;
        match &self.features {
            None => Ok(x.into_data()),
            Some(c) => Ok(c.forward(&x)?.into_data()),
        }
    }

    /// Action distribution and value for one step, without recording.
    pub fn evaluate(&self, obs: &Tensor, extra: &[f64]) -> Result<(Vec<f64>, f64)> {
        if extra.len() != self.extra {
            return shape_err("augment", format!("extra has {} values, expected {}", extra.len(), self.extra));
        }
        let x = augment(&self.obs_features(obs)?, extra);
        let x = Tensor::new(vec![1, x.len()], x)?;
        let logits = self.policy.forward(&x)?;
        logits.check_finite("policy logits")?;
        let probs = tensor::softmax_temp(&logits, 1.0, 1)?.into_data();
        let value = self.value.forward(&x)?.item();
        Ok((probs, value))
    }

    /// Samples an action by inverse CDF on one uniform draw.
    pub fn act(&self, obs: &Tensor, extra: &[f64], rng: &mut impl Rng) -> Result<ActOutput> {
        let (probs, value) = self.evaluate(obs, extra)?;
        let action = sample(&probs, rng.random::<f64>());
        Ok(ActOutput {
            action,
            log_prob: probs[action].max(tensor::LOG_CLAMP).ln(),
            value,
            probs,
        })
    }

    pub fn greedy(&self, obs: &Tensor, extra: &[f64]) -> Result<usize> {
        Ok(argmax(&self.evaluate(obs, extra)?.0))
    }

    /// Records action probabilities `[T × A]` and values `[T × 1]` for a
    /// batch of observations and an extra-feature node `[T × extra]`.
    pub fn forward_graph(&self, g: &mut Graph, obs: &[&Tensor], extra: Var) -> Result<(Var, Var)> {
        let x = g.constant(self.obs.stack(obs)?)?;
        let feats = match &self.features {
            None => x,
            Some(c) => {
                let b = c.bind(g)?;
                b.forward(g, x)?
            }
        };
        let input = if self.extra == 0 { feats } else { g.concat_cols(&[feats, extra])? };
        let policy = self.policy.bind(g)?;
        let logits = policy.forward(g, input)?;
        let probs = g.softmax_rows(logits, 1.0)?;
        let value = self.value.bind(g)?;
        let v = value.forward(g, input)?;
        Ok((probs, v))
    }
}

impl Parameterized for ActorCritic {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        if let Some(c) = &self.features {
            c.visit_params(f);
        }
        self.policy.visit_params(f);
        self.value.visit_params(f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        if let Some(c) = &mut self.features {
            c.visit_params_mut(f);
        }
        self.policy.visit_params_mut(f);
        self.value.visit_params_mut(f);
    }
}

/// Index `i` with `Σ_{k<i} p_k ≤ u < Σ_{k≤i} p_k`; falls back to the last
/// index under rounding.
pub fn sample(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Discounted returns `G_t = r_t + γ G_{t+1}` with `G_T = bootstrap`.
pub fn discounted_returns(rewards: &[f64], gamma: f64, bootstrap: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut g = bootstrap;
    for t in (0..rewards.len()).rev() {
        g = rewards[t] + gamma * g;
        out[t] = g;
    }
    out
}

/// A trajectory segment: what the agent saw, did and received.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Segment {
    /// Observation before each action.
    pub obs: Vec<Tensor>,
    /// Extra features before each action (belief for FLNRM).
    pub extras: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    /// Value of the state after the last step; zero when the episode ended
    /// with a verdict.
    pub bootstrap: f64,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub grad_norm: f64,
}

/// Combined loss `−Σ A_t log π(a_t) + c_v Σ (G_t − V_t)² − c_e Σ H(π_t)`,
/// advantages held constant. `extra` records the extra-feature node.
pub(crate) fn a2c_step<P: Parameterized>(
    params: &mut P,
    ac: impl Fn(&P) -> &ActorCritic,
    extra: impl Fn(&P, &mut Graph) -> Result<Var>,
    seg: &Segment,
    cfg: &AgentConfig,
    opt: &mut Adam,
) -> Result<UpdateStats> {
    if seg.is_empty() {
        return Err(Error::InvalidArgument("empty trajectory segment".into()));
    }
    let n = seg.len();
    let mut g = Graph::new();
    let x = extra(params, &mut g)?;
    let obs: Vec<&Tensor> = seg.obs.iter().collect();
    let (probs, values) = ac(params).forward_graph(&mut g, &obs, x)?;
    let returns = discounted_returns(&seg.rewards, cfg.gamma, seg.bootstrap);
    let adv: Vec<f64> = returns
        .iter()
        .zip(g.value(values).data())
        .map(|(r, v)| r - v)
        .collect();
    let policy_loss = g.weighted_nll(probs, &seg.actions, &adv)?;
    let target = g.constant(Tensor::new(vec![n, 1], returns)?)?;
    let diff = g.sub(values, target)?;
    let sq = g.mul(diff, diff)?;
    let value_loss = g.sum(sq)?;
    let entropy = g.entropy(probs)?;
    let vl = g.scale(value_loss, cfg.value_coef)?;
    let el = g.scale(entropy, -cfg.entropy_coef * n as f64)?;
    let partial = g.add(policy_loss, vl)?;
    let loss = g.add(partial, el)?;
    let mut grads = g.backward(loss)?;
    let grad_norm = match cfg.max_grad_norm {
        Some(m) => crate::diffmath::optim::clip_grad_norm(&mut grads, m),
        None => grads.values().flat_map(|t| t.data()).map(|v| v * v).sum::<f64>().sqrt(),
    };
    opt.step(params, &grads)?;
    Ok(UpdateStats {
        policy_loss: g.value(policy_loss).item(),
        value_loss: g.value(value_loss).item(),
        entropy: g.value(entropy).item(),
        grad_norm,
    })
}

/// A2C update for a feed-forward actor whose extras are constants.
pub fn a2c_update(ac: &mut ActorCritic, seg: &Segment, cfg: &AgentConfig, opt: &mut Adam) -> Result<UpdateStats> {
    if seg.extras.len() != seg.len() || seg.obs.len() != seg.len() || seg.rewards.len() != seg.len() {
        return Err(Error::InvalidArgument("segment records are misaligned".into()));
    }
    let width = ac.extra;
    let data: Vec<f64> = seg.extras.iter().flatten().copied().collect();
    let extra = move |_: &ActorCritic, g: &mut Graph| {
        if width == 0 {
            g.constant(Tensor::zeros(&[1]))
        } else {
            g.constant(Tensor::new(vec![seg.len(), width], data.clone())?)
        }
    };
    a2c_step(ac, |a| a, extra, seg, cfg, opt)
}

/// Recurrent baseline: an LSTM over raw observation features whose output
/// is appended to the observation before the actor-critic heads.
#[derive(Clone, Debug, PartialEq)]
pub struct RnnNets {
    pub ac: ActorCritic,
    pub lstm: Lstm,
}

pub const RNN_LAYERS: usize = 2;
pub const RNN_HIDDEN: usize = 50;
pub const RNN_OUTPUTS: usize = 5;

impl RnnNets {
    pub fn new(obs: ObsSpec, actions: usize, hidden: usize, rng: &mut impl Rng) -> Result<Self> {
        let ac = ActorCritic::new(obs, RNN_OUTPUTS, actions, hidden, rng)?;
        let input = ac.input_dim() - RNN_OUTPUTS;
        let lstm = Lstm::new("lstm", input, RNN_HIDDEN, RNN_LAYERS, RNN_OUTPUTS, rng);
        Ok(Self { ac, lstm })
    }

    /// Unrolls the LSTM from a zero state over the segment, with gradients
    /// flowing through the recurrence and into the image features if any.
    fn unroll(&self, g: &mut Graph, obs: &[Tensor]) -> Result<Var> {
        let lstm = self.lstm.bind(g)?;
        let mut state = lstm.zero_state(g)?;
        let stacked = self.ac.obs.stack(&obs.iter().collect::<Vec<_>>())?;
        let x = g.constant(stacked)?;
        let feats = match &self.ac.features {
            None => x,
            Some(c) => {
                let b = c.bind(g)?;
                b.forward(g, x)?
            }
        };
        let mut outs = Vec::with_capacity(obs.len());
        for t in 0..obs.len() {
            let xt = g.gather_rows(feats, &[t])?;
            outs.push(lstm.step(g, xt, &mut state)?);
        }
        g.concat_rows(&outs)
    }
}

impl Parameterized for RnnNets {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        self.ac.visit_params(f);
        self.lstm.visit_params(f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.ac.visit_params_mut(f);
        self.lstm.visit_params_mut(f);
    }
}

pub fn a2c_update_rnn(nets: &mut RnnNets, seg: &Segment, cfg: &AgentConfig, opt: &mut Adam) -> Result<UpdateStats> {
    if seg.obs.len() != seg.len() || seg.rewards.len() != seg.len() {
        return Err(Error::InvalidArgument("segment records are misaligned".into()));
    }
    let obs = seg.obs.clone();
    a2c_step(nets, |n| &n.ac, move |n, g| n.unroll(g, &obs), seg, cfg, opt)
}
