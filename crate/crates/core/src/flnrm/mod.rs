//! Fully learnable neural reward machine: a symbol grounder and a relaxed
//! Moore machine whose transition and reward matrices are temperature
//! softmaxes of free parameters, trained end to end on reward sequences.

pub mod checkpoint;
pub mod data;

pub use data::{Episode, EpisodeBuffer, ObsPool, RewardVocab};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::automata::{default_alphabet, MooreMachine};
use crate::diffmath::graph::Var;
use crate::diffmath::nn::{Activation, BoundConvStack, BoundLinear, BoundMlp, ConvStack, Linear, Mlp};
use crate::diffmath::tensor::{self, argmax};
use crate::diffmath::{Adam, Graph, Parameterized, Tensor};
use crate::error::{shape_err, Error, Result};

pub const DEFAULT_TAU: f64 = 0.5;
pub const HIDDEN: usize = 64;
const INIT_STD: f64 = 0.1;

/// Grounder architecture, without weights.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum GrounderSpec {
    /// `input → 64 → 64 → |P̂|` with tanh.
    Mlp { input: usize },
    /// Two strided conv blocks then a dense layer, on `side × side × channels`.
    Conv { side: usize, channels: usize },
    /// Observations already are symbol distributions. Used with oracle
    /// symbols in tests and diagnostics.
    Identity,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Grounder {
    Mlp(Mlp),
    Conv { features: ConvStack, head: Linear },
    Identity { symbols: usize },
}

enum BoundGrounder {
    Mlp(BoundMlp),
    Conv(BoundConvStack, BoundLinear),
    Identity,
}

impl Grounder {
    pub fn new(spec: &GrounderSpec, symbols: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(match *spec {
            GrounderSpec::Mlp { input } => {
                Grounder::Mlp(Mlp::new("sg", &[input, HIDDEN, HIDDEN, symbols], Activation::Tanh, rng))
            }
            GrounderSpec::Conv { side, channels } => {
                let features = ConvStack::new("sg.conv", side, channels, rng)?;
                let head = Linear::new("sg.head", features.out_features(), symbols, rng);
                Grounder::Conv { features, head }
            }
            GrounderSpec::Identity => Grounder::Identity { symbols },
        })
    }

    pub fn spec(&self) -> GrounderSpec {
        match self {
            Grounder::Mlp(m) => GrounderSpec::Mlp { input: m.input() },
            Grounder::Conv { features, .. } => GrounderSpec::Conv {
                side: features.side,
                channels: features.channels,
            },
            Grounder::Identity { .. } => GrounderSpec::Identity,
        }
    }

    /// Shape of a single observation.
    pub fn obs_shape(&self) -> Vec<usize> {
        match self {
            Grounder::Mlp(m) => vec![m.input()],
            Grounder::Conv { features, .. } => vec![features.side, features.side, features.channels],
            Grounder::Identity { symbols } => vec![*symbols],
        }
    }

    /// Stacks observations along a new leading axis.
    fn stack(&self, obs: &[&Tensor]) -> Result<Tensor> {
        let shape = self.obs_shape();
        let per: usize = shape.iter().product();
        let mut data = Vec::with_capacity(obs.len() * per);
        for o in obs {
            if o.shape() != shape.as_slice() {
                return shape_err("ground", format!("observation {:?}, expected {shape:?}", o.shape()));
            }
            data.extend_from_slice(o.data());
        }
        let mut full = vec![obs.len()];
        full.extend(shape);
        Tensor::new(full, data)
    }

    /// Records the grounding of `obs` on `g`: symbol distributions `[N × P̂]`.
    /// Useful for training the grounder on its own.
    pub fn grounding_graph(&self, g: &mut Graph, obs: &[&Tensor], tau: f64) -> Result<Var> {
        let x = g.constant(self.stack(obs)?)?;
        let bound = self.bind(g)?;
        bound.forward(g, x, tau)
    }

    fn bind(&self, g: &mut Graph) -> Result<BoundGrounder> {
        Ok(match self {
            Grounder::Mlp(m) => BoundGrounder::Mlp(m.bind(g)?),
            Grounder::Conv { features, head } => BoundGrounder::Conv(features.bind(g)?, head.bind(g)?),
            Grounder::Identity { .. } => BoundGrounder::Identity,
        })
    }
}

impl BoundGrounder {
    fn forward(&self, g: &mut Graph, x: Var, tau: f64) -> Result<Var> {
        let logits = match self {
            BoundGrounder::Mlp(m) => m.forward(g, x)?,
            BoundGrounder::Conv(c, head) => {
                let f = c.forward(g, x)?;
                head.forward(g, f)?
            }
            BoundGrounder::Identity => return Ok(x),
        };
        g.softmax_rows(logits, tau)
    }
}

impl Parameterized for Grounder {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        match self {
            Grounder::Mlp(m) => m.visit_params(f),
            Grounder::Conv { features, head } => {
                features.visit_params(f);
                head.visit_params(f);
            }
            Grounder::Identity { .. } => {}
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        match self {
            Grounder::Mlp(m) => m.visit_params_mut(f),
            Grounder::Conv { features, head } => {
                features.visit_params_mut(f);
                head.visit_params_mut(f);
            }
            Grounder::Identity { .. } => {}
        }
    }
}

pub const THETA_T: &str = "flnrm.theta_t";
pub const THETA_R: &str = "flnrm.theta_r";

/// Learnable parameters `θ_T [P̂×Q̂×Q̂]`, `θ_R [Q̂×R̂]` and the grounder.
#[derive(Clone, Debug, PartialEq)]
pub struct Flnrm {
    pub tau: f64,
    pub theta_t: Tensor,
    pub theta_r: Tensor,
    pub grounder: Grounder,
    /// Post-softmax matrices that override the parameters when set.
    exact: Option<(Tensor, Tensor)>,
}

impl Flnrm {
    pub fn new(
        grounder: &GrounderSpec,
        symbols: usize,
        states: usize,
        rewards: usize,
        tau: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if symbols == 0 || states == 0 || rewards == 0 {
            return Err(Error::InvalidArgument("FLNRM sizes must be positive".into()));
        }
        if !(tau > 0.0 && tau <= 1.0) {
            return Err(Error::InvalidArgument(format!("temperature {tau} outside (0, 1]")));
        }
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let mut draw = |shape: &[usize]| {
            let n = shape.iter().product();
            Tensor::new(shape.to_vec(), (0..n).map(|_| normal.sample(rng)).collect())
        };
        let theta_t = draw(&[symbols, states, states])?;
        let theta_r = draw(&[states, rewards])?;
        let grounder = Grounder::new(grounder, symbols, rng)?;
        Ok(Self {
            tau,
            theta_t,
            theta_r,
            grounder,
            exact: None,
        })
    }

    pub fn num_symbols(&self) -> usize {
        self.theta_t.shape()[0]
    }

    pub fn num_states(&self) -> usize {
        self.theta_t.shape()[1]
    }

    pub fn num_rewards(&self) -> usize {
        self.theta_r.shape()[1]
    }

    pub fn exact(&self) -> Option<&(Tensor, Tensor)> {
        self.exact.as_ref()
    }

    /// `(T, R)`: row-stochastic transition tensor and reward matrix.
    pub fn machine_matrices(&self) -> Result<(Tensor, Tensor)> {
        if let Some((t, r)) = &self.exact {
            return Ok((t.clone(), r.clone()));
        }
        Ok((
            tensor::softmax_temp(&self.theta_t, self.tau, 2)?,
            tensor::softmax_temp(&self.theta_r, self.tau, 1)?,
        ))
    }

    /// Symbol distributions for a batch of observations, `[N × P̂]`.
    pub fn ground_batch(&self, obs: &[&Tensor]) -> Result<Tensor> {
        let x = self.grounder.stack(obs)?;
        let logits = match &self.grounder {
            Grounder::Mlp(m) => m.forward(&x)?,
            Grounder::Conv { features, head } => head.forward(&features.forward(&x)?)?,
            Grounder::Identity { symbols } => {
                if x.cols() != *symbols {
                    return shape_err("ground", "identity grounder width");
                }
                return Ok(x);
            }
        };
        tensor::softmax_temp(&logits, self.tau, 1)
    }

    pub fn ground(&self, obs: &Tensor) -> Result<Vec<f64>> {
        Ok(self.ground_batch(&[obs])?.into_data())
    }

    /// One-hot on state 0.
    pub fn initial_belief(&self) -> Vec<f64> {
        let mut q = vec![0.0; self.num_states()];
        q[0] = 1.0;
        q
    }

    /// Beliefs and reward distributions after each observation.
    #[allow(clippy::type_complexity)]
    pub fn forward(&self, obs: &[&Tensor]) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let (t, r) = self.machine_matrices()?;
        let p = self.ground_batch(obs)?;
        let mut q = self.initial_belief();
        let mut beliefs = Vec::with_capacity(obs.len());
        let mut rewards = Vec::with_capacity(obs.len());
        for i in 0..obs.len() {
            q = step_belief(&q, p.row(i), &t)?;
            rewards.push(reward_distribution(&q, &r)?);
            beliefs.push(q.clone());
        }
        Ok((beliefs, rewards))
    }

    pub fn predict_rewards(&self, obs: &[&Tensor]) -> Result<Vec<Vec<f64>>> {
        if obs.is_empty() {
            return Err(Error::InvalidArgument("empty observation sequence".into()));
        }
        Ok(self.forward(obs)?.1)
    }

    pub fn predict_episode(&self, pool: &ObsPool, ep: &Episode) -> Result<Vec<Vec<f64>>> {
        let obs: Vec<&Tensor> = ep.obs.iter().map(|&i| pool.get(i)).collect();
        self.predict_rewards(&obs)
    }

    /// Records the mean over `episodes` of each episode's per-step reward
    /// cross-entropy. Episodes are processed longest first so that the rows
    /// still running at step `t` form a prefix of the batch.
    pub fn loss_graph(
        &self,
        g: &mut Graph,
        pool: &ObsPool,
        episodes: &[&Episode],
        vocab: &RewardVocab,
    ) -> Result<Var> {
        if episodes.is_empty() || episodes.iter().any(|e| e.is_empty()) {
            return Err(Error::InvalidArgument("loss needs non-empty episodes".into()));
        }
        if vocab.len() > self.num_rewards() {
            return Err(Error::InvalidArgument(format!(
                "vocabulary has {} rewards, model predicts {}",
                vocab.len(),
                self.num_rewards()
            )));
        }
        let mut order: Vec<&Episode> = episodes.to_vec();
        order.sort_by_key(|e| std::cmp::Reverse(e.len()));

        // ground each distinct observation once
        let mut local = std::collections::HashMap::new();
        let mut distinct: Vec<&Tensor> = Vec::new();
        for e in &order {
            for &o in &e.obs {
                local.entry(o).or_insert_with(|| {
                    distinct.push(pool.get(o));
                    distinct.len() - 1
                });
            }
        }
        let x = g.constant(self.grounder.stack(&distinct)?)?;
        let bound = self.grounder.bind(g)?;
        let probs = bound.forward(g, x, self.tau)?;

        let (t, r) = match &self.exact {
            Some((t, r)) => (g.constant(t.clone())?, g.constant(r.clone())?),
            None => {
                let tt = g.param(THETA_T, &self.theta_t)?;
                let rr = g.param(THETA_R, &self.theta_r)?;
                (g.softmax_temp(tt, self.tau, 2)?, g.softmax_temp(rr, self.tau, 1)?)
            }
        };

        let b = order.len();
        let mut q0 = Tensor::zeros(&[b, self.num_states()]);
        for i in 0..b {
            q0.data_mut()[i * self.num_states()] = 1.0;
        }
        let mut q = g.constant(q0)?;
        let mut alive = b;
        let mut beliefs = Vec::new();
        let mut targets = Vec::new();
        let mut weights = Vec::new();
        for step in 0..order[0].len() {
            while order[alive - 1].len() <= step {
                alive -= 1;
            }
            if alive < g.value(q).rows() {
                let keep: Vec<usize> = (0..alive).collect();
                q = g.gather_rows(q, &keep)?;
            }
            let idx: Vec<usize> = order[..alive].iter().map(|e| local[&e.obs[step]]).collect();
            let p = g.gather_rows(probs, &idx)?;
            q = g.belief_step(q, p, t)?;
            beliefs.push(q);
            for e in &order[..alive] {
                targets.push(vocab.index(e.rewards[step])?);
                weights.push(1.0 / (e.len() * b) as f64);
            }
        }
        let all = g.concat_rows(&beliefs)?;
        let pred = g.matmul(all, r)?;
        g.weighted_nll(pred, &targets, &weights)
    }

    pub fn loss(&self, pool: &ObsPool, episodes: &[&Episode], vocab: &RewardVocab) -> Result<f64> {
        let mut g = Graph::new();
        let l = self.loss_graph(&mut g, pool, episodes, vocab)?;
        Ok(g.value(l).item())
    }

    /// Mini-batch training on `flnrm_loss`. Returns the mean batch loss of
    /// each epoch.
    pub fn train(
        &mut self,
        pool: &ObsPool,
        episodes: &[&Episode],
        vocab: &RewardVocab,
        opts: &TrainOptions,
        opt: &mut Adam,
        rng: &mut impl Rng,
    ) -> Result<Vec<f64>> {
        if episodes.is_empty() {
            return Err(Error::InvalidArgument("cannot train on an empty buffer".into()));
        }
        if opts.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        let mut order: Vec<usize> = (0..episodes.len()).collect();
        let mut history = Vec::with_capacity(opts.epochs);
        for _ in 0..opts.epochs {
            order.shuffle(rng);
            let mut total = 0.0;
            let mut batches = 0;
            for chunk in order.chunks(opts.batch_size) {
                let batch: Vec<&Episode> = chunk.iter().map(|&i| episodes[i]).collect();
                let mut g = Graph::new();
                let loss = self.loss_graph(&mut g, pool, &batch, vocab)?;
                total += g.value(loss).item();
                batches += 1;
                let grads = g.backward(loss)?;
                opt.step(self, &grads)?;
            }
            history.push(total / batches as f64);
        }
        Ok(history)
    }

    /// Deterministic machine from the argmax of each transition row and each
    /// reward row (restricted to classes present in `vocab`), starting in
    /// state 0. Ties go to the lowest index.
    pub fn extract_machine(&self, vocab: &RewardVocab) -> Result<MooreMachine> {
        if vocab.is_empty() {
            return Err(Error::InvalidArgument("cannot extract with an empty reward vocabulary".into()));
        }
        let (t, r) = self.machine_matrices()?;
        let (p, q) = (self.num_symbols(), self.num_states());
        let delta = (0..q)
            .map(|i| (0..p).map(|j| argmax(&t.data()[(j * q + i) * q..(j * q + i + 1) * q])).collect())
            .collect();
        let lambda = (0..q).map(|i| argmax(&r.row(i)[..vocab.len()])).collect();
        MooreMachine::new(default_alphabet(p), vocab.values().to_vec(), 0, delta, lambda)
    }

    /// Counts steps where `machine`, driven by argmax groundings, emits the
    /// reward the soft model ranks highest. Returns `(agreeing, total)`.
    pub fn extraction_agreement(
        &self,
        vocab: &RewardVocab,
        machine: &MooreMachine,
        traces: &[Vec<&Tensor>],
    ) -> Result<(usize, usize)> {
        let (mut agree, mut total) = (0, 0);
        for obs in traces.iter().filter(|o| !o.is_empty()) {
            let soft = self.predict_rewards(obs)?;
            let p = self.ground_batch(obs)?;
            let symbols: Vec<usize> = (0..obs.len()).map(|i| argmax(p.row(i))).collect();
            let (_, hard) = machine.run(&symbols)?;
            for (s, h) in soft.iter().zip(hard) {
                total += 1;
                agree += (vocab.values()[argmax(&s[..vocab.len()])] == h) as usize;
            }
        }
        Ok((agree, total))
    }

    /// Overrides the post-softmax matrices with exact one-hot rows encoding
    /// `m`. States are relabelled so that `m`'s initial state becomes state 0;
    /// surplus states self-loop and surplus symbols act as the identity.
    pub fn inject_exact(&mut self, m: &MooreMachine) -> Result<()> {
        let (p, q, r) = (self.num_symbols(), self.num_states(), self.num_rewards());
        if m.num_states() > q || m.num_symbols() > p || m.outputs().len() > r {
            return Err(Error::InvalidArgument(format!(
                "machine ({} states, {} symbols, {} outputs) exceeds model ({q}, {p}, {r})",
                m.num_states(),
                m.num_symbols(),
                m.outputs().len()
            )));
        }
        let relabel = |s: usize| {
            if s == m.initial() {
                0
            } else if s == 0 {
                m.initial()
            } else {
                s
            }
        };
        let mut t = Tensor::zeros(&[p, q, q]);
        let mut rm = Tensor::zeros(&[q, r]);
        for j in 0..p {
            for i in 0..q {
                let next = if i < m.num_states() && j < m.num_symbols() {
                    relabel(m.next(relabel(i), j))
                } else {
                    i
                };
                t.data_mut()[(j * q + i) * q + next] = 1.0;
            }
        }
        for i in 0..q {
            let out = if i < m.num_states() { m.output_index(relabel(i)) } else { 0 };
            rm.data_mut()[i * r + out] = 1.0;
        }
        self.exact = Some((t, rm));
        Ok(())
    }

    pub fn clear_exact(&mut self) {
        self.exact = None;
    }

    pub(crate) fn set_exact(&mut self, exact: Option<(Tensor, Tensor)>) {
        self.exact = exact;
    }
}

impl Parameterized for Flnrm {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        f(THETA_T, &self.theta_t);
        f(THETA_R, &self.theta_r);
        self.grounder.visit_params(f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(THETA_T, &mut self.theta_t);
        f(THETA_R, &mut self.theta_r);
        self.grounder.visit_params_mut(f);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 32,
        }
    }
}

/// `Σ_j p_j (q · T_j)` for a single belief.
pub fn step_belief(q: &[f64], p: &[f64], t: &Tensor) -> Result<Vec<f64>> {
    let qt = Tensor::new(vec![1, q.len()], q.to_vec())?;
    let pt = Tensor::new(vec![1, p.len()], p.to_vec())?;
    Ok(tensor::belief_step(&qt, &pt, t)?.into_data())
}

/// `q · R`
pub fn reward_distribution(q: &[f64], r: &Tensor) -> Result<Vec<f64>> {
    let qt = Tensor::new(vec![1, q.len()], q.to_vec())?;
    Ok(tensor::matmul(&qt, r)?.into_data())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffmath::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(3)
    }

    fn one_hot(n: usize, i: usize) -> Tensor {
        let mut v = vec![0.0; n];
        v[i] = 1.0;
        Tensor::vector(v).unwrap()
    }

    #[test]
    fn zero_theta_gives_uniform_rows() {
        let mut m = Flnrm::new(&GrounderSpec::Identity, 2, 2, 2, 0.5, &mut rng()).unwrap();
        m.theta_t = Tensor::zeros(&[2, 2, 2]);
        let (t, _) = m.machine_matrices().unwrap();
        assert!(t.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn reward_row_example() {
        let mut m = Flnrm::new(&GrounderSpec::Identity, 1, 1, 2, 0.5, &mut rng()).unwrap();
        m.theta_r = Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let (_, r) = m.machine_matrices().unwrap();
        assert!((r.data()[0] - 0.88080).abs() < 1e-5);
        assert!((r.data()[1] - 0.11920).abs() < 1e-5);
    }

    #[test]
    fn zeroed_grounder_is_uniform() {
        let mut m = Flnrm::new(&GrounderSpec::Mlp { input: 2 }, 4, 3, 2, 0.5, &mut rng()).unwrap();
        if let Grounder::Mlp(mlp) = &mut m.grounder {
            mlp.last_mut().zero();
        }
        let p = m.ground(&Tensor::vector(vec![0.3, 0.9]).unwrap()).unwrap();
        assert_eq!(p, vec![0.25; 4]);
        assert!(m.ground(&Tensor::vector(vec![0.3]).unwrap()).is_err());
    }

    #[test]
    fn deterministic_belief_step() {
        // symbol 1 sends state 0 to state 2
        let mut t = Tensor::zeros(&[2, 3, 3]);
        for j in 0..2 {
            for i in 0..3 {
                let next = if j == 1 && i == 0 { 2 } else { i };
                t.data_mut()[(j * 3 + i) * 3 + next] = 1.0;
            }
        }
        let q = step_belief(&[1.0, 0.0, 0.0], &[0.0, 1.0], &t).unwrap();
        assert_eq!(q, vec![0.0, 0.0, 1.0]);
        let u = Tensor::filled(&[2, 3, 3], 1.0 / 3.0);
        let q = step_belief(&[1.0 / 3.0; 3], &[0.5, 0.5], &u).unwrap();
        assert!(q.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
        assert!(step_belief(&[1.0, 0.0], &[0.5, 0.5], &t).is_err());
    }

    fn two_state_machine() -> MooreMachine {
        MooreMachine::new(
            default_alphabet(2),
            vec![0.0, 1.0],
            0,
            vec![vec![0, 1], vec![1, 0]],
            vec![0, 1],
        )
        .unwrap()
    }

    #[test]
    fn inject_extract_round_trip() {
        let target = two_state_machine();
        let mut m = Flnrm::new(&GrounderSpec::Identity, 2, 2, 2, 0.5, &mut rng()).unwrap();
        m.inject_exact(&target).unwrap();
        let vocab = RewardVocab::from_values(vec![0.0, 1.0], 2).unwrap();
        assert_eq!(m.extract_machine(&vocab).unwrap(), target);

        let mut big = Flnrm::new(&GrounderSpec::Identity, 2, 5, 2, 0.5, &mut rng()).unwrap();
        big.inject_exact(&target).unwrap();
        let ex = big.extract_machine(&vocab).unwrap();
        assert_eq!(ex.num_states(), 5);
        assert!(ex.equivalent(&target, 10).unwrap().equivalent);
        assert_eq!(ex.minimize(), target);

        let mut small = Flnrm::new(&GrounderSpec::Identity, 2, 1, 2, 0.5, &mut rng()).unwrap();
        assert!(small.inject_exact(&target).is_err());
    }

    #[test]
    fn injected_predictions_and_loss() {
        let target = two_state_machine();
        let mut m = Flnrm::new(&GrounderSpec::Identity, 2, 2, 2, 0.5, &mut rng()).unwrap();
        m.inject_exact(&target).unwrap();
        let trace = [1, 1, 0, 1, 0];
        let obs: Vec<Tensor> = trace.iter().map(|&s| one_hot(2, s)).collect();
        let refs: Vec<&Tensor> = obs.iter().collect();
        let pred = m.predict_rewards(&refs).unwrap();
        assert_eq!(pred.len(), trace.len());
        let (_, expect) = target.run(&trace).unwrap();
        let got: Vec<f64> = pred.iter().map(|p| target.outputs()[argmax(p)]).collect();
        assert_eq!(got, expect);

        let mut buf = EpisodeBuffer::new(4).unwrap();
        buf.push(&obs, &expect, &[]).unwrap();
        let vocab = RewardVocab::from_values(vec![0.0, 1.0], 2).unwrap();
        let eps: Vec<&Episode> = buf.episodes().collect();
        assert!(m.loss(&buf.pool, &eps, &vocab).unwrap() < 1e-9);
        assert!(m.predict_rewards(&[]).is_err());
    }

    #[test]
    fn uniform_loss_is_ln2() {
        let mut m = Flnrm::new(&GrounderSpec::Identity, 2, 3, 2, 0.5, &mut rng()).unwrap();
        m.theta_t = Tensor::zeros(&[2, 3, 3]);
        m.theta_r = Tensor::zeros(&[3, 2]);
        let mut buf = EpisodeBuffer::new(4).unwrap();
        buf.push(&[one_hot(2, 0), one_hot(2, 1)], &[0.0, 1.0], &[]).unwrap();
        buf.push(&[one_hot(2, 1)], &[1.0], &[]).unwrap();
        let vocab = RewardVocab::from_values(vec![0.0, 1.0], 2).unwrap();
        let eps: Vec<&Episode> = buf.episodes().collect();
        let l = m.loss(&buf.pool, &eps, &vocab).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-12);
        let unknown = RewardVocab::from_values(vec![0.0], 2).unwrap();
        assert!(matches!(m.loss(&buf.pool, &eps, &unknown), Err(Error::UnknownReward(_))));
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let mut r = rng();
        let m = Flnrm::new(&GrounderSpec::Mlp { input: 3 }, 3, 3, 2, 0.5, &mut r).unwrap();
        let mut buf = EpisodeBuffer::new(4).unwrap();
        for len in [5, 3] {
            let obs: Vec<Tensor> = (0..len)
                .map(|_| Tensor::vector((0..3).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap())
                .collect();
            let rewards: Vec<f64> = (0..len).map(|_| r.random_range(0..2) as f64).collect();
            buf.push(&obs, &rewards, &[]).unwrap();
        }
        let vocab = RewardVocab::from_values(vec![0.0, 1.0], 2).unwrap();
        let eps: Vec<&Episode> = buf.episodes().collect();
        let report = grad_check(&m, 1e-6, |m, g| m.loss_graph(g, &buf.pool, &eps, &vocab)).unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn training_recovers_two_state_machine() {
        // latches once symbol 1 is seen
        let target = MooreMachine::new(
            default_alphabet(2),
            vec![0.0, 1.0],
            0,
            vec![vec![0, 1], vec![1, 1]],
            vec![0, 1],
        )
        .unwrap();
        let mut r = rng();
        let mut buf = EpisodeBuffer::new(200).unwrap();
        for _ in 0..200 {
            let trace: Vec<usize> = (0..r.random_range(3..10)).map(|_| r.random_range(0..2)).collect();
            let obs: Vec<Tensor> = trace.iter().map(|&s| one_hot(2, s)).collect();
            buf.push(&obs, &target.run(&trace).unwrap().1, &trace).unwrap();
        }
        let vocab = RewardVocab::from_values(vec![0.0, 1.0], 2).unwrap();
        // One spare state: with exactly two, descent tends to settle on
        // using the start state as the latched one.
        let mut m = Flnrm::new(&GrounderSpec::Identity, 2, 3, 2, 0.5, &mut r).unwrap();
        let eps: Vec<&Episode> = buf.episodes().collect();
        let mut opt = Adam::new(0.01).unwrap();
        let opts = TrainOptions { epochs: 40, batch_size: 16 };
        let hist = m.train(&buf.pool, &eps, &vocab, &opts, &mut opt, &mut r).unwrap();
        assert!(hist.last().unwrap() <= &hist[0]);
        let mut right = 0;
        let mut total = 0;
        for e in &eps {
            let pred = m.predict_episode(&buf.pool, e).unwrap();
            for (p, &rw) in pred.iter().zip(&e.rewards) {
                right += (vocab.values()[argmax(p)] == rw) as usize;
                total += 1;
            }
        }
        assert!(right as f64 / total as f64 >= 0.99, "{right}/{total}");

        let before = m.clone();
        let none = TrainOptions { epochs: 0, batch_size: 16 };
        assert!(m.train(&buf.pool, &eps, &vocab, &none, &mut opt, &mut r).unwrap().is_empty());
        assert_eq!(m, before);
        assert!(m.train(&buf.pool, &[], &vocab, &opts, &mut opt, &mut r).is_err());
    }
}
