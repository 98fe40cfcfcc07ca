//! Supervised recovery of a known task machine from reward traces, with
//! symbols given directly as one-hot observations.

use std::path::Path;

use rand::Rng;
use serde::Serialize;

use crate::agents::{component_rng, streams};
use crate::automata::MooreMachine;
use crate::diffmath::{argmax, Adam, Tensor};
use crate::error::{Error, Result};
use crate::flnrm::{Episode, EpisodeBuffer, Flnrm, GrounderSpec, RewardVocab, TrainOptions};
use crate::tasks::{self, ALPHABET};

#[derive(Clone, Debug, PartialEq)]
pub struct RecoveryConfig {
    pub task: usize,
    pub num_states: usize,
    pub tau: f64,
    pub lr: f64,
    pub train_traces: usize,
    pub test_traces: usize,
    /// Trace lengths are drawn uniformly from `1..=max_len`.
    pub max_len: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    /// Training stops once held-out accuracy reaches this.
    pub stop_accuracy: f64,
    /// Equivalence to the ground truth is checked up to this length.
    pub equivalence_len: usize,
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        Self {
            task: 3,
            num_states: 5,
            tau: 0.5,
            lr: 0.0004,
            train_traces: 2000,
            test_traces: 500,
            max_len: 20,
            max_epochs: 200,
            batch_size: 32,
            stop_accuracy: 1.0,
            equivalence_len: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub seed: u64,
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Clone, Debug)]
pub struct RecoveryOutcome {
    pub rows: Vec<EpochRow>,
    pub model: Flnrm,
    pub vocab: RewardVocab,
    pub best_accuracy: f64,
    /// First epoch whose held-out accuracy reached `threshold`.
    pub epoch_reaching: Option<usize>,
    pub extracted: MooreMachine,
    pub equivalent: bool,
}

impl RecoveryOutcome {
    pub fn reached(&self, threshold: f64) -> Option<usize> {
        self.rows.iter().find(|r| r.accuracy >= threshold).map(|r| r.epoch)
    }
}

fn one_hot(k: usize, i: usize) -> Tensor {
    let mut v = vec![0.0; k];
    v[i] = 1.0;
    Tensor::vector(v).expect("one-hot is a vector")
}

fn sample_buffer(m: &MooreMachine, n: usize, max_len: usize, rng: &mut impl Rng) -> Result<EpisodeBuffer> {
    let k = m.num_symbols();
    let mut buf = EpisodeBuffer::new(n)?;
    for _ in 0..n {
        let trace: Vec<usize> = (0..rng.random_range(1..=max_len)).map(|_| rng.random_range(0..k)).collect();
        let obs: Vec<Tensor> = trace.iter().map(|&s| one_hot(k, s)).collect();
        buf.push(&obs, &m.run(&trace)?.1, &trace)?;
    }
    Ok(buf)
}

/// Fraction of held-out steps whose most likely reward class is correct.
pub fn reward_accuracy(model: &Flnrm, buf: &EpisodeBuffer, vocab: &RewardVocab) -> Result<f64> {
    let (mut hit, mut total) = (0usize, 0usize);
    for ep in buf.episodes() {
        let pred = model.predict_episode(&buf.pool, ep)?;
        for (p, &r) in pred.iter().zip(&ep.rewards) {
            total += 1;
            hit += (vocab.values()[argmax(&p[..vocab.len()])] == r) as usize;
        }
    }
    Ok(hit as f64 / total.max(1) as f64)
}

pub fn recover_machine(cfg: &RecoveryConfig, seed: u64) -> Result<RecoveryOutcome> {
    let spec = tasks::task(cfg.task)?;
    let truth = spec.compile()?;
    if cfg.max_len == 0 || cfg.train_traces == 0 || cfg.test_traces == 0 {
        return Err(Error::InvalidArgument("trace counts and lengths must be positive".into()));
    }
    let mut data_rng = component_rng(seed, streams::DATA);
    let train = sample_buffer(&truth, cfg.train_traces, cfg.max_len, &mut data_rng)?;
    let test = sample_buffer(&truth, cfg.test_traces, cfg.max_len, &mut data_rng)?;
    let vocab = RewardVocab::from_values(spec.reward_values.clone(), spec.reward_values.len())?;

    let mut model = Flnrm::new(
        &GrounderSpec::Identity,
        ALPHABET.len(),
        cfg.num_states,
        vocab.capacity(),
        cfg.tau,
        &mut component_rng(seed, streams::FLNRM_INIT),
    )?;
    let mut shuffle = component_rng(seed, streams::FLNRM_SHUFFLE);
    let mut opt = Adam::new(cfg.lr)?;
    let episodes: Vec<&Episode> = train.episodes().collect();
    let opts = TrainOptions {
        epochs: 1,
        batch_size: cfg.batch_size,
    };
    let mut rows = Vec::new();
    for epoch in 1..=cfg.max_epochs {
        let loss = model.train(&train.pool, &episodes, &vocab, &opts, &mut opt, &mut shuffle)?[0];
        let accuracy = reward_accuracy(&model, &test, &vocab)?;
        rows.push(EpochRow {
            epoch,
            seed,
            loss,
            accuracy,
        });
        if accuracy >= cfg.stop_accuracy {
            break;
        }
    }
    let best_accuracy = rows.iter().map(|r| r.accuracy).fold(0.0, f64::max);
    let extracted = model.extract_machine(&vocab)?.minimize();
    let equivalent = extracted.equivalent_up_to(&truth, cfg.equivalence_len)?;
    let epoch_reaching = rows.iter().find(|r| r.accuracy >= cfg.stop_accuracy).map(|r| r.epoch);
    Ok(RecoveryOutcome {
        rows,
        model,
        vocab,
        best_accuracy,
        epoch_reaching,
        extracted,
        equivalent,
    })
}

pub fn write_rows(path: &Path, rows: &[EpochRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
