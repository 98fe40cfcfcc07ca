//! Self-checks bundled for the command line: finite differences, the
//! compiler against progression, and inject/extract round trips.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::automata::MooreMachine;
use crate::diffmath::gradcheck::{analytic_gradients, compare_gradients, numeric_gradients};
use crate::diffmath::nn::Lstm;
use crate::diffmath::{cross_entropy_seq, Graph, ParamSet, Parameterized, Tensor, Var};
use crate::error::{Error, Result};
use crate::flnrm::{Episode, EpisodeBuffer, Flnrm, GrounderSpec, RewardVocab, THETA_T};
use crate::tasks::{self, oracle_rewards, task_registry};

pub const GRAD_TOL: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mark = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "[{mark}] {}: {}", self.name, self.detail)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Gradcheck,
    Oracle,
    ExtractCheck,
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gradcheck" => Ok(Suite::Gradcheck),
            "oracle" => Ok(Suite::Oracle),
            "extract-check" => Ok(Suite::ExtractCheck),
            _ => Err(Error::Config(format!("unknown suite `{s}`"))),
        }
    }
}

pub fn run_suite(suite: Suite) -> Result<Vec<Check>> {
    match suite {
        Suite::Gradcheck => gradcheck_suite(None),
        Suite::Oracle => oracle_suite(6),
        Suite::ExtractCheck => extract_suite(100, 8),
    }
}

/// Analytic against central differences; `corrupt` names a parameter whose
/// analytic gradient is deliberately offset, to show the check bites.
fn check_model<M, F>(name: &str, model: &M, eps: f64, corrupt: Option<&str>, f: F) -> Result<Check>
where
    M: Parameterized + Clone,
    F: Fn(&M, &mut Graph) -> Result<Var>,
{
    let mut analytic = analytic_gradients(model, &f)?;
    if let Some(target) = corrupt {
        if let Some(t) = analytic.get_mut(target) {
            t.data_mut()[0] += 1.0;
        }
    }
    let numeric = numeric_gradients(model, eps, &f)?;
    let report = compare_gradients(&analytic, &numeric);
    Ok(Check {
        name: name.into(),
        passed: report.passes(GRAD_TOL),
        detail: format!(
            "max rel error {:.2e} at {}[{}] over {} coordinates",
            report.max_rel_error, report.worst_param, report.worst_index, report.coordinates
        ),
    })
}

/// Softmax-with-temperature into cross-entropy.
pub fn softmax_ce_check(corrupt: Option<&str>) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let logits = Tensor::new(vec![4, 3], (0..12).map(|_| rng.random_range(-2.0..2.0)).collect())?;
    let params = ParamSet::new().with("logits", logits);
    check_model("softmax_temp ∘ cross-entropy", &params, 1e-6, corrupt, |p, g| {
        let x = p.bind(g)?["logits"];
        let probs = g.softmax_rows(x, 0.5)?;
        cross_entropy_seq(g, probs, &[0, 2, 1, 2])
    })
}

/// The full FLNRM loss on a 3-symbol, 3-state instance with length-5 traces.
pub fn flnrm_loss_check(corrupt: Option<&str>) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let model = Flnrm::new(&GrounderSpec::Mlp { input: 3 }, 3, 3, 2, 0.5, &mut rng)?;
    let mut buf = EpisodeBuffer::new(4)?;
    for _ in 0..2 {
        let obs = (0..5)
            .map(|_| Tensor::vector((0..3).map(|_| rng.random_range(-1.0..1.0)).collect()))
            .collect::<Result<Vec<_>>>()?;
        let rewards: Vec<f64> = (0..5).map(|_| rng.random_range(0..2) as f64).collect();
        buf.push(&obs, &rewards, &[])?;
    }
    let vocab = RewardVocab::from_values(vec![0.0, 1.0], 2)?;
    let eps: Vec<&Episode> = buf.episodes().collect();
    check_model("flnrm loss (θ_T, θ_R, grounder)", &model, 1e-6, corrupt, |m, g| {
        m.loss_graph(g, &buf.pool, &eps, &vocab)
    })
}

/// Two unrolled steps of an LSTM cell.
pub fn lstm_check(corrupt: Option<&str>) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let lstm = Lstm::new("lstm", 2, 4, 1, 3, &mut rng);
    check_model("lstm two-step unroll", &lstm, 1e-5, corrupt, |m, g| {
        let b = m.bind(g)?;
        let mut s = b.zero_state(g)?;
        let mut total = None;
        for x in [[0.3, -0.2], [0.9, 0.1]] {
            let xv = g.constant(Tensor::new(vec![1, 2], x.to_vec())?)?;
            let y = b.step(g, xv, &mut s)?;
            let sq = g.mul(y, y)?;
            let l = g.sum(sq)?;
            total = Some(match total {
                None => l,
                Some(t) => g.add(t, l)?,
            });
        }
        total.ok_or_else(|| Error::InvalidArgument("empty unroll".into()))
    })
}

pub fn gradcheck_suite(corrupt: Option<&str>) -> Result<Vec<Check>> {
    Ok(vec![
        softmax_ce_check(corrupt)?,
        flnrm_loss_check(corrupt)?,
        lstm_check(corrupt)?,
    ])
}

/// Calls `f` on every trace of exactly `len` symbols from `k`.
pub fn for_each_trace(k: usize, len: usize, mut f: impl FnMut(&[usize]) -> Result<()>) -> Result<()> {
    let mut trace = vec![0; len];
    loop {
        f(&trace)?;
        let mut i = len;
        loop {
            if i == 0 {
                return Ok(());
            }
            i -= 1;
            trace[i] += 1;
            if trace[i] < k {
                break;
            }
            trace[i] = 0;
        }
    }
}

/// Compiled machines against progression on every trace of length `len`.
/// Rewards are emitted per step, so this also covers every shorter prefix.
pub fn oracle_suite(len: usize) -> Result<Vec<Check>> {
    let k = tasks::ALPHABET.len();
    task_registry()
        .into_iter()
        .map(|spec| {
            let m = spec.compile()?;
            let (mut traces, mut mismatches, mut first) = (0usize, 0usize, None);
            for_each_trace(k, len, |t| {
                traces += 1;
                if m.run(t)?.1 != oracle_rewards(&spec, t)? {
                    mismatches += 1;
                    first.get_or_insert_with(|| t.to_vec());
                }
                Ok(())
            })?;
            let detail = match first {
                None => format!("{traces} traces, {} states, 0 mismatches", m.num_states()),
                Some(t) => format!("{mismatches}/{traces} mismatches, first on {t:?}"),
            };
            Ok(Check {
                name: format!("task {} compile = progression", spec.id),
                passed: mismatches == 0,
                detail,
            })
        })
        .collect()
}

fn round_trip(m: &MooreMachine, max_len: usize) -> Result<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut model = Flnrm::new(
        &GrounderSpec::Identity,
        m.num_symbols(),
        m.num_states(),
        m.outputs().len(),
        0.5,
        &mut rng,
    )?;
    model.inject_exact(m)?;
    let vocab = RewardVocab::from_values(m.outputs().to_vec(), m.outputs().len())?;
    let back = model.extract_machine(&vocab)?;
    Ok(back.num_states() == m.num_states() && back.equivalent_up_to(m, max_len)?)
}

/// inject_exact followed by extract_machine returns an equivalent machine,
/// for every task and for `random` random machines.
pub fn extract_suite(random: usize, max_len: usize) -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    let mut failed = Vec::new();
    for spec in task_registry() {
        if !round_trip(&spec.compile()?, max_len)? {
            failed.push(spec.id);
        }
    }
    checks.push(Check {
        name: "task machines round-trip".into(),
        passed: failed.is_empty(),
        detail: if failed.is_empty() {
            "8/8 equivalent".into()
        } else {
            format!("tasks {failed:?} differ")
        },
    });
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let mut bad = 0;
    for _ in 0..random {
        let n = rng.random_range(1..=8);
        let k = rng.random_range(1..=5);
        let m = MooreMachine::random(&mut rng, n, k, &[0.0, 1.0, -1.0])?;
        if !round_trip(&m, max_len)? {
            bad += 1;
        }
    }
    checks.push(Check {
        name: "random machines round-trip".into(),
        passed: bad == 0,
        detail: format!("{}/{random} equivalent up to length {max_len}", random - bad),
    });
    Ok(checks)
}

/// Corrupting the transition gradient is caught and named.
pub fn corrupted_transition_is_caught() -> Result<Check> {
    flnrm_loss_check(Some(THETA_T))
}
