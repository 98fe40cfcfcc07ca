//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! `ACCEPTANCE_ONLY=3,5` restricts the run to the listed criteria.
//! `ACCEPTANCE_STRICT=1` turns any FAIL into a non-zero exit; by default the
//! report is informational so known shortfalls stay visible without breaking
//! the workspace test run.

use std::collections::HashSet;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use flnrm::agents::{component_rng, streams, Method, TrainingOutcome};
use flnrm::automata::MooreMachine;
use flnrm::diffmath::Tensor;
use flnrm::flnrm::{Flnrm, GrounderSpec, RewardVocab};
use flnrm::gridworld::{GridWorld, ObsMode};
use flnrm::harness::synthetic::write_rows;
use flnrm::harness::verify::{gradcheck_suite, oracle_suite};
use flnrm::harness::{recover_machine, train_seeds, RecoveryConfig, RunConfig};
use flnrm::tasks;

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        passed,
        detail: detail.into(),
    }
}

type Outcome = Result<Verdict, Box<dyn std::error::Error>>;

fn c1_gradients() -> Outcome {
    let checks = gradcheck_suite(None)?;
    let detail: Vec<String> = checks.iter().map(|c| format!("{} ({})", c.name, c.detail)).collect();
    Ok(verdict(checks.iter().all(|c| c.passed), detail.join("; ")))
}

fn one_hot(k: usize, i: usize) -> Tensor {
    let mut v = vec![0.0; k];
    v[i] = 1.0;
    Tensor::vector(v).unwrap()
}

fn c2_deterministic_limit() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let outputs = [0.0, 1.0, -1.0];
    let mut mismatched = 0;
    for _ in 0..100 {
        let (n, k) = (rng.random_range(1..=8), rng.random_range(1..=5));
        let m = MooreMachine::random(&mut rng, n, k, &outputs)?;
        let mut model = Flnrm::new(&GrounderSpec::Identity, k, n, outputs.len(), 0.5, &mut rng)?;
        model.inject_exact(&m)?;
        let vocab = RewardVocab::from_values(outputs.to_vec(), outputs.len())?;
        for _ in 0..10 {
            let trace: Vec<usize> = (0..rng.random_range(1..=20)).map(|_| rng.random_range(0..k)).collect();
            let obs: Vec<Tensor> = trace.iter().map(|&s| one_hot(k, s)).collect();
            let (_, dists) = model.forward(&obs.iter().collect::<Vec<_>>())?;
            let expected = m.run(&trace)?.1;
            let exact = dists.iter().zip(&expected).all(|(d, &r)| {
                let i = vocab.index(r).unwrap();
                d.iter().enumerate().all(|(j, &p)| p == if j == i { 1.0 } else { 0.0 })
            });
            mismatched += (!exact) as usize;
        }
    }
    Ok(verdict(mismatched == 0, format!("{mismatched}/1000 traces differ")))
}

fn c3_compiler_oracle() -> Outcome {
    let checks = oracle_suite(6)?;
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    Ok(verdict(
        failed.is_empty() && checks.len() == 8,
        format!("{} tasks × 15625 traces, failing: {failed:?}", checks.len()),
    ))
}

/// Number of reachable, pairwise distinguishable states, found by comparing
/// output sequences on every word of length < n.
fn brute_force_min_states(m: &MooreMachine) -> usize {
    let reach = m.reachable();
    let n = m.num_states();
    let k = m.num_symbols();
    let mut words: Vec<Vec<usize>> = vec![vec![]];
    let mut frontier = words.clone();
    for _ in 1..n {
        frontier = frontier
            .iter()
            .flat_map(|w| {
                (0..k).map(move |s| {
                    let mut v = w.clone();
                    v.push(s);
                    v
                })
            })
            .collect();
        words.extend(frontier.iter().cloned());
    }
    let signature = |q: usize| -> Vec<usize> {
        words
            .iter()
            .map(|w| w.iter().fold(q, |p, &s| m.next(p, s)))
            .map(|p| m.output_index(p))
            .collect()
    };
    let sigs: HashSet<Vec<usize>> = reach.iter().map(|&q| signature(q)).collect();
    sigs.len()
}

fn c4_minimization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut wrong = 0;
    for _ in 0..200 {
        let (n, k) = (rng.random_range(1..=6), rng.random_range(1..=4));
        let m = MooreMachine::random(&mut rng, n, k, &[0.0, 1.0, -1.0])?;
        wrong += (m.minimize().num_states() != brute_force_min_states(&m)) as usize;
    }
    Ok(verdict(wrong == 0, format!("{wrong}/200 machines disagree with brute force")))
}

/// Per seed: CSV row count, epoch reaching 95%, equivalence.
type RecoverySummary = Vec<(usize, Option<usize>, bool)>;

fn recovery_csvs(dir: &std::path::Path) -> Result<RecoverySummary, Box<dyn std::error::Error>> {
    let cfg = RecoveryConfig::default();
    let mut out = Vec::new();
    for seed in SEEDS {
        let o = recover_machine(&cfg, seed)?;
        write_rows(&dir.join(format!("recovery_seed{seed}.csv")), &o.rows)?;
        out.push((o.rows.len(), o.reached(0.95), o.equivalent));
    }
    Ok(out)
}

fn c5_recovery() -> Outcome {
    let dir = tempfile::tempdir()?;
    let results = recovery_csvs(dir.path())?;
    let reached = results.iter().filter(|r| r.1.is_some_and(|e| e <= 200)).count();
    let equivalent = results.iter().filter(|r| r.2).count();
    let epochs: Vec<String> = results
        .iter()
        .map(|r| r.1.map_or("-".into(), |e| e.to_string()))
        .collect();
    Ok(verdict(
        reached >= 4 && equivalent >= 3,
        format!(
            "≥95% held-out accuracy on {reached}/5 seeds (epochs {}), trace-equivalent on {equivalent}/5",
            epochs.join(",")
        ),
    ))
}

fn rl_config(task: usize, method: Method, states: usize, threshold: f64, episodes: usize) -> RunConfig {
    let mut cfg = RunConfig {
        task,
        method,
        num_states: states,
        episodes,
        stop_threshold: Some(threshold),
        seeds: SEEDS.to_vec(),
        ..RunConfig::default()
    };
    cfg.out = std::env::temp_dir();
    cfg
}

fn stop_summary(outcomes: &[TrainingOutcome]) -> String {
    outcomes
        .iter()
        .map(|o| o.stopped_at.map_or("-".into(), |e| e.to_string()))
        .collect::<Vec<_>>()
        .join(",")
}

fn class1_sanity(states: usize) -> Result<(Verdict, Vec<TrainingOutcome>), Box<dyn std::error::Error>> {
    let cfg = rl_config(1, Method::Flnrm, states, 0.9, 20_000);
    let outcomes = train_seeds(&cfg, 1)?;
    let ok = outcomes.iter().filter(|o| o.stopped_at.is_some()).count();
    let v = verdict(
        ok >= 3,
        format!("|Q̂|={states}: {ok}/5 seeds reached 0.9 (episodes {})", stop_summary(&outcomes)),
    );
    Ok((v, outcomes))
}

fn c10_extraction(outcomes: &[TrainingOutcome]) -> Outcome {
    let grid = RunConfig::default().grid_config();
    let machine = tasks::task(1)?.compile()?;
    let mut rates = Vec::new();
    for (o, seed) in outcomes.iter().zip(SEEDS) {
        let agent = o.flnrm().ok_or("criterion 6 produced no FLNRM agent")?;
        let extracted = agent.model.extract_machine(&agent.vocab)?;
        let mut env = GridWorld::new(grid.clone(), machine.clone())?;
        let mut rng = component_rng(seed, streams::DATA);
        let rollouts = (0..500)
            .map(|_| agent.rollout(&mut env, &mut rng))
            .collect::<Result<Vec<_>, _>>()?;
        let traces: Vec<Vec<&Tensor>> = rollouts.iter().map(|r| r.next_obs.iter().collect()).collect();
        let (agree, total) = agent.model.extraction_agreement(&agent.vocab, &extracted, &traces)?;
        rates.push(agree as f64 / total as f64);
    }
    let min = rates.iter().copied().fold(1.0, f64::min);
    let shown: Vec<String> = rates.iter().map(|r| format!("{:.4}", r)).collect();
    Ok(verdict(min >= 0.99, format!("per-seed agreement {}", shown.join(","))))
}

fn c7_class2_ordering() -> Outcome {
    let flnrm = train_seeds(&rl_config(5, Method::Flnrm, 5, 0.8, 20_000), 1)?;
    let rnn = train_seeds(&rl_config(5, Method::Rnn, 5, 0.8, 20_000), 1)?;
    let wins = flnrm
        .iter()
        .zip(&rnn)
        .filter(|(f, r)| match (f.stopped_at, r.stopped_at) {
            (Some(a), Some(b)) => a <= b,
            (Some(_), None) => true,
            _ => false,
        })
        .count();
    Ok(verdict(
        wins >= 3,
        format!(
            "FLNRM no slower on {wins}/5 paired seeds (flnrm {} vs rnn {})",
            stop_summary(&flnrm),
            stop_summary(&rnn)
        ),
    ))
}

fn c9_image() -> Outcome {
    let mut cfg = rl_config(1, Method::Flnrm, 5, 0.5, 40_000);
    cfg.set("env_mode", "image")?;
    cfg.grid.image_side = 16;
    cfg.seeds = vec![1, 2, 3];
    assert_eq!(cfg.grid_config().obs_mode, ObsMode::Image);
    let outcomes = train_seeds(&cfg, 1)?;
    let ok = outcomes.iter().filter(|o| o.stopped_at.is_some()).count();
    Ok(verdict(
        ok >= 2,
        format!("16×16 images: {ok}/3 seeds reached 0.5 (episodes {})", stop_summary(&outcomes)),
    ))
}

fn c11_determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir()?, tempfile::tempdir()?);
    recovery_csvs(a.path())?;
    recovery_csvs(b.path())?;
    let mut same = 0;
    for seed in SEEDS {
        let name = format!("recovery_seed{seed}.csv");
        same += (std::fs::read(a.path().join(&name))? == std::fs::read(b.path().join(&name))?) as usize;
    }
    Ok(verdict(same == SEEDS.len(), format!("{same}/5 metrics CSVs byte-identical")))
}

type Criterion = (usize, &'static str, fn() -> Outcome);

fn main() {
    let only: Option<HashSet<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let wanted = |n: usize| only.as_ref().is_none_or(|s| s.contains(&n));

    let mut results: Vec<(usize, &str, Verdict)> = Vec::new();
    let mut report = |n: usize, name: &'static str, start: Instant, out: Outcome| {
        let v = out.unwrap_or_else(|e| verdict(false, format!("error: {e}")));
        println!(
            "criterion {n:>2} [{}] {name}: {} ({:.1}s)",
            if v.passed { "PASS" } else { "FAIL" },
            v.detail,
            start.elapsed().as_secs_f64()
        );
        results.push((n, name, v));
    };

    let simple: [Criterion; 5] = [
        (1, "gradient correctness", c1_gradients),
        (2, "deterministic-limit equivalence", c2_deterministic_limit),
        (3, "compiler-oracle equivalence", c3_compiler_oracle),
        (4, "minimization exactness", c4_minimization),
        (5, "synthetic machine recovery", c5_recovery),
    ];
    for (n, name, f) in simple {
        if wanted(n) {
            let t = Instant::now();
            report(n, name, t, f());
        }
    }
    if wanted(6) || wanted(10) {
        let t = Instant::now();
        match class1_sanity(5) {
            Ok((v, outcomes)) => {
                if wanted(6) {
                    report(6, "RL sanity, class 1", t, Ok(v));
                }
                if wanted(10) {
                    let t = Instant::now();
                    report(10, "extraction agreement", t, c10_extraction(&outcomes));
                }
            }
            Err(e) => {
                for (n, name) in [(6, "RL sanity, class 1"), (10, "extraction agreement")] {
                    if wanted(n) {
                        report(n, name, t, Err(e.to_string().into()));
                    }
                }
            }
        }
    }
    let heavy: [Criterion; 4] = [
        (7, "class 2 ordering, FLNRM vs RNN", c7_class2_ordering),
        (8, "state-count robustness", || class1_sanity(30).map(|(v, _)| v)),
        (9, "image-mode smoke test", c9_image),
        (11, "determinism", c11_determinism),
    ];
    for (n, name, f) in heavy {
        if wanted(n) {
            let t = Instant::now();
            report(n, name, t, f());
        }
    }

    results.sort_by_key(|r| r.0);
    let passed = results.iter().filter(|r| r.2.passed).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    for (n, name, v) in &results {
        if !v.passed {
            println!("  failing: criterion {n} ({name})");
        }
    }
    if strict && passed < results.len() {
        std::process::exit(1);
    }
}
