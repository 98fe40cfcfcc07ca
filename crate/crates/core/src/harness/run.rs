use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::agents::{training_loop, EpisodeMetrics, TrainingOutcome};
use crate::error::{Error, Result};
use crate::flnrm::checkpoint;
use crate::tasks;

use super::RunConfig;

/// What one seed produced.
#[derive(Clone, Debug, PartialEq)]
pub struct SeedReport {
    pub seed: u64,
    pub episodes: usize,
    pub stopped_at: Option<usize>,
    /// Success rate over the final window (or all episodes if fewer).
    pub final_success: f64,
    /// States of the extracted and minimized machine (FLNRM only).
    pub machine_states: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct RunReport {
    pub seeds: Vec<SeedReport>,
    pub files: Vec<PathBuf>,
}

pub fn write_metrics(path: &Path, rows: &[EpisodeMetrics]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn tail_success(rows: &[EpisodeMetrics], window: usize) -> f64 {
    let tail = &rows[rows.len().saturating_sub(window)..];
    if tail.is_empty() {
        return 0.0;
    }
    tail.iter().map(|m| m.success as f64).sum::<f64>() / tail.len() as f64
}

/// Trains every seed, in parallel when `workers > 1`. Results come back in
/// the configured seed order regardless of scheduling.
pub fn train_seeds(cfg: &RunConfig, workers: usize) -> Result<Vec<TrainingOutcome>> {
    let task = tasks::task(cfg.task)?;
    let grid = cfg.grid_config();
    let run = |seed: u64| {
        training_loop(
            &grid,
            &task,
            cfg.method,
            &cfg.agent,
            (cfg.num_symbols, cfg.num_states),
            cfg.tau,
            seed,
            cfg.episodes,
            cfg.stop_rule(),
        )
    };
    let workers = workers.clamp(1, cfg.seeds.len());
    if workers == 1 {
        return cfg.seeds.iter().map(|&s| run(s)).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<TrainingOutcome>>>> = cfg.seeds.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&seed) = cfg.seeds.get(i) else { break };
                let out = run(seed);
                *slots[i].lock().expect("no worker panics while holding a slot") = Some(out);
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.into_inner().expect("slot lock").expect("every seed was run"))
        .collect()
}

/// Runs all seeds and writes per-seed metrics, the merged metrics, the
/// resolved config and, for FLNRM, a checkpoint and the extracted machine.
pub fn run_experiment(cfg: &RunConfig, workers: usize) -> Result<RunReport> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.out)?;
    let out = &cfg.out;
    let outcomes = train_seeds(cfg, workers)?;

    let mut files = Vec::new();
    let config_path = out.join("config.txt");
    std::fs::write(&config_path, cfg.to_text())?;
    files.push(config_path);

    let mut merged = Vec::new();
    let mut seeds = Vec::new();
    for (seed, outcome) in cfg.seeds.iter().copied().zip(outcomes) {
        let path = out.join(format!("metrics_seed{seed}.csv"));
        write_metrics(&path, &outcome.metrics)?;
        files.push(path);

        let mut machine_states = None;
        if let Some(agent) = outcome.flnrm() {
            let ckpt = out.join(format!("flnrm_seed{seed}.ckpt"));
            checkpoint::save(&ckpt, &agent.model, &agent.vocab)?;
            files.push(ckpt);
            if !agent.vocab.is_empty() {
                let machine = agent.model.extract_machine(&agent.vocab)?.minimize();
                machine_states = Some(machine.num_states());
                let dot = out.join(format!("machine_seed{seed}.dot"));
                std::fs::write(&dot, machine.to_dot())?;
                let txt = out.join(format!("machine_seed{seed}.txt"));
                std::fs::write(&txt, machine.to_text())?;
                files.extend([dot, txt]);
            }
        }
        seeds.push(SeedReport {
            seed,
            episodes: outcome.metrics.len(),
            stopped_at: outcome.stopped_at,
            final_success: tail_success(&outcome.metrics, cfg.stop_window),
            machine_states,
        });
        merged.extend(outcome.metrics);
    }
    let path = out.join("metrics.csv");
    write_metrics(&path, &merged)?;
    files.push(path);
    Ok(RunReport { seeds, files })
}

/// Reads one or more metrics CSVs.
pub fn read_metrics(paths: &[PathBuf]) -> Result<Vec<MetricsRow>> {
    let mut rows = Vec::new();
    for p in paths {
        let mut r = csv::Reader::from_path(p)?;
        for rec in r.deserialize() {
            rows.push(rec?);
        }
    }
    if rows.is_empty() {
        return Err(Error::InvalidArgument("no metrics rows".into()));
    }
    Ok(rows)
}

/// A metrics CSV row as read back.
#[derive(Clone, Debug, PartialEq, serde::Deserialize)]
pub struct MetricsRow {
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
