use std::path::Path;

use regex::Regex;

use flnrm::agents::Method;
use flnrm::automata::MooreMachine;
use flnrm::harness::verify::{corrupted_transition_is_caught, extract_suite, gradcheck_suite};
use flnrm::harness::{plot_curves, read_metrics, run_experiment, MetricsRow, RunConfig};

fn tiny(out: &Path, method: Method) -> RunConfig {
    let mut cfg = RunConfig {
        task: 5,
        method,
        num_states: 4,
        seeds: vec![1, 2, 3],
        episodes: 12,
        out: out.to_path_buf(),
        ..RunConfig::default()
    };
    cfg.grid.max_steps = 15;
    cfg.agent.hidden = 16;
    cfg.agent.retrain_every = 5;
    cfg.agent.flnrm_epochs = 2;
    cfg.agent.flnrm_batch = 4;
    cfg
}

#[test]
fn experiment_writes_per_seed_and_merged_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(&dir.path().join("a"), Method::Flnrm);
    let report = run_experiment(&cfg, 1).unwrap();
    let out = &cfg.out;

    let per_seed: Vec<_> = (1..=3).map(|s| out.join(format!("metrics_seed{s}.csv"))).collect();
    for p in &per_seed {
        assert!(report.files.contains(p), "{}", p.display());
        assert_eq!(read_metrics(std::slice::from_ref(p)).unwrap().len(), 12);
    }
    let merged = read_metrics(&[out.join("metrics.csv")]).unwrap();
    assert_eq!(merged.len(), 36);
    assert_eq!(merged, read_metrics(&per_seed).unwrap());

    let header = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(header.lines().next().unwrap(), "episode,seed,method,task,return,success,steps,flnrm_loss");

    // the saved config reproduces the run configuration
    assert_eq!(RunConfig::load(&out.join("config.txt")).unwrap(), cfg);

    // each extracted machine is a well-formed DOT graph within the state budget
    let node = Regex::new(r#"^\s*q\d+ \[label="q\d+/-?[\d.]+", shape=(circle|doublecircle)\];$"#).unwrap();
    for (s, seed) in report.seeds.iter().enumerate() {
        let dot = std::fs::read_to_string(out.join(format!("machine_seed{}.dot", s + 1))).unwrap();
        assert!(dot.starts_with("digraph") && dot.trim_end().ends_with('}'));
        let nodes = dot.lines().filter(|l| node.is_match(l)).count();
        assert!(nodes >= 1 && nodes <= cfg.num_states, "{nodes} nodes");
        assert_eq!(seed.machine_states, Some(nodes));
        let text = std::fs::read_to_string(out.join(format!("machine_seed{}.txt", s + 1))).unwrap();
        assert_eq!(MooreMachine::from_text(&text, None).unwrap().num_states(), nodes);
    }
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, workers| {
        let cfg = tiny(&dir.path().join(name), Method::Rnn);
        run_experiment(&cfg, workers).unwrap();
        let csv = std::fs::read(cfg.out.join("metrics.csv")).unwrap();
        let rows = read_metrics(&[cfg.out.join("metrics.csv")]).unwrap();
        (csv, plot_curves(&rows, 4, "task 5").unwrap())
    };
    let first = run("a", 1);
    assert_eq!(first, run("b", 1));
    // worker threads change scheduling, not results
    assert_eq!(first, run("c", 3));
}

fn rows(method: &str, seeds: u64, n: usize, ret: impl Fn(u64, usize) -> f64) -> Vec<MetricsRow> {
    (1..=seeds)
        .flat_map(|seed| {
            let ret = &ret;
            (1..=n).map(move |e| MetricsRow {
                episode: e,
                seed,
                method: method.into(),
                task: 1,
                episode_return: ret(seed, e),
                success: (ret(seed, e) == 1.0) as u8,
                steps: 3,
                flnrm_loss: None,
            })
        })
        .collect()
}

fn path_points(svg: &str) -> Vec<Vec<(f64, f64)>> {
    let d = Regex::new(r#"<path class="curve" data-method="[^"]+" d="([^"]+)""#).unwrap();
    d.captures_iter(svg)
        .map(|c| {
            c[1].split(['M', 'L'])
                .filter(|p| !p.trim().is_empty())
                .map(|p| {
                    let (x, y) = p.trim().split_once(',').unwrap();
                    (x.parse().unwrap(), y.parse().unwrap())
                })
                .collect()
        })
        .collect()
}

#[test]
fn constant_return_plots_a_horizontal_line() {
    let svg = plot_curves(&rows("flnrm", 3, 50, |_, _| 1.0), 10, "flat").unwrap();
    let paths = path_points(&svg);
    assert_eq!(paths.len(), 1);
    assert_eq!(paths[0].len(), 41);
    assert!(paths[0].iter().all(|p| p.1 == paths[0][0].1));
    assert!(paths[0].windows(2).all(|w| w[1].0 > w[0].0));
}

#[test]
fn two_methods_plot_two_curves() {
    let mut all = rows("flnrm", 2, 30, |_, e| if e % 2 == 0 { 1.0 } else { 0.0 });
    all.extend(rows("rnn", 2, 30, |s, _| if s == 1 { 1.0 } else { -1.0 }));
    let svg = plot_curves(&all, 5, "both").unwrap();
    assert_eq!(path_points(&svg).len(), 2);
    assert_eq!(svg.matches("<polygon").count(), 2);
    assert!(svg.contains(r#"data-method="flnrm""#) && svg.contains(r#"data-method="rnn""#));
}

#[test]
fn verification_suites_pass_and_corruption_is_named() {
    for c in gradcheck_suite(None).unwrap() {
        assert!(c.passed, "{c}");
    }
    for c in extract_suite(20, 6).unwrap() {
        assert!(c.passed, "{c}");
    }
    let c = corrupted_transition_is_caught().unwrap();
    assert!(!c.passed);
    assert!(c.detail.contains("flnrm.theta_t"), "{}", c.detail);
    assert!(c.to_string().starts_with("[FAIL]"));
}
