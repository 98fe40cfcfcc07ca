use proptest::prelude::*;

use flnrm::gridworld::{Action, Cell, GridConfig, GridWorld, ObsMode};
use flnrm::tasks::{oracle_rewards, task, REWARD_SATISFIED, REWARD_VIOLATED};

fn actions(max: usize) -> impl Strategy<Value = Vec<Action>> {
    prop::collection::vec((0usize..4).prop_map(|i| Action::from_index(i).unwrap()), 1..max)
}

fn env(id: usize, cfg: GridConfig) -> GridWorld {
    GridWorld::new(cfg, task(id).unwrap().compile().unwrap()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    /// Rewards emitted while walking equal the LTLf oracle on the visited labels.
    #[test]
    fn reward_channel_matches_oracle(id in 1usize..=8, moves in actions(120)) {
        let spec = task(id).unwrap();
        let mut e = env(id, GridConfig::default());
        e.reset();
        let mut labels = Vec::new();
        let mut rewards = Vec::new();
        for a in moves {
            if e.state().done {
                break;
            }
            let s = e.step(a).unwrap();
            labels.push(s.label);
            rewards.push(s.reward);
        }
        prop_assert_eq!(rewards, oracle_rewards(&spec, &labels).unwrap());
    }

    #[test]
    fn episodes_end_with_a_verdict_or_timeout(id in 1usize..=8, max_steps in 1usize..40, moves in actions(200)) {
        let mut e = env(id, GridConfig { max_steps, ..GridConfig::default() });
        e.reset();
        let mut last = None;
        for a in moves.iter().cycle().take(max_steps + 1) {
            if e.state().done {
                break;
            }
            last = Some(e.step(*a).unwrap());
        }
        let last = last.unwrap();
        prop_assert!(last.done);
        prop_assert!(e.state().steps <= max_steps);
        if e.state().steps < max_steps {
            prop_assert!(last.reward == REWARD_SATISFIED || last.reward == REWARD_VIOLATED);
        } else {
            prop_assert!([0.0, REWARD_SATISFIED, REWARD_VIOLATED].contains(&last.reward));
        }
        prop_assert_eq!(e.state().verdict.is_some(), last.reward != 0.0);
    }

    #[test]
    fn replaying_actions_is_deterministic(id in 1usize..=8, moves in actions(60)) {
        let run = |mode| {
            let mut e = env(id, GridConfig { obs_mode: mode, image_side: 20, ..GridConfig::default() });
            let mut obs = vec![e.reset()];
            for a in &moves {
                if e.state().done {
                    break;
                }
                obs.push(e.step(*a).unwrap().obs);
            }
            (obs, e.state().clone())
        };
        for mode in [ObsMode::Vector, ObsMode::Image] {
            prop_assert_eq!(run(mode), run(mode));
        }
    }
}

#[test]
fn every_cell_has_a_distinct_image() {
    let cfg = GridConfig { obs_mode: ObsMode::Image, image_side: 20, ..GridConfig::default() };
    let cells: Vec<Cell> = (0..cfg.height).flat_map(|y| (0..cfg.width).map(move |x| Cell::new(x, y))).collect();
    let images: Vec<Vec<f64>> = cells.iter().map(|&c| cfg.render(c)).collect();
    for i in 0..images.len() {
        for j in i + 1..images.len() {
            assert_ne!(images[i], images[j], "{:?} vs {:?}", cells[i], cells[j]);
        }
    }
    // the marker covers the same area wherever the agent stands
    let white = |img: &[f64]| img.chunks(3).filter(|p| p == &[1.0, 1.0, 1.0]).count();
    let counts: Vec<usize> = images.iter().map(|img| white(img)).collect();
    assert!(counts.iter().all(|&n| n == counts[0] && n > 0), "{counts:?}");
}

#[test]
fn vector_observations_are_normalised_coordinates() {
    let cfg = GridConfig::default();
    assert_eq!(cfg.observe(Cell::new(0, 0)).data(), &[0.0, 0.0]);
    assert_eq!(cfg.observe(Cell::new(4, 4)).data(), &[1.0, 1.0]);
    assert_eq!(cfg.observe(Cell::new(1, 3)).data(), &[0.25, 0.75]);
}
