use proptest::prelude::*;

use flnrm::harness::verify::oracle_suite;
use flnrm::tasks::{
    glob_avoid, oracle_rewards, progress, seq_visit, task, task_registry, Ltlf, ALPHABET, REWARD_SATISFIED,
    REWARD_VIOLATED,
};

#[test]
fn compiled_tasks_match_progression_exhaustively() {
    let checks = oracle_suite(6).unwrap();
    assert_eq!(checks.len(), 8);
    for c in checks {
        assert!(c.passed, "{c}");
    }
}

fn avoided(spec_id: usize) -> Vec<usize> {
    // tasks 5 and 7 avoid c; 6 and 8 avoid c and d
    match spec_id {
        5 | 7 => vec![2],
        6 | 8 => vec![2, 3],
        _ => vec![],
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn verdicts_are_absorbing(id in 1usize..=8, trace in prop::collection::vec(0usize..5, 1..60)) {
        let spec = task(id).unwrap();
        let (_, rewards) = spec.compile().unwrap().run(&trace).unwrap();
        if let Some(i) = rewards.iter().position(|&r| r != 0.0) {
            prop_assert!(rewards[i..].iter().all(|&r| r == rewards[i]));
        }
    }

    #[test]
    fn violation_iff_avoided_item_before_satisfaction(id in 1usize..=8, trace in prop::collection::vec(0usize..5, 1..40)) {
        let spec = task(id).unwrap();
        let (_, rewards) = spec.compile().unwrap().run(&trace).unwrap();
        let bad = avoided(id);
        let first_sat = rewards.iter().position(|&r| r == REWARD_SATISFIED);
        let first_bad = trace.iter().position(|s| bad.contains(s));
        let expect_violation = match (first_bad, first_sat) {
            (Some(b), Some(s)) => b < s,
            (Some(_), None) => true,
            _ => false,
        };
        if spec.class == 1 {
            prop_assert!(!rewards.contains(&REWARD_VIOLATED));
        }
        prop_assert_eq!(rewards.contains(&REWARD_VIOLATED), expect_violation);
        if let Some(b) = first_bad.filter(|_| expect_violation) {
            prop_assert_eq!(rewards[b], REWARD_VIOLATED);
        }
    }

    #[test]
    fn progression_verdicts_match_oracle(id in 1usize..=8, trace in prop::collection::vec(0usize..5, 1..30)) {
        let spec = task(id).unwrap();
        let rewards = oracle_rewards(&spec, &trace).unwrap();
        let mut f = spec.formula.clone();
        for (i, &s) in trace.iter().enumerate() {
            f = progress(&f, ALPHABET[s]).unwrap();
            match f {
                Ltlf::False => {
                    prop_assert_eq!(rewards[i], REWARD_VIOLATED);
                    break;
                }
                _ if f.accepts_empty() => {
                    prop_assert_eq!(rewards[i], REWARD_SATISFIED);
                    break;
                }
                _ => prop_assert_eq!(rewards[i], 0.0),
            }
        }
    }
}

#[test]
fn registry_has_two_classes_of_four() {
    let reg = task_registry();
    assert_eq!(reg.iter().map(|t| t.id).collect::<Vec<_>>(), (1..=8).collect::<Vec<_>>());
    assert!(reg[..4].iter().all(|t| t.class == 1 && t.reward_values == vec![0.0, 1.0]));
    assert!(reg[4..].iter().all(|t| t.class == 2 && t.reward_values == vec![0.0, 1.0, -1.0]));
}

#[test]
fn pattern_builders_nest_as_expected() {
    let f = seq_visit(&["a", "b", "c"]).unwrap();
    assert_eq!(
        f,
        Ltlf::eventually(Ltlf::conj(vec![
            Ltlf::atom("a"),
            Ltlf::eventually(Ltlf::conj(vec![Ltlf::atom("b"), Ltlf::eventually(Ltlf::atom("c"))])),
        ]))
    );
    assert_eq!(glob_avoid(&["c"]).unwrap(), Ltlf::globally(Ltlf::not(Ltlf::atom("c"))));
    assert!(glob_avoid(&["z"]).is_err());
}

#[test]
fn machine_sizes_are_small() {
    for spec in task_registry() {
        let m = spec.compile().unwrap();
        assert!(m.num_states() <= 8, "task {} has {} states", spec.id, m.num_states());
        assert_eq!(m.minimize().num_states(), m.num_states());
    }
}
