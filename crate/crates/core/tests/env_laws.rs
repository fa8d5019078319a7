use brx_core::env::{
    is_terminal, law_violations, legal_actions, new_scenario, step, AgentId, RoomCoord, ScenarioConfig, WorldState,
};
use brx_core::policy::{PolicyKind, PolicyPair};
use proptest::prelude::*;
use rand::{seq::IndexedRandom, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_walk(cfg: &ScenarioConfig, steps: usize, walk_seed: u64) -> Vec<&'static str> {
    let mut rng = ChaCha8Rng::seed_from_u64(walk_seed);
    let mut state = new_scenario(cfg).unwrap();
    let mut violations = Vec::new();
    for _ in 0..steps {
        let agent = state.whose_turn;
        let action = *legal_actions(&state, agent).choose(&mut rng).unwrap();
        let next = step(&state, agent, action).unwrap();
        violations.extend(law_violations(&state, &next));
        state = next;
    }
    violations
}

#[test]
fn ten_thousand_random_steps_keep_the_laws() {
    let mut total = 0;
    for seed in 0..100 {
        let v = random_walk(&ScenarioConfig::default().with_seed(seed), 100, seed);
        assert!(v.is_empty(), "scenario {seed}: {v:?}");
        total += 100;
    }
    assert_eq!(total, 10_000);
}

#[test]
fn expert_team_rescues_every_victim() {
    let pair = PolicyPair::uniform(PolicyKind::Expert);
    for seed in 0..50 {
        let mut state = new_scenario(&ScenarioConfig::default().with_seed(seed)).unwrap();
        let total = state.victims_total();
        for _ in 0..400 {
            if is_terminal(&state) {
                break;
            }
            let agent = state.whose_turn;
            state = step(&state, agent, pair.for_agent(agent).act(&state)).unwrap();
        }
        assert!(is_terminal(&state), "seed {seed} did not finish");
        assert_eq!(state.rescued_count, total);
    }
}

fn arb_config() -> impl Strategy<Value = ScenarioConfig> {
    (any::<u64>(), 0u32..=8, 0u32..=10, 0.0f64..=1.0, 0usize..20, 0usize..20).prop_map(
        |(seed, n_victims, n_rubble, p_hidden, e, m)| ScenarioConfig {
            seed,
            n_victims,
            n_rubble,
            p_hidden,
            engineer_start: RoomCoord::from_index(e),
            medic_start: RoomCoord::from_index(m),
        },
    )
}

proptest! {
    #[test]
    fn laws_hold_for_any_scenario(cfg in arb_config(), walk in any::<u64>()) {
        prop_assert!(random_walk(&cfg, 60, walk).is_empty());
    }

    #[test]
    fn scenarios_are_pure_functions_of_the_config(cfg in arb_config()) {
        let a = new_scenario(&cfg).unwrap();
        prop_assert_eq!(&a, &new_scenario(&cfg).unwrap());
        prop_assert_eq!(a.victims_total(), cfg.n_victims);
        prop_assert_eq!(a.rubble_count(), cfg.n_rubble);
        prop_assert!(WorldState::coords().all(|c| a.room(c).victim != brx_core::env::Victim::Hidden || a.room(c).has_rubble));
    }

    #[test]
    fn out_of_turn_actions_are_rejected(cfg in arb_config()) {
        let s = new_scenario(&cfg).unwrap();
        prop_assert!(step(&s, AgentId::Medic, brx_core::env::Action::Wait).is_err());
    }
}
