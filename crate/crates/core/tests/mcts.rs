use aircombat::environment::{reset, ScenarioConfig};
use aircombat::mcts::{
    run_search, search_action, LeafEvaluator, MctsError, SearchConfig, SearchModel,
};
use aircombat::nn::{Actor, Critic};
use aircombat::Side;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Toy model whose state remembers the first action taken from the root.
struct Tagged;

#[derive(Clone)]
struct TaggedState {
    depth: usize,
    first: Option<Vec<f64>>,
}

impl SearchModel for Tagged {
    type State = TaggedState;

    fn terminal_value(&self, _s: &TaggedState) -> Option<f64> {
        None
    }

    fn observe(&self, s: &TaggedState) -> Vec<f64> {
        vec![0.1 * s.depth as f64; 13]
    }

    fn step(&self, s: &TaggedState, action: &[f64]) -> Result<TaggedState, MctsError> {
        Ok(TaggedState { depth: s.depth + 1, first: s.first.clone().or_else(|| Some(action.to_vec())) })
    }
}

/// +1 below the rigged root child, 0 everywhere else.
struct Rigged(Vec<f64>);

impl LeafEvaluator<TaggedState> for Rigged {
    fn evaluate(&self, s: &TaggedState, _obs: &[f64]) -> Result<f64, MctsError> {
        Ok(if s.first.as_deref() == Some(self.0.as_slice()) { 1.0 } else { 0.0 })
    }
}

fn root() -> TaggedState {
    TaggedState { depth: 0, first: None }
}

#[test]
fn rigged_child_always_chosen() {
    let actor = Actor::init(3);
    let cfg = SearchConfig::default();
    for trial in 0..100u64 {
        let rng = ChaCha8Rng::seed_from_u64(trial);
        // The root candidates are the first draws from the stream.
        let candidates = actor.sample_n(&[0.0; 13], cfg.num_actions, &mut rng.clone()).unwrap();
        let k = (trial % cfg.num_actions as u64) as usize;
        let oracle = Rigged(candidates[k].0.clone());
        let result = run_search(&root(), &Tagged, &actor, &oracle, &cfg, &mut rng.clone()).unwrap();
        assert_eq!(result.trace.chosen, k, "trial {trial}: visits {:?}", result.trace.visits);
        assert_eq!(result.action, candidates[k].0);
        let best = result.trace.visits[k];
        assert!(result.trace.visits.iter().enumerate().all(|(i, &n)| i == k || n < best));
    }
}

#[test]
fn dominance_for_small_budgets() {
    let actor = Actor::init(4);
    for sims in [18, 25, 40] {
        let cfg = SearchConfig { num_simulations: sims, ..Default::default() };
        for trial in 0..20u64 {
            let rng = ChaCha8Rng::seed_from_u64(1000 + trial);
            let candidates = actor.sample_n(&[0.0; 13], 9, &mut rng.clone()).unwrap();
            let k = (trial * 7 % 9) as usize;
            let oracle = Rigged(candidates[k].0.clone());
            let r = run_search(&root(), &Tagged, &actor, &oracle, &cfg, &mut rng.clone()).unwrap();
            assert_eq!(r.trace.chosen, k);
        }
    }
}

#[test]
fn root_visits_and_priors() {
    let scenario = ScenarioConfig::default();
    let state = reset(1, &scenario).unwrap();
    let (actor, critic, opp) = (Actor::init(1), Critic::init(2), Actor::init(3));
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cfg = SearchConfig::default();
    let r = search_action(&state, Side::Blue, &actor, &critic, &opp, &scenario, &cfg, &mut rng).unwrap();
    assert_eq!(r.trace.visits.iter().sum::<u32>(), 20);
    assert_eq!(r.trace.priors.len(), 9);
    assert!((r.trace.priors.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    assert!(r.trace.q.iter().all(|q| (-1.0..=1.0).contains(q)));
    assert!((-1.0..=1.0).contains(&r.root_value));
    let mean = actor.mean(&aircombat::environment::observe(&state, Side::Blue).0).unwrap();
    assert_eq!(r.log_prob, actor.log_prob(&mean, &r.action));
}

#[test]
fn single_action_is_plain_sampling() {
    let scenario = ScenarioConfig::default();
    let state = reset(2, &scenario).unwrap();
    let (actor, critic, opp) = (Actor::init(1), Critic::init(2), Actor::init(3));
    let cfg = SearchConfig { num_actions: 1, ..Default::default() };
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = search_action(&state, Side::Red, &actor, &critic, &opp, &scenario, &cfg, &mut rng).unwrap();
        let obs = aircombat::environment::observe(&state, Side::Red);
        let (a, lp) = actor.sample_and_logprob(&obs.0, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        assert_eq!(r.action, a);
        assert_eq!(r.log_prob, lp);
        assert_eq!(r.trace.visits, vec![20]);
    }
}

#[test]
fn search_is_deterministic() {
    let scenario = ScenarioConfig::default();
    let state = reset(3, &scenario).unwrap();
    let (actor, critic, opp) = (Actor::init(1), Critic::init(2), Actor::init(3));
    let cfg = SearchConfig::default();
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        search_action(&state, Side::Blue, &actor, &critic, &opp, &scenario, &cfg, &mut rng).unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn terminal_root_is_rejected() {
    let scenario = ScenarioConfig::default();
    let mut state = reset(3, &scenario).unwrap();
    state.outcome = aircombat::environment::Outcome::Draw;
    let (actor, critic) = (Actor::init(1), Critic::init(2));
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let err = search_action(&state, Side::Blue, &actor, &critic, &actor, &scenario, &SearchConfig::default(), &mut rng);
    assert_eq!(err, Err(MctsError::TerminalRoot));
}
