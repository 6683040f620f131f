//! Property tests for the invariants of each module.

use btai::baseline::{aggregated_cost, bma_select_action, efe_policy, policy_posterior, PolicySet};
use btai::distributions::{
    entropy_categorical, kl_categorical, softmax, CategoricalParams, DirichletParams,
};
use btai::env::{Environment, MazeSpec, PomdpEnv};
use btai::inference::{
    infer_past, update_dirichlet_posteriors, FutureBeliefs, InferenceMode, InferenceSettings,
};
use btai::model::{ModelParams, ModelSpec, PastBeliefs, PriorConcentrations, TargetDist, OBS, STATE};
use btai::planner::{
    evaluate_cost, plan, select_leaf, CostKind, PlannerConfig, Propagation,
};
use btai::tensor::{inner_product, outer_product, Axis, Tensor};
use btai::tree::{NodeId, Tree};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_model(rng: &mut ChaCha8Rng, max: usize, actions: usize) -> ModelParams {
    let spec = ModelSpec::new(rng.random_range(2..=max), rng.random_range(2..=max), actions).unwrap();
    ModelParams::random_known(spec, rng).unwrap()
}

fn random_dist(rng: &mut ChaCha8Rng, axis: &str, n: usize) -> CategoricalParams {
    CategoricalParams::from_weights(axis, (0..n).map(|_| rng.random_range(0.01..1.0)).collect()).unwrap()
}

fn vector(name: &str, values: &[f64]) -> Tensor {
    Tensor::vector(name, values.to_vec()).unwrap()
}

fn planned_tree(seed: u64, propagation: Propagation, mode: InferenceMode) -> (Tree, usize, usize) {
    let mut rng = rng(seed);
    let actions = rng.random_range(2..=3);
    let model = random_model(&mut rng, 3, actions);
    let spec = model.spec();
    let target = TargetDist::new(random_dist(&mut rng, OBS, spec.n_obs), random_dist(&mut rng, STATE, spec.n_states)).unwrap();
    let past = PastBeliefs::new(&model, rng.random_range(0..spec.n_obs)).unwrap();
    let expansions = rng.random_range(1..=12);
    let config = PlannerConfig {
        max_expansions: expansions,
        propagation,
        exploration: rng.random_range(0.0..2.0),
        inference: InferenceSettings {
            mode,
            ..InferenceSettings::default()
        },
        ..PlannerConfig::default()
    };
    let outcome = plan(&model, &past, &target, &config, &mut rng).unwrap();
    (outcome.tree, expansions, actions)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn outer_product_size_is_product_of_sizes(sizes in prop::collection::vec(1usize..5, 1..=4)) {
        let names = ["a", "b", "c", "d"];
        let vs: Vec<Tensor> = sizes.iter().enumerate().map(|(i, &n)| vector(names[i], &vec![1.0; n])).collect();
        let refs: Vec<&Tensor> = vs.iter().collect();
        let t = outer_product(&refs).unwrap();
        prop_assert_eq!(t.len(), sizes.iter().product::<usize>());
    }

    #[test]
    fn inner_with_one_hot_scales_the_other_factor(
        a in prop::collection::vec(-2.0f64..2.0, 1..5),
        b in prop::collection::vec(-2.0f64..2.0, 1..5),
        k in 0usize..4,
    ) {
        let k = k % b.len();
        let w = outer_product(&[&vector("a", &a), &vector("b", &b)]).unwrap();
        let mut hot = vec![0.0; b.len()];
        hot[k] = 1.0;
        let got = inner_product(&w, &[&vector("b", &hot)]).unwrap();
        for (g, x) in got.data().iter().zip(&a) {
            prop_assert!((g - x * b[k]).abs() <= 1e-12);
        }
    }

    #[test]
    fn inner_product_ignores_factor_order(seed in any::<u64>()) {
        let mut rng = rng(seed);
        let sizes: Vec<usize> = (0..4).map(|_| rng.random_range(1..=4)).collect();
        let names = ["p", "q", "r", "s"];
        let axes: Vec<Axis> = names.iter().zip(&sizes).map(|(n, &s)| Axis::new(*n, s).unwrap()).collect();
        let w = Tensor::from_fn(axes, |_| rng.random_range(-1.0..1.0)).unwrap();
        let f: Vec<Tensor> = (1..4)
            .map(|i| vector(names[i], &(0..sizes[i]).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>()))
            .collect();
        let forward = inner_product(&w, &[&f[0], &f[1], &f[2]]).unwrap();
        let reversed = inner_product(&w, &[&f[2], &f[1], &f[0]]).unwrap();
        let rotated = inner_product(&w, &[&f[1], &f[2], &f[0]]).unwrap();
        prop_assert_eq!(&forward, &reversed);
        prop_assert_eq!(&forward, &rotated);
    }

    #[test]
    fn dirichlet_expected_log_is_negative(conc in prop::collection::vec(0.05f64..20.0, 2..6)) {
        let d = DirichletParams::new(vector(STATE, &conc), STATE).unwrap();
        prop_assert!(d.expected_log().data().iter().all(|x| *x < 0.0));
        let mean = d.expected_value();
        prop_assert!(CategoricalParams::new(mean).is_ok());
    }

    #[test]
    fn dirichlet_update_adds_counts(conc in prop::collection::vec(0.05f64..20.0, 2..6), hot in 0usize..6) {
        let hot = hot % conc.len();
        let d = DirichletParams::new(vector(STATE, &conc), STATE).unwrap();
        let counts = CategoricalParams::one_hot(STATE, conc.len(), hot).unwrap();
        let post = d.with_counts(counts.tensor()).unwrap();
        for (i, (p, c)) in post.concentrations().data().iter().zip(&conc).enumerate() {
            prop_assert_eq!(*p, c + if i == hot { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn softmax_is_shift_invariant(x in prop::collection::vec(-50.0f64..50.0, 1..8), c in -100.0f64..100.0) {
        let a = softmax(&vector(STATE, &x)).unwrap();
        let shifted: Vec<f64> = x.iter().map(|v| v + c).collect();
        let b = softmax(&vector(STATE, &shifted)).unwrap();
        for (p, q) in a.probs().iter().zip(b.probs()) {
            prop_assert!((p - q).abs() <= 1e-12);
        }
    }

    #[test]
    fn kl_is_nonnegative_and_zero_on_equal(seed in any::<u64>(), n in 2usize..8) {
        let mut rng = rng(seed);
        let q = random_dist(&mut rng, STATE, n);
        let p = random_dist(&mut rng, STATE, n);
        prop_assert!(kl_categorical(&q, &p).unwrap() >= -1e-12);
        prop_assert!(kl_categorical(&q, &q).unwrap().abs() <= 1e-12);
        prop_assert!(entropy_categorical(&q) >= 0.0);
    }

    #[test]
    fn known_matrices_are_column_stochastic(seed in any::<u64>()) {
        let mut rng = rng(seed);
        let model = random_model(&mut rng, 5, 3);
        model.a().mean().for_each_fiber(OBS, |col| assert!((col.iter().sum::<f64>() - 1.0).abs() <= 1e-12)).unwrap();
        model.b().mean().for_each_fiber(btai::model::NEXT_STATE, |col| assert!((col.iter().sum::<f64>() - 1.0).abs() <= 1e-12)).unwrap();
    }

    #[test]
    fn learning_only_adds_counts(seed in any::<u64>(), episodes in 1usize..4) {
        let mut rng = rng(seed);
        let truth = random_model(&mut rng, 3, 2);
        let spec = truth.spec();
        let mut model = ModelParams::new(spec, PriorConcentrations::default()).unwrap();
        let first = model.clone();
        for _ in 0..episodes {
            let mut env = PomdpEnv::new(&truth, rng.random()).unwrap();
            let mut past = PastBeliefs::new(&model, env.reset()).unwrap();
            for _ in 0..rng.random_range(0..4) {
                let u = rng.random_range(0..spec.n_actions);
                let obs = env.step(u).unwrap();
                let prior = model.executed_action_prior(u).unwrap();
                model.push_action_prior(prior).unwrap();
                past.push(&model, u, obs).unwrap();
            }
            infer_past(&model, &mut past, &InferenceSettings::default()).unwrap();
            let learned = update_dirichlet_posteriors(&model, &past).unwrap();
            for (p, q) in [(learned.a(), model.a()), (learned.b(), model.b()), (learned.d(), model.d())] {
                let after = p.posterior().unwrap().concentrations().data();
                let before = q.prior().unwrap().concentrations().data();
                prop_assert!(after.iter().zip(before).all(|(x, y)| x >= y));
            }
            model = learned.next_trial().unwrap();
        }
        let start = first.d().prior().unwrap().concentrations().data();
        let end = model.d().prior().unwrap().concentrations().data();
        prop_assert!(end.iter().zip(start).all(|(x, y)| x >= y));
    }

    #[test]
    fn inference_keeps_beliefs_normalized_and_lowers_free_energy(seed in any::<u64>(), global in any::<bool>()) {
        let mode = if global { InferenceMode::Global } else { InferenceMode::Local };
        let mut rng = rng(seed);
        let model = random_model(&mut rng, 3, 2);
        let spec = model.spec();
        let target = TargetDist::uniform(spec).unwrap();
        let past = PastBeliefs::new(&model, rng.random_range(0..spec.n_obs)).unwrap();
        let config = PlannerConfig {
            max_expansions: 6,
            inference: InferenceSettings { mode, future: FutureBeliefs::Variational, ..InferenceSettings::default() },
            ..PlannerConfig::default()
        };
        let outcome = plan(&model, &past, &target, &config, &mut rng).unwrap();
        for trace in &outcome.traces {
            let mut previous = trace.initial;
            for &f in &trace.per_sweep {
                prop_assert!(f <= previous + 1e-9, "{} after {}", f, previous);
                previous = f;
            }
        }
        for id in outcome.tree.ids() {
            let node = outcome.tree.node(id);
            prop_assert!((node.state_belief.probs().iter().sum::<f64>() - 1.0).abs() <= 1e-10);
            prop_assert!((node.obs_belief.probs().iter().sum::<f64>() - 1.0).abs() <= 1e-10);
        }
    }

    #[test]
    fn identity_likelihood_pins_past_states(seed in any::<u64>(), steps in 0usize..5) {
        let mut rng = rng(seed);
        let random = random_model(&mut rng, 4, 2);
        let n = random.spec().n_states;
        let a: Vec<Vec<f64>> = (0..n).map(|o| (0..n).map(|s| if o == s { 1.0 } else { 0.0 }).collect()).collect();
        let b: Vec<Vec<Vec<f64>>> = (0..2)
            .map(|u| (0..n).map(|s2| (0..n).map(|s| random.transition_mean(u).get(&[s2, s]).unwrap()).collect()).collect())
            .collect();
        let d = random.d().mean().data().to_vec();
        let model = ModelParams::known_from_vecs(&a, &b, &d).unwrap();
        let mut model_run = model.clone();
        let mut env = PomdpEnv::new(&model, rng.random()).unwrap();
        let mut past = PastBeliefs::new(&model_run, env.reset()).unwrap();
        for _ in 0..steps {
            let u = rng.random_range(0..2);
            let obs = env.step(u).unwrap();
            let prior = model_run.executed_action_prior(u).unwrap();
            model_run.push_action_prior(prior).unwrap();
            past.push(&model_run, u, obs).unwrap();
        }
        let settings = InferenceSettings { mode: InferenceMode::Global, ..InferenceSettings::default() };
        infer_past(&model_run, &mut past, &settings).unwrap();
        for (tau, &o) in past.observations().iter().enumerate() {
            prop_assert!(past.state(tau).probs()[o] >= 1.0 - 1e-6);
        }
    }

    #[test]
    fn planned_trees_are_prefix_closed(seed in any::<u64>()) {
        let (tree, expansions, actions) = planned_tree(seed, Propagation::Backward, InferenceMode::Local);
        prop_assert_eq!(tree.len(), 1 + expansions * actions);
        for id in tree.ids() {
            let node = tree.node(id);
            prop_assert_eq!(node.index.depth(), tree.ancestors(id).len());
            if let Some(parent) = node.parent {
                prop_assert_eq!(Some(tree.node(parent).index.clone()), node.index.parent());
                prop_assert_eq!(tree.find(&node.index), Some(id));
            }
        }
    }

    #[test]
    fn visits_cover_siblings_and_sum_at_the_root(seed in any::<u64>()) {
        let (tree, expansions, actions) = planned_tree(seed, Propagation::Backward, InferenceMode::Local);
        for id in tree.ids() {
            let node = tree.node(id);
            if node.n_children() > 0 {
                prop_assert_eq!(node.n_children(), actions);
                prop_assert!(node.children().all(|(_, c)| tree.node(c).visits >= 1));
            }
        }
        let root = tree.root();
        prop_assert_eq!(root.visits, root.children().map(|(_, c)| tree.node(c).visits).sum::<u64>());
        prop_assert_eq!(root.visits as usize, expansions * actions);
    }

    #[test]
    fn backward_and_forward_identities_hold(seed in any::<u64>()) {
        let (tree, _, _) = planned_tree(seed, Propagation::Backward, InferenceMode::Local);
        for id in tree.ids() {
            let expected = tree.node(id).local_cost
                + tree.descendants(id).iter().map(|&k| tree.node(k).local_cost).sum::<f64>();
            let got = tree.node(id).aggregated_cost;
            prop_assert!((got - expected).abs() <= 1e-9 * expected.abs().max(1.0));
        }
        let (tree, _, _) = planned_tree(seed, Propagation::Forward, InferenceMode::Local);
        for id in tree.ids().skip(1) {
            let expected: f64 = std::iter::once(id).chain(tree.ancestors(id)).map(|j| tree.node(j).local_cost).sum();
            let got = tree.node(id).aggregated_cost;
            prop_assert!((got - expected).abs() <= 1e-9 * expected.abs().max(1.0));
        }
    }

    #[test]
    fn greedy_selection_ignores_a_common_shift(seed in any::<u64>(), shift in -5.0f64..5.0) {
        let (mut tree, _, _) = planned_tree(seed, Propagation::Backward, InferenceMode::Local);
        let before = select_leaf(&tree, 0.0);
        let ids: Vec<NodeId> = tree.ids().collect();
        for id in ids {
            let node = tree.node_mut(id);
            node.aggregated_cost += shift * node.visits as f64;
        }
        prop_assert_eq!(select_leaf(&tree, 0.0), before);
    }

    #[test]
    fn feef_equals_pcost(seed in any::<u64>()) {
        let mut rng = rng(seed);
        let model = random_model(&mut rng, 5, 2);
        let spec = model.spec();
        let state = random_dist(&mut rng, STATE, spec.n_states);
        let obs = random_dist(&mut rng, OBS, spec.n_obs);
        let target = TargetDist::new(random_dist(&mut rng, OBS, spec.n_obs), random_dist(&mut rng, STATE, spec.n_states)).unwrap();
        let feef = evaluate_cost(&model, &target, &state, &obs, CostKind::Feef).unwrap();
        let pcost = evaluate_cost(&model, &target, &state, &obs, CostKind::Pcost).unwrap();
        prop_assert!((feef - pcost).abs() <= 1e-12);
    }

    #[test]
    fn policy_count_and_cost_equivalence(seed in any::<u64>(), actions in 1usize..4, horizon in 0usize..4) {
        let mut rng = rng(seed);
        let model = random_model(&mut rng, 4, actions);
        let prefs = random_dist(&mut rng, OBS, model.spec().n_obs);
        let present = random_dist(&mut rng, STATE, model.spec().n_states);
        let set = PolicySet::new(actions, horizon).unwrap();
        prop_assert_eq!(set.len(), actions.pow(horizon as u32));
        for policy in set.iter() {
            let efe = efe_policy(&policy, &model, &prefs, &present).unwrap();
            let agg = aggregated_cost(&policy, &model, &prefs, &present).unwrap();
            prop_assert!((efe - agg).abs() <= 1e-12);
        }
    }

    #[test]
    fn bma_ignores_a_constant_added_to_every_cost(
        costs in prop::collection::vec(0.0f64..10.0, 9),
        shift in -20.0f64..20.0,
    ) {
        let policies: Vec<_> = PolicySet::new(3, 2).unwrap().iter().collect();
        let shifted: Vec<f64> = costs.iter().map(|g| g + shift).collect();
        let a = bma_select_action(&policies, &policy_posterior(&costs, 1.0).unwrap()).unwrap();
        let b = bma_select_action(&policies, &policy_posterior(&shifted, 1.0).unwrap()).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn environments_replay_from_their_seed(seed in any::<u64>(), actions in prop::collection::vec(0usize..2, 0..10)) {
        let mut rng = rng(seed);
        let model = random_model(&mut rng, 4, 2);
        let run = |s: u64| {
            let mut env = PomdpEnv::new(&model, s).unwrap();
            let mut seen = vec![env.reset()];
            for &u in &actions {
                seen.push(env.step(u).unwrap());
            }
            (seen, env.state())
        };
        prop_assert_eq!(run(seed), run(seed));
    }

    #[test]
    fn random_mazes_give_stochastic_models(
        cells in prop::collection::vec(prop::bool::weighted(0.3), 4..=36),
        width in 2usize..=6,
        noise in 0.0f64..0.5,
        four in any::<bool>(),
    ) {
        let rows = cells.len().div_ceil(width).max(1);
        let mut grid: Vec<char> = (0..rows * width).map(|i| if cells.get(i).copied().unwrap_or(false) { '#' } else { '.' }).collect();
        grid[0] = 'S';
        let last = grid.len() - 1;
        grid[last] = 'G';
        let text: String = grid.chunks(width).map(|r| r.iter().collect::<String>() + "\n").collect();
        let maze = MazeSpec::parse(&text).unwrap().with_obs_noise(noise).unwrap()
            .with_actions(if four { 4 } else { 5 }).unwrap();
        let model = maze.to_model().unwrap();
        prop_assert_eq!(model.spec().n_states, maze.n_states());
        model.b().mean().for_each_fiber(btai::model::NEXT_STATE, |col| {
            assert!((col.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            assert!(col.iter().all(|p| *p == 0.0 || *p == 1.0));
        }).unwrap();
        model.a().mean().for_each_fiber(OBS, |col| assert!((col.iter().sum::<f64>() - 1.0).abs() <= 1e-12)).unwrap();
    }
}
