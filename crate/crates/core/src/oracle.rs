//! Cross-checks between the tree search and the exhaustive baseline, and
//! between the propagation schemes and their closed forms. Used by the
//! `oracle` subcommand.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::baseline::{aggregated_cost, efe_policy, PolicySet};
use crate::distributions::CategoricalParams;
use crate::error::Result;
use crate::inference::{FutureBeliefs, InferenceSettings};
use crate::model::{ModelParams, ModelSpec, PastBeliefs, TargetDist, OBS, STATE};
use crate::planner::{evaluate_cost, expand_full, propagate, CostKind, PlannerConfig, Propagation};
use crate::tree::{NodeId, Tree};

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub cases: usize,
    pub max_error: f64,
    pub tolerance: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_error <= self.tolerance
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OracleSizes {
    pub models: usize,
    pub trees: usize,
    pub nodes: usize,
}

impl Default for OracleSizes {
    fn default() -> Self {
        Self {
            models: 20,
            trees: 50,
            nodes: 100,
        }
    }
}

fn random_dist(rng: &mut impl Rng, axis: &str, n: usize) -> Result<CategoricalParams> {
    CategoricalParams::from_weights(axis, (0..n).map(|_| rng.random_range(0.05..1.0)).collect())
}

fn random_model(rng: &mut impl Rng, max_size: usize, n_actions: usize) -> Result<ModelParams> {
    let spec = ModelSpec::new(
        rng.random_range(2..=max_size),
        rng.random_range(2..=max_size),
        n_actions,
    )?;
    ModelParams::random_known(spec, rng)
}

/// Settings under which the tree reproduces the baseline's beliefs exactly.
pub fn bridge_config() -> PlannerConfig {
    PlannerConfig {
        cost: CostKind::Classic,
        propagation: Propagation::Forward,
        inference: InferenceSettings {
            future: FutureBeliefs::Predictive,
            ..InferenceSettings::default()
        },
        ..PlannerConfig::default()
    }
}

/// Largest gap, over every policy of every model, between the aggregated
/// cost and the expected free energy (first result) and between the
/// forward-aggregated cost of the matching tree leaf and the expected free
/// energy (second result).
pub fn cost_equivalence(models: usize, horizon: usize, seed: u64) -> Result<(CheckResult, CheckResult)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut aggregated_gap: f64 = 0.0;
    let mut tree_gap: f64 = 0.0;
    let mut cases = 0;
    let config = bridge_config();
    for _ in 0..models {
        let model = random_model(&mut rng, 4, 2)?;
        let spec = model.spec();
        let target = TargetDist::new(
            random_dist(&mut rng, OBS, spec.n_obs)?,
            CategoricalParams::uniform(STATE, spec.n_states)?,
        )?;
        let past = PastBeliefs::new(&model, rng.random_range(0..spec.n_obs))?;
        let present = past.present().clone();
        let tree = expand_full(&model, &past, &target, &config, horizon, &mut rng)?;
        for policy in PolicySet::new(spec.n_actions, horizon)?.iter() {
            let efe = efe_policy(&policy, &model, &target.obs, &present)?;
            let agg = aggregated_cost(&policy, &model, &target.obs, &present)?;
            let leaf = tree
                .find(&crate::tree::MultiIndex::new(policy.actions().to_vec()))
                .expect("fully expanded");
            aggregated_gap = aggregated_gap.max((agg - efe).abs());
            tree_gap = tree_gap.max((tree.node(leaf).aggregated_cost - efe).abs());
            cases += 1;
        }
    }
    Ok((
        CheckResult {
            name: "aggregated_cost_equals_efe",
            cases,
            max_error: aggregated_gap,
            tolerance: 1e-8,
        },
        CheckResult {
            name: "tree_leaf_cost_equals_efe",
            cases,
            max_error: tree_gap,
            tolerance: 1e-8,
        },
    ))
}

/// A random tree of at most `max_nodes` nodes with random local costs,
/// propagated by `scheme` one expansion at a time.
pub fn random_tree(rng: &mut impl Rng, max_nodes: usize, scheme: Propagation) -> Result<Tree> {
    let n_actions = rng.random_range(2..=3);
    let model = ModelParams::random_known(ModelSpec::new(2, 2, n_actions)?, rng)?;
    let future = FutureBeliefs::Predictive;
    let mut tree = Tree::new(CategoricalParams::uniform(STATE, 2)?, &model)?;
    let expansions = rng.random_range(1..=(max_nodes - 1) / n_actions);
    for _ in 0..expansions {
        let leaves: Vec<NodeId> = tree.ids().filter(|&id| tree.node(id).is_leaf()).collect();
        let leaf = leaves[rng.random_range(0..leaves.len())];
        let new_nodes = tree.attach_children(leaf, &model, future)?;
        for &id in &new_nodes {
            tree.node_mut(id).local_cost = rng.random_range(0.0..1.0);
        }
        propagate(&mut tree, &new_nodes, scheme);
    }
    Ok(tree)
}

/// `G_J = g_J + Σ_K∈desc(J) g_K` after backward propagation.
pub fn backward_identity(trees: usize, seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gap: f64 = 0.0;
    let mut cases = 0;
    for _ in 0..trees {
        let tree = random_tree(&mut rng, 200, Propagation::Backward)?;
        for id in tree.ids() {
            let node = tree.node(id);
            let expected: f64 = node.local_cost
                + tree
                    .descendants(id)
                    .iter()
                    .map(|&k| tree.node(k).local_cost)
                    .sum::<f64>();
            gap = gap.max((node.aggregated_cost - expected).abs());
            cases += 1;
        }
    }
    Ok(CheckResult {
        name: "backward_identity",
        cases,
        max_error: gap,
        tolerance: 1e-12,
    })
}

/// After min-backward propagation, `G_J` is `g_J` plus, for every expanded
/// node `K` in the subtree of `J`, one copy of the minimum child cost of `K`
/// per child.
pub fn min_backward_identity(trees: usize, seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gap: f64 = 0.0;
    let mut cases = 0;
    for _ in 0..trees {
        let tree = random_tree(&mut rng, 200, Propagation::MinBackward)?;
        for id in tree.ids() {
            let node = tree.node(id);
            let mut expected = node.local_cost;
            for k in std::iter::once(id).chain(tree.descendants(id)) {
                let kids: Vec<f64> = tree
                    .node(k)
                    .children()
                    .map(|(_, c)| tree.node(c).local_cost)
                    .collect();
                if let Some(min) = kids.iter().copied().reduce(f64::min) {
                    expected += kids.len() as f64 * min;
                }
            }
            gap = gap.max((node.aggregated_cost - expected).abs());
            cases += 1;
        }
    }
    Ok(CheckResult {
        name: "min_backward_identity",
        cases,
        max_error: gap,
        tolerance: 1e-12,
    })
}

/// `G_I = Σ_J∈prefixes(I) g_J` after forward propagation.
pub fn forward_identity(trees: usize, seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gap: f64 = 0.0;
    let mut cases = 0;
    for _ in 0..trees {
        let tree = random_tree(&mut rng, 200, Propagation::Forward)?;
        for id in tree.ids().skip(1) {
            let path: f64 = std::iter::once(id)
                .chain(tree.ancestors(id))
                .map(|j| tree.node(j).local_cost)
                .sum();
            gap = gap.max((tree.node(id).aggregated_cost - path).abs());
            cases += 1;
        }
    }
    Ok(CheckResult {
        name: "forward_identity",
        cases,
        max_error: gap,
        tolerance: 1e-12,
    })
}

/// `g_feef = g_pcost` on random node beliefs and targets.
pub fn feef_equals_pcost(nodes: usize, seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gap: f64 = 0.0;
    for _ in 0..nodes {
        let model = random_model(&mut rng, 5, 2)?;
        let spec = model.spec();
        let state = random_dist(&mut rng, STATE, spec.n_states)?;
        let obs = random_dist(&mut rng, OBS, spec.n_obs)?;
        let target = TargetDist::new(
            random_dist(&mut rng, OBS, spec.n_obs)?,
            random_dist(&mut rng, STATE, spec.n_states)?,
        )?;
        let feef = evaluate_cost(&model, &target, &state, &obs, CostKind::Feef)?;
        let pcost = evaluate_cost(&model, &target, &state, &obs, CostKind::Pcost)?;
        gap = gap.max((feef - pcost).abs());
    }
    Ok(CheckResult {
        name: "feef_equals_pcost",
        cases: nodes,
        max_error: gap,
        tolerance: 1e-12,
    })
}

/// The classic cost vanishes when predicted observations match the target
/// and every state emits one observation deterministically.
pub fn classic_zero() -> Result<CheckResult> {
    let model = ModelParams::known_from_vecs(
        &[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 1.0], vec![0.0, 0.0, 0.0]],
        &[vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ]],
        &[1.0, 0.0, 0.0],
    )?;
    let state = CategoricalParams::from_vec(STATE, vec![0.2, 0.3, 0.5])?;
    let obs = model.predict_obs(&state)?;
    let target = TargetDist::new(obs.clone(), CategoricalParams::uniform(STATE, 3)?)?;
    let g = evaluate_cost(&model, &target, &state, &obs, CostKind::Classic)?;
    Ok(CheckResult {
        name: "classic_zero_construction",
        cases: 1,
        max_error: g.abs(),
        tolerance: 1e-12,
    })
}

/// Every check, in a fixed order.
pub fn run_oracle_suite(sizes: OracleSizes, seed: u64) -> Result<Vec<CheckResult>> {
    let (aggregated, tree) = cost_equivalence(sizes.models, 3, seed)?;
    Ok(vec![
        aggregated,
        tree,
        backward_identity(sizes.trees, seed)?,
        min_backward_identity(sizes.trees, seed)?,
        forward_identity(sizes.trees, seed)?,
        feef_equals_pcost(sizes.nodes, seed)?,
        classic_zero()?,
    ])
}
