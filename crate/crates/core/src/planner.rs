//! Tree search over the future: select a leaf by UCT, expand all of its
//! actions, infer the new beliefs, score them and propagate the scores.

use std::time::Instant;

use rand::Rng;

use crate::distributions::{entropy, kl_categorical, softmax, CategoricalParams};
use crate::env::Environment;
use crate::error::{Error, Result};
use crate::inference::{
    infer_past, run_inference, update_dirichlet_posteriors, update_future_obs,
    update_future_state, FutureBeliefs, InferenceSettings, InferenceTrace,
};
use crate::model::{ModelParams, PastBeliefs, TargetDist, STATE};
use crate::tensor::{outer_product, Tensor};
use crate::tree::{child_prior, NodeId, Tree};

/// Stand-in for an infinite divergence, so that UCT arithmetic stays finite.
pub const INFINITE_COST: f64 = 1e9;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum CostKind {
    /// Risk over observations plus ambiguity.
    Classic,
    /// Divergence of the expected future from the target, jointly over
    /// observations and states.
    Feef,
    /// Divergences over states and observations, summed.
    #[default]
    Pcost,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Propagation {
    /// `G_I = g_I + G_parent`, set once when `I` is created.
    Forward,
    /// Every ancestor accumulates `g_I`.
    #[default]
    Backward,
    /// Every ancestor accumulates the lowest cost among the new siblings.
    MinBackward,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ActionRule {
    /// Sample from `σ(−γ ḡ)` over the root's children.
    #[default]
    SoftmaxAvgCost,
    /// Most visited child, then lowest `ḡ`, then lowest action.
    VisitCountMax,
    /// Sample from `σ(n)`.
    VisitCountSoftmax,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlannerConfig {
    /// `C_p`
    pub exploration: f64,
    /// `K`, the number of select-expand-evaluate-propagate iterations.
    pub max_expansions: usize,
    pub cost: CostKind,
    pub propagation: Propagation,
    /// `N`; zero disables rollouts.
    pub rollouts: usize,
    /// `K_r`
    pub rollout_depth: usize,
    /// `γ`
    pub gamma: f64,
    pub action_rule: ActionRule,
    pub inference: InferenceSettings,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            exploration: std::f64::consts::FRAC_1_SQRT_2,
            max_expansions: 64,
            cost: CostKind::default(),
            propagation: Propagation::default(),
            rollouts: 0,
            rollout_depth: 0,
            gamma: 1.0,
            action_rule: ActionRule::default(),
            inference: InferenceSettings::default(),
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.exploration >= 0.0 && self.exploration.is_finite()) {
            return Err(Error::InvalidValue(format!("C_p = {}", self.exploration)));
        }
        if self.max_expansions == 0 {
            return Err(Error::InvalidValue("max_expansions must be >= 1".into()));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidValue(format!("gamma = {}", self.gamma)));
        }
        self.inference.validate()
    }
}

/// `UCT_J = −ḡ_J + C_p √(ln n / n_J)`
pub fn uct_value(average_cost: f64, parent_visits: f64, child_visits: f64, exploration: f64) -> f64 {
    debug_assert!(parent_visits >= 1.0 && child_visits >= 1.0);
    -average_cost + exploration * (parent_visits.ln() / child_visits).sqrt()
}

/// The child of `id` with the highest UCT, lowest action on ties.
pub fn best_child(tree: &Tree, id: NodeId, exploration: f64) -> Option<NodeId> {
    let node = tree.node(id);
    let mut best: Option<(f64, NodeId)> = None;
    for (_, child) in node.children() {
        let c = tree.node(child);
        let score = match c.average_cost() {
            Some(g) => uct_value(g, node.visits.max(1) as f64, c.visits as f64, exploration),
            // not yet evaluated: try it first
            None => f64::INFINITY,
        };
        if best.is_none_or(|(b, _)| score > b) {
            best = Some((score, child));
        }
    }
    best.map(|(_, c)| c)
}

/// Descends from the root by maximal UCT until reaching a node without
/// children, which is returned for expansion.
pub fn select_leaf(tree: &Tree, exploration: f64) -> NodeId {
    let mut id = NodeId::ROOT;
    while let Some(child) = best_child(tree, id, exploration) {
        id = child;
    }
    id
}

fn finite_kl(q: &CategoricalParams, p: &CategoricalParams) -> Result<f64> {
    Ok(kl_categorical(q, p)?.min(INFINITE_COST))
}

/// The local cost of a node with state belief `state` and observation
/// belief `obs`.
pub fn evaluate_cost(
    model: &ModelParams,
    target: &TargetDist,
    state: &CategoricalParams,
    obs: &CategoricalParams,
    kind: CostKind,
) -> Result<f64> {
    match kind {
        CostKind::Classic => {
            let risk = finite_kl(obs, &target.obs)?;
            let a = model.a().mean();
            let mut ambiguity = 0.0;
            for (s, &p) in state.probs().iter().enumerate() {
                if p > 0.0 {
                    ambiguity += p * entropy(a.select(STATE, s)?.data());
                }
            }
            Ok(risk + ambiguity)
        }
        CostKind::Pcost => Ok(finite_kl(state, &target.states)? + finite_kl(obs, &target.obs)?),
        CostKind::Feef => {
            let q = outer_product(&[obs.tensor(), state.tensor()])?;
            let p = outer_product(&[target.obs.tensor(), target.states.tensor()])?;
            let flat = |t: &Tensor| CategoricalParams::from_weights("joint", t.data().to_vec());
            Ok(finite_kl(&flat(&q)?, &flat(&p)?)?)
        }
    }
}

/// Beliefs of a node that is not attached to the tree, inferred from its
/// parent alone.
pub fn virtual_child(
    model: &ModelParams,
    parent: &CategoricalParams,
    action: usize,
    settings: &InferenceSettings,
) -> Result<(CategoricalParams, CategoricalParams)> {
    let (mut state, mut obs) = child_prior(model, parent, action, settings.future)?;
    if settings.future == FutureBeliefs::Predictive {
        return Ok((state, obs));
    }
    for _ in 0..settings.max_sweeps {
        let next = update_future_state(model, action, &obs, parent, &[])?;
        obs = update_future_obs(model, &next)?;
        let change = next
            .probs()
            .iter()
            .zip(state.probs())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        state = next;
        if change < settings.vfe_tolerance {
            break;
        }
    }
    Ok((state, obs))
}

/// `g^average`: the mean, over `N` rollouts, of `g_I` plus the costs of
/// `K_r` successive random-action descendants. Rollout nodes are virtual
/// and never join the tree.
pub fn rollout_average(
    model: &ModelParams,
    target: &TargetDist,
    state: &CategoricalParams,
    local_cost: f64,
    config: &PlannerConfig,
    rng: &mut impl Rng,
) -> Result<f64> {
    if config.rollouts == 0 {
        return Ok(local_cost);
    }
    let n_actions = model.spec().n_actions;
    let mut total = 0.0;
    for _ in 0..config.rollouts {
        let mut cost = local_cost;
        let mut belief = state.clone();
        for _ in 0..config.rollout_depth {
            let action = rng.random_range(0..n_actions);
            let (s, o) = virtual_child(model, &belief, action, &config.inference)?;
            cost += evaluate_cost(model, target, &s, &o, config.cost)?;
            belief = s;
        }
        total += cost;
    }
    Ok(total / config.rollouts as f64)
}

/// Records the costs of freshly expanded siblings `new_nodes` (whose
/// `local_cost` is set) and updates their ancestors.
///
/// Every new node starts with one visit, and each of them counts as one
/// visit of every ancestor.
pub fn propagate(tree: &mut Tree, new_nodes: &[NodeId], scheme: Propagation) {
    let sibling_min = new_nodes
        .iter()
        .map(|&id| tree.node(id).local_cost)
        .fold(f64::INFINITY, f64::min);
    for &id in new_nodes {
        let g = tree.node(id).local_cost;
        let ancestors = tree.ancestors(id);
        let own = match (scheme, tree.node(id).parent) {
            (Propagation::Forward, Some(parent)) => g + tree.node(parent).aggregated_cost,
            _ => g,
        };
        let node = tree.node_mut(id);
        node.visits = 1;
        node.aggregated_cost = own;
        let added = match scheme {
            Propagation::Forward => 0.0,
            Propagation::Backward => g,
            Propagation::MinBackward => sibling_min,
        };
        for j in ancestors {
            let node = tree.node_mut(j);
            node.visits += 1;
            node.aggregated_cost += added;
        }
    }
}

/// Expansion, inference, evaluation and propagation for one selected leaf.
fn expand_node(
    model: &ModelParams,
    past: &mut PastBeliefs,
    tree: &mut Tree,
    leaf: NodeId,
    target: &TargetDist,
    config: &PlannerConfig,
    rng: &mut impl Rng,
) -> Result<(Vec<NodeId>, InferenceTrace)> {
    let new_nodes = tree.attach_children(leaf, model, config.inference.future)?;
    let trace = run_inference(model, past, tree, &config.inference, &new_nodes)?;
    for &id in &new_nodes {
        let node = tree.node(id);
        let g = evaluate_cost(model, target, &node.state_belief, &node.obs_belief, config.cost)?;
        let state = node.state_belief.clone();
        tree.node_mut(id).local_cost = rollout_average(model, target, &state, g, config, rng)?;
    }
    propagate(tree, &new_nodes, config.propagation);
    Ok((new_nodes, trace))
}

/// The tree grown by [`plan`] and the inference traces of each expansion.
#[derive(Clone, Debug)]
pub struct PlanOutcome {
    pub tree: Tree,
    pub expansions: usize,
    pub traces: Vec<InferenceTrace>,
}

/// Runs `K` planning iterations from the present beliefs in `past`.
pub fn plan(
    model: &ModelParams,
    past: &PastBeliefs,
    target: &TargetDist,
    config: &PlannerConfig,
    rng: &mut impl Rng,
) -> Result<PlanOutcome> {
    config.validate()?;
    let mut past = past.clone();
    let mut tree = Tree::new(past.present().clone(), model)?;
    let mut traces = Vec::with_capacity(config.max_expansions);
    for _ in 0..config.max_expansions {
        let leaf = select_leaf(&tree, config.exploration);
        let (_, trace) = expand_node(model, &mut past, &mut tree, leaf, target, config, rng)?;
        traces.push(trace);
    }
    Ok(PlanOutcome {
        tree,
        expansions: config.max_expansions,
        traces,
    })
}

/// Expands every node breadth-first down to `depth`, with the same
/// inference, costing and propagation as [`plan`]. The result holds all
/// `|U|^depth` paths of that length.
pub fn expand_full(
    model: &ModelParams,
    past: &PastBeliefs,
    target: &TargetDist,
    config: &PlannerConfig,
    depth: usize,
    rng: &mut impl Rng,
) -> Result<Tree> {
    config.validate()?;
    let mut past = past.clone();
    let mut tree = Tree::new(past.present().clone(), model)?;
    let mut frontier = vec![NodeId::ROOT];
    for _ in 0..depth {
        let mut next = Vec::new();
        for leaf in frontier {
            let (new_nodes, _) = expand_node(model, &mut past, &mut tree, leaf, target, config, rng)?;
            next.extend(new_nodes);
        }
        frontier = next;
    }
    Ok(tree)
}

/// The distribution that [`select_action`] samples from, as
/// `(action, probability)` over the visited children of the root.
pub fn action_distribution(tree: &Tree, config: &PlannerConfig) -> Result<Vec<(usize, f64)>> {
    let visited: Vec<(usize, u64, f64)> = tree
        .root()
        .children()
        .filter_map(|(a, id)| {
            let node = tree.node(id);
            node.average_cost().map(|g| (a, node.visits, g))
        })
        .collect();
    if visited.is_empty() {
        return Err(Error::NoVisitedChildren);
    }
    let logits: Vec<f64> = match config.action_rule {
        ActionRule::SoftmaxAvgCost => visited.iter().map(|&(_, _, g)| -config.gamma * g).collect(),
        ActionRule::VisitCountSoftmax => visited.iter().map(|&(_, n, _)| n as f64).collect(),
        ActionRule::VisitCountMax => {
            let best = visited
                .iter()
                .min_by(|x, y| y.1.cmp(&x.1).then(x.2.total_cmp(&y.2)).then(x.0.cmp(&y.0)))
                .expect("non-empty")
                .0;
            return Ok(visited
                .iter()
                .map(|&(a, _, _)| (a, f64::from(u8::from(a == best))))
                .collect());
        }
    };
    let probs = softmax(&Tensor::vector("action", logits)?)?;
    Ok(visited
        .iter()
        .zip(probs.probs())
        .map(|(&(a, _, _), &p)| (a, p))
        .collect())
}

/// Picks the action to execute after planning.
pub fn select_action(tree: &Tree, config: &PlannerConfig, rng: &mut impl Rng) -> Result<usize> {
    let dist = action_distribution(tree, config)?;
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for &(a, p) in &dist {
        acc += p;
        if u < acc {
            return Ok(a);
        }
    }
    // rounding left `acc` just below one
    Ok(dist.iter().rev().find(|(_, p)| *p > 0.0).expect("normalized").0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeStep {
    pub step: usize,
    /// The observation the plan was made from.
    pub observation: usize,
    pub action: usize,
    /// `ḡ` of the root child that was executed.
    pub selected_gbar: f64,
    pub planning_iterations: usize,
    pub wall_time_ms: f64,
    /// Free energy per sweep of the perception step.
    pub vfe: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct EpisodeTrace {
    pub steps: Vec<EpisodeStep>,
    pub final_observation: usize,
    pub terminated: bool,
    pub past: PastBeliefs,
    /// The model after the episode, with learned posteriors updated.
    pub model: ModelParams,
}

/// The action-perception cycle: perceive, plan, act, for at most `horizon`
/// actions or until the environment terminates.
pub fn act_perceive_loop(
    env: &mut dyn Environment,
    model: &ModelParams,
    target: &TargetDist,
    config: &PlannerConfig,
    horizon: usize,
    rng: &mut impl Rng,
) -> Result<EpisodeTrace> {
    if env.spec() != model.spec() {
        return Err(Error::AxisMismatch(format!(
            "environment {:?} and model {:?} differ",
            env.spec(),
            model.spec()
        )));
    }
    config.validate()?;
    let mut model = model.clone();
    let mut obs = env.reset();
    let mut past = PastBeliefs::new(&model, obs)?;
    let mut steps = Vec::new();
    for step in 0..horizon {
        if env.is_terminal() {
            break;
        }
        let perception = infer_past(&model, &mut past, &config.inference)?;
        let start = Instant::now();
        let outcome = plan(&model, &past, target, config, rng)?;
        let action = select_action(&outcome.tree, config, rng)?;
        let wall_time_ms = start.elapsed().as_secs_f64() * 1e3;
        let chosen = outcome.tree.root().child(action).expect("selected from children");
        let selected_gbar = outcome.tree.node(chosen).average_cost().unwrap_or(f64::NAN);
        log::debug!("step {step}: obs {obs} -> action {action} (g = {selected_gbar})");
        steps.push(EpisodeStep {
            step,
            observation: obs,
            action,
            selected_gbar,
            planning_iterations: outcome.expansions,
            wall_time_ms,
            vfe: perception.per_sweep,
        });
        obs = env.step(action)?;
        let prior = model.executed_action_prior(action)?;
        model.push_action_prior(prior)?;
        past.push(&model, action, obs)?;
    }
    infer_past(&model, &mut past, &config.inference)?;
    if model.is_learning() {
        model = update_dirichlet_posteriors(&model, &past)?;
    }
    Ok(EpisodeTrace {
        steps,
        final_observation: obs,
        terminated: env.is_terminal(),
        past,
        model,
    })
}
