//! Variational message passing over the past chain and the future tree.
//!
//! Every latent has a categorical (or Dirichlet) factor in a mean-field
//! posterior. Each update below sets one factor to the softmax of the sum of
//! messages from its Markov blanket; a sweep applies them all once, in the
//! order past states, past actions, future states, future observations.

use crate::distributions::{entropy, softmax, CategoricalParams, DirichletParams};
use crate::error::{Error, Result};
use crate::model::{ModelParams, PastBeliefs, ACTION, NEXT_STATE, STATE};
use crate::tensor::{inner_product, outer_product, Tensor};
use crate::tree::{NodeId, Tree};

/// Which latents a call to [`run_inference`] updates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum InferenceMode {
    /// Only the newly expanded nodes.
    #[default]
    Local,
    /// Past, present and the whole tree.
    Global,
}

/// How the beliefs of future nodes are formed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum FutureBeliefs {
    /// Mean-field updates, with `O_I` as a latent variable.
    #[default]
    Variational,
    /// Closed-form predictions `D̂_I = B̄ ⊙ D̂_parent`, `Ê_I = Ā ⊙ D̂_I`. These
    /// are the exact marginals when the future observations are unobserved,
    /// and they send no messages back to the present.
    Predictive,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InferenceSettings {
    pub max_sweeps: usize,
    pub vfe_tolerance: f64,
    pub mode: InferenceMode,
    pub future: FutureBeliefs,
}

impl Default for InferenceSettings {
    fn default() -> Self {
        Self {
            max_sweeps: 16,
            vfe_tolerance: 1e-6,
            mode: InferenceMode::Local,
            future: FutureBeliefs::Variational,
        }
    }
}

impl InferenceSettings {
    pub fn validate(&self) -> Result<()> {
        if self.max_sweeps == 0 {
            return Err(Error::InvalidValue("max_sweeps must be >= 1".into()));
        }
        if self.vfe_tolerance.is_nan() || self.vfe_tolerance <= 0.0 {
            return Err(Error::InvalidValue("vfe_tolerance must be > 0".into()));
        }
        Ok(())
    }
}

/// Free energy before the first sweep and after each sweep.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct InferenceTrace {
    pub initial: f64,
    pub per_sweep: Vec<f64>,
}

impl InferenceTrace {
    pub fn sweeps(&self) -> usize {
        self.per_sweep.len()
    }

    pub fn final_vfe(&self) -> f64 {
        self.per_sweep.last().copied().unwrap_or(self.initial)
    }
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

fn add_into(acc: &mut Tensor, term: &Tensor) -> Result<()> {
    *acc = acc.add(term)?;
    Ok(())
}

/// `Θ̊_τ`, or a flat log prior when the model holds none for `τ`.
fn action_log_prior(model: &ModelParams, tau: usize) -> Result<Tensor> {
    match model.action_prior(tau) {
        Ok(p) => Ok(p.log_mean().clone()),
        Err(_) => {
            let n = model.spec().n_actions;
            Tensor::vector(ACTION, vec![-(n as f64).ln(); n])
        }
    }
}

/// `Q*(O_I) = σ(Å ⊙ D̂_I)`
pub fn update_future_obs(model: &ModelParams, state: &CategoricalParams) -> Result<CategoricalParams> {
    softmax(&inner_product(model.a().log_mean(), &[state.tensor()])?)
}

/// `Q*(S_I) = σ(Å ⊙ Ê_I + B̊_I ⊙ D̂_parent + Σ_J B̊_J ⊙ D̂_J)`, where `J`
/// ranges over the children given as `(action, D̂_J)`.
pub fn update_future_state(
    model: &ModelParams,
    action: usize,
    obs: &CategoricalParams,
    parent: &CategoricalParams,
    children: &[(usize, &CategoricalParams)],
) -> Result<CategoricalParams> {
    let mut logits = inner_product(model.a().log_mean(), &[obs.tensor()])?;
    let from_parent = inner_product(model.transition_log(action), &[parent.tensor()])?;
    add_into(&mut logits, &from_parent.renamed(NEXT_STATE, STATE)?)?;
    for &(u, child) in children {
        let next = child.relabeled(NEXT_STATE);
        add_into(&mut logits, &inner_product(model.transition_log(u), &[&next])?)?;
    }
    softmax(&logits)
}

/// `Q*(U_τ) = σ(Θ̊_τ + B̊ ⊙ [D̂_τ, D̂_τ+1])`
pub fn update_past_action(
    model: &ModelParams,
    past: &PastBeliefs,
    tau: usize,
) -> Result<CategoricalParams> {
    if tau >= past.t() {
        return Err(Error::OutOfRange(format!("past action {tau} with t = {}", past.t())));
    }
    let next = past.state(tau + 1).relabeled(NEXT_STATE);
    let mut logits = action_log_prior(model, tau)?;
    add_into(
        &mut logits,
        &inner_product(model.b().log_mean(), &[past.state(tau).tensor(), &next])?,
    )?;
    softmax(&logits)
}

/// `Q*(S_τ)`: the initial prior (at `τ = 0`) or the transition from `τ − 1`,
/// the likelihood of `o_τ`, and the messages from `τ + 1` or, at `τ = t`,
/// from the children of the root given as `(action, D̂_J)`.
pub fn update_past_state(
    model: &ModelParams,
    past: &PastBeliefs,
    tau: usize,
    root_children: &[(usize, &CategoricalParams)],
) -> Result<CategoricalParams> {
    let t = past.t();
    if tau > t {
        return Err(Error::OutOfRange(format!("past state {tau} with t = {t}")));
    }
    let n_obs = model.spec().n_obs;
    let mut logits = if tau == 0 {
        model.d().log_mean().clone()
    } else {
        inner_product(
            model.b().log_mean(),
            &[past.state(tau - 1).tensor(), past.action(tau - 1).tensor()],
        )?
        .renamed(NEXT_STATE, STATE)?
    };
    let obs = past.observation_vector(tau, n_obs);
    add_into(&mut logits, &inner_product(model.a().log_mean(), &[&obs])?)?;
    if tau == t {
        for &(u, child) in root_children {
            let next = child.relabeled(NEXT_STATE);
            add_into(&mut logits, &inner_product(model.transition_log(u), &[&next])?)?;
        }
    } else {
        let next = past.state(tau + 1).relabeled(NEXT_STATE);
        add_into(
            &mut logits,
            &inner_product(model.b().log_mean(), &[&next, past.action(tau).tensor()])?,
        )?;
    }
    softmax(&logits)
}

/// The free-energy terms owned by one future node: its negative entropies,
/// the expected log-likelihood of its latent observation and the expected
/// log-transition from its parent.
pub fn node_free_energy(model: &ModelParams, tree: &Tree, id: NodeId) -> Result<f64> {
    let node = tree.node(id);
    let (Some(parent), Some(action)) = (node.parent, node.index.last()) else {
        return Ok(0.0);
    };
    let d = node.state_belief.probs();
    let e = node.obs_belief.probs();
    let lik = inner_product(model.a().log_mean(), &[node.obs_belief.tensor()])?;
    let trans = inner_product(
        model.transition_log(action),
        &[tree.node(parent).state_belief.tensor()],
    )?;
    Ok(-entropy(d) - entropy(e) - dot(lik.data(), d) - dot(trans.data(), d))
}

/// Free energy of the past chain, including the Dirichlet complexity terms
/// of every learned parameter.
pub fn past_free_energy(model: &ModelParams, past: &PastBeliefs) -> Result<f64> {
    let n_obs = model.spec().n_obs;
    let mut f = 0.0;
    for tau in 0..=past.t() {
        let d = past.state(tau).probs();
        f -= entropy(d);
        let obs = past.observation_vector(tau, n_obs);
        f -= dot(inner_product(model.a().log_mean(), &[&obs])?.data(), d);
        if tau == 0 {
            f -= dot(model.d().log_mean().data(), d);
        } else {
            let next = past.state(tau).relabeled(NEXT_STATE);
            let trans = inner_product(
                model.b().log_mean(),
                &[&next, past.action(tau - 1).tensor()],
            )?;
            f -= dot(trans.data(), past.state(tau - 1).probs());
        }
    }
    for tau in 0..past.t() {
        let theta = past.action(tau).probs();
        f -= entropy(theta);
        f -= dot(action_log_prior(model, tau)?.data(), theta);
    }
    for param in [model.a(), model.b(), model.d()]
        .into_iter()
        .chain(model.action_priors())
    {
        if let (Some(prior), Some(post)) = (param.prior(), param.posterior()) {
            f += post.kl_divergence(prior)?;
        }
    }
    Ok(f)
}

/// `F = E_Q[ln Q − ln P]` over the past, the present and the tree, with the
/// future observations treated as latent.
pub fn variational_free_energy(model: &ModelParams, past: &PastBeliefs, tree: &Tree) -> Result<f64> {
    let mut f = past_free_energy(model, past)?;
    for id in tree.breadth_first() {
        f += node_free_energy(model, tree, id)?;
    }
    Ok(f)
}

fn children_beliefs(tree: &Tree, id: NodeId) -> Vec<(usize, CategoricalParams)> {
    tree.node(id)
        .children()
        .map(|(a, c)| (a, tree.node(c).state_belief.clone()))
        .collect()
}

fn update_node_state(model: &ModelParams, tree: &mut Tree, id: NodeId) -> Result<()> {
    let node = tree.node(id);
    let (Some(parent), Some(action)) = (node.parent, node.index.last()) else {
        return Ok(());
    };
    let kids = children_beliefs(tree, id);
    let kids: Vec<(usize, &CategoricalParams)> = kids.iter().map(|(a, b)| (*a, b)).collect();
    let belief = update_future_state(
        model,
        action,
        &node.obs_belief,
        &tree.node(parent).state_belief,
        &kids,
    )?;
    tree.node_mut(id).state_belief = belief;
    Ok(())
}

fn update_node_obs(model: &ModelParams, tree: &mut Tree, id: NodeId) -> Result<()> {
    let belief = update_future_obs(model, &tree.node(id).state_belief)?;
    tree.node_mut(id).obs_belief = belief;
    Ok(())
}

fn predict_node(model: &ModelParams, tree: &mut Tree, id: NodeId) -> Result<()> {
    let node = tree.node(id);
    let (Some(parent), Some(action)) = (node.parent, node.index.last()) else {
        return Ok(());
    };
    let state = model.predict_state(&tree.node(parent).state_belief, action)?;
    let obs = model.predict_obs(&state)?;
    let node = tree.node_mut(id);
    node.state_belief = state;
    node.obs_belief = obs;
    Ok(())
}

/// One global sweep. Returns nothing; callers evaluate the free energy.
fn global_sweep(
    model: &ModelParams,
    past: &mut PastBeliefs,
    tree: &mut Tree,
    future: FutureBeliefs,
) -> Result<()> {
    let t = past.t();
    for tau in 0..=t {
        let kids = match (tau == t, future) {
            (true, FutureBeliefs::Variational) => children_beliefs(tree, NodeId::ROOT),
            _ => Vec::new(),
        };
        let kids: Vec<(usize, &CategoricalParams)> = kids.iter().map(|(a, b)| (*a, b)).collect();
        let belief = update_past_state(model, past, tau, &kids)?;
        past.set_state(tau, belief);
    }
    tree.set_root_belief(past.present().clone());
    for tau in 0..t {
        let belief = update_past_action(model, past, tau)?;
        past.set_action(tau, belief);
    }
    let order = tree.breadth_first();
    match future {
        FutureBeliefs::Variational => {
            for &id in &order {
                update_node_state(model, tree, id)?;
            }
            for &id in &order {
                update_node_obs(model, tree, id)?;
            }
        }
        FutureBeliefs::Predictive => {
            for &id in &order {
                predict_node(model, tree, id)?;
            }
        }
    }
    Ok(())
}

fn local_free_energy(model: &ModelParams, tree: &Tree, nodes: &[NodeId]) -> Result<f64> {
    nodes
        .iter()
        .map(|&id| node_free_energy(model, tree, id))
        .sum()
}

/// Coordinate ascent until the free energy changes by less than the
/// tolerance or `max_sweeps` is reached.
///
/// In local mode only `new_nodes` are updated and the reported free energy
/// is their share of the total; the change per sweep is the same as for the
/// total. Predictive future beliefs are closed-form, so local mode with
/// [`FutureBeliefs::Predictive`] performs no sweeps.
pub fn run_inference(
    model: &ModelParams,
    past: &mut PastBeliefs,
    tree: &mut Tree,
    settings: &InferenceSettings,
    new_nodes: &[NodeId],
) -> Result<InferenceTrace> {
    settings.validate()?;
    let energy = |past: &PastBeliefs, tree: &Tree| -> Result<f64> {
        match (settings.mode, settings.future) {
            (InferenceMode::Local, _) => local_free_energy(model, tree, new_nodes),
            (InferenceMode::Global, FutureBeliefs::Variational) => {
                variational_free_energy(model, past, tree)
            }
            (InferenceMode::Global, FutureBeliefs::Predictive) => past_free_energy(model, past),
        }
    };
    let mut trace = InferenceTrace {
        initial: energy(past, tree)?,
        per_sweep: Vec::new(),
    };
    if settings.mode == InferenceMode::Local && settings.future == FutureBeliefs::Predictive {
        return Ok(trace);
    }
    let mut previous = trace.initial;
    for _ in 0..settings.max_sweeps {
        match settings.mode {
            InferenceMode::Local => {
                for &id in new_nodes {
                    update_node_state(model, tree, id)?;
                }
                for &id in new_nodes {
                    update_node_obs(model, tree, id)?;
                }
            }
            InferenceMode::Global => global_sweep(model, past, tree, settings.future)?,
        }
        let f = energy(past, tree)?;
        trace.per_sweep.push(f);
        if (f - previous).abs() < settings.vfe_tolerance {
            break;
        }
        previous = f;
    }
    log::trace!("inference: {} sweeps, F = {}", trace.sweeps(), trace.final_vfe());
    Ok(trace)
}

/// Global inference over the past chain alone.
pub fn infer_past(
    model: &ModelParams,
    past: &mut PastBeliefs,
    settings: &InferenceSettings,
) -> Result<InferenceTrace> {
    let mut tree = Tree::new(past.present().clone(), model)?;
    let settings = InferenceSettings {
        mode: InferenceMode::Global,
        ..*settings
    };
    run_inference(model, past, &mut tree, &settings, &[])
}

/// Conjugate learning: each learned Dirichlet posterior becomes its prior
/// plus the expected counts under the current beliefs,
///
/// `d̂ = d + D̂_0`, `â = a + Σ_τ o_τ ⊗ D̂_τ`,
/// `b̂ = b + Σ_τ D̂_τ ⊗ D̂_τ−1 ⊗ Θ̂_τ−1`, `θ̂_τ = θ_τ + Θ̂_τ`.
///
/// A model with no learned parameter is returned unchanged.
pub fn update_dirichlet_posteriors(model: &ModelParams, past: &PastBeliefs) -> Result<ModelParams> {
    let mut out = model.clone();
    let learned_theta = model.action_priors().iter().any(|p| p.is_learned());
    if !model.is_learning() && !learned_theta {
        log::info!("learning is disabled for a model with known matrices");
        return Ok(out);
    }
    let n_obs = model.spec().n_obs;
    let counted = |prior: Option<&DirichletParams>, counts: Option<Tensor>| -> Result<Option<DirichletParams>> {
        match (prior, counts) {
            (Some(prior), Some(counts)) => Ok(Some(prior.with_counts(&counts)?)),
            _ => Ok(None),
        }
    };

    let d = counted(model.d().prior(), Some(past.state(0).tensor().clone()))?;

    let a_counts = if model.a().is_learned() {
        let mut acc = Tensor::zeros(model.a().mean().axes().to_vec())?;
        for tau in 0..=past.t() {
            let obs = past.observation_vector(tau, n_obs);
            add_into(&mut acc, &outer_product(&[&obs, past.state(tau).tensor()])?)?;
        }
        Some(acc)
    } else {
        None
    };
    let a = counted(model.a().prior(), a_counts)?;

    let b_counts = if model.b().is_learned() {
        let mut acc = Tensor::zeros(model.b().mean().axes().to_vec())?;
        for tau in 1..=past.t() {
            let next = past.state(tau).relabeled(NEXT_STATE);
            add_into(
                &mut acc,
                &outer_product(&[&next, past.state(tau - 1).tensor(), past.action(tau - 1).tensor()])?,
            )?;
        }
        Some(acc)
    } else {
        None
    };
    let b = counted(model.b().prior(), b_counts)?;

    let theta = model
        .action_priors()
        .iter()
        .enumerate()
        .map(|(tau, p)| {
            let counts = (tau < past.t()).then(|| past.action(tau).tensor().clone());
            counted(p.prior(), counts)
        })
        .collect::<Result<Vec<_>>>()?;

    out.set_posteriors(a, b, d, theta)?;
    Ok(out)
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)] // oracles index like the formulas
mod tests {
    use super::*;
    use crate::distributions::{CategoricalParams, LOG_ZERO};
    use crate::model::{ModelSpec, PriorConcentrations, OBS};
    use crate::tree::Tree;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    fn identity_model() -> ModelParams {
        ModelParams::known_from_vecs(
            &[vec![1.0, 0.0], vec![0.0, 1.0]],
            &[
                vec![vec![1.0, 0.0], vec![0.0, 1.0]],
                vec![vec![0.0, 1.0], vec![1.0, 0.0]],
            ],
            &[0.5, 0.5],
        )
        .unwrap()
    }

    fn uniform_model() -> ModelParams {
        ModelParams::known_from_vecs(
            &[vec![0.5, 0.5], vec![0.5, 0.5]],
            &[
                vec![vec![0.5, 0.5], vec![0.5, 0.5]],
                vec![vec![0.5, 0.5], vec![0.5, 0.5]],
            ],
            &[0.5, 0.5],
        )
        .unwrap()
    }

    fn random_model(rng: &mut ChaCha8Rng) -> ModelParams {
        ModelParams::random_known(ModelSpec::new(2, 2, 2).unwrap(), rng).unwrap()
    }

    fn uniform(n: usize) -> CategoricalParams {
        CategoricalParams::uniform(STATE, n).unwrap()
    }

    #[test]
    fn future_obs_examples() {
        let m = identity_model();
        let e = update_future_obs(&m, &CategoricalParams::one_hot(STATE, 2, 0).unwrap()).unwrap();
        assert!(close(e.probs(), &[1.0, 0.0], 1e-12));
        let u = uniform_model();
        let e = update_future_obs(&u, &CategoricalParams::from_vec(STATE, vec![0.9, 0.1]).unwrap()).unwrap();
        assert!(close(e.probs(), &[0.5, 0.5], 1e-15));
    }

    #[test]
    fn future_obs_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = random_model(&mut rng);
        let d = CategoricalParams::from_weights(STATE, vec![rng.random(), rng.random()]).unwrap();
        let e = update_future_obs(&m, &d).unwrap();
        let a = m.a().mean();
        let logits: Vec<f64> = (0..2)
            .map(|o| (0..2).map(|s| a.get(&[o, s]).unwrap().ln() * d.probs()[s]).sum())
            .collect();
        let z: f64 = logits.iter().map(|l| l.exp()).sum();
        for o in 0..2 {
            assert!((e.probs()[o] - logits[o].exp() / z).abs() < 1e-10);
        }
        let again = update_future_obs(&m, &d).unwrap();
        assert_eq!(again, e);
    }

    #[test]
    fn future_state_examples() {
        let u = uniform_model();
        let obs = CategoricalParams::uniform(OBS, 2).unwrap();
        let s = update_future_state(&u, 0, &obs, &uniform(2), &[]).unwrap();
        assert!(close(s.probs(), &[0.5, 0.5], 1e-15));

        let m = ModelParams::known_from_vecs(
            &[vec![0.5, 0.5], vec![0.5, 0.5]],
            &[
                vec![vec![0.0, 0.0], vec![1.0, 1.0]],
                vec![vec![1.0, 1.0], vec![0.0, 0.0]],
            ],
            &[0.5, 0.5],
        )
        .unwrap();
        let parent = CategoricalParams::one_hot(STATE, 2, 0).unwrap();
        let s = update_future_state(&m, 0, &obs, &parent, &[]).unwrap();
        assert!(close(s.probs(), &[0.0, 1.0], 1e-12));
    }

    #[test]
    fn past_action_examples() {
        let u = uniform_model();
        let mut past = PastBeliefs::new(&u, 0).unwrap();
        past.push(&u, 0, 1).unwrap();
        past.set_action(0, CategoricalParams::uniform(ACTION, 2).unwrap());
        let a = update_past_action(&u, &past, 0).unwrap();
        assert!(close(a.probs(), &[0.5, 0.5], 1e-15));
        assert!(matches!(update_past_action(&u, &past, 1), Err(Error::OutOfRange(_))));

        let m = identity_model();
        let mut past = PastBeliefs::new(&m, 0).unwrap();
        past.push(&m, 1, 1).unwrap();
        past.set_state(0, CategoricalParams::one_hot(STATE, 2, 0).unwrap());
        past.set_state(1, CategoricalParams::one_hot(STATE, 2, 1).unwrap());
        let a = update_past_action(&m, &past, 0).unwrap();
        assert!(a.probs()[1] > 1.0 - 1e-12);
    }

    #[test]
    fn past_state_examples() {
        let m = ModelParams::known_from_vecs(
            &[vec![1.0, 0.0], vec![0.0, 1.0]],
            &[vec![vec![1.0, 0.0], vec![0.0, 1.0]]],
            &[0.5, 0.5],
        )
        .unwrap();
        let past = PastBeliefs::new(&m, 0).unwrap();
        let s = update_past_state(&m, &past, 0, &[]).unwrap();
        assert!(close(s.probs(), &[1.0, 0.0], 1e-12));

        let u = uniform_model();
        let mut past = PastBeliefs::new(&u, 1).unwrap();
        past.push(&u, 1, 0).unwrap();
        for tau in 0..=1 {
            let s = update_past_state(&u, &past, tau, &[]).unwrap();
            assert!(close(s.probs(), &[0.5, 0.5], 1e-15));
        }
        assert!(matches!(update_past_state(&u, &past, 2, &[]), Err(Error::OutOfRange(_))));
    }

    #[test]
    fn degenerate_model_has_zero_free_energy() {
        let m = ModelParams::known_from_vecs(&[vec![1.0]], &[vec![vec![1.0]]], &[1.0]).unwrap();
        let mut past = PastBeliefs::new(&m, 0).unwrap();
        past.push(&m, 0, 0).unwrap();
        let mut tree = Tree::new(past.present().clone(), &m).unwrap();
        tree.attach_children(NodeId::ROOT, &m, FutureBeliefs::Variational).unwrap();
        assert_eq!(variational_free_energy(&m, &past, &tree).unwrap(), 0.0);
    }

    #[test]
    fn unlikely_observation_increases_free_energy() {
        let m = ModelParams::known_from_vecs(
            &[vec![0.9, 0.2], vec![0.1, 0.8]],
            &[vec![vec![0.9, 0.1], vec![0.1, 0.9]]],
            &[0.8, 0.2],
        )
        .unwrap();
        let settings = InferenceSettings::default();
        let mut likely = PastBeliefs::new(&m, 0).unwrap();
        let mut unlikely = PastBeliefs::new(&m, 1).unwrap();
        let f_likely = infer_past(&m, &mut likely, &settings).unwrap().final_vfe();
        let f_unlikely = infer_past(&m, &mut unlikely, &settings).unwrap().final_vfe();
        assert!(f_unlikely > f_likely);
    }

    /// `E_Q[ln Q − ln P]` summed over every joint configuration of a one-step
    /// chain `(S_0, U_0, S_1)` with observed `o_0`, `o_1`.
    #[test]
    fn free_energy_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = random_model(&mut rng);
        let mut m = m;
        let theta = m.dirichlet_action_prior(vec![1.0, 1.0]).unwrap();
        m.push_action_prior(theta).unwrap();
        let mut past = PastBeliefs::new(&m, 1).unwrap();
        past.push(&m, 0, 0).unwrap();
        let q0 = CategoricalParams::from_vec(STATE, vec![0.3, 0.7]).unwrap();
        let q1 = CategoricalParams::from_vec(STATE, vec![0.6, 0.4]).unwrap();
        let qu = CategoricalParams::from_vec(ACTION, vec![0.25, 0.75]).unwrap();
        past.set_state(0, q0.clone());
        past.set_state(1, q1.clone());
        past.set_action(0, qu.clone());
        let tree = Tree::new(past.present().clone(), &m).unwrap();

        let a = m.a().mean();
        let b = m.b().mean();
        let d = m.d().mean();
        let theta_log = m.action_prior(0).unwrap().log_mean();
        let mut expected = 0.0;
        for s0 in 0..2 {
            for u in 0..2 {
                for s1 in 0..2 {
                    let q = q0.probs()[s0] * qu.probs()[u] * q1.probs()[s1];
                    let ln_q = q0.probs()[s0].ln() + qu.probs()[u].ln() + q1.probs()[s1].ln();
                    let ln_p = d.get(&[s0]).unwrap().ln()
                        + a.get(&[1, s0]).unwrap().ln()
                        + theta_log.get(&[u]).unwrap()
                        + b.get(&[s1, s0, u]).unwrap().ln()
                        + a.get(&[0, s1]).unwrap().ln();
                    expected += q * (ln_q - ln_p);
                }
            }
        }
        let f = variational_free_energy(&m, &past, &tree).unwrap();
        // Θ carries a Dirichlet factor whose posterior equals its prior.
        assert!((f - expected).abs() < 1e-10, "{f} vs {expected}");
    }

    #[test]
    fn converged_beliefs_take_one_sweep() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = random_model(&mut rng);
        let mut past = PastBeliefs::new(&m, 0).unwrap();
        past.push(&m, 1, 1).unwrap();
        let settings = InferenceSettings {
            vfe_tolerance: 1e-13,
            max_sweeps: 500,
            ..Default::default()
        };
        infer_past(&m, &mut past, &settings).unwrap();
        let again = infer_past(&m, &mut past, &InferenceSettings::default()).unwrap();
        assert_eq!(again.sweeps(), 1);
        assert!((again.per_sweep[0] - again.initial).abs() < 1e-9);
    }

    #[test]
    fn free_energy_is_monotone_over_random_models() {
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = random_model(&mut rng);
            let mut past = PastBeliefs::new(&m, rng.random_range(0..2)).unwrap();
            for _ in 0..3 {
                past.push(&m, rng.random_range(0..2), rng.random_range(0..2)).unwrap();
            }
            let mut tree = Tree::new(past.present().clone(), &m).unwrap();
            let kids = tree.attach_children(NodeId::ROOT, &m, FutureBeliefs::Variational).unwrap();
            let grandkids = tree.attach_children(kids[0], &m, FutureBeliefs::Variational).unwrap();
            let settings = InferenceSettings {
                mode: InferenceMode::Global,
                max_sweeps: 50,
                vfe_tolerance: 1e-12,
                ..Default::default()
            };
            let trace = run_inference(&m, &mut past, &mut tree, &settings, &[]).unwrap();
            let mut prev = trace.initial;
            for &f in &trace.per_sweep {
                assert!(f <= prev + 1e-9, "seed {seed}: {f} > {prev}");
                prev = f;
            }
            let local = InferenceSettings { mode: InferenceMode::Local, ..settings };
            let trace = run_inference(&m, &mut past, &mut tree, &local, &grandkids).unwrap();
            let mut prev = trace.initial;
            for &f in &trace.per_sweep {
                assert!(f <= prev + 1e-9, "seed {seed} local: {f} > {prev}");
                prev = f;
            }
        }
    }

    #[test]
    fn local_and_global_agree_on_single_node() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let m = random_model(&mut rng);
        let mut past = PastBeliefs::new(&m, 1).unwrap();
        let tight = InferenceSettings {
            vfe_tolerance: 1e-14,
            max_sweeps: 1000,
            ..Default::default()
        };
        infer_past(&m, &mut past, &tight).unwrap();

        let mut tree = Tree::new(past.present().clone(), &m).unwrap();
        let node = tree.attach_child(NodeId::ROOT, 0, &m, FutureBeliefs::Variational).unwrap();
        let mut local_tree = tree.clone();
        let mut local_past = past.clone();
        run_inference(&m, &mut local_past, &mut local_tree, &tight, &[node]).unwrap();

        // Global mode also lets the node pull on the present; freezing the
        // present is equivalent to the past having already absorbed it, so
        // compare against global sweeps over the tree only.
        let mut global_tree = tree.clone();
        for _ in 0..1000 {
            update_node_state(&m, &mut global_tree, node).unwrap();
            update_node_obs(&m, &mut global_tree, node).unwrap();
        }
        assert!(close(
            local_tree.node(node).state_belief.probs(),
            global_tree.node(node).state_belief.probs(),
            1e-10
        ));
    }

    #[test]
    fn updates_are_fixed_points_after_convergence() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let m = random_model(&mut rng);
        let mut past = PastBeliefs::new(&m, 0).unwrap();
        past.push(&m, 1, 1).unwrap();
        past.push(&m, 0, 0).unwrap();
        let mut tree = Tree::new(past.present().clone(), &m).unwrap();
        tree.attach_children(NodeId::ROOT, &m, FutureBeliefs::Variational).unwrap();
        // the free energy is flat near its minimum, so sweep a fixed number
        // of times rather than stopping on a free-energy tolerance
        for _ in 0..500 {
            global_sweep(&m, &mut past, &mut tree, FutureBeliefs::Variational).unwrap();
        }
        let kids = children_beliefs(&tree, NodeId::ROOT);
        let kids: Vec<(usize, &CategoricalParams)> = kids.iter().map(|(a, b)| (*a, b)).collect();
        for tau in 0..=past.t() {
            let s = update_past_state(&m, &past, tau, if tau == past.t() { &kids } else { &[] }).unwrap();
            assert!(close(s.probs(), past.state(tau).probs(), 1e-10), "state {tau}");
        }
        for tau in 0..past.t() {
            let a = update_past_action(&m, &past, tau).unwrap();
            assert!(close(a.probs(), past.action(tau).probs(), 1e-10), "action {tau}");
        }
        for id in tree.breadth_first() {
            let e = update_future_obs(&m, &tree.node(id).state_belief).unwrap();
            assert!(close(e.probs(), tree.node(id).obs_belief.probs(), 1e-10));
        }
    }

    #[test]
    fn deterministic_likelihood_pins_past_states() {
        let m = identity_model();
        let mut past = PastBeliefs::new(&m, 0).unwrap();
        past.push(&m, 1, 1).unwrap();
        past.push(&m, 0, 1).unwrap();
        infer_past(&m, &mut past, &InferenceSettings::default()).unwrap();
        for (tau, &o) in past.observations().iter().enumerate() {
            assert!(past.state(tau).probs()[o] >= 1.0 - 1e-6);
        }
    }

    #[test]
    fn clamped_log_zero_gives_no_mass() {
        let m = identity_model();
        assert_eq!(m.a().log_mean().get(&[0, 1]), Some(LOG_ZERO));
        let past = PastBeliefs::new(&m, 1).unwrap();
        let s = update_past_state(&m, &past, 0, &[]).unwrap();
        assert_eq!(s.probs()[0], 0.0);
    }

    fn learning_model() -> ModelParams {
        ModelParams::new(ModelSpec::new(2, 2, 2).unwrap(), PriorConcentrations::default()).unwrap()
    }

    #[test]
    fn dirichlet_update_of_d() {
        let m = learning_model();
        let mut past = PastBeliefs::new(&m, 0).unwrap();
        past.set_state(0, CategoricalParams::one_hot(STATE, 2, 0).unwrap());
        let updated = update_dirichlet_posteriors(&m, &past).unwrap();
        let d = updated.d().posterior().unwrap().concentrations();
        assert_eq!(d.data(), &[2.0, 1.0]);
        assert_eq!(updated.d().prior().unwrap().concentrations().data(), &[1.0, 1.0]);
    }

    #[test]
    fn dirichlet_update_of_a() {
        let m = learning_model();
        let past = PastBeliefs::new(&m, 1).unwrap();
        assert_eq!(past.state(0).probs(), &[0.5, 0.5]);
        let updated = update_dirichlet_posteriors(&m, &past).unwrap();
        let a = updated.a().posterior().unwrap().concentrations();
        // rows are observations, columns states
        assert_eq!(a.data(), &[1.0, 1.0, 1.5, 1.5]);
    }

    #[test]
    fn dirichlet_counts_grow_linearly_over_trials() {
        let mut m = learning_model();
        let mut expected_a = [1.0; 4];
        for trial in 1..=5 {
            let mut past = PastBeliefs::new(&m, 1).unwrap();
            past.set_state(0, CategoricalParams::one_hot(STATE, 2, 1).unwrap());
            past.push(&m, 0, 0).unwrap();
            past.set_state(1, CategoricalParams::one_hot(STATE, 2, 0).unwrap());
            let updated = update_dirichlet_posteriors(&m, &past).unwrap();
            // loop oracle: one count per (o_τ, s_τ) pair
            expected_a[2 + 1] += 1.0;
            expected_a[0] += 1.0;
            assert_eq!(updated.a().posterior().unwrap().concentrations().data(), &expected_a[..]);
            let b = updated.b().posterior().unwrap().concentrations();
            assert_eq!(b.get(&[0, 1, 0]), Some(1.0 + trial as f64));
            m = updated.next_trial().unwrap();
        }
    }

    #[test]
    fn known_model_is_not_learned() {
        let m = identity_model();
        let past = PastBeliefs::new(&m, 0).unwrap();
        let updated = update_dirichlet_posteriors(&m, &past).unwrap();
        assert_eq!(updated.a(), m.a());
    }

    #[test]
    fn theta_posterior_counts_actions() {
        let mut m = learning_model();
        let prior = m.dirichlet_action_prior(vec![1.0, 2.0]).unwrap();
        m.push_action_prior(prior).unwrap();
        let mut past = PastBeliefs::new(&m, 0).unwrap();
        past.push(&m, 1, 0).unwrap();
        let updated = update_dirichlet_posteriors(&m, &past).unwrap();
        let theta = updated.action_prior(0).unwrap().posterior().unwrap();
        assert_eq!(theta.concentrations().data(), &[1.0, 3.0]);
    }
}
