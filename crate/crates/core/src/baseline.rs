//! Exhaustive planning over every policy of a fixed horizon, the classic
//! expected free energy, its decomposition into localized and aggregated
//! costs, and the recursive cost of sophisticated inference.
//!
//! Everything here assumes known matrices and rolls beliefs forward exactly,
//! without message passing, so it doubles as an oracle for the tree search.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::distributions::{entropy, kl_categorical, softmax, CategoricalParams};
use crate::error::{Error, Result};
use crate::model::{ModelParams, ModelSpec, PastBeliefs, TargetDist, STATE};
use crate::planner::{plan, PlannerConfig};
use crate::tensor::Tensor;

/// A sequence of actions `(U_t, .., U_T−1)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Policy(pub Vec<usize>);

impl Policy {
    pub fn actions(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `π_N`, the first `n` actions.
    pub fn prefix(&self, n: usize) -> Policy {
        Policy(self.0[..n].to_vec())
    }
}

/// All `|U|^h` policies of length `h`, in lexicographic order.
#[derive(Clone, Debug)]
pub struct PolicySet {
    n_actions: usize,
    horizon: usize,
}

impl PolicySet {
    pub fn new(n_actions: usize, horizon: usize) -> Result<Self> {
        if n_actions == 0 {
            return Err(Error::InvalidValue("no actions".into()));
        }
        if (n_actions as f64).powi(horizon as i32) > usize::MAX as f64 {
            return Err(Error::OutOfRange(format!("{n_actions}^{horizon} policies")));
        }
        Ok(Self { n_actions, horizon })
    }

    pub fn len(&self) -> usize {
        self.n_actions.pow(self.horizon as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// The `i`-th policy: `i` written in base `|U|`, most significant first.
    pub fn get(&self, mut i: usize) -> Policy {
        let mut actions = vec![0; self.horizon];
        for slot in actions.iter_mut().rev() {
            *slot = i % self.n_actions;
            i /= self.n_actions;
        }
        Policy(actions)
    }

    pub fn iter(&self) -> impl Iterator<Item = Policy> + '_ {
        (0..self.len()).map(|i| self.get(i))
    }
}

/// `Q(S_τ|π)` and `Q(O_τ|π)` for `τ = t+1, .., T`.
#[derive(Clone, Debug, PartialEq)]
pub struct Rollforward {
    pub states: Vec<CategoricalParams>,
    pub obs: Vec<CategoricalParams>,
}

/// `Q(S_τ+1|π) = B̄_π_τ ⊙ Q(S_τ|π)`, `Q(O_τ|π) = Ā ⊙ Q(S_τ|π)`, from `D̂_t`.
pub fn rollforward_beliefs(
    policy: &Policy,
    model: &ModelParams,
    present: &CategoricalParams,
) -> Result<Rollforward> {
    let mut states = Vec::with_capacity(policy.len());
    let mut obs = Vec::with_capacity(policy.len());
    let mut belief = present.clone();
    for &u in policy.actions() {
        belief = model.predict_state(&belief, u)?;
        obs.push(model.predict_obs(&belief)?);
        states.push(belief.clone());
    }
    Ok(Rollforward { states, obs })
}

/// `H[P(O|S=s)]` for every state.
fn column_entropies(model: &ModelParams) -> Result<Vec<f64>> {
    (0..model.spec().n_states)
        .map(|s| Ok(entropy(model.a().mean().select(STATE, s)?.data())))
        .collect()
}

fn step_cost(
    state: &CategoricalParams,
    obs: &CategoricalParams,
    preferences: &CategoricalParams,
    ambiguity: &[f64],
) -> Result<f64> {
    let risk = kl_categorical(obs, preferences)?;
    let amb: f64 = state.probs().iter().zip(ambiguity).map(|(p, h)| p * h).sum();
    Ok(risk + amb)
}

/// `G(π) = Σ_τ KL[Q(O_τ|π) ‖ P(O_τ)] + E_Q(S_τ|π) H[P(O_τ|S_τ)]`
pub fn efe_policy(
    policy: &Policy,
    model: &ModelParams,
    preferences: &CategoricalParams,
    present: &CategoricalParams,
) -> Result<f64> {
    let ambiguity = column_entropies(model)?;
    let roll = rollforward_beliefs(policy, model, present)?;
    let mut total = 0.0;
    for (s, o) in roll.states.iter().zip(&roll.obs) {
        total += step_cost(s, o, preferences, &ambiguity)?;
    }
    Ok(total)
}

/// `G(π_N, t+N)`: the risk and ambiguity of the last step of `prefix` only.
pub fn localized_cost(
    prefix: &Policy,
    model: &ModelParams,
    preferences: &CategoricalParams,
    present: &CategoricalParams,
) -> Result<f64> {
    if prefix.is_empty() {
        return Err(Error::Empty("localized cost of an empty policy"));
    }
    let ambiguity = column_entropies(model)?;
    let roll = rollforward_beliefs(prefix, model, present)?;
    let last = prefix.len() - 1;
    step_cost(&roll.states[last], &roll.obs[last], preferences, &ambiguity)
}

/// `G^aggre_π_N = G^aggre_π_N−1 + G(π_N, t+N)`, with `G^aggre_π_0 = 0`.
pub fn aggregated_cost(
    policy: &Policy,
    model: &ModelParams,
    preferences: &CategoricalParams,
    present: &CategoricalParams,
) -> Result<f64> {
    if policy.is_empty() {
        return Ok(0.0);
    }
    let shorter = policy.prefix(policy.len() - 1);
    Ok(aggregated_cost(&shorter, model, preferences, present)?
        + localized_cost(policy, model, preferences, present)?)
}

/// `Q(π) = σ(−γ G)`
pub fn policy_posterior(efe: &[f64], gamma: f64) -> Result<Vec<f64>> {
    let logits = Tensor::vector("policy", efe.iter().map(|g| -gamma * g).collect())?;
    Ok(softmax(&logits)?.probs().to_vec())
}

/// The first action with the most posterior mass, summed over the policies
/// that start with it. Ties go to the lowest action.
pub fn bma_select_action(policies: &[Policy], posterior: &[f64]) -> Result<usize> {
    if policies.is_empty() || policies.len() != posterior.len() {
        return Err(Error::Empty("policy posterior"));
    }
    let n = policies
        .iter()
        .filter_map(|p| p.actions().first())
        .max()
        .ok_or(Error::Empty("policies of length zero"))?
        + 1;
    let mut mass = vec![0.0; n];
    for (p, &q) in policies.iter().zip(posterior) {
        if let Some(&u) = p.actions().first() {
            mass[u] += q;
        }
    }
    let mut best = 0;
    for (u, &m) in mass.iter().enumerate() {
        if m > mass[best] {
            best = u;
        }
    }
    Ok(best)
}

/// Actions within this of the minimum count as minimal.
pub const ARGMIN_TOLERANCE: f64 = 1e-12;

/// The aggregated cost of taking `action` in the known state `state`,
/// looking `depth` steps ahead:
///
/// `G(u, s) = KL[Q(S'|u, s) ‖ V(S')] + E_Q(S'|u, s) E_Q(U'|S') G(U', S')`,
///
/// where `Q(U'|s')` is uniform over the actions minimizing `G(·, s')` and the
/// second term vanishes at depth one.
pub fn si_aggregated_cost(
    state: usize,
    action: usize,
    model: &ModelParams,
    target_states: &CategoricalParams,
    depth: usize,
) -> Result<f64> {
    if depth == 0 {
        return Err(Error::InvalidValue("depth must be >= 1".into()));
    }
    let spec = model.spec();
    if state >= spec.n_states || action >= spec.n_actions {
        return Err(Error::OutOfRange(format!("state {state}, action {action}")));
    }
    let here = CategoricalParams::one_hot(STATE, spec.n_states, state)?;
    let next = model.predict_state(&here, action)?;
    let mut cost = kl_categorical(&next, target_states)?;
    if depth == 1 {
        return Ok(cost);
    }
    for (s_next, &p) in next.probs().iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        let costs = (0..spec.n_actions)
            .map(|u| si_aggregated_cost(s_next, u, model, target_states, depth - 1))
            .collect::<Result<Vec<_>>>()?;
        let min = costs.iter().copied().fold(f64::INFINITY, f64::min);
        let argmins: Vec<f64> = costs
            .into_iter()
            .filter(|&g| g - min <= ARGMIN_TOLERANCE || g == min)
            .collect();
        let expected = argmins.iter().sum::<f64>() / argmins.len() as f64;
        cost += p * expected;
    }
    Ok(cost)
}

/// Expected free energy of every policy, in [`PolicySet`] order.
pub fn evaluate_all(
    set: &PolicySet,
    model: &ModelParams,
    preferences: &CategoricalParams,
    present: &CategoricalParams,
) -> Result<Vec<f64>> {
    set.iter()
        .map(|p| efe_policy(&p, model, preferences, present))
        .collect()
}

/// A fixed random 4-action POMDP for timing runs.
pub fn benchmark_model(seed: u64) -> Result<ModelParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ModelParams::random_known(ModelSpec::new(8, 8, 4)?, &mut rng)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlannerKind {
    Baseline,
    Btai,
}

impl PlannerKind {
    pub fn name(self) -> &'static str {
        match self {
            PlannerKind::Baseline => "baseline",
            PlannerKind::Btai => "btai",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TimingRow {
    pub planner: PlannerKind,
    pub horizon: usize,
    /// Policies evaluated by the baseline, or expansions made by the tree
    /// search.
    pub policies_or_expansions: usize,
    /// Mean time of one planning call, or zero when timing is disabled.
    pub wall_time_ms: f64,
    /// The cell hit its timeout and was not completed.
    pub censored: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimingOptions {
    /// A cell whose single run exceeds this is abandoned.
    pub timeout_ms: f64,
    /// Runs are repeated until their total time reaches this.
    pub min_sample_ms: f64,
    pub seed: u64,
    /// When false nothing is timed: every cell runs once and reports zero,
    /// which makes the output reproducible.
    pub measure: bool,
}

impl Default for TimingOptions {
    fn default() -> Self {
        Self {
            timeout_ms: 60_000.0,
            min_sample_ms: 50.0,
            seed: 0,
            measure: true,
        }
    }
}

/// One full baseline decision: every policy scored, then the Bayesian model
/// average. Returns `None` if the deadline passed first.
fn baseline_decision(
    set: &PolicySet,
    model: &ModelParams,
    preferences: &CategoricalParams,
    present: &CategoricalParams,
    deadline: Option<(Instant, f64)>,
) -> Result<Option<usize>> {
    let mut policies = Vec::with_capacity(set.len());
    let mut efe = Vec::with_capacity(set.len());
    for (i, p) in set.iter().enumerate() {
        if let Some((start, limit)) = deadline {
            if i % 256 == 0 && start.elapsed().as_secs_f64() * 1e3 > limit {
                return Ok(None);
            }
        }
        efe.push(efe_policy(&p, model, preferences, present)?);
        policies.push(p);
    }
    let posterior = policy_posterior(&efe, 1.0)?;
    bma_select_action(&policies, &posterior).map(Some)
}

/// Times the exhaustive baseline and the tree search at each horizon. The
/// tree search ignores the horizon and always makes `config.max_expansions`
/// expansions.
pub fn timing_sweep(
    model: &ModelParams,
    target: &TargetDist,
    horizons: &[usize],
    config: &PlannerConfig,
    options: &TimingOptions,
) -> Result<Vec<TimingRow>> {
    let present = CategoricalParams::new(model.d().mean().clone())?;
    let past = PastBeliefs::new(model, 0)?;
    let mut rows = Vec::new();
    for &h in horizons {
        let set = PolicySet::new(model.spec().n_actions, h)?;
        let (time, censored) = time_cell(options, |deadline| {
            baseline_decision(&set, model, &target.obs, &present, deadline).map(|r| r.is_some())
        })?;
        rows.push(TimingRow {
            planner: PlannerKind::Baseline,
            horizon: h,
            policies_or_expansions: set.len(),
            wall_time_ms: time,
            censored,
        });
        log::info!("baseline horizon {h}: {time:.3} ms");
    }
    for &h in horizons {
        let (time, censored) = time_cell(options, |_| {
            let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
            plan(model, &past, target, config, &mut rng).map(|_| true)
        })?;
        rows.push(TimingRow {
            planner: PlannerKind::Btai,
            horizon: h,
            policies_or_expansions: config.max_expansions,
            wall_time_ms: time,
            censored,
        });
        log::info!("btai horizon {h}: {time:.3} ms");
    }
    Ok(rows)
}

/// Runs `f` repeatedly and returns the mean time per run, or the elapsed
/// time and `true` if `f` reported that it ran out of time.
fn time_cell(
    options: &TimingOptions,
    mut f: impl FnMut(Option<(Instant, f64)>) -> Result<bool>,
) -> Result<(f64, bool)> {
    if !options.measure {
        f(None)?;
        return Ok((0.0, false));
    }
    let start = Instant::now();
    let mut runs = 0u32;
    loop {
        let run_start = Instant::now();
        if !f(Some((run_start, options.timeout_ms)))? {
            return Ok((run_start.elapsed().as_secs_f64() * 1e3, true));
        }
        runs += 1;
        let total = start.elapsed().as_secs_f64() * 1e3;
        if total >= options.min_sample_ms {
            return Ok((total / f64::from(runs), false));
        }
    }
}
