//! The generative model: Dirichlet-distributed likelihood `A`, transitions
//! `B`, initial-state prior `D` and per-step action priors `Θ_τ`, together
//! with the agent's beliefs about the past and its target distribution over
//! future observations and states.
//!
//! Tensors are stored in the axis order of the random tensors themselves:
//! `A` is `(obs, state)`, `B` is `(next_state, state, action)`, `D` is
//! `(state)` and every `Θ_τ` is `(action)`. Each column is a categorical
//! distribution over the first axis.

use std::fmt::Write as _;

use rand::Rng;

use crate::distributions::{clamped_ln, CategoricalParams, DirichletParams};
use crate::error::{Error, Result};
use crate::tensor::{inner_product, Axis, Tensor};

pub const OBS: &str = "obs";
pub const STATE: &str = "state";
pub const NEXT_STATE: &str = "next_state";
pub const ACTION: &str = "action";

/// Columns of a known stochastic matrix must sum to one within this.
pub const STOCHASTIC_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelSpec {
    pub n_states: usize,
    pub n_obs: usize,
    pub n_actions: usize,
}

impl ModelSpec {
    pub fn new(n_states: usize, n_obs: usize, n_actions: usize) -> Result<Self> {
        if n_states == 0 || n_obs == 0 || n_actions == 0 {
            return Err(Error::InvalidValue(format!(
                "model sizes must be >= 1, got |S|={n_states} |O|={n_obs} |U|={n_actions}"
            )));
        }
        Ok(Self {
            n_states,
            n_obs,
            n_actions,
        })
    }

    pub fn a_axes(&self) -> Vec<Axis> {
        vec![
            Axis::new(OBS, self.n_obs).unwrap(),
            Axis::new(STATE, self.n_states).unwrap(),
        ]
    }

    pub fn b_axes(&self) -> Vec<Axis> {
        vec![
            Axis::new(NEXT_STATE, self.n_states).unwrap(),
            Axis::new(STATE, self.n_states).unwrap(),
            Axis::new(ACTION, self.n_actions).unwrap(),
        ]
    }

    pub fn d_axes(&self) -> Vec<Axis> {
        vec![Axis::new(STATE, self.n_states).unwrap()]
    }
}

/// One random tensor of the model, either given exactly or learned through
/// a Dirichlet prior/posterior pair.
///
/// Both variants expose the two views the update equations need: the
/// expectation (`Ā`) and the expected logarithm (`Å`).
#[derive(Clone, Debug, PartialEq)]
pub enum Parameter {
    Known {
        mean: Tensor,
        log: Tensor,
    },
    Learned {
        prior: DirichletParams,
        posterior: DirichletParams,
        mean: Tensor,
        log: Tensor,
    },
}

impl Parameter {
    /// An exactly known tensor, stochastic along `axis`. The log view is the
    /// elementwise `ln` with `ln 0` clamped.
    pub fn known(mean: Tensor, axis: &str) -> Result<Self> {
        check_stochastic(&mean, axis)?;
        let log = mean.map(clamped_ln);
        Ok(Parameter::Known { mean, log })
    }

    pub fn learned(prior: DirichletParams) -> Self {
        let posterior = prior.clone();
        Self::from_pair(prior, posterior)
    }

    fn from_pair(prior: DirichletParams, posterior: DirichletParams) -> Self {
        let mean = posterior.expected_value();
        let log = posterior.expected_log();
        Parameter::Learned {
            prior,
            posterior,
            mean,
            log,
        }
    }

    /// Replaces the posterior of a learned parameter.
    pub fn with_posterior(&self, posterior: DirichletParams) -> Result<Self> {
        match self {
            Parameter::Known { .. } => Err(Error::InvalidValue(
                "known parameters have no posterior".into(),
            )),
            Parameter::Learned { prior, .. } => {
                if prior.concentrations().axes() != posterior.concentrations().axes() {
                    return Err(Error::AxisMismatch("posterior shape differs from prior".into()));
                }
                Ok(Self::from_pair(prior.clone(), posterior))
            }
        }
    }

    /// The expectation, e.g. `Ā`.
    pub fn mean(&self) -> &Tensor {
        match self {
            Parameter::Known { mean, .. } | Parameter::Learned { mean, .. } => mean,
        }
    }

    /// The expected logarithm, e.g. `Å`.
    pub fn log_mean(&self) -> &Tensor {
        match self {
            Parameter::Known { log, .. } | Parameter::Learned { log, .. } => log,
        }
    }

    pub fn prior(&self) -> Option<&DirichletParams> {
        match self {
            Parameter::Known { .. } => None,
            Parameter::Learned { prior, .. } => Some(prior),
        }
    }

    pub fn posterior(&self) -> Option<&DirichletParams> {
        match self {
            Parameter::Known { .. } => None,
            Parameter::Learned { posterior, .. } => Some(posterior),
        }
    }

    pub fn is_learned(&self) -> bool {
        matches!(self, Parameter::Learned { .. })
    }
}

fn check_stochastic(t: &Tensor, axis: &str) -> Result<()> {
    let mut problem = None;
    t.for_each_fiber(axis, |column| {
        let total: f64 = column.iter().sum();
        if column.iter().any(|p| !(p.is_finite() && *p >= 0.0))
            || (total - 1.0).abs() > STOCHASTIC_TOLERANCE
        {
            problem.get_or_insert_with(|| format!("column {column:?} along `{axis}`"));
        }
    })?;
    match problem {
        Some(p) => Err(Error::NotNormalized(p)),
        None => Ok(()),
    }
}

/// Prior concentrations for a learning model. `None` means all ones.
#[derive(Clone, Debug, Default)]
pub struct PriorConcentrations {
    pub a: Option<Tensor>,
    pub b: Option<Tensor>,
    pub d: Option<Tensor>,
}

/// Priors, posteriors and derived expectations of `A`, `B`, `D` and `Θ_τ`.
#[derive(Clone, Debug)]
pub struct ModelParams {
    spec: ModelSpec,
    a: Parameter,
    b: Parameter,
    d: Parameter,
    theta: Vec<Parameter>,
    b_mean_by_action: Vec<Tensor>,
    b_log_by_action: Vec<Tensor>,
}

impl ModelParams {
    /// A learning model with Dirichlet priors; posteriors start equal to the
    /// priors.
    pub fn new(spec: ModelSpec, priors: PriorConcentrations) -> Result<Self> {
        let conc = |given: Option<Tensor>, axes: Vec<Axis>| -> Result<Tensor> {
            match given {
                None => Tensor::filled(axes, 1.0),
                Some(t) if t.axes() == axes.as_slice() => Ok(t),
                Some(t) => Err(Error::AxisMismatch(format!(
                    "prior shape {:?} does not match model shape {:?}",
                    t.shape(),
                    axes.iter().map(Axis::size).collect::<Vec<_>>()
                ))),
            }
        };
        let a = DirichletParams::new(conc(priors.a, spec.a_axes())?, OBS)?;
        let b = DirichletParams::new(conc(priors.b, spec.b_axes())?, NEXT_STATE)?;
        let d = DirichletParams::new(conc(priors.d, spec.d_axes())?, STATE)?;
        Self::assemble(
            spec,
            Parameter::learned(a),
            Parameter::learned(b),
            Parameter::learned(d),
        )
    }

    /// A model whose matrices are given exactly; learning is disabled.
    ///
    /// `a` is `(obs, state)`, `b` is `(next_state, state, action)`, `d` is
    /// `(state)`.
    pub fn known(a: Tensor, b: Tensor, d: Tensor) -> Result<Self> {
        let a_shape = a.shape();
        let b_shape = b.shape();
        if a_shape.len() != 2 || b_shape.len() != 3 || d.rank() != 1 {
            return Err(Error::AxisMismatch("A must be 2-D, B 3-D and D 1-D".into()));
        }
        let spec = ModelSpec::new(a_shape[1], a_shape[0], b_shape[2])?;
        let expect = |t: &Tensor, axes: Vec<Axis>, what: &str| {
            if t.axes() == axes.as_slice() {
                Ok(())
            } else {
                Err(Error::AxisMismatch(format!(
                    "{what} has axes {:?}",
                    t.axes().iter().map(ToString::to_string).collect::<Vec<_>>()
                )))
            }
        };
        expect(&a, spec.a_axes(), "A")?;
        expect(&b, spec.b_axes(), "B")?;
        expect(&d, spec.d_axes(), "D")?;
        Self::assemble(
            spec,
            Parameter::known(a, OBS)?,
            Parameter::known(b, NEXT_STATE)?,
            Parameter::known(d, STATE)?,
        )
    }

    /// [`ModelParams::known`] from plain nested vectors: `a[o][s]`,
    /// `b[u][s'][s]`, `d[s]`.
    pub fn known_from_vecs(a: &[Vec<f64>], b: &[Vec<Vec<f64>>], d: &[f64]) -> Result<Self> {
        let n_obs = a.len();
        let n_states = d.len();
        let n_actions = b.len();
        let spec = ModelSpec::new(n_states, n_obs, n_actions)?;
        let at = |o: usize, s: usize| a.get(o).and_then(|r| r.get(s)).copied();
        if a.iter().any(|r| r.len() != n_states) {
            return Err(Error::DataLength {
                expected: n_states,
                got: a.iter().map(Vec::len).find(|&l| l != n_states).unwrap_or(0),
            });
        }
        if b.iter().any(|m| m.len() != n_states || m.iter().any(|r| r.len() != n_states)) {
            return Err(Error::AxisMismatch(format!(
                "every B[u] must be {n_states}x{n_states}"
            )));
        }
        let a = Tensor::from_fn(spec.a_axes(), |ix| at(ix[0], ix[1]).unwrap())?;
        let b = Tensor::from_fn(spec.b_axes(), |ix| b[ix[2]][ix[0]][ix[1]])?;
        let d = Tensor::new(spec.d_axes(), d.to_vec())?;
        Self::known(a, b, d)
    }

    /// A known model with random dense columns, each entry bounded away from
    /// zero.
    pub fn random_known(spec: ModelSpec, rng: &mut impl Rng) -> Result<Self> {
        let mut column = |n: usize| -> Vec<f64> {
            let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
            let total: f64 = w.iter().sum();
            w.into_iter().map(|x| x / total).collect()
        };
        let a_cols: Vec<Vec<f64>> = (0..spec.n_states).map(|_| column(spec.n_obs)).collect();
        let b_cols: Vec<Vec<Vec<f64>>> = (0..spec.n_actions)
            .map(|_| (0..spec.n_states).map(|_| column(spec.n_states)).collect())
            .collect();
        let d = column(spec.n_states);
        let a = Tensor::from_fn(spec.a_axes(), |ix| a_cols[ix[1]][ix[0]])?;
        let b = Tensor::from_fn(spec.b_axes(), |ix| b_cols[ix[2]][ix[1]][ix[0]])?;
        Self::known(a, b, Tensor::new(spec.d_axes(), d)?)
    }

    fn assemble(spec: ModelSpec, a: Parameter, b: Parameter, d: Parameter) -> Result<Self> {
        let mut model = Self {
            spec,
            a,
            b,
            d,
            theta: Vec::new(),
            b_mean_by_action: Vec::new(),
            b_log_by_action: Vec::new(),
        };
        model.refresh_transition_cache()?;
        Ok(model)
    }

    fn refresh_transition_cache(&mut self) -> Result<()> {
        self.b_mean_by_action = (0..self.spec.n_actions)
            .map(|u| self.b.mean().select(ACTION, u))
            .collect::<Result<_>>()?;
        self.b_log_by_action = (0..self.spec.n_actions)
            .map(|u| self.b.log_mean().select(ACTION, u))
            .collect::<Result<_>>()?;
        Ok(())
    }

    pub fn spec(&self) -> ModelSpec {
        self.spec
    }

    pub fn a(&self) -> &Parameter {
        &self.a
    }

    pub fn b(&self) -> &Parameter {
        &self.b
    }

    pub fn d(&self) -> &Parameter {
        &self.d
    }

    pub fn action_priors(&self) -> &[Parameter] {
        &self.theta
    }

    pub fn action_prior(&self, tau: usize) -> Result<&Parameter> {
        self.theta
            .get(tau)
            .ok_or_else(|| Error::OutOfRange(format!("no action prior for step {tau}")))
    }

    /// True when any tensor carries a Dirichlet posterior.
    pub fn is_learning(&self) -> bool {
        self.a.is_learned() || self.b.is_learned() || self.d.is_learned()
    }

    /// `B̄(·, ·, u)` with axes `(next_state, state)`.
    pub fn transition_mean(&self, action: usize) -> &Tensor {
        &self.b_mean_by_action[action]
    }

    /// `B̊(·, ·, u)` with axes `(next_state, state)`.
    pub fn transition_log(&self, action: usize) -> &Tensor {
        &self.b_log_by_action[action]
    }

    /// `B̄_u ⊙ belief`: the predicted next-state distribution.
    pub fn predict_state(&self, belief: &CategoricalParams, action: usize) -> Result<CategoricalParams> {
        let next = inner_product(self.transition_mean(action), &[belief.tensor()])?;
        renormalized(next.renamed(NEXT_STATE, STATE)?)
    }

    /// `Ā ⊙ belief`: the predicted observation distribution.
    pub fn predict_obs(&self, belief: &CategoricalParams) -> Result<CategoricalParams> {
        renormalized(inner_product(self.a.mean(), &[belief.tensor()])?)
    }

    /// Appends the prior over the action taken at the next past step.
    pub fn push_action_prior(&mut self, prior: Parameter) -> Result<()> {
        let axes = prior.mean().axes();
        if axes.len() != 1 || axes[0].name() != ACTION || axes[0].size() != self.spec.n_actions {
            return Err(Error::AxisMismatch("action prior must be over `action`".into()));
        }
        self.theta.push(prior);
        Ok(())
    }

    /// Prior for an action the agent knows it executed.
    pub fn executed_action_prior(&self, action: usize) -> Result<Parameter> {
        let hot = CategoricalParams::one_hot(ACTION, self.spec.n_actions, action)?;
        Parameter::known(hot.tensor().clone(), ACTION)
    }

    /// A Dirichlet action prior with the given concentrations.
    pub fn dirichlet_action_prior(&self, conc: Vec<f64>) -> Result<Parameter> {
        let conc = Tensor::new(
            vec![Axis::new(ACTION, self.spec.n_actions)?],
            conc,
        )?;
        Ok(Parameter::learned(DirichletParams::new(conc, ACTION)?))
    }

    pub(crate) fn set_posteriors(
        &mut self,
        a: Option<DirichletParams>,
        b: Option<DirichletParams>,
        d: Option<DirichletParams>,
        theta: Vec<Option<DirichletParams>>,
    ) -> Result<()> {
        if let Some(a) = a {
            self.a = self.a.with_posterior(a)?;
        }
        if let Some(b) = b {
            self.b = self.b.with_posterior(b)?;
            self.refresh_transition_cache()?;
        }
        if let Some(d) = d {
            self.d = self.d.with_posterior(d)?;
        }
        for (slot, post) in self.theta.iter_mut().zip(theta) {
            if let Some(post) = post {
                *slot = slot.with_posterior(post)?;
            }
        }
        Ok(())
    }

    /// The model for a following trial: each learned posterior becomes the
    /// new prior and the past action priors are dropped.
    pub fn next_trial(&self) -> Result<Self> {
        let carry = |p: &Parameter| match p {
            Parameter::Known { .. } => p.clone(),
            Parameter::Learned { posterior, .. } => Parameter::learned(posterior.clone()),
        };
        Self::assemble(self.spec, carry(&self.a), carry(&self.b), carry(&self.d))
    }

    /// Plain-text serialization; see [`ModelParams::from_text`].
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let spec = self.spec;
        writeln!(out, "btai-model 1").unwrap();
        writeln!(out, "states {}", spec.n_states).unwrap();
        writeln!(out, "observations {}", spec.n_obs).unwrap();
        writeln!(out, "actions {}", spec.n_actions).unwrap();
        let learned = self.is_learning();
        writeln!(out, "kind {}", if learned { "dirichlet" } else { "known" }).unwrap();
        if learned {
            for (name, p) in [("a", &self.a), ("b", &self.b), ("d", &self.d)] {
                let (prior, posterior) = match (p.prior(), p.posterior()) {
                    (Some(prior), Some(posterior)) => (prior, posterior),
                    _ => unreachable!("learning models carry Dirichlet parameters throughout"),
                };
                write_block(&mut out, &format!("{name}.prior"), prior.concentrations());
                write_block(&mut out, &format!("{name}.posterior"), posterior.concentrations());
            }
        } else {
            write_block(&mut out, "A", self.a.mean());
            write_block(&mut out, "B", self.b.mean());
            write_block(&mut out, "D", self.d.mean());
        }
        out
    }

    /// Parses the format written by [`ModelParams::to_text`]:
    ///
    /// ```text
    /// btai-model 1
    /// states <|S|>
    /// observations <|O|>
    /// actions <|U|>
    /// kind known | dirichlet
    /// ```
    ///
    /// followed by named blocks. A known model has blocks `A` (one row per
    /// observation, one value per state), `B` (one sub-block per action,
    /// headed `action <u>`, one row per next state) and `D` (one row).
    /// A dirichlet model has `a.prior`, `a.posterior`, `b.prior`, ... laid out
    /// the same way. Blank lines and `#` comments are ignored; numbers use the
    /// shortest round-trip decimal form.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());
        let mut header = |key: &str| -> Result<String> {
            let (line, l) = lines.next().ok_or(Error::Parse {
                line: 0,
                message: format!("missing `{key}`"),
            })?;
            let mut parts = l.split_whitespace();
            if parts.next() != Some(key) {
                return Err(Error::Parse {
                    line,
                    message: format!("expected `{key}`"),
                });
            }
            parts.next().map(str::to_owned).ok_or(Error::Parse {
                line,
                message: format!("`{key}` needs a value"),
            })
        };
        let version = header("btai-model")?;
        if version != "1" {
            return Err(Error::Parse {
                line: 1,
                message: format!("unsupported version {version}"),
            });
        }
        let parse_usize = |s: String| {
            s.parse::<usize>().map_err(|e| Error::Parse {
                line: 0,
                message: e.to_string(),
            })
        };
        let n_states = parse_usize(header("states")?)?;
        let n_obs = parse_usize(header("observations")?)?;
        let n_actions = parse_usize(header("actions")?)?;
        let kind = header("kind")?;
        let spec = ModelSpec::new(n_states, n_obs, n_actions)?;
        let rest: Vec<(usize, &str)> = lines.collect();
        let mut cursor = 0;
        let mut read = |name: &str, axes: Vec<Axis>| -> Result<Tensor> {
            read_block(&rest, &mut cursor, name, axes)
        };
        match kind.as_str() {
            "known" => {
                let a = read("A", spec.a_axes())?;
                let b = read("B", spec.b_axes())?;
                let d = read("D", spec.d_axes())?;
                Self::known(a, b, d)
            }
            "dirichlet" => {
                let ap = read("a.prior", spec.a_axes())?;
                let aq = read("a.posterior", spec.a_axes())?;
                let bp = read("b.prior", spec.b_axes())?;
                let bq = read("b.posterior", spec.b_axes())?;
                let dp = read("d.prior", spec.d_axes())?;
                let dq = read("d.posterior", spec.d_axes())?;
                let mut model = Self::new(
                    spec,
                    PriorConcentrations {
                        a: Some(ap),
                        b: Some(bp),
                        d: Some(dp),
                    },
                )?;
                model.set_posteriors(
                    Some(DirichletParams::new(aq, OBS)?),
                    Some(DirichletParams::new(bq, NEXT_STATE)?),
                    Some(DirichletParams::new(dq, STATE)?),
                    Vec::new(),
                )?;
                Ok(model)
            }
            other => Err(Error::Parse {
                line: 0,
                message: format!("unknown model kind `{other}`"),
            }),
        }
    }
}

fn renormalized(t: Tensor) -> Result<CategoricalParams> {
    let total = t.sum();
    CategoricalParams::new(t.scale(1.0 / total))
}

fn write_row(out: &mut String, values: impl Iterator<Item = f64>) {
    let row: Vec<String> = values.map(|v| v.to_string()).collect();
    writeln!(out, "{}", row.join(" ")).unwrap();
}

fn write_block(out: &mut String, name: &str, t: &Tensor) {
    writeln!(out, "{name}").unwrap();
    let shape = t.shape();
    match shape.len() {
        1 => write_row(out, t.data().iter().copied()),
        2 => {
            for r in 0..shape[0] {
                write_row(out, (0..shape[1]).map(|c| t.get(&[r, c]).unwrap()));
            }
        }
        3 => {
            for u in 0..shape[2] {
                writeln!(out, "action {u}").unwrap();
                for r in 0..shape[0] {
                    write_row(out, (0..shape[1]).map(|c| t.get(&[r, c, u]).unwrap()));
                }
            }
        }
        _ => unreachable!("model tensors have rank 1 to 3"),
    }
}

fn read_block(
    lines: &[(usize, &str)],
    cursor: &mut usize,
    name: &str,
    axes: Vec<Axis>,
) -> Result<Tensor> {
    let err = |line: usize, message: String| Error::Parse { line, message };
    let next = |cursor: &mut usize| -> Result<(usize, &str)> {
        let item = lines
            .get(*cursor)
            .copied()
            .ok_or_else(|| err(0, format!("unexpected end of file in block `{name}`")))?;
        *cursor += 1;
        Ok(item)
    };
    let (line, head) = next(cursor)?;
    if head != name {
        return Err(err(line, format!("expected block `{name}`, found `{head}`")));
    }
    let shape: Vec<usize> = axes.iter().map(Axis::size).collect();
    let row = |cursor: &mut usize, width: usize| -> Result<Vec<f64>> {
        let (line, text) = next(cursor)?;
        let values: Vec<f64> = text
            .split_whitespace()
            .map(|v| v.parse::<f64>().map_err(|e| err(line, format!("`{v}`: {e}"))))
            .collect::<Result<_>>()?;
        if values.len() != width {
            return Err(err(line, format!("expected {width} values, found {}", values.len())));
        }
        Ok(values)
    };
    match shape.len() {
        1 => Tensor::new(axes, row(cursor, shape[0])?),
        2 => {
            let mut data = Vec::new();
            for _ in 0..shape[0] {
                data.extend(row(cursor, shape[1])?);
            }
            Tensor::new(axes, data)
        }
        3 => {
            let mut per_action = Vec::new();
            for u in 0..shape[2] {
                let (line, head) = next(cursor)?;
                if head != format!("action {u}") {
                    return Err(err(line, format!("expected `action {u}`")));
                }
                let mut m = Vec::new();
                for _ in 0..shape[0] {
                    m.push(row(cursor, shape[1])?);
                }
                per_action.push(m);
            }
            Tensor::from_fn(axes, |ix| per_action[ix[2]][ix[0]][ix[1]])
        }
        _ => unreachable!("model tensors have rank 1 to 3"),
    }
}

/// Preferences over future observations (`C_O`) and states (`C_S`).
#[derive(Clone, Debug, PartialEq)]
pub struct TargetDist {
    pub obs: CategoricalParams,
    pub states: CategoricalParams,
}

impl TargetDist {
    pub fn new(obs: CategoricalParams, states: CategoricalParams) -> Result<Self> {
        if obs.axis_name() != OBS || states.axis_name() != STATE {
            return Err(Error::AxisMismatch(
                "target must be over `obs` and `state`".into(),
            ));
        }
        Ok(Self { obs, states })
    }

    pub fn from_vecs(obs: Vec<f64>, states: Vec<f64>) -> Result<Self> {
        Self::new(
            CategoricalParams::from_vec(OBS, obs)?,
            CategoricalParams::from_vec(STATE, states)?,
        )
    }

    /// Uniform over both observations and states.
    pub fn uniform(spec: ModelSpec) -> Result<Self> {
        Self::new(
            CategoricalParams::uniform(OBS, spec.n_obs)?,
            CategoricalParams::uniform(STATE, spec.n_states)?,
        )
    }
}

/// Beliefs about the past and present: `D̂_τ` for `τ = 0..=t`, `Θ̂_τ` for
/// `τ < t`, and the observations actually made.
#[derive(Clone, Debug, PartialEq)]
pub struct PastBeliefs {
    states: Vec<CategoricalParams>,
    actions: Vec<CategoricalParams>,
    observations: Vec<usize>,
}

impl PastBeliefs {
    /// Starts the chain at `t = 0` with `D̂_0 = D̄`.
    pub fn new(model: &ModelParams, first_obs: usize) -> Result<Self> {
        check_obs(model, first_obs)?;
        let d0 = CategoricalParams::new(model.d().mean().clone())?;
        Ok(Self {
            states: vec![d0],
            actions: Vec::new(),
            observations: vec![first_obs],
        })
    }

    /// Extends the chain by one step after `action` produced `obs`. The new
    /// beliefs start at their predictive values.
    pub fn push(&mut self, model: &ModelParams, action: usize, obs: usize) -> Result<()> {
        check_obs(model, obs)?;
        if action >= model.spec().n_actions {
            return Err(Error::OutOfRange(format!("action {action}")));
        }
        let next = model.predict_state(self.present(), action)?;
        self.actions
            .push(CategoricalParams::one_hot(ACTION, model.spec().n_actions, action)?);
        self.states.push(next);
        self.observations.push(obs);
        Ok(())
    }

    /// The present time step `t`.
    pub fn t(&self) -> usize {
        self.states.len() - 1
    }

    pub fn present(&self) -> &CategoricalParams {
        self.states.last().expect("chain is never empty")
    }

    pub fn state(&self, tau: usize) -> &CategoricalParams {
        &self.states[tau]
    }

    pub fn states(&self) -> &[CategoricalParams] {
        &self.states
    }

    pub fn action(&self, tau: usize) -> &CategoricalParams {
        &self.actions[tau]
    }

    pub fn actions(&self) -> &[CategoricalParams] {
        &self.actions
    }

    pub fn observations(&self) -> &[usize] {
        &self.observations
    }

    /// `o_τ` as a one-hot vector over `obs`.
    pub fn observation_vector(&self, tau: usize, n_obs: usize) -> Tensor {
        CategoricalParams::one_hot(OBS, n_obs, self.observations[tau])
            .expect("observation validated on entry")
            .tensor()
            .clone()
    }

    pub(crate) fn set_state(&mut self, tau: usize, belief: CategoricalParams) {
        self.states[tau] = belief;
    }

    pub(crate) fn set_action(&mut self, tau: usize, belief: CategoricalParams) {
        self.actions[tau] = belief;
    }
}

fn check_obs(model: &ModelParams, obs: usize) -> Result<()> {
    if obs >= model.spec().n_obs {
        return Err(Error::OutOfRange(format!(
            "observation {obs} >= {}",
            model.spec().n_obs
        )));
    }
    Ok(())
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)] // oracles index like the formulas
mod tests {
    use super::*;

    fn two_state() -> ModelParams {
        ModelParams::known_from_vecs(
            &[vec![1.0, 0.0], vec![0.0, 1.0]],
            &[
                vec![vec![1.0, 1.0], vec![0.0, 0.0]],
                vec![vec![0.5, 0.5], vec![0.5, 0.5]],
            ],
            &[0.5, 0.5],
        )
        .unwrap()
    }

    #[test]
    fn uniform_priors_give_uniform_columns() {
        let m = ModelParams::new(ModelSpec::new(3, 2, 2).unwrap(), PriorConcentrations::default()).unwrap();
        assert!(m.a().mean().data().iter().all(|&x| (x - 0.5).abs() < 1e-15));
        assert_eq!(m.b().mean().len(), 3 * 3 * 2);
        let m = ModelParams::new(ModelSpec::new(2, 2, 2).unwrap(), PriorConcentrations::default()).unwrap();
        assert_eq!(m.b().mean().len(), 8);
    }

    #[test]
    fn large_concentration_approaches_matrix() {
        let truth = [[0.7, 0.2], [0.3, 0.8]];
        let kappa = 1e6;
        let a = Tensor::from_fn(
            vec![Axis::new(OBS, 2).unwrap(), Axis::new(STATE, 2).unwrap()],
            |ix| kappa * truth[ix[0]][ix[1]] + 1e-3,
        )
        .unwrap();
        let m = ModelParams::new(
            ModelSpec::new(2, 2, 1).unwrap(),
            PriorConcentrations {
                a: Some(a),
                ..Default::default()
            },
        )
        .unwrap();
        for o in 0..2 {
            for s in 0..2 {
                assert!((m.a().mean().get(&[o, s]).unwrap() - truth[o][s]).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn known_matrices_store_exact_values_and_clamped_logs() {
        let m = two_state();
        assert_eq!(m.a().mean().data(), &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(m.a().log_mean().data(), &[0.0, -1e9, -1e9, 0.0]);
        let log_b1 = m.transition_log(1);
        assert!(log_b1.data().iter().all(|&x| (x - 0.5f64.ln()).abs() < 1e-15));
        assert!(!m.is_learning());
    }

    #[test]
    fn known_rejects_non_stochastic() {
        let err = ModelParams::known_from_vecs(
            &[vec![0.6, 0.0], vec![0.6, 1.0]],
            &[vec![vec![1.0, 0.0], vec![0.0, 1.0]]],
            &[1.0, 0.0],
        );
        assert!(matches!(err, Err(Error::NotNormalized(_))));
    }

    #[test]
    fn text_round_trip_is_exact() {
        let mut rng = rand::rng();
        let m = ModelParams::random_known(ModelSpec::new(3, 2, 2).unwrap(), &mut rng).unwrap();
        let back = ModelParams::from_text(&m.to_text()).unwrap();
        assert_eq!(back.a().mean(), m.a().mean());
        assert_eq!(back.b().mean(), m.b().mean());
        assert_eq!(back.d().mean(), m.d().mean());

        let learned = ModelParams::new(ModelSpec::new(2, 3, 2).unwrap(), PriorConcentrations::default()).unwrap();
        let back = ModelParams::from_text(&learned.to_text()).unwrap();
        assert_eq!(back.a().prior(), learned.a().prior());
        assert_eq!(back.b().posterior(), learned.b().posterior());
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = "btai-model 1\nstates 2\nobservations 2\nactions 1\nkind known\nA\n1 0\n0 x\n";
        match ModelParams::from_text(text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 8),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn past_chain_extends_with_predictions() {
        let m = two_state();
        let mut past = PastBeliefs::new(&m, 0).unwrap();
        assert_eq!(past.t(), 0);
        past.push(&m, 0, 0).unwrap();
        assert_eq!(past.t(), 1);
        assert_eq!(past.present().probs(), &[1.0, 0.0]);
        assert!(past.push(&m, 2, 0).is_err());
        assert!(past.push(&m, 0, 5).is_err());
    }
}
