//! Categorical and Dirichlet distributions, plus the handful of functionals
//! (softmax, KL divergence, entropy, expected logarithms) that the belief
//! updates and costs are written in.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Finite stand-in for `ln 0`. Large enough that `softmax` assigns the entry
/// no representable mass, small enough that sums of a few of them stay finite.
pub const LOG_ZERO: f64 = -1e9;

/// Tolerance on the total mass of a categorical distribution.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-10;

/// Natural logarithm with `ln 0` mapped to [`LOG_ZERO`].
pub fn clamped_ln(x: f64) -> f64 {
    if x > 0.0 {
        x.ln().max(LOG_ZERO)
    } else {
        LOG_ZERO
    }
}

/// The digamma function `ψ(x) = d/dx ln Γ(x)`.
///
/// Shifts the argument up to at least 6 with `ψ(x) = ψ(x + 1) − 1/x`, then
/// evaluates the asymptotic expansion in `1/x²`.
pub fn digamma(x: f64) -> f64 {
    if x.is_nan() || x == f64::NEG_INFINITY {
        return f64::NAN;
    }
    if x <= 0.0 {
        if x == x.floor() {
            return f64::NAN;
        }
        // reflection: ψ(1 − x) − ψ(x) = π cot(πx)
        return digamma(1.0 - x) - std::f64::consts::PI / (std::f64::consts::PI * x).tan();
    }
    let mut x = x;
    let mut acc = 0.0;
    while x < 6.0 {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    // Bernoulli-number series: B_2k / (2k x^2k)
    let series = inv2
        * (1.0 / 12.0
            - inv2
                * (1.0 / 120.0
                    - inv2
                        * (1.0 / 252.0
                            - inv2
                                * (1.0 / 240.0
                                    - inv2
                                        * (1.0 / 132.0
                                            - inv2 * (691.0 / 32760.0 - inv2 / 12.0))))));
    acc + x.ln() - 0.5 * inv - series
}

/// `ln Γ(x)` for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CategoricalParams {
    probs: Tensor,
}

impl CategoricalParams {
    /// Validates a probability vector: entries non-negative and summing to one
    /// within [`NORMALIZATION_TOLERANCE`]. Exact zeros are allowed.
    pub fn new(probs: Tensor) -> Result<Self> {
        probs.vector_axis()?;
        if let Some(bad) = probs.data().iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
            return Err(Error::NotNormalized(format!("entry {bad}")));
        }
        let total = probs.sum();
        if (total - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(Error::NotNormalized(format!("entries sum to {total}")));
        }
        Ok(Self { probs })
    }

    pub fn from_vec(axis: &str, probs: Vec<f64>) -> Result<Self> {
        Self::new(Tensor::vector(axis, probs)?)
    }

    /// Normalizes non-negative weights.
    pub fn from_weights(axis: &str, weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::InvalidValue(format!("weights sum to {total}")));
        }
        Self::from_vec(axis, weights.into_iter().map(|w| w / total).collect())
    }

    pub fn uniform(axis: &str, size: usize) -> Result<Self> {
        Self::from_vec(axis, vec![1.0 / size as f64; size])
    }

    pub fn one_hot(axis: &str, size: usize, hot: usize) -> Result<Self> {
        if hot >= size {
            return Err(Error::OutOfRange(format!("one-hot index {hot} >= {size}")));
        }
        let mut p = vec![0.0; size];
        p[hot] = 1.0;
        Self::from_vec(axis, p)
    }

    pub fn tensor(&self) -> &Tensor {
        &self.probs
    }

    pub fn probs(&self) -> &[f64] {
        self.probs.data()
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn axis_name(&self) -> &str {
        self.probs.axes()[0].name()
    }

    /// Index of the most probable entry (lowest index on ties).
    pub fn mode(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs().iter().enumerate() {
            if p > self.probs()[best] {
                best = i;
            }
        }
        best
    }

    /// The same probabilities under a different axis name.
    pub fn relabeled(&self, axis: &str) -> Tensor {
        Tensor::vector(axis, self.probs().to_vec()).expect("non-empty vector")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DirichletParams {
    conc: Tensor,
    axis: String,
}

impl DirichletParams {
    /// A family of Dirichlet distributions, one per fiber of `conc` along
    /// `distribution_axis`. Every concentration must be strictly positive.
    pub fn new(conc: Tensor, distribution_axis: &str) -> Result<Self> {
        conc.axis(distribution_axis)?;
        if let Some(bad) = conc.data().iter().find(|c| !(c.is_finite() && **c > 0.0)) {
            return Err(Error::InvalidValue(format!(
                "Dirichlet concentration must be > 0, got {bad}"
            )));
        }
        Ok(Self {
            conc,
            axis: distribution_axis.to_owned(),
        })
    }

    pub fn concentrations(&self) -> &Tensor {
        &self.conc
    }

    pub fn distribution_axis(&self) -> &str {
        &self.axis
    }

    /// `E[ln x_i] = ψ(c_i) − ψ(Σ_k c_k)`, the sum running along the
    /// distribution axis.
    pub fn expected_log(&self) -> Tensor {
        let mut out = self.conc.clone();
        out.map_fibers(&self.axis, |fiber| {
            let total = digamma(fiber.iter().sum());
            for c in fiber.iter_mut() {
                *c = digamma(*c) - total;
            }
        })
        .expect("distribution axis validated at construction");
        out
    }

    /// `E[x_i] = c_i / Σ_k c_k` along the distribution axis.
    pub fn expected_value(&self) -> Tensor {
        let mut out = self.conc.clone();
        out.map_fibers(&self.axis, |fiber| {
            let total: f64 = fiber.iter().sum();
            for c in fiber.iter_mut() {
                *c /= total;
            }
        })
        .expect("distribution axis validated at construction");
        out
    }

    /// Conjugate update: adds (pseudo-)counts with the same axes.
    pub fn with_counts(&self, counts: &Tensor) -> Result<Self> {
        if counts.data().iter().any(|c| *c < 0.0) {
            return Err(Error::InvalidValue("negative counts".into()));
        }
        Self::new(self.conc.add(counts)?, &self.axis)
    }

    /// Sum over fibers of `KL(Dir(self) ‖ Dir(prior))`.
    pub fn kl_divergence(&self, prior: &DirichletParams) -> Result<f64> {
        if self.conc.axes() != prior.conc.axes() || self.axis != prior.axis {
            return Err(Error::AxisMismatch("Dirichlet KL operands differ in shape".into()));
        }
        let mut q_fibers = Vec::new();
        self.conc.for_each_fiber(&self.axis, |f| q_fibers.push(f.to_vec()))?;
        let mut p_fibers = Vec::new();
        prior.conc.for_each_fiber(&prior.axis, |f| p_fibers.push(f.to_vec()))?;
        let mut kl = 0.0;
        for (q, p) in q_fibers.iter().zip(&p_fibers) {
            let q0: f64 = q.iter().sum();
            let p0: f64 = p.iter().sum();
            let dq0 = digamma(q0);
            kl += ln_gamma(q0) - ln_gamma(p0);
            for (&qi, &pi) in q.iter().zip(p) {
                kl += ln_gamma(pi) - ln_gamma(qi) + (qi - pi) * (digamma(qi) - dq0);
            }
        }
        Ok(kl)
    }
}

/// Exponentiates and normalizes, after subtracting the maximum logit.
pub fn softmax(logits: &Tensor) -> Result<CategoricalParams> {
    let axis = logits.vector_axis()?.name().to_owned();
    let data = logits.data();
    if data.iter().any(|x| x.is_nan() || *x == f64::INFINITY) {
        return Err(Error::InvalidValue("softmax of NaN or +inf".into()));
    }
    let max = data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::InvalidValue("softmax of all -inf".into()));
    }
    let exps: Vec<f64> = data.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    CategoricalParams::from_vec(&axis, exps.into_iter().map(|e| e / total).collect())
}

/// `KL(q ‖ p) = Σ q ln(q / p)` with `0 ln 0 = 0`. Returns `+∞` when `p`
/// puts zero mass where `q` does not.
pub fn kl_categorical(q: &CategoricalParams, p: &CategoricalParams) -> Result<f64> {
    if q.len() != p.len() {
        return Err(Error::AxisSize {
            name: p.axis_name().to_owned(),
            expected: q.len(),
            got: p.len(),
        });
    }
    let mut kl = 0.0;
    for (&qi, &pi) in q.probs().iter().zip(p.probs()) {
        if qi > 0.0 {
            if pi <= 0.0 {
                return Ok(f64::INFINITY);
            }
            kl += qi * (qi / pi).ln();
        }
    }
    // rounding can leave a tiny negative residue when q == p
    Ok(kl.max(0.0))
}

/// Shannon entropy `−Σ p ln p` with `0 ln 0 = 0`.
pub fn entropy_categorical(p: &CategoricalParams) -> f64 {
    entropy(p.probs())
}

pub(crate) fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>()
}
