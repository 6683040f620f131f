//! Dense real tensors whose axes carry names.
//!
//! Every array in the generative model (likelihood, transitions, priors,
//! messages) is a [`Tensor`]. Axes are matched by name rather than position,
//! so `inner_product(&b, &[&belief])` contracts the `state` axis of a
//! transition tensor no matter where that axis sits.
//!
//! Storage is row-major: the last axis varies fastest.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Axis {
    name: String,
    size: usize,
}

impl Axis {
    pub fn new(name: impl Into<String>, size: usize) -> Result<Self> {
        let name = name.into();
        if size == 0 {
            return Err(Error::EmptyAxis(name));
        }
        Ok(Self { name, size })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn size(&self) -> usize {
        self.size
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[{}]", self.name, self.size)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    axes: Vec<Axis>,
    strides: Vec<usize>,
    data: Vec<f64>,
}

fn strides_for(axes: &[Axis]) -> Vec<usize> {
    let mut strides = vec![1; axes.len()];
    for i in (0..axes.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * axes[i + 1].size;
    }
    strides
}

fn check_distinct(axes: &[Axis]) -> Result<()> {
    for (i, a) in axes.iter().enumerate() {
        if axes[..i].iter().any(|b| b.name == a.name) {
            return Err(Error::DuplicateAxis(a.name.clone()));
        }
    }
    Ok(())
}

/// Advances a row-major multi-index; returns false once it wraps around.
fn increment(index: &mut [usize], shape: &[usize]) -> bool {
    for i in (0..index.len()).rev() {
        index[i] += 1;
        if index[i] < shape[i] {
            return true;
        }
        index[i] = 0;
    }
    false
}

impl Tensor {
    pub fn new(axes: Vec<Axis>, data: Vec<f64>) -> Result<Self> {
        check_distinct(&axes)?;
        let expected: usize = axes.iter().map(|a| a.size).product();
        if data.len() != expected {
            return Err(Error::DataLength {
                expected,
                got: data.len(),
            });
        }
        let strides = strides_for(&axes);
        Ok(Self {
            axes,
            strides,
            data,
        })
    }

    pub fn filled(axes: Vec<Axis>, value: f64) -> Result<Self> {
        let len = axes.iter().map(|a| a.size).product();
        Self::new(axes, vec![value; len])
    }

    pub fn zeros(axes: Vec<Axis>) -> Result<Self> {
        Self::filled(axes, 0.0)
    }

    /// Builds a tensor by evaluating `f` at every multi-index in row-major order.
    pub fn from_fn(axes: Vec<Axis>, mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        check_distinct(&axes)?;
        let shape: Vec<usize> = axes.iter().map(|a| a.size).collect();
        let len = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        let mut index = vec![0; shape.len()];
        loop {
            data.push(f(&index));
            if !increment(&mut index, &shape) {
                break;
            }
        }
        Self::new(axes, data)
    }

    pub fn vector(name: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        let axis = Axis::new(name, values.len())?;
        Self::new(vec![axis], values)
    }

    /// A 2-axis tensor from a list of rows.
    pub fn matrix(row_axis: &str, col_axis: &str, rows: &[Vec<f64>]) -> Result<Self> {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != n_cols) {
            return Err(Error::DataLength {
                expected: n_cols,
                got: bad.len(),
            });
        }
        let axes = vec![Axis::new(row_axis, n_rows)?, Axis::new(col_axis, n_cols)?];
        Self::new(axes, rows.concat())
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(|a| a.size).collect()
    }

    pub fn rank(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn axis_position(&self, name: &str) -> Option<usize> {
        self.axes.iter().position(|a| a.name == name)
    }

    pub fn axis(&self, name: &str) -> Result<&Axis> {
        self.axes
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| Error::UnknownAxis(name.to_owned()))
    }

    fn offset(&self, index: &[usize]) -> Option<usize> {
        if index.len() != self.axes.len() {
            return None;
        }
        let mut off = 0;
        for ((&i, axis), &stride) in index.iter().zip(&self.axes).zip(&self.strides) {
            if i >= axis.size {
                return None;
            }
            off += i * stride;
        }
        Some(off)
    }

    /// Element at a full multi-index, `None` when out of bounds.
    pub fn get(&self, index: &[usize]) -> Option<f64> {
        self.offset(index).map(|o| self.data[o])
    }

    pub fn set(&mut self, index: &[usize], value: f64) -> Result<()> {
        let off = self
            .offset(index)
            .ok_or_else(|| Error::OutOfRange(format!("index {index:?} for shape {:?}", self.shape())))?;
        self.data[off] = value;
        Ok(())
    }

    /// The single axis of a vector.
    pub fn vector_axis(&self) -> Result<&Axis> {
        match self.axes.as_slice() {
            [axis] => Ok(axis),
            _ => Err(Error::NotAVector(self.axes.len())),
        }
    }

    pub fn renamed(mut self, from: &str, to: &str) -> Result<Self> {
        let pos = self
            .axis_position(from)
            .ok_or_else(|| Error::UnknownAxis(from.to_owned()))?;
        if from != to && self.axis_position(to).is_some() {
            return Err(Error::DuplicateAxis(to.to_owned()));
        }
        self.axes[pos].name = to.to_owned();
        Ok(self)
    }

    /// Fixes `axis` at `index`, dropping that axis from the result.
    pub fn select(&self, axis: &str, index: usize) -> Result<Self> {
        let pos = self
            .axis_position(axis)
            .ok_or_else(|| Error::UnknownAxis(axis.to_owned()))?;
        let size = self.axes[pos].size;
        if index >= size {
            return Err(Error::OutOfRange(format!("{axis} index {index} >= {size}")));
        }
        let stride = self.strides[pos];
        let outer = self.data.len() / (size * stride);
        let mut data = Vec::with_capacity(self.data.len() / size);
        for o in 0..outer {
            let base = o * size * stride + index * stride;
            data.extend_from_slice(&self.data[base..base + stride]);
        }
        let mut axes = self.axes.clone();
        axes.remove(pos);
        Tensor::new(axes, data)
    }

    /// Applies `f` to every 1-D fiber running along `axis`, in place.
    pub fn map_fibers(&mut self, axis: &str, mut f: impl FnMut(&mut [f64])) -> Result<()> {
        let pos = self
            .axis_position(axis)
            .ok_or_else(|| Error::UnknownAxis(axis.to_owned()))?;
        let size = self.axes[pos].size;
        let stride = self.strides[pos];
        let outer = self.data.len() / (size * stride);
        let mut buf = vec![0.0; size];
        for o in 0..outer {
            for inner in 0..stride {
                let base = o * size * stride + inner;
                for (k, b) in buf.iter_mut().enumerate() {
                    *b = self.data[base + k * stride];
                }
                f(&mut buf);
                for (k, b) in buf.iter().enumerate() {
                    self.data[base + k * stride] = *b;
                }
            }
        }
        Ok(())
    }

    /// Calls `f` on every fiber along `axis` without modifying the tensor.
    pub fn for_each_fiber(&self, axis: &str, mut f: impl FnMut(&[f64])) -> Result<()> {
        let mut copy = self.clone();
        copy.map_fibers(axis, |fiber| f(fiber))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn zip_with(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.axes != other.axes {
            return Err(Error::AxisMismatch(format!(
                "{} vs {}",
                describe(&self.axes),
                describe(&other.axes)
            )));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Tensor {
            axes: self.axes.clone(),
            strides: self.strides.clone(),
            data,
        })
    }

    pub fn scale(&self, factor: f64) -> Tensor {
        self.map(|x| x * factor)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            axes: self.axes.clone(),
            strides: self.strides.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        let diff = self.zip_with(other, |a, b| (a - b).abs())?;
        Ok(diff.data.iter().copied().fold(0.0, f64::max))
    }
}

fn describe(axes: &[Axis]) -> String {
    let parts: Vec<String> = axes.iter().map(Axis::to_string).collect();
    format!("({})", parts.join(", "))
}

impl fmt::Display for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{} {:?}", describe(&self.axes), self.data)
    }
}

/// Generalized outer product: an N-axis tensor from N vectors, whose element
/// at `(x1, .., xN)` is the product of the vector entries.
pub fn outer_product(vectors: &[&Tensor]) -> Result<Tensor> {
    if vectors.is_empty() {
        return Err(Error::Empty("outer product of no vectors"));
    }
    let mut axes = Vec::with_capacity(vectors.len());
    for v in vectors {
        axes.push(v.vector_axis()?.clone());
    }
    check_distinct(&axes)?;
    Tensor::from_fn(axes, |index| {
        index
            .iter()
            .zip(vectors)
            .map(|(&i, v)| v.data[i])
            .product()
    })
}

/// Generalized inner product: contracts every axis of `w` against the factor
/// vector of the same name, leaving the one axis that no factor names.
///
/// Matching is by name, so factor order is irrelevant and transposition is
/// implicit.
pub fn inner_product(w: &Tensor, factors: &[&Tensor]) -> Result<Tensor> {
    let mut matched: Vec<Option<&[f64]>> = vec![None; w.rank()];
    for factor in factors {
        let axis = factor.vector_axis()?;
        let pos = w
            .axis_position(axis.name())
            .ok_or_else(|| Error::UnknownAxis(axis.name().to_owned()))?;
        if matched[pos].is_some() {
            return Err(Error::DuplicateAxis(axis.name().to_owned()));
        }
        if w.axes[pos].size != axis.size {
            return Err(Error::AxisSize {
                name: axis.name().to_owned(),
                expected: w.axes[pos].size,
                got: axis.size,
            });
        }
        matched[pos] = Some(factor.data());
    }
    let free: Vec<usize> = (0..w.rank()).filter(|&i| matched[i].is_none()).collect();
    let [out_pos] = free[..] else {
        return Err(Error::UnmatchedAxes(free.len()));
    };

    let shape = w.shape();
    let mut out = vec![0.0; shape[out_pos]];
    let mut index = vec![0; shape.len()];
    for &value in &w.data {
        let mut term = value;
        for (pos, m) in matched.iter().enumerate() {
            if let Some(f) = m {
                term *= f[index[pos]];
            }
        }
        out[index[out_pos]] += term;
        increment(&mut index, &shape);
    }
    Tensor::new(vec![w.axes[out_pos].clone()], out)
}
